#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsad/checkpoint.hpp"
#include "hsad/layers.hpp"
#include "hsad/losses.hpp"
#include "hsad/lstm.hpp"
#include "hsad/variant.hpp"

namespace hsad {

enum class Family { kSmallImage, kLargeImage };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

/// Layer-level description of an encoder / LSTM module / decoder stack.
///
/// Every encoder conv is followed by batch norm, leaky ReLU and a 2x2/2 max
/// pool. Every decoder deconv except the last is followed by batch norm and
/// leaky ReLU; the last one by a sigmoid.
struct ArchitectureSpec {
  Family family = Family::kSmallImage;
  std::size_t in_channels = 1;
  std::size_t height = 32;  // network input size
  std::size_t width = 32;
  std::size_t pad = 0;      // symmetric zero padding applied to raw samples
  std::vector<LayerSpec> encoder;
  std::size_t lstm_dim = 0;      // flattened encoder output = LSTM in/out width
  std::optional<LayerSpec> head;  // Linear after the LSTM module
  std::size_t latent_dim = 0;     // width of z_hat
  std::array<std::size_t, 3> decoder_input{};  // z_hat reshaped as [c, h, w]
  std::vector<LayerSpec> decoder;
  double leaky_slope = 0.01;

  std::size_t raw_height() const { return height - 2 * pad; }
  std::size_t raw_width() const { return width - 2 * pad; }

  /// Throws ConfigError when shapes do not chain.
  void validate() const;
  nlohmann::json to_json() const;
  static ArchitectureSpec from_json(const nlohmann::json& j);
};

/// Conv2(c,w,5)-Conv2(w,2w,5)-Conv2(2w,4w,5) encoder, LSTM(D, D)-Linear(D, d)
/// module and Dconv2(8,4w,5)-Dconv2(4w,2w,5)-Dconv2(2w,w,5)-Dconv2(w,c,5)
/// decoder, with d = 8 * (h/8) * (w/8). base_width = 32 and a 32x32 input give
/// D = 2048 and d = 128. Inputs up to 32x32 that are not multiples of 8 are
/// zero-padded symmetrically to 32x32 when the padding is even.
ArchitectureSpec small_image_spec(std::size_t channels, std::size_t height = 32, std::size_t width = 32,
                                  std::size_t base_width = 32);

/// Conv2(3,96,3)-Conv2(96,128,3)-Conv2(128,256,3)-Conv2(256,256,3) encoder,
/// LSTM(D, D) without a head, mirrored decoder. 64x64 inputs give D = 4096
/// reshaped to 256x4x4. Only 3-channel inputs are accepted.
ArchitectureSpec large_image_spec(std::size_t channels = 3, std::size_t size = 64);

struct VariantConfig {
  Variant variant = Variant::kIaeLstmKl;
  Boundary boundary = Boundary::kHard;
  GateAblation gate_ablation = GateAblation::kNone;
  KlMode kl_mode = KlMode::kBatchMoments;
  /// Drop conv / deconv / linear biases and freeze batch-norm beta at zero.
  bool bias_free = false;

  void validate() const;
  nlohmann::json to_json() const;
  static VariantConfig from_json(const nlohmann::json& j);
};

enum class ParamGroup { kEncoder, kModule, kDecoder };

/// View of one parameter tensor inside a Model.
struct ParamRef {
  std::string name;
  Tensor* value;
  ParamGroup group;
  bool decay;      // member of the weight-decay set
  bool trainable;  // receives optimizer updates
};

struct ForwardResult {
  Var x;        // network input (after ingestion padding)
  Var z;        // flattened encoder output
  Var z_hat;    // module output fed to the SVDD branch
  std::optional<Var> x_hat;
  std::optional<GateVars> gates;
  std::vector<Var> params;         // parallel to Model::parameters()
  std::vector<Var> decay_weights;  // subset of params in the decay set
};

/// Encoder, optional LSTM module and head, optional decoder, plus batch-norm
/// running statistics. Which parts exist depends on the variant.
class Model {
 public:
  static Model build(const ArchitectureSpec& spec, const VariantConfig& vc, Rng& rng,
                     DType dtype = DType::kFloat32);

  const ArchitectureSpec& spec() const { return spec_; }
  const VariantConfig& variant() const { return vc_; }
  DType dtype() const { return dtype_; }

  /// Parameters in a fixed order: encoder, module, decoder.
  std::vector<ParamRef> parameters();
  std::vector<NamedTensor> parameter_values() const;
  std::size_t parameter_count() const;

  /// Runs the network on `x` ([n, c, h, w], raw or padded size). Train mode
  /// uses batch statistics in batch norm and updates the running ones.
  ForwardResult forward(Tape& tape, const Tensor& x, Mode mode);

  /// Every parameter and running statistic, for checkpoints.
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);

  /// Sets every parameter to zero; batch-norm running statistics are kept.
  void set_all_zero();

 private:
  struct ConvBlock {
    LayerParams layer;
    std::optional<BatchNormState> bn;
  };

  Model() = default;
  template <typename Fn>
  void for_each_param(Fn&& fn);
  Tensor pad_input(const Tensor& x) const;

  ArchitectureSpec spec_;
  VariantConfig vc_;
  DType dtype_ = DType::kFloat32;
  std::vector<ConvBlock> encoder_;
  std::optional<LstmCellParams> lstm_;
  std::optional<LayerParams> head_;
  std::vector<ConvBlock> decoder_;
};

/// Writes `path` (tensor container with parameters, running statistics and,
/// when given, the hypersphere center and radius) and `path` with extension
/// ".json" (architecture, variant and dtype manifest).
void save_checkpoint(const Model& model, const HypersphereState* hs, const std::filesystem::path& path);

struct LoadedCheckpoint {
  Model model;
  std::optional<HypersphereState> hypersphere;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hsad
