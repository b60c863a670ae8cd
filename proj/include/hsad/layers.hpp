#pragma once

#include <optional>
#include <string>

#include "hsad/autodiff.hpp"
#include "hsad/rng.hpp"

namespace hsad {

enum class LayerKind { kConv, kDeconv, kLinear };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One entry of an architecture's layer list, in Conv2(s_in, s_out, k)
/// notation. Linear layers use `kernel` = 1.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;  // deconv only
  bool bias = true;

  bool operator==(const LayerSpec&) const = default;
};

/// Weights of one conv / deconv / linear layer.
///   conv:   weight [out, in, k, k]
///   deconv: weight [in, out, k, k]   (adjoint of a conv mapping out -> in)
///   linear: weight [out, in]
struct LayerParams {
  LayerSpec spec;
  Tensor weight;
  Tensor bias;  // empty when spec.bias is false
};

Shape weight_shape(const LayerSpec& spec);

/// Kaiming-uniform fan-in initialisation: w ~ U(-b, b), b = sqrt(6 / fan_in),
/// fan_in = product of the weight dims after the first. Biases start at zero.
LayerParams init_params(const LayerSpec& spec, Rng& rng, DType dtype = DType::kFloat64);

enum class Mode { kTrain, kEval };

/// Per-channel batch normalisation parameters and running statistics.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState make(std::size_t channels, DType dtype = DType::kFloat64);
};

/// Spatial output size of a convolution; throws ShapeError when the kernel
/// does not fit.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);
/// Spatial output size of a transposed convolution:
/// (in - 1) * stride - 2 * padding + kernel + output_padding.
std::size_t deconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                               std::size_t output_padding);

/// Cross-correlation (no kernel flip). x: [n, c_in, h, w], weight [c_out, c_in, k, k].
Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, std::size_t stride,
           std::size_t padding);

/// Transposed convolution, the exact adjoint of conv2d for the same weight.
/// x: [n, c_in, h, w], weight [c_in, c_out, k, k].
Var deconv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, std::size_t stride,
             std::size_t padding, std::size_t output_padding = 0);

/// Window maxima; the gradient goes to the first maximum in row-major order.
Var maxpool2d(const Var& x, std::size_t kernel = 2, std::size_t stride = 2);

/// Normalises over every axis except axis 1. Train mode uses batch moments and
/// updates the running statistics in `state`; eval mode uses the running
/// statistics. `gamma` and `beta` are passed separately so the caller decides
/// whether they are trainable.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);

/// x * W^T + b. x: [n, d_in], weight [d_out, d_in].
Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias);

}  // namespace hsad
