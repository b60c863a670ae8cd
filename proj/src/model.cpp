#include "hsad/model.hpp"

#include <fstream>
#include <unordered_map>

namespace hsad {

std::string to_string(Family family) { return family == Family::kSmallImage ? "small_image" : "large_image"; }

Family family_from_string(const std::string& name) {
  if (name == "small_image") return Family::kSmallImage;
  if (name == "large_image") return Family::kLargeImage;
  throw ConfigError("unknown architecture family '" + name + "'");
}

// ---------------------------------------------------------------------------
// ArchitectureSpec

namespace {

LayerSpec conv(std::size_t in, std::size_t out, std::size_t k) {
  return {.kind = LayerKind::kConv, .in = in, .out = out, .kernel = k, .stride = 1, .padding = k / 2};
}

LayerSpec deconv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
  return {.kind = LayerKind::kDeconv,
          .in = in,
          .out = out,
          .kernel = k,
          .stride = stride,
          .padding = k / 2,
          .output_padding = stride - 1};
}

/// Pads raw sizes that the pooling chain cannot halve cleanly up to `target`.
std::size_t ingestion_pad(std::size_t h, std::size_t w, std::size_t multiple, std::size_t target) {
  if (h % multiple == 0 && w % multiple == 0) return 0;
  if (h != w || h > target || (target - h) % 2 != 0) {
    throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) + " does not survive " +
                      "the pooling chain (needs multiples of " + std::to_string(multiple) + ")");
  }
  return (target - h) / 2;
}

nlohmann::json layer_to_json(const LayerSpec& l) {
  return {{"kind", to_string(l.kind)}, {"in", l.in},           {"out", l.out},
          {"kernel", l.kernel},        {"stride", l.stride},   {"padding", l.padding},
          {"output_padding", l.output_padding}, {"bias", l.bias}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.in = j.at("in").get<std::size_t>();
  l.out = j.at("out").get<std::size_t>();
  l.kernel = j.at("kernel").get<std::size_t>();
  l.stride = j.value("stride", std::size_t{1});
  l.padding = j.value("padding", std::size_t{0});
  l.output_padding = j.value("output_padding", std::size_t{0});
  l.bias = j.value("bias", true);
  return l;
}

}  // namespace

ArchitectureSpec small_image_spec(std::size_t channels, std::size_t height, std::size_t width,
                                  std::size_t base_width) {
  if (channels != 1 && channels != 3) throw ConfigError("small_image expects 1 or 3 input channels");
  if (base_width == 0) throw ConfigError("base_width must be positive");
  ArchitectureSpec s;
  s.family = Family::kSmallImage;
  s.in_channels = channels;
  s.pad = ingestion_pad(height, width, 8, 32);
  s.height = height + 2 * s.pad;
  s.width = width + 2 * s.pad;
  const std::size_t w = base_width;
  s.encoder = {conv(channels, w, 5), conv(w, 2 * w, 5), conv(2 * w, 4 * w, 5)};
  const std::size_t fh = s.height / 8, fw = s.width / 8;
  s.lstm_dim = 4 * w * fh * fw;
  s.latent_dim = 8 * fh * fw;
  s.head = LayerSpec{.kind = LayerKind::kLinear, .in = s.lstm_dim, .out = s.latent_dim, .kernel = 1};
  s.decoder_input = {8, fh, fw};
  s.decoder = {deconv(8, 4 * w, 5, 1), deconv(4 * w, 2 * w, 5, 2), deconv(2 * w, w, 5, 2), deconv(w, channels, 5, 2)};
  s.validate();
  return s;
}

ArchitectureSpec large_image_spec(std::size_t channels, std::size_t size) {
  if (channels != 3) throw ConfigError("large_image expects 3 input channels, got " + std::to_string(channels));
  if (size % 16 != 0) throw ConfigError("large_image input size must be a multiple of 16");
  ArchitectureSpec s;
  s.family = Family::kLargeImage;
  s.in_channels = 3;
  s.height = s.width = size;
  s.encoder = {conv(3, 96, 3), conv(96, 128, 3), conv(128, 256, 3), conv(256, 256, 3)};
  const std::size_t f = size / 16;
  s.lstm_dim = 256 * f * f;
  s.latent_dim = s.lstm_dim;
  s.decoder_input = {256, f, f};
  s.decoder = {deconv(256, 256, 3, 2), deconv(256, 128, 3, 2), deconv(128, 96, 3, 2), deconv(96, 3, 3, 2)};
  s.validate();
  return s;
}

void ArchitectureSpec::validate() const {
  if (family == Family::kLargeImage && in_channels != 3) throw ConfigError("large_image expects 3 input channels");
  if (encoder.empty()) throw ConfigError("architecture has no encoder layers");
  if (2 * pad >= height || 2 * pad >= width) throw ConfigError("ingestion padding larger than the input");
  std::size_t c = in_channels, h = height, w = width;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const LayerSpec& l = encoder[i];
    if (l.kind != LayerKind::kConv) throw ConfigError("encoder layers must be convolutions");
    if (l.in != c) throw ConfigError("encoder layer " + std::to_string(i) + " expects " + std::to_string(l.in) +
                                     " channels, gets " + std::to_string(c));
    h = conv_output_size(h, l.kernel, l.stride, l.padding);
    w = conv_output_size(w, l.kernel, l.stride, l.padding);
    if (h % 2 != 0 || w % 2 != 0) {
      throw ConfigError("odd spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                        " at pooling stage " + std::to_string(i));
    }
    h /= 2;
    w /= 2;
    c = l.out;
  }
  if (lstm_dim != c * h * w) {
    throw ConfigError("lstm_dim " + std::to_string(lstm_dim) + " does not match encoder output " +
                      std::to_string(c * h * w));
  }
  if (head) {
    if (head->kind != LayerKind::kLinear || head->in != lstm_dim || head->out != latent_dim) {
      throw ConfigError("head must be Linear(lstm_dim, latent_dim)");
    }
  } else if (latent_dim != lstm_dim) {
    throw ConfigError("without a head the latent width must equal lstm_dim");
  }
  if (decoder_input[0] * decoder_input[1] * decoder_input[2] != latent_dim) {
    throw ConfigError("decoder input shape does not hold latent_dim elements");
  }
  c = decoder_input[0];
  h = decoder_input[1];
  w = decoder_input[2];
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const LayerSpec& l = decoder[i];
    if (l.kind != LayerKind::kDeconv) throw ConfigError("decoder layers must be transposed convolutions");
    if (l.in != c) throw ConfigError("decoder layer " + std::to_string(i) + " expects " + std::to_string(l.in) +
                                     " channels, gets " + std::to_string(c));
    h = deconv_output_size(h, l.kernel, l.stride, l.padding, l.output_padding);
    w = deconv_output_size(w, l.kernel, l.stride, l.padding, l.output_padding);
    c = l.out;
  }
  if (!decoder.empty() && (c != in_channels || h != height || w != width)) {
    throw ConfigError("decoder output " + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w) +
                      " does not reproduce the input shape");
  }
}

nlohmann::json ArchitectureSpec::to_json() const {
  nlohmann::json j;
  j["family"] = to_string(family);
  j["in_channels"] = in_channels;
  j["height"] = height;
  j["width"] = width;
  j["pad"] = pad;
  j["encoder"] = nlohmann::json::array();
  for (const auto& l : encoder) j["encoder"].push_back(layer_to_json(l));
  j["lstm_dim"] = lstm_dim;
  j["head"] = head ? layer_to_json(*head) : nlohmann::json(nullptr);
  j["latent_dim"] = latent_dim;
  j["decoder_input"] = decoder_input;
  j["decoder"] = nlohmann::json::array();
  for (const auto& l : decoder) j["decoder"].push_back(layer_to_json(l));
  j["leaky_slope"] = leaky_slope;
  return j;
}

ArchitectureSpec ArchitectureSpec::from_json(const nlohmann::json& j) {
  ArchitectureSpec s;
  s.family = family_from_string(j.at("family").get<std::string>());
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.pad = j.value("pad", std::size_t{0});
  for (const auto& l : j.at("encoder")) s.encoder.push_back(layer_from_json(l));
  s.lstm_dim = j.at("lstm_dim").get<std::size_t>();
  if (j.contains("head") && !j.at("head").is_null()) s.head = layer_from_json(j.at("head"));
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
  s.decoder_input = j.at("decoder_input").get<std::array<std::size_t, 3>>();
  for (const auto& l : j.at("decoder")) s.decoder.push_back(layer_from_json(l));
  s.leaky_slope = j.value("leaky_slope", 0.01);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// VariantConfig

void VariantConfig::validate() const {
  if (gate_ablation != GateAblation::kNone && !traits(variant).lstm) {
    throw ConfigError("gate ablation " + to_string(gate_ablation) + " needs a variant with an LSTM module");
  }
}

nlohmann::json VariantConfig::to_json() const {
  return {{"variant", variant_tag(variant, boundary)},
          {"gate_ablation", to_string(gate_ablation)},
          {"kl_mode", to_string(kl_mode)},
          {"bias_free", bias_free}};
}

VariantConfig VariantConfig::from_json(const nlohmann::json& j) {
  VariantConfig vc;
  const VariantTag tag = parse_variant_tag(j.at("variant").get<std::string>());
  vc.variant = tag.variant;
  vc.boundary = tag.boundary;
  vc.gate_ablation = gate_ablation_from_string(j.value("gate_ablation", std::string("none")));
  vc.kl_mode = kl_mode_from_string(j.value("kl_mode", std::string("batch_moments")));
  vc.bias_free = j.value("bias_free", false);
  vc.validate();
  return vc;
}

// ---------------------------------------------------------------------------
// Model

Model Model::build(const ArchitectureSpec& spec, const VariantConfig& vc, Rng& rng, DType dtype) {
  spec.validate();
  vc.validate();
  const VariantTraits t = traits(vc.variant);
  Model m;
  m.spec_ = spec;
  m.vc_ = vc;
  m.dtype_ = dtype;
  auto make_block = [&](LayerSpec l, bool with_bn) {
    if (vc.bias_free) l.bias = false;
    ConvBlock b{init_params(l, rng, dtype), std::nullopt};
    if (with_bn) b.bn = BatchNormState::make(l.out, dtype);
    return b;
  };
  for (auto& l : m.spec_.encoder) {
    if (vc.bias_free) l.bias = false;
    m.encoder_.push_back(make_block(l, true));
  }
  if (t.lstm) m.lstm_ = LstmCellParams::init(spec.lstm_dim, spec.lstm_dim, rng, dtype);
  if (m.spec_.head) {
    if (vc.bias_free) m.spec_.head->bias = false;
    m.head_ = init_params(*m.spec_.head, rng, dtype);
  }
  if (t.decoder) {
    if (spec.decoder.empty()) throw ConfigError(variant_name(vc.variant) + " needs a decoder in the architecture");
    for (std::size_t i = 0; i < m.spec_.decoder.size(); ++i) {
      auto& l = m.spec_.decoder[i];
      if (vc.bias_free) l.bias = false;
      m.decoder_.push_back(make_block(l, i + 1 < m.spec_.decoder.size()));
    }
  }
  return m;
}

template <typename Fn>
void Model::for_each_param(Fn&& fn) {
  const bool beta_trainable = !vc_.bias_free;
  auto blocks = [&](std::vector<ConvBlock>& list, const std::string& prefix, ParamGroup group) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string p = prefix + "." + std::to_string(i) + ".";
      fn(p + "weight", list[i].layer.weight, group, true, true);
      if (!list[i].layer.bias.empty()) fn(p + "bias", list[i].layer.bias, group, false, true);
      if (list[i].bn) {
        fn(p + "bn.gamma", list[i].bn->gamma, group, false, true);
        fn(p + "bn.beta", list[i].bn->beta, group, false, beta_trainable);
      }
    }
  };
  blocks(encoder_, "enc", ParamGroup::kEncoder);
  if (lstm_) {
    fn("lstm.w_s", lstm_->w_s, ParamGroup::kModule, true, true);
    fn("lstm.w_o", lstm_->w_o, ParamGroup::kModule, true, true);
    fn("lstm.w_f", lstm_->w_f, ParamGroup::kModule, true, true);
    fn("lstm.w_c", lstm_->w_c, ParamGroup::kModule, true, true);
    fn("lstm.b_s", lstm_->b_s, ParamGroup::kModule, false, true);
    fn("lstm.b_o", lstm_->b_o, ParamGroup::kModule, false, true);
    fn("lstm.b_f", lstm_->b_f, ParamGroup::kModule, false, true);
    fn("lstm.b_c", lstm_->b_c, ParamGroup::kModule, false, true);
  }
  if (head_) {
    fn("head.weight", head_->weight, ParamGroup::kModule, true, true);
    if (!head_->bias.empty()) fn("head.bias", head_->bias, ParamGroup::kModule, false, true);
  }
  blocks(decoder_, "dec", ParamGroup::kDecoder);
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  for_each_param([&](const std::string& name, Tensor& t, ParamGroup g, bool decay, bool trainable) {
    out.push_back({name, &t, g, decay, trainable});
  });
  return out;
}

std::vector<NamedTensor> Model::parameter_values() const {
  std::vector<NamedTensor> out;
  const_cast<Model*>(this)->for_each_param(
      [&](const std::string& name, Tensor& t, ParamGroup, bool, bool) { out.push_back({name, t}); });
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameter_values()) n += p.value.size();
  return n;
}

void Model::set_all_zero() {
  for (auto& p : parameters()) *p.value = Tensor::zeros_like(*p.value);
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out = parameter_values();
  auto stats = [&](const std::vector<ConvBlock>& list, const std::string& prefix) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!list[i].bn) continue;
      const std::string p = prefix + "." + std::to_string(i) + ".bn.";
      out.push_back({p + "running_mean", list[i].bn->running_mean});
      out.push_back({p + "running_var", list[i].bn->running_var});
    }
  };
  stats(encoder_, "enc");
  stats(decoder_, "dec");
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& tensors) {
  auto assign = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = find_tensor(tensors, name);
    if (src.shape() != dst.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_to_string(src.shape()) +
                       ", expected " + shape_to_string(dst.shape()));
    }
    dst = src.to(dtype_);
  };
  for_each_param([&](const std::string& name, Tensor& t, ParamGroup, bool, bool) { assign(name, t); });
  auto stats = [&](std::vector<ConvBlock>& list, const std::string& prefix) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!list[i].bn) continue;
      const std::string p = prefix + "." + std::to_string(i) + ".bn.";
      assign(p + "running_mean", list[i].bn->running_mean);
      assign(p + "running_var", list[i].bn->running_var);
    }
  };
  stats(encoder_, "enc");
  stats(decoder_, "dec");
}

Tensor Model::pad_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw ShapeError("model input must be [n, " + std::to_string(spec_.in_channels) + ", h, w], got " +
                     shape_to_string(x.shape()));
  }
  const Tensor xt = x.to(dtype_);
  if (x.dim(2) == spec_.height && x.dim(3) == spec_.width) return xt;
  if (x.dim(2) != spec_.raw_height() || x.dim(3) != spec_.raw_width()) {
    throw ShapeError("model input spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                     " matches neither the raw nor the network size");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), rh = x.dim(2), rw = x.dim(3), p = spec_.pad;
  Tensor out({n, c, spec_.height, spec_.width}, dtype_);
  dispatch(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto src = xt.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t plane = 0; plane < n * c; ++plane)
      for (std::size_t i = 0; i < rh; ++i)
        std::copy_n(src.data() + (plane * rh + i) * rw, rw,
                    dst.data() + (plane * spec_.height + i + p) * spec_.width + p);
  });
  return out;
}

ForwardResult Model::forward(Tape& tape, const Tensor& x, Mode mode) {
  ForwardResult r;
  std::unordered_map<const Tensor*, Var> vars;
  for_each_param([&](const std::string&, Tensor& t, ParamGroup, bool decay, bool trainable) {
    Var v = trainable ? tape.leaf(t) : tape.constant(t);
    vars.emplace(&t, v);
    r.params.push_back(v);
    if (decay) r.decay_weights.push_back(v);
  });
  auto var = [&](const Tensor& t) { return vars.at(&t); };
  auto bias = [&](const LayerParams& l) -> std::optional<Var> {
    if (l.bias.empty()) return std::nullopt;
    return var(l.bias);
  };

  r.x = tape.constant(pad_input(x));
  const std::size_t n = x.dim(0);
  Var h = r.x;
  for (auto& b : encoder_) {
    const LayerSpec& l = b.layer.spec;
    h = conv2d(h, var(b.layer.weight), bias(b.layer), l.stride, l.padding);
    h = batchnorm(h, var(b.bn->gamma), var(b.bn->beta), *b.bn, mode);
    h = maxpool2d(leaky_relu(h, spec_.leaky_slope), 2, 2);
  }
  r.z = reshape(h, {n, spec_.lstm_dim});

  Var m = r.z;
  if (lstm_) {
    LstmVars lv{var(lstm_->w_s), var(lstm_->w_o), var(lstm_->w_f), var(lstm_->w_c),
                var(lstm_->b_s), var(lstm_->b_o), var(lstm_->b_f), var(lstm_->b_c)};
    GateVars g = lstm_step(r.z, lv, LstmState::zeros(*lstm_), vc_.gate_ablation);
    m = g.h;
    r.gates = g;
  }
  r.z_hat = head_ ? linear(m, var(head_->weight), bias(*head_)) : m;

  if (!decoder_.empty()) {
    const auto& di = spec_.decoder_input;
    Var d = reshape(r.z_hat, {n, di[0], di[1], di[2]});
    for (auto& b : decoder_) {
      const LayerSpec& l = b.layer.spec;
      d = deconv2d(d, var(b.layer.weight), bias(b.layer), l.stride, l.padding, l.output_padding);
      if (b.bn) {
        d = leaky_relu(batchnorm(d, var(b.bn->gamma), var(b.bn->beta), *b.bn, mode), spec_.leaky_slope);
      } else {
        d = sigmoid(d);
      }
    }
    r.x_hat = d;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& ckpt) {
  std::filesystem::path p = ckpt;
  p.replace_extension(".json");
  return p;
}

}  // namespace

void save_checkpoint(const Model& model, const HypersphereState* hs, const std::filesystem::path& path) {
  std::vector<NamedTensor> tensors = model.state();
  if (hs != nullptr) {
    tensors.push_back({"hypersphere.center", hs->center});
    tensors.push_back({"hypersphere.radius", Tensor::scalar(hs->radius)});
    tensors.push_back({"hypersphere.nu", Tensor::scalar(hs->nu)});
  }
  save_tensors(path, tensors);
  nlohmann::json manifest;
  manifest["format"] = "hsad-checkpoint";
  manifest["version"] = kContainerVersion;
  manifest["dtype"] = to_string(model.dtype());
  manifest["architecture"] = model.spec().to_json();
  manifest["variant"] = model.variant().to_json();
  manifest["tensors"] = path.filename().string();
  std::ofstream f(manifest_path(path));
  if (!f) throw std::runtime_error("cannot write " + manifest_path(path).string());
  f << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(manifest_path(path));
  if (!f) throw std::runtime_error("cannot open manifest " + manifest_path(path).string());
  const nlohmann::json manifest = nlohmann::json::parse(f);
  const ArchitectureSpec spec = ArchitectureSpec::from_json(manifest.at("architecture"));
  const VariantConfig vc = VariantConfig::from_json(manifest.at("variant"));
  const DType dtype = dtype_from_string(manifest.at("dtype").get<std::string>());
  Rng rng(0);
  Model model = Model::build(spec, vc, rng, dtype);
  const auto tensors = load_tensors(path);
  model.load_state(tensors);
  std::optional<HypersphereState> hs;
  for (const auto& t : tensors) {
    if (t.name == "hypersphere.center") {
      hs = HypersphereState{t.value, find_tensor(tensors, "hypersphere.radius").item(),
                            find_tensor(tensors, "hypersphere.nu").item()};
    }
  }
  return {std::move(model), hs};
}

}  // namespace hsad
