#include "hsad/layers.hpp"

#include <cmath>
#include <limits>

namespace hsad {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv:
      return "conv";
    case LayerKind::kDeconv:
      return "deconv";
    case LayerKind::kLinear:
      return "linear";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "conv") return LayerKind::kConv;
  if (name == "deconv") return LayerKind::kDeconv;
  if (name == "linear") return LayerKind::kLinear;
  throw ConfigError("unknown layer kind '" + name + "'");
}

Shape weight_shape(const LayerSpec& spec) {
  if (spec.in == 0 || spec.out == 0 || spec.kernel == 0) throw ConfigError("layer sizes must be positive");
  switch (spec.kind) {
    case LayerKind::kConv:
      return {spec.out, spec.in, spec.kernel, spec.kernel};
    case LayerKind::kDeconv:
      return {spec.in, spec.out, spec.kernel, spec.kernel};
    case LayerKind::kLinear:
      return {spec.out, spec.in};
  }
  throw ConfigError("unknown layer kind");
}

LayerParams init_params(const LayerSpec& spec, Rng& rng, DType dtype) {
  LayerParams p;
  p.spec = spec;
  const Shape ws = weight_shape(spec);
  const std::size_t fan_in = shape_size(ws) / ws.front();
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> w(shape_size(ws));
  for (auto& v : w) v = rng.uniform(-bound, bound);
  p.weight = Tensor(ws, std::move(w), dtype);
  if (spec.bias) p.bias = Tensor::zeros({spec.out}, dtype);
  return p;
}

BatchNormState BatchNormState::make(std::size_t channels, DType dtype) {
  BatchNormState s;
  s.gamma = Tensor::ones({channels}, dtype);
  s.beta = Tensor::zeros({channels}, dtype);
  s.running_mean = Tensor::zeros({channels}, dtype);
  s.running_var = Tensor::ones({channels}, dtype);
  return s;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) + " does not fit input " + std::to_string(in) +
                     " with padding " + std::to_string(padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t deconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                               std::size_t output_padding) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (output_padding >= stride) throw ShapeError("output_padding must be smaller than stride");
  const long long out = static_cast<long long>(in - 1) * static_cast<long long>(stride) -
                        2 * static_cast<long long>(padding) + static_cast<long long>(kernel) +
                        static_cast<long long>(output_padding);
  if (out <= 0) throw ShapeError("transposed convolution output size is not positive");
  return static_cast<std::size_t>(out);
}

namespace {

struct ConvGeometry {
  std::size_t n, channels, height, width;  // image side
  std::size_t kernel, stride, padding;
  std::size_t out_h, out_w;                // column side
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return n * out_h * out_w; }
};

/// col[(c, ki, kj), (n, oy, ox)] = img[n, c, oy*s - p + ki, ox*s - p + kj]
template <typename T>
void im2col(std::span<const T> img, const ConvGeometry& g, std::span<T> col) {
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = col.data() + ((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (std::size_t b = 0; b < g.n; ++b) {
          const T* src = img.data() + (b * g.channels + c) * g.height * g.width;
          T* dst = row + b * plane;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long long iy = static_cast<long long>(oy * g.stride + ki) - static_cast<long long>(g.padding);
            if (iy < 0 || iy >= static_cast<long long>(g.height)) {
              std::fill_n(dst + oy * g.out_w, g.out_w, T(0));
              continue;
            }
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long long ix = static_cast<long long>(ox * g.stride + kj) - static_cast<long long>(g.padding);
              dst[oy * g.out_w + ox] =
                  (ix < 0 || ix >= static_cast<long long>(g.width)) ? T(0) : src[iy * g.width + ix];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-and-adds columns back into an image.
template <typename T>
void col2im(std::span<const T> col, const ConvGeometry& g, std::span<T> img) {
  std::fill(img.begin(), img.end(), T(0));
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = col.data() + ((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (std::size_t b = 0; b < g.n; ++b) {
          T* dst = img.data() + (b * g.channels + c) * g.height * g.width;
          const T* src = row + b * plane;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long long iy = static_cast<long long>(oy * g.stride + ki) - static_cast<long long>(g.padding);
            if (iy < 0 || iy >= static_cast<long long>(g.height)) continue;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long long ix = static_cast<long long>(ox * g.stride + kj) - static_cast<long long>(g.padding);
              if (ix < 0 || ix >= static_cast<long long>(g.width)) continue;
              dst[iy * g.width + ix] += src[oy * g.out_w + ox];
            }
          }
        }
      }
    }
  }
}

Tensor im2col(const Tensor& img, const ConvGeometry& g) {
  Tensor col({g.rows(), g.cols()}, img.dtype());
  dispatch(img.dtype(), [&](auto tag) {
    using T = decltype(tag);
    im2col<T>(img.data<T>(), g, col.mutable_data<T>());
  });
  return col;
}

Tensor col2im(const Tensor& col, const ConvGeometry& g) {
  Tensor img({g.n, g.channels, g.height, g.width}, col.dtype());
  dispatch(col.dtype(), [&](auto tag) {
    using T = decltype(tag);
    col2im<T>(col.data<T>(), g, img.mutable_data<T>());
  });
  return img;
}

/// [n, c, p] -> [c, n*p]
Tensor to_channel_major(const Tensor& t) {
  const std::size_t n = t.dim(0), c = t.dim(1), p = t.size() / (n * c);
  Tensor out({c, n * p}, t.dtype());
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = t.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        std::copy_n(src.data() + (b * c + ch) * p, p, dst.data() + ch * n * p + b * p);
  });
  return out;
}

/// [c, n*p] -> [n, c, h, w]
Tensor from_channel_major(const Tensor& m, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  const std::size_t p = h * w;
  Tensor out({n, c, h, w}, m.dtype());
  dispatch(m.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = m.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        std::copy_n(src.data() + ch * n * p + b * p, p, dst.data() + (b * c + ch) * p);
  });
  return out;
}

/// Adds bias[c] to every element of channel c in an [n, c, ...] tensor.
void add_channel_bias(Tensor& t, const Tensor& bias) {
  const std::size_t n = t.dim(0), c = t.dim(1), p = t.size() / (n * c);
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = t.mutable_data<T>();
    auto b = bias.data<T>();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < p; ++i) dst[(s * c + ch) * p + i] += b[ch];
  });
}

/// Per-channel sum of an [n, c, ...] tensor.
Tensor channel_sum(const Tensor& t) {
  const std::size_t n = t.dim(0), c = t.dim(1), p = t.size() / (n * c);
  Tensor out({c}, t.dtype());
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = t.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < p; ++i) dst[ch] += src[(s * c + ch) * p + i];
  });
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

void check_bias(const std::optional<Var>& bias, std::size_t channels, const char* op) {
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias must have shape [" + std::to_string(channels) + "]");
  }
}

std::vector<Var> with_bias(const Var& x, const Var& w, const std::optional<Var>& bias) {
  std::vector<Var> in{x, w};
  if (bias) in.push_back(*bias);
  return in;
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, std::size_t stride,
           std::size_t padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d weight");
  require_same_dtype(xv, wv, "conv2d");
  if (wv.dim(1) != xv.dim(1)) throw ShapeError("conv2d: weight expects " + std::to_string(wv.dim(1)) +
                                               " input channels, got " + std::to_string(xv.dim(1)));
  if (wv.dim(2) != wv.dim(3)) throw ShapeError("conv2d: kernel must be square");
  const std::size_t c_out = wv.dim(0), k = wv.dim(2);
  check_bias(bias, c_out, "conv2d");

  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), k, stride, padding,
                 conv_output_size(xv.dim(2), k, stride, padding), conv_output_size(xv.dim(3), k, stride, padding)};
  Tensor col = im2col(xv, g);
  Tensor w2 = wv.reshaped({c_out, g.rows()});
  Tensor y = from_channel_major(kernels::matmul(w2, col), g.n, c_out, g.out_h, g.out_w);
  if (bias) add_channel_bias(y, bias->value());

  return x.tape().record(y, with_bias(x, weight, bias), [g, col, w2, wshape = wv.shape()](
                                                            const Tensor& gout, const std::vector<bool>& needs) {
    std::vector<Tensor> out(needs.size());
    Tensor gm = to_channel_major(gout);  // [c_out, n*oh*ow]
    if (needs[0]) out[0] = col2im(kernels::matmul_tn(w2, gm), g);
    if (needs[1]) out[1] = kernels::matmul_nt(gm, col).reshaped(wshape);
    if (needs.size() > 2 && needs[2]) out[2] = channel_sum(gout);
    return out;
  });
}

Var deconv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, std::size_t stride,
             std::size_t padding, std::size_t output_padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 4, "deconv2d input");
  require_rank(wv, 4, "deconv2d weight");
  require_same_dtype(xv, wv, "deconv2d");
  if (wv.dim(0) != xv.dim(1)) throw ShapeError("deconv2d: weight expects " + std::to_string(wv.dim(0)) +
                                               " input channels, got " + std::to_string(xv.dim(1)));
  if (wv.dim(2) != wv.dim(3)) throw ShapeError("deconv2d: kernel must be square");
  const std::size_t c_in = wv.dim(0), c_out = wv.dim(1), k = wv.dim(2);
  check_bias(bias, c_out, "deconv2d");
  const std::size_t oh = deconv_output_size(xv.dim(2), k, stride, padding, output_padding);
  const std::size_t ow = deconv_output_size(xv.dim(3), k, stride, padding, output_padding);
  // The image side of the geometry is the deconv output; the column side is
  // the deconv input, exactly as for the conv2d this op is the adjoint of.
  ConvGeometry g{xv.dim(0), c_out, oh, ow, k, stride, padding, xv.dim(2), xv.dim(3)};

  Tensor xm = to_channel_major(xv);  // [c_in, n*h*w]
  Tensor w2 = wv.reshaped({c_in, g.rows()});
  Tensor y = col2im(kernels::matmul_tn(w2, xm), g);
  if (bias) add_channel_bias(y, bias->value());

  return x.tape().record(
      y, with_bias(x, weight, bias),
      [g, xm, w2, c_in, wshape = wv.shape()](const Tensor& gout, const std::vector<bool>& needs) {
        std::vector<Tensor> out(needs.size());
        Tensor gcol = im2col(gout, g);  // [c_out*k*k, n*h*w]
        if (needs[0]) out[0] = from_channel_major(kernels::matmul(w2, gcol), g.n, c_in, g.out_h, g.out_w);
        if (needs[1]) out[1] = kernels::matmul_nt(xm, gcol).reshaped(wshape);
        if (needs.size() > 2 && needs[2]) out[2] = channel_sum(gout);
        return out;
      });
}

Var maxpool2d(const Var& x, std::size_t kernel, std::size_t stride) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "maxpool2d");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h < kernel || w < kernel) throw ShapeError("maxpool2d: spatial dims smaller than the kernel");
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor y({n, c, oh, ow}, xv.dtype());
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = xv.data<T>();
    auto dst = y.mutable_data<T>();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const std::size_t base = plane * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          std::size_t best = base + oy * stride * w + ox * stride;
          for (std::size_t ki = 0; ki < kernel; ++ki) {
            for (std::size_t kj = 0; kj < kernel; ++kj) {
              const std::size_t i = base + (oy * stride + ki) * w + ox * stride + kj;
              if (src[i] > src[best]) best = i;
            }
          }
          dst[o] = src[best];
          (*argmax)[o] = best;
        }
      }
    }
  });
  const Shape in_shape = xv.shape();
  return x.tape().record(y, {x}, [argmax, in_shape](const Tensor& g, const std::vector<bool>&) {
    Tensor gx(in_shape, g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto src = g.data<T>();
      auto dst = gx.mutable_data<T>();
      for (std::size_t o = 0; o < src.size(); ++o) dst[(*argmax)[o]] += src[o];
    });
    return std::vector<Tensor>{gx};
  });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("batchnorm: expected [n, c, ...] input");
  const std::size_t n = xv.dim(0), c = xv.dim(1), p = xv.size() / (n * c);
  const std::size_t count = n * p;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  if (gv.size() != c || bv.size() != c || state.running_mean.size() != c || state.running_var.size() != c) {
    throw ShapeError("batchnorm: channel count " + std::to_string(c) + " does not match the state");
  }
  require_same_dtype(xv, gv, "batchnorm");

  Tensor xhat(xv.shape(), xv.dtype());
  Tensor y(xv.shape(), xv.dtype());
  Tensor inv_std({c}, DType::kFloat64);
  const double eps = state.eps;
  dispatch(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = xv.data<T>();
    auto xh = xhat.mutable_data<T>();
    auto dst = y.mutable_data<T>();
    auto gm = gv.data<T>();
    auto bt = bv.data<T>();
    auto is = inv_std.mutable_data<double>();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mu = 0.0, var = 0.0;
      if (mode == Mode::kTrain) {
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t i = 0; i < p; ++i) mu += src[(s * c + ch) * p + i];
        mu /= static_cast<double>(count);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t i = 0; i < p; ++i) {
            const double d = src[(s * c + ch) * p + i] - mu;
            var += d * d;
          }
        var /= static_cast<double>(count);
        const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
        state.running_mean.set(ch, (1.0 - state.momentum) * state.running_mean.at(ch) + state.momentum * mu);
        state.running_var.set(ch, (1.0 - state.momentum) * state.running_var.at(ch) + state.momentum * unbiased);
      } else {
        mu = state.running_mean.at(ch);
        var = state.running_var.at(ch);
      }
      is[ch] = 1.0 / std::sqrt(var + eps);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < p; ++i) {
          const std::size_t j = (s * c + ch) * p + i;
          xh[j] = static_cast<T>((src[j] - mu) * is[ch]);
          dst[j] = gm[ch] * xh[j] + bt[ch];
        }
    }
  });

  return x.tape().record(
      y, {x, gamma, beta},
      [xhat, inv_std, gv, mode, n, c, p, count](const Tensor& g, const std::vector<bool>& needs) {
        std::vector<Tensor> out(3);
        Tensor dgamma({c}, g.dtype()), dbeta({c}, g.dtype()), dx(g.shape(), g.dtype());
        dispatch(g.dtype(), [&](auto tag) {
          using T = decltype(tag);
          auto go = g.data<T>();
          auto xh = xhat.data<T>();
          auto gm = gv.data<T>();
          auto is = inv_std.data<double>();
          auto dg = dgamma.mutable_data<T>();
          auto db = dbeta.mutable_data<T>();
          auto dxv = dx.mutable_data<T>();
          for (std::size_t ch = 0; ch < c; ++ch) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t i = 0; i < p; ++i) {
                const std::size_t j = (s * c + ch) * p + i;
                sum_g += go[j];
                sum_gx += static_cast<double>(go[j]) * xh[j];
              }
            db[ch] = static_cast<T>(sum_g);
            dg[ch] = static_cast<T>(sum_gx);
            if (!needs[0]) continue;
            const double scale = gm[ch] * is[ch];
            const double m = static_cast<double>(count);
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t i = 0; i < p; ++i) {
                const std::size_t j = (s * c + ch) * p + i;
                if (mode == Mode::kTrain) {
                  dxv[j] = static_cast<T>(scale * (go[j] - sum_g / m - xh[j] * sum_gx / m));
                } else {
                  dxv[j] = static_cast<T>(scale * go[j]);
                }
              }
          }
        });
        if (needs[0]) out[0] = dx;
        if (needs[1]) out[1] = dgamma;
        if (needs[2]) out[2] = dbeta;
        return out;
      });
}

Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 2, "linear input");
  require_rank(wv, 2, "linear weight");
  if (xv.dim(1) != wv.dim(1)) {
    throw ShapeError("linear: input width " + std::to_string(xv.dim(1)) + " does not match weight " +
                     shape_to_string(wv.shape()));
  }
  check_bias(bias, wv.dim(0), "linear");
  Tensor y = kernels::matmul_nt(xv, wv);
  if (bias) {
    const std::size_t n = y.dim(0), d = y.dim(1);
    dispatch(y.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dst = y.mutable_data<T>();
      auto b = bias->value().template data<T>();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dst[i * d + j] += b[j];
    });
  }
  Tensor xs = xv, ws = wv;
  return x.tape().record(y, with_bias(x, weight, bias), [xs, ws](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> out(needs.size());
    if (needs[0]) out[0] = kernels::matmul(g, ws);
    if (needs[1]) out[1] = kernels::matmul_tn(g, xs);
    if (needs.size() > 2 && needs[2]) out[2] = kernels::reduce_to(g, {g.dim(1)});
    return out;
  });
}

}  // namespace hsad
