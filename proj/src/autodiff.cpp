#include "hsad/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace hsad {

// ---------------------------------------------------------------------------
// Tape

Tape& Var::tape() const {
  if (tape_ == nullptr) throw ContractError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

int Tape::check(const Var& v) const {
  if (v.tape_ != this) throw ContractError("Var belongs to a different tape");
  if (v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw ContractError("Var id out of range");
  }
  return v.id_;
}

Var Tape::leaf(Tensor value) {
  if (value.empty()) throw ContractError("leaf from an empty tensor");
  nodes_.push_back({std::move(value), {}, nullptr, recording_});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  if (value.empty()) throw ContractError("constant from an empty tensor");
  nodes_.push_back({std::move(value), {}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const auto& in : inputs) {
    const int id = check(in);
    node.inputs.push_back(id);
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  node.requires_grad = node.requires_grad && recording_;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value(const Var& v) const { return nodes_[check(v)].value; }

bool Tape::requires_grad(const Var& v) const { return nodes_[check(v)].requires_grad; }

void Tape::backward(const Var& loss) {
  const Tensor& v = value(loss);
  if (v.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(v.shape()));
  }
  backward(loss, Tensor::ones(v.shape(), v.dtype()));
}

void Tape::backward(const Var& output, const Tensor& seed) {
  if (!recording_) throw ContractError("backward() on a non-recording tape");
  const int root = check(output);
  require_same_shape(nodes_[root].value, seed, "backward seed");
  grads_.assign(nodes_.size(), Tensor());
  grads_[root] = seed.to(nodes_[root].value.dtype());
  for (int id = root; id >= 0; --id) {
    Node& node = nodes_[id];
    if (grads_[id].empty() || !node.backward) continue;
    std::vector<bool> needs(node.inputs.size());
    for (std::size_t i = 0; i < needs.size(); ++i) needs[i] = nodes_[node.inputs[i]].requires_grad;
    std::vector<Tensor> in_grads = node.backward(grads_[id], needs);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!needs[i] || i >= in_grads.size() || in_grads[i].empty()) continue;
      const int in = node.inputs[i];
      require_same_shape(nodes_[in].value, in_grads[i], "backward rule");
      grads_[in] = grads_[in].empty() ? std::move(in_grads[i]) : kernels::add(grads_[in], in_grads[i]);
    }
  }
}

Tensor Tape::grad(const Var& v) const {
  const int id = check(v);
  if (static_cast<std::size_t>(id) < grads_.size() && !grads_[id].empty()) return grads_[id];
  return Tensor::zeros_like(nodes_[id].value);
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  require_same_dtype(a, b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " * " +
                     shape_to_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ConstMap<T> ma(a.data<T>().data(), m, k);
    ConstMap<T> mb(b.data<T>().data(), k, n);
    MutMap<T> mo(out.mutable_data<T>().data(), m, n);
    mo.noalias() = ma * mb;
  });
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  require_same_dtype(a, b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) throw ShapeError("matmul_tn: leading dimensions differ");
  const auto k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ConstMap<T> ma(a.data<T>().data(), k, m);
    ConstMap<T> mb(b.data<T>().data(), k, n);
    MutMap<T> mo(out.mutable_data<T>().data(), m, n);
    mo.noalias() = ma.transpose() * mb;
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  require_same_dtype(a, b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) throw ShapeError("matmul_nt: trailing dimensions differ");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ConstMap<T> ma(a.data<T>().data(), m, k);
    ConstMap<T> mb(b.data<T>().data(), n, k);
    MutMap<T> mo(out.mutable_data<T>().data(), m, n);
    mo.noalias() = ma * mb.transpose();
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  require_same_dtype(a, b, "add");
  Tensor out = a.clone();
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto o = out.mutable_data<T>();
    auto y = b.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  });
  return out;
}

Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Tensor out(shape, g.dtype());
  const std::size_t m = out.size();
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = g.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i % m] += src[i];
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a.clone();
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& x : out.mutable_data<T>()) x = static_cast<T>(x * s);
  });
  return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

/// Output shape of a broadcasting binary op.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto fits = [](const Shape& small, const Shape& big) {
    if (shape_size(small) == 1) return true;
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
  };
  if (a == b) return a;
  if (shape_size(a) >= shape_size(b) && fits(b, a)) return a;
  if (shape_size(b) > shape_size(a) && fits(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
}

/// out[i] = f(a[i % |a|], b[i % |b|])
template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  require_same_dtype(a, b, "elementwise");
  Tensor out(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    const std::size_t na = x.size(), nb = y.size();
    if (na == o.size() && nb == o.size()) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
    } else {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i % na], y[i % nb]);
    }
  });
  return out;
}

template <typename F>
Tensor unary_map(const Tensor& a, F f) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  });
  return out;
}

/// Unary op whose derivative is a function of input x and output y.
template <typename F, typename D>
Var unary_op(const Var& a, F f, D dfdx) {
  Tensor x = a.value();
  Tensor y = unary_map(x, f);
  return a.tape().record(y, {a}, [x, y, dfdx](const Tensor& g, const std::vector<bool>&) {
    Tensor ga(g.shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gx = ga.mutable_data<T>();
      auto go = g.data<T>();
      auto xv = x.data<T>();
      auto yv = y.data<T>();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * dfdx(xv[i], yv[i]);
    });
    return std::vector<Tensor>{ga};
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), "add");
  Tensor y = binary_map(a.value(), b.value(), out_shape, [](auto x, auto z) { return x + z; });
  const Shape sa = a.shape(), sb = b.shape();
  return tape.record(y, {a, b}, [sa, sb](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> out(2);
    if (needs[0]) out[0] = kernels::reduce_to(g, sa);
    if (needs[1]) out[1] = kernels::reduce_to(g, sb);
    return out;
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), "sub");
  Tensor y = binary_map(a.value(), b.value(), out_shape, [](auto x, auto z) { return x - z; });
  const Shape sa = a.shape(), sb = b.shape();
  return tape.record(y, {a, b}, [sa, sb](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> out(2);
    if (needs[0]) out[0] = kernels::reduce_to(g, sa);
    if (needs[1]) out[1] = kernels::reduce_to(kernels::scale(g, -1.0), sb);
    return out;
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), "mul");
  Tensor va = a.value(), vb = b.value();
  Tensor y = binary_map(va, vb, out_shape, [](auto x, auto z) { return x * z; });
  return tape.record(y, {a, b}, [va, vb](const Tensor& g, const std::vector<bool>& needs) {
    auto times = [](auto x, auto z) { return x * z; };
    std::vector<Tensor> out(2);
    if (needs[0]) out[0] = kernels::reduce_to(binary_map(g, vb, g.shape(), times), va.shape());
    if (needs[1]) out[1] = kernels::reduce_to(binary_map(g, va, g.shape(), times), vb.shape());
    return out;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor y = unary_map(a.value(), [s](auto x) { return static_cast<decltype(x)>(x + s); });
  return a.tape().record(y, {a}, [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g}; });
}

Var mul_scalar(const Var& a, double s) {
  Tensor y = kernels::scale(a.value(), s);
  return a.tape().record(y, {a}, [s](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{kernels::scale(g, s)};
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var sigmoid(const Var& a) {
  return unary_op(
      a,
      [](auto x) {
        using T = decltype(x);
        // Split by sign so exp never overflows.
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Var tanh(const Var& a) {
  return unary_op(
      a, [](auto x) { return std::tanh(x); }, [](auto, auto y) { return decltype(y)(1) - y * y; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary_op(
      a,
      [slope](auto x) {
        using T = decltype(x);
        return x >= T(0) ? x : static_cast<T>(slope) * x;
      },
      [slope](auto x, auto) {
        using T = decltype(x);
        return x >= T(0) ? T(1) : static_cast<T>(slope);
      });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var exp(const Var& a) {
  return unary_op(
      a, [](auto x) { return std::exp(x); }, [](auto, auto y) { return y; });
}

Var log(const Var& a) {
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    // NaN passes through so callers can report divergence themselves.
    if (x.at(i) <= 0.0) throw DomainError("log of non-positive value " + std::to_string(x.at(i)));
  }
  return unary_op(
      a, [](auto v) { return std::log(v); }, [](auto v, auto) { return decltype(v)(1) / v; });
}

Var square(const Var& a) {
  return unary_op(
      a, [](auto x) { return x * x; }, [](auto x, auto) { return decltype(x)(2) * x; });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator-(const Var& a) { return neg(a); }
Var operator+(const Var& a, double s) { return add_scalar(a, s); }
Var operator*(const Var& a, double s) { return mul_scalar(a, s); }
Var operator*(double s, const Var& a) { return mul_scalar(a, s); }

// ---------------------------------------------------------------------------
// Linear algebra and shape ops

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  Tensor va = a.value(), vb = b.value();
  Tensor y = kernels::matmul(va, vb);
  return tape.record(y, {a, b}, [va, vb](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<Tensor> out(2);
    if (needs[0]) out[0] = kernels::matmul_nt(g, vb);  // g * b^T
    if (needs[1]) out[1] = kernels::matmul_tn(va, g);  // a^T * g
    return out;
  });
}

namespace {

Tensor transpose_kernel(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_to_string(a.shape()));
  const auto m = a.dim(0), n = a.dim(1);
  Tensor out({n, m}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = a.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  });
  return out;
}

}  // namespace

Var transpose(const Var& a) {
  return a.tape().record(transpose_kernel(a.value()), {a}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{transpose_kernel(g)};
  });
}

Var reshape(const Var& a, Shape shape) {
  const Shape original = a.shape();
  return a.tape().record(a.value().reshaped(std::move(shape)), {a},
                         [original](const Tensor& g, const std::vector<bool>&) {
                           return std::vector<Tensor>{g.reshaped(original)};
                         });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) throw ShapeError("concat: shape mismatch off the concat axis");
    }
    require_same_dtype(p.value(), parts.front().value(), "concat");
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t total = out_shape[axis];

  Tensor y(out_shape, parts.front().value().dtype());
  dispatch(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = y.mutable_data<T>();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto src = parts[p].value().template data<T>();
      const std::size_t w = widths[p] * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                    dst.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset * inner));
      }
      offset += widths[p];
    }
  });

  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p.shape());
  return parts.front().tape().record(
      y, parts, [shapes, widths, outer, inner, total](const Tensor& g, const std::vector<bool>& needs) {
        std::vector<Tensor> out(shapes.size());
        std::size_t offset = 0;
        for (std::size_t p = 0; p < shapes.size(); ++p) {
          if (needs[p]) {
            out[p] = Tensor(shapes[p], g.dtype());
            dispatch(g.dtype(), [&](auto tag) {
              using T = decltype(tag);
              auto src = g.data<T>();
              auto dst = out[p].mutable_data<T>();
              const std::size_t w = widths[p] * inner;
              for (std::size_t o = 0; o < outer; ++o) {
                std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset * inner), w,
                            dst.begin() + static_cast<std::ptrdiff_t>(o * w));
              }
            });
          }
          offset += widths[p];
        }
        return out;
      });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct ReductionPlan {
  Shape out_shape;
  std::vector<std::size_t> out_index;  // input flat index -> output flat index
  std::size_t group = 1;               // elements folded into each output
};

ReductionPlan plan_reduction(const Shape& in, std::vector<std::size_t> axes) {
  if (axes.empty()) {
    axes.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) axes[i] = i;
  }
  std::vector<bool> reduced(in.size(), false);
  for (auto ax : axes) {
    if (ax >= in.size()) throw ShapeError("reduction axis " + std::to_string(ax) + " out of range");
    reduced[ax] = true;
  }
  ReductionPlan plan;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduced[d]) {
      plan.group *= in[d];
    } else {
      plan.out_shape.push_back(in[d]);
    }
  }
  if (plan.out_shape.empty()) plan.out_shape = {1};

  // Output strides expressed per input axis (0 on reduced axes).
  std::vector<std::size_t> stride(in.size(), 0);
  std::size_t acc = 1;
  for (std::size_t d = in.size(); d-- > 0;) {
    if (!reduced[d]) {
      stride[d] = acc;
      acc *= in[d];
    }
  }
  const std::size_t n = shape_size(in);
  plan.out_index.resize(n);
  std::vector<std::size_t> idx(in.size(), 0);
  std::size_t out = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.out_index[i] = out;
    for (std::size_t d = in.size(); d-- > 0;) {
      ++idx[d];
      out += stride[d];
      if (idx[d] < in[d]) break;
      out -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

Tensor broadcast_back(const Tensor& g, const ReductionPlan& plan, const Shape& in_shape, double factor) {
  Tensor out(in_shape, g.dtype());
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = g.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[plan.out_index[i]] * factor);
  });
  return out;
}

}  // namespace

Var sum(const Var& a, std::vector<std::size_t> axes) {
  const Shape in_shape = a.shape();
  auto plan = std::make_shared<ReductionPlan>(plan_reduction(in_shape, std::move(axes)));
  Tensor y(plan->out_shape, a.value().dtype());
  dispatch(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = a.value().template data<T>();
    auto dst = y.mutable_data<T>();
    for (std::size_t i = 0; i < src.size(); ++i) dst[plan->out_index[i]] += src[i];
  });
  return a.tape().record(y, {a}, [plan, in_shape](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_back(g, *plan, in_shape, 1.0)};
  });
}

Var mean(const Var& a, std::vector<std::size_t> axes) {
  const Shape in_shape = a.shape();
  auto plan = std::make_shared<ReductionPlan>(plan_reduction(in_shape, std::move(axes)));
  const double inv = 1.0 / static_cast<double>(plan->group);
  Tensor y(plan->out_shape, a.value().dtype());
  dispatch(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = a.value().template data<T>();
    auto dst = y.mutable_data<T>();
    for (std::size_t i = 0; i < src.size(); ++i) dst[plan->out_index[i]] += src[i];
    for (auto& v : dst) v = static_cast<T>(v * inv);
  });
  return a.tape().record(y, {a}, [plan, in_shape, inv](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_back(g, *plan, in_shape, inv)};
  });
}

Var max(const Var& a, std::vector<std::size_t> axes) {
  const Shape in_shape = a.shape();
  auto plan = std::make_shared<ReductionPlan>(plan_reduction(in_shape, std::move(axes)));
  const std::size_t m = shape_size(plan->out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(m, std::numeric_limits<std::size_t>::max());
  Tensor y(plan->out_shape, a.value().dtype());
  dispatch(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = a.value().template data<T>();
    auto dst = y.mutable_data<T>();
    // Row-major scan: strict '>' keeps the first maximal element.
    for (std::size_t i = 0; i < src.size(); ++i) {
      const std::size_t o = plan->out_index[i];
      if ((*argmax)[o] == std::numeric_limits<std::size_t>::max() || src[i] > dst[o]) {
        dst[o] = src[i];
        (*argmax)[o] = i;
      }
    }
  });
  return a.tape().record(y, {a}, [argmax, in_shape](const Tensor& g, const std::vector<bool>&) {
    Tensor out(in_shape, g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto src = g.data<T>();
      auto dst = out.mutable_data<T>();
      for (std::size_t o = 0; o < argmax->size(); ++o) dst[(*argmax)[o]] += src[o];
    });
    return std::vector<Tensor>{out};
  });
}

}  // namespace hsad
