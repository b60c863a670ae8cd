#include "hsad/lstm.hpp"

#include <cmath>

#include "hsad/layers.hpp"

namespace hsad {

std::size_t LstmCellParams::d_out() const { return w_s.dim(0); }
std::size_t LstmCellParams::d_in() const { return w_s.dim(1) - d_hidden(); }
// h is the cell output, so the hidden width equals the output width.
std::size_t LstmCellParams::d_hidden() const { return w_s.dim(0); }

void LstmCellParams::validate() const {
  for (const Tensor* w : {&w_s, &w_o, &w_f, &w_c}) {
    if (w->rank() != 2 || w->shape() != w_s.shape()) throw ShapeError("LSTM gate weights must share one matrix shape");
  }
  if (w_s.dim(1) <= w_s.dim(0)) throw ShapeError("LSTM weight must have more columns than rows ([h, z] input)");
  for (const Tensor* b : {&b_s, &b_o, &b_f, &b_c}) {
    if (b->shape() != Shape{d_out()}) throw ShapeError("LSTM gate biases must be [d_out]");
  }
}

LstmCellParams LstmCellParams::init(std::size_t d_in, std::size_t d_out, Rng& rng, DType dtype) {
  LstmCellParams p;
  const std::size_t cols = d_out + d_in;
  const double bound = std::sqrt(6.0 / static_cast<double>(cols));
  auto draw = [&] {
    std::vector<double> w(d_out * cols);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return Tensor({d_out, cols}, std::move(w), dtype);
  };
  p.w_s = draw();
  p.w_o = draw();
  p.w_f = draw();
  p.w_c = draw();
  p.b_s = p.b_o = p.b_f = p.b_c = Tensor::zeros({d_out}, dtype);
  return p;
}

LstmCellParams LstmCellParams::zeros(std::size_t d_in, std::size_t d_out, DType dtype) {
  LstmCellParams p;
  p.w_s = p.w_o = p.w_f = p.w_c = Tensor::zeros({d_out, d_out + d_in}, dtype);
  p.b_s = p.b_o = p.b_f = p.b_c = Tensor::zeros({d_out}, dtype);
  return p;
}

LstmState LstmState::zeros(const LstmCellParams& p) {
  return {Tensor::zeros({p.d_hidden()}, p.w_s.dtype()), Tensor::zeros({p.d_out()}, p.w_s.dtype())};
}

std::string to_string(GateAblation ablation) {
  switch (ablation) {
    case GateAblation::kNone:
      return "none";
    case GateAblation::kNoInputGate:
      return "no_input_gate";
    case GateAblation::kNoOutputGate:
      return "no_output_gate";
    case GateAblation::kNoBothGates:
      return "no_both_gates";
    case GateAblation::kIdentityCandidate:
      return "identity_candidate";
  }
  return "?";
}

GateAblation gate_ablation_from_string(const std::string& name) {
  for (auto a : {GateAblation::kNone, GateAblation::kNoInputGate, GateAblation::kNoOutputGate,
                 GateAblation::kNoBothGates, GateAblation::kIdentityCandidate}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown gate ablation '" + name + "'");
}

LstmVars register_leaves(Tape& tape, const LstmCellParams& p) {
  p.validate();
  return {tape.leaf(p.w_s), tape.leaf(p.w_o), tape.leaf(p.w_f), tape.leaf(p.w_c),
          tape.leaf(p.b_s), tape.leaf(p.b_o), tape.leaf(p.b_f), tape.leaf(p.b_c)};
}

GateActivations values_of(const GateVars& g) {
  return {g.s.value(), g.o.value(), g.f.value(), g.c_tilde.value(), g.c.value(), g.h.value()};
}

namespace {

/// Broadcasts a per-sample state vector to an [n, d] constant.
Var tile_rows(Tape& tape, const Tensor& v, std::size_t n) {
  Tensor out({n, v.size()}, v.dtype());
  dispatch(v.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = v.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < n; ++i) std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * src.size()));
  });
  return tape.constant(out);
}

struct GateInputs {
  Var hz;  // [h_prev, z]
  std::size_t n;
  std::size_t d_out;
};

GateInputs prepare(const Var& z, const LstmVars& p, const LstmState& st) {
  const Tensor& zv = z.value();
  const Tensor& w = p.w_s.value();
  if (zv.rank() != 2) throw ShapeError("lstm: z must be [n, d_in], got " + shape_to_string(zv.shape()));
  const std::size_t d_out = w.dim(0);
  const std::size_t d_hidden = st.h0.size();
  if (d_hidden + zv.dim(1) != w.dim(1)) {
    throw ShapeError("lstm: [h, z] width " + std::to_string(d_hidden + zv.dim(1)) + " does not match weight " +
                     shape_to_string(w.shape()));
  }
  if (st.c0.size() != d_out) throw ShapeError("lstm: c0 must have d_out elements");
  Tape& tape = z.tape();
  Var h_prev = tile_rows(tape, st.h0, zv.dim(0));
  return {concat({h_prev, z}, 1), zv.dim(0), d_out};
}

Var ones_like(Tape& tape, std::size_t n, std::size_t d, DType dtype) {
  return tape.constant(Tensor::ones({n, d}, dtype));
}

/// Gates and candidate shared by both step variants.
GateVars gates(const Var& z, const GateInputs& in, const LstmVars& p, GateAblation ablation) {
  Tape& tape = z.tape();
  const DType dtype = z.value().dtype();
  const bool keep_s = ablation != GateAblation::kNoInputGate && ablation != GateAblation::kNoBothGates;
  const bool keep_o = ablation != GateAblation::kNoOutputGate && ablation != GateAblation::kNoBothGates;
  GateVars g;
  g.s = keep_s ? sigmoid(linear(in.hz, p.w_s, p.b_s)) : ones_like(tape, in.n, in.d_out, dtype);
  g.o = keep_o ? sigmoid(linear(in.hz, p.w_o, p.b_o)) : ones_like(tape, in.n, in.d_out, dtype);
  g.f = sigmoid(linear(in.hz, p.w_f, p.b_f));
  if (ablation == GateAblation::kIdentityCandidate) {
    if (z.value().dim(1) != in.d_out) throw ShapeError("identity candidate needs d_in == d_out");
    g.c_tilde = z;
  } else {
    g.c_tilde = tanh(linear(in.hz, p.w_c, p.b_c));
  }
  return g;
}

}  // namespace

GateVars lstm_step(const Var& z, const LstmVars& p, const LstmState& st, GateAblation ablation) {
  GateInputs in = prepare(z, p, st);
  GateVars g = gates(z, in, p, ablation);
  g.c = g.s * g.c_tilde;
  g.h = g.o * tanh(g.c);
  return g;
}

GateVars full_sequence_step(const Var& z, const LstmVars& p, const LstmState& st, GateAblation ablation) {
  GateInputs in = prepare(z, p, st);
  GateVars g = gates(z, in, p, ablation);
  Var c_prev = tile_rows(z.tape(), st.c0, in.n);
  g.c = g.f * c_prev + g.s * g.c_tilde;
  g.h = g.o * tanh(g.c);
  return g;
}

GateStatistics gate_statistics(const GateActivations& gates) {
  auto mean_of = [](const Tensor& t) {
    if (t.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t.at(i);
    return s / static_cast<double>(t.size());
  };
  return {mean_of(gates.s), mean_of(gates.o), mean_of(gates.f)};
}

}  // namespace hsad
