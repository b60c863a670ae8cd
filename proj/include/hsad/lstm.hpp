#pragma once

#include <string>

#include "hsad/autodiff.hpp"
#include "hsad/rng.hpp"

namespace hsad {

/// Weights of a single LSTM cell. Every gate reads the concatenation
/// [h_prev, z], so each W is [d_out, d_hidden + d_in] and each b is [d_out].
struct LstmCellParams {
  Tensor w_s, w_o, w_f, w_c;
  Tensor b_s, b_o, b_f, b_c;

  std::size_t d_in() const;
  std::size_t d_out() const;
  std::size_t d_hidden() const;

  /// Kaiming-uniform weights (fan_in = d_hidden + d_in), zero biases.
  static LstmCellParams init(std::size_t d_in, std::size_t d_out, Rng& rng, DType dtype = DType::kFloat64);
  static LstmCellParams zeros(std::size_t d_in, std::size_t d_out, DType dtype = DType::kFloat64);
  void validate() const;
};

/// Initial hidden and cell state, shared by every sample of a batch.
struct LstmState {
  Tensor h0;  // [d_hidden]
  Tensor c0;  // [d_out]

  static LstmState zeros(const LstmCellParams& p);
};

enum class GateAblation { kNone, kNoInputGate, kNoOutputGate, kNoBothGates, kIdentityCandidate };

std::string to_string(GateAblation ablation);
GateAblation gate_ablation_from_string(const std::string& name);

/// Cell parameters registered on a tape.
struct LstmVars {
  Var w_s, w_o, w_f, w_c;
  Var b_s, b_o, b_f, b_c;
};

LstmVars register_leaves(Tape& tape, const LstmCellParams& p);

/// Per-sample gate activations and outputs, each [n, d_out].
struct GateVars {
  Var s;        // input gate
  Var o;        // output gate
  Var f;        // forget gate
  Var c_tilde;  // candidate
  Var c;        // cell state
  Var h;        // output, also the module output z_hat
};

/// Plain values of GateVars.
struct GateActivations {
  Tensor s, o, f, c_tilde, c, h;
};

GateActivations values_of(const GateVars& g);

/// One LSTM step from a zero cell state: c = s * c_tilde, h = o * tanh(c).
/// The previous hidden state is `st.h0` (normally zero) and `st.c0` is not
/// read. Ablations force s and/or o to ones or pass z through as c_tilde
/// (which needs d_in == d_out).
GateVars lstm_step(const Var& z, const LstmVars& p, const LstmState& st, GateAblation ablation = GateAblation::kNone);

/// General step with a previous cell state: c = f * c0 + s * c_tilde.
GateVars full_sequence_step(const Var& z, const LstmVars& p, const LstmState& st,
                            GateAblation ablation = GateAblation::kNone);

struct GateStatistics {
  double mean_s = 0.0;
  double mean_o = 0.0;
  double mean_f = 0.0;
};

GateStatistics gate_statistics(const GateActivations& gates);

}  // namespace hsad
