#include "hsad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hsad/layers.hpp"
#include "hsad/losses.hpp"
#include "hsad/lstm.hpp"
#include "hsad/rng.hpp"

namespace hsad {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

Var contract(const Var& out, std::uint64_t seed) {
  if (out.value().size() == 1) return sum(out);
  // Positive weights bounded away from zero: no output is dropped and
  // broadcast gradients (sums over outputs) cannot cancel to ~0.
  Rng rng(seed ^ 0x5bd1e995ULL);
  std::vector<double> w(out.value().size());
  for (double& v : w) v = rng.uniform(0.5, 1.5);
  Var weights = out.tape().constant(Tensor(out.shape(), std::move(w), out.value().dtype()));
  return sum(out * weights);
}

double evaluate(const GraphFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  return contract(fn(tape, leaves), seed).value().item();
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const GraphFn& fn, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& opt) {
  std::vector<Tensor> x;
  for (const auto& t : inputs) x.push_back(t.to(DType::kFloat64));

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : x) leaves.push_back(tape.leaf(t));
    const Var loss = contract(fn(tape, leaves), opt.seed);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }

  GradCheckResult r;
  r.name = name;
  Rng pick(opt.seed + 17);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<std::size_t> coords;
    if (opt.max_coords == 0 || opt.max_coords >= x[i].size()) {
      coords.resize(x[i].size());
      for (std::size_t k = 0; k < coords.size(); ++k) coords[k] = k;
    } else {
      coords = pick.sample_without_replacement(x[i].size(), opt.max_coords);
    }
    for (std::size_t k : coords) {
      const double orig = x[i].at(k);
      x[i].set(k, orig + opt.step);
      const double up = evaluate(fn, x, opt.seed);
      x[i].set(k, orig - opt.step);
      const double down = evaluate(fn, x, opt.seed);
      x[i].set(k, orig);
      const double numeric = (up - down) / (2.0 * opt.step);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i].at(k), numeric));
      ++r.coords;
    }
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

std::vector<GradCheckResult> worst_per_name(const std::vector<GradCheckResult>& results) {
  std::vector<GradCheckResult> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : results) {
    auto it = index.find(r.name);
    if (it == index.end()) {
      index[r.name] = out.size();
      out.push_back(r);
    } else {
      auto& w = out[it->second];
      w.max_rel_error = std::max(w.max_rel_error, r.max_rel_error);
      w.coords += r.coords;
      w.passed = w.passed && r.passed;
    }
  }
  return out;
}

std::vector<std::string> gradcheck_modules() { return {"tensor", "layers", "lstm", "losses"}; }

// ---------------------------------------------------------------------------
// Suites

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

/// Uniform values with |x| in [margin, bound], random sign; keeps kinks away.
Tensor signed_tensor(const Shape& shape, Rng& rng, double margin = 0.05, double bound = 2.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(margin, bound);
  return Tensor(shape, std::move(v));
}

using Unary = std::function<Var(const Var&)>;

/// Random elementwise tail of 1-2 strictly monotone ops. Ops with stationary
/// points are left out: there the true gradient drops below the resolution of
/// central differences at h = 1e-5.
Unary random_post(Rng& rng) {
  std::vector<Unary> ops = {
      [](const Var& v) { return tanh(v); },
      [](const Var& v) { return sigmoid(v); },
      [](const Var& v) { return exp(v * 0.5); },
      [](const Var& v) { return v; },
  };
  const double s = rng.uniform(0.5, 1.5), b = rng.uniform(-0.5, 0.5);
  Unary first = ops[rng.below(ops.size())];
  Unary second = ops[rng.below(ops.size())];
  return [=](const Var& v) { return add_scalar(second(first(v)) * s, b); };
}

/// Random sign-preserving input transform, so domain margins survive.
Unary random_pre(Rng& rng, bool positive_only) {
  const double s = rng.uniform(0.5, 1.5);
  if (positive_only) {
    switch (rng.below(3)) {
      case 0: return [](const Var& v) { return v; };
      case 1: return [](const Var& v) { return sigmoid(v); };
      default: return [s](const Var& v) { return v * s; };
    }
  }
  switch (rng.below(2)) {
    case 0: return [](const Var& v) { return v; };
    default: return [s](const Var& v) { return v * s; };
  }
}

struct Primitive {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Var(const std::vector<Var>&)> apply;
  bool positive_inputs = false;
  bool monotone_pre_only = false;  // keeps kinks and argmax stable
};

std::vector<Primitive> tensor_primitives() {
  auto pair = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor>{random_tensor(a, r), random_tensor(b, r)}; };
  };
  auto one = [](Shape a, double lo = -1.0, double hi = 1.0) {
    return [a, lo, hi](Rng& r) { return std::vector<Tensor>{random_tensor(a, r, lo, hi)}; };
  };
  auto one_signed = [](Shape a) { return [a](Rng& r) { return std::vector<Tensor>{signed_tensor(a, r)}; }; };
  auto pair_signed = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor>{signed_tensor(a, r, 0.2), signed_tensor(b, r, 0.2)}; };
  };
  auto pair_positive = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor>{random_tensor(a, r, 0.2, 2.0), random_tensor(b, r, 0.2, 2.0)}; };
  };
  std::vector<Primitive> p;
  p.push_back({"add", pair({3, 4}, {3, 4}), [](auto& v) { return add(v[0], v[1]); }});
  p.push_back({"add/leading-axis", pair({2, 3, 4}, {3, 4}), [](auto& v) { return add(v[0], v[1]); }});
  p.push_back({"add/scalar", pair({3, 4}, {1}), [](auto& v) { return add(v[0], v[1]); }});
  p.push_back({"sub", pair({3, 4}, {3, 4}), [](auto& v) { return sub(v[0], v[1]); }});
  p.push_back({"sub/leading-axis", pair({5, 4}, {4}), [](auto& v) { return sub(v[0], v[1]); }});
  p.push_back({"mul", pair_positive({3, 4}, {3, 4}), [](auto& v) { return mul(v[0], v[1]); }});
  p.push_back({"mul/leading-axis", pair_positive({2, 3, 4}, {3, 4}), [](auto& v) { return mul(v[0], v[1]); }});
  p.push_back({"mul/scalar", pair_positive({1}, {3, 4}), [](auto& v) { return mul(v[0], v[1]); }});
  p.push_back({"add_scalar", one({3, 4}), [](auto& v) { return add_scalar(v[0], 0.7); }});
  p.push_back({"mul_scalar", one({3, 4}), [](auto& v) { return mul_scalar(v[0], -1.3); }});
  p.push_back({"neg", one({3, 4}), [](auto& v) { return neg(v[0]); }});
  p.push_back({"sigmoid", one({3, 4}, -3, 3), [](auto& v) { return sigmoid(v[0]); }});
  p.push_back({"tanh", one({3, 4}, -2, 2), [](auto& v) { return tanh(v[0]); }});
  p.push_back({"leaky_relu", one_signed({3, 4}), [](auto& v) { return leaky_relu(v[0], 0.01); }, false, true});
  p.push_back({"relu", one_signed({3, 4}), [](auto& v) { return relu(v[0]); }, false, true});
  p.push_back({"exp", one({3, 4}), [](auto& v) { return exp(v[0]); }});
  p.push_back({"log", one({3, 4}, 0.2, 2.0), [](auto& v) { return log(v[0]); }, true});
  p.push_back({"square", one_signed({3, 4}), [](auto& v) { return square(v[0]); }, false, true});
  p.push_back({"matmul", pair_signed({3, 4}, {4, 2}), [](auto& v) { return matmul(v[0], v[1]); }});
  p.push_back({"transpose", one({3, 4}), [](auto& v) { return transpose(v[0]); }});
  p.push_back({"reshape", one({3, 4}), [](auto& v) { return reshape(v[0], {2, 6}); }});
  p.push_back({"concat/axis0", pair({2, 3}, {1, 3}), [](auto& v) { return concat({v[0], v[1]}, 0); }});
  p.push_back({"concat/axis1", pair({2, 3}, {2, 2}), [](auto& v) { return concat({v[0], v[1]}, 1); }});
  p.push_back({"sum/all", one({2, 3, 4}), [](auto& v) { return sum(v[0]); }});
  p.push_back({"sum/axis1", one({2, 3, 4}), [](auto& v) { return sum(v[0], {1}); }});
  p.push_back({"sum/axes02", one({2, 3, 4}), [](auto& v) { return sum(v[0], {0, 2}); }});
  p.push_back({"mean/all", one({2, 3, 4}), [](auto& v) { return mean(v[0]); }});
  p.push_back({"mean/axis0", one({2, 3, 4}), [](auto& v) { return mean(v[0], {0}); }});
  p.push_back({"max/all", one({2, 3, 4}), [](auto& v) { return max(v[0]); }, false, true});
  p.push_back({"max/axis2", one({2, 3, 4}), [](auto& v) { return max(v[0], {2}); }, false, true});
  return p;
}

void run_tensor_suite(std::vector<GradCheckResult>& out, Rng& rng, std::size_t graphs, const GradCheckOptions& opt) {
  for (const auto& prim : tensor_primitives()) {
    for (std::size_t g = 0; g < graphs; ++g) {
      const auto inputs = prim.inputs(rng);
      std::vector<Unary> pre;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        pre.push_back(prim.monotone_pre_only ? Unary([](const Var& v) { return v; })
                                             : random_pre(rng, prim.positive_inputs));
      }
      const Unary post = random_post(rng);
      GraphFn fn = [&prim, pre, post](Tape&, const std::vector<Var>& leaves) {
        std::vector<Var> xs;
        for (std::size_t i = 0; i < leaves.size(); ++i) xs.push_back(pre[i](leaves[i]));
        return post(prim.apply(xs));
      };
      GradCheckOptions o = opt;
      o.seed = rng.next_u64();
      out.push_back(check_gradients(prim.name, fn, inputs, o));
    }
  }
}

void run_layer_suite(std::vector<GradCheckResult>& out, Rng& rng, const GradCheckOptions& opt) {
  auto check = [&](const std::string& name, const GraphFn& fn, const std::vector<Tensor>& inputs) {
    GradCheckOptions o = opt;
    o.seed = rng.next_u64();
    out.push_back(check_gradients(name, fn, inputs, o));
  };
  for (int trial = 0; trial < 3; ++trial) {
    check("conv2d/s1p1", [](Tape&, const auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
          {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
    check("conv2d/s2p0", [](Tape&, const auto& v) { return conv2d(v[0], v[1], std::nullopt, 2, 0); },
          {random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng)});
    check("conv2d/k5p2", [](Tape&, const auto& v) { return conv2d(v[0], v[1], v[2], 1, 2); },
          {random_tensor({1, 1, 6, 6}, rng), random_tensor({2, 1, 5, 5}, rng), random_tensor({2}, rng)});
    check("deconv2d/s2p1op1", [](Tape&, const auto& v) { return deconv2d(v[0], v[1], v[2], 2, 1, 1); },
          {random_tensor({2, 3, 3, 3}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({2}, rng)});
    check("deconv2d/s1p2", [](Tape&, const auto& v) { return deconv2d(v[0], v[1], std::nullopt, 1, 2, 0); },
          {random_tensor({1, 2, 3, 3}, rng), random_tensor({2, 2, 5, 5}, rng)});
    check("deconv2d/s2p2op1", [](Tape&, const auto& v) { return deconv2d(v[0], v[1], v[2], 2, 2, 1); },
          {random_tensor({1, 2, 2, 2}, rng), random_tensor({2, 1, 5, 5}, rng), random_tensor({1}, rng)});
    check("maxpool2d", [](Tape&, const auto& v) { return maxpool2d(v[0], 2, 2); }, {random_tensor({2, 2, 4, 4}, rng)});
    {
      auto state = std::make_shared<BatchNormState>(BatchNormState::make(3));
      check("batchnorm/train",
            [state](Tape&, const auto& v) { return tanh(batchnorm(v[0], v[1], v[2], *state, Mode::kTrain)); },
            {random_tensor({4, 3, 2, 2}, rng), random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)});
    }
    {
      auto state = std::make_shared<BatchNormState>(BatchNormState::make(3));
      state->running_mean = random_tensor({3}, rng);
      state->running_var = random_tensor({3}, rng, 0.5, 2.0);
      check("batchnorm/eval",
            [state](Tape&, const auto& v) { return batchnorm(v[0], v[1], v[2], *state, Mode::kEval); },
            {random_tensor({2, 3, 2, 2}, rng), random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)});
    }
    check("linear", [](Tape&, const auto& v) { return linear(v[0], v[1], v[2]); },
          {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)});
    check("linear/no-bias", [](Tape&, const auto& v) { return linear(v[0], v[1], std::nullopt); },
          {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)});
  }
}

void run_lstm_suite(std::vector<GradCheckResult>& out, Rng& rng, const GradCheckOptions& opt) {
  const std::size_t d = 4, n = 3;
  auto inputs = [&](Rng& r) {
    std::vector<Tensor> v{random_tensor({n, d}, r)};
    for (int i = 0; i < 4; ++i) v.push_back(random_tensor({d, 2 * d}, r, -0.7, 0.7));
    for (int i = 0; i < 4; ++i) v.push_back(random_tensor({d}, r, -0.3, 0.3));
    return v;
  };
  auto vars = [](const std::vector<Var>& v) { return LstmVars{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]}; };
  for (GateAblation a : {GateAblation::kNone, GateAblation::kNoInputGate, GateAblation::kNoOutputGate,
                         GateAblation::kNoBothGates, GateAblation::kIdentityCandidate}) {
    for (int trial = 0; trial < 3; ++trial) {
      GradCheckOptions o = opt;
      o.seed = rng.next_u64();
      const LstmState st{Tensor::zeros({d}), Tensor::zeros({d})};
      out.push_back(check_gradients(
          "lstm_step/" + to_string(a),
          [&, a, st](Tape&, const auto& v) {
            const GateVars g = lstm_step(v[0], vars(v), st, a);
            return concat({g.h, g.c}, 1);
          },
          inputs(rng), o));
    }
  }
  for (int trial = 0; trial < 3; ++trial) {
    GradCheckOptions o = opt;
    o.seed = rng.next_u64();
    const LstmState st{random_tensor({d}, rng), random_tensor({d}, rng)};
    out.push_back(check_gradients(
        "full_sequence_step",
        [&, st](Tape&, const auto& v) {
          const GateVars g = full_sequence_step(v[0], vars(v), st, GateAblation::kNone);
          return concat({g.h, g.c, g.f}, 1);
        },
        inputs(rng), o));
  }
}

void run_loss_suite(std::vector<GradCheckResult>& out, Rng& rng, const GradCheckOptions& opt) {
  auto check = [&](const std::string& name, const GraphFn& fn, const std::vector<Tensor>& inputs) {
    GradCheckOptions o = opt;
    o.seed = rng.next_u64();
    out.push_back(check_gradients(name, fn, inputs, o));
  };
  const std::size_t n = 6, d = 4;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor center = random_tensor({d}, rng);
    const Tensor z = random_tensor({n, d}, rng, -1.5, 1.5);

    // Radius placed in the widest gap between squared distances, away from the hinge kink.
    std::vector<double> d2(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) d2[i] += std::pow(z.at(i * d + k) - center.at(k), 2);
    std::sort(d2.begin(), d2.end());
    std::size_t gap = 0;
    for (std::size_t i = 1; i + 1 < n; ++i)
      if (d2[i + 1] - d2[i] > d2[gap + 1] - d2[gap]) gap = i;
    HypersphereState hs{center, std::sqrt(0.5 * (d2[gap] + d2[gap + 1])), 0.3};

    check("rec_loss", [](Tape&, const auto& v) { return rec_loss(v[0], v[1]); },
          {random_tensor({3, 1, 2, 2}, rng, 0, 1), random_tensor({3, 1, 2, 2}, rng, 0, 1)});
    check("squared_distances", [center](Tape&, const auto& v) { return squared_distances(v[0], center); }, {z});
    check("svdd_soft", [hs](Tape&, const auto& v) { return svdd_soft(v[0], hs); }, {z});
    check("svdd_hard", [hs](Tape&, const auto& v) { return svdd_hard(v[0], hs); }, {z});
    check("kl/per_sample", [](Tape&, const auto& v) { return kl_loss(v[0], KlMode::kPerSample); }, {z});
    check("kl/batch_moments", [](Tape&, const auto& v) { return kl_loss(v[0], KlMode::kBatchMoments); }, {z});
    check("weight_decay", [](Tape&, const auto& v) { return weight_decay({v[0], v[1]}); },
          {random_tensor({3, 2}, rng), random_tensor({2, 2, 3, 3}, rng)});

    const Tensor x = random_tensor({n, 1, 2, 2}, rng, 0, 1), xh = random_tensor({n, 1, 2, 2}, rng, 0, 1);
    const Tensor w = random_tensor({3, 4}, rng);
    const LossWeights lw{0.3, 0.7, 0.05, 0.9};
    for (const std::string& tag : {std::string("cae"), std::string("iaead-h"), std::string("iae-lstm-kl-s"),
                                   std::string("dsvdd-kl-h"), std::string("iae-kl-s")}) {
      const VariantTag vt = parse_variant_tag(tag);
      check("total_loss/" + tag,
            [vt, hs, lw](Tape&, const auto& v) {
              LossTerms terms{v[0], v[1], v[2], {v[3]}};
              return total_loss(vt.variant, vt.boundary, terms, lw, hs, KlMode::kBatchMoments).total;
            },
            {z, x, xh, w});
    }
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module, std::uint64_t seed,
                                                 std::size_t graphs_per_primitive) {
  const auto modules = gradcheck_modules();
  if (module != "all" && std::find(modules.begin(), modules.end(), module) == modules.end()) {
    throw ConfigError("unknown gradcheck module '" + module + "' (expected all, tensor, layers, lstm or losses)");
  }
  Rng rng(seed);
  const GradCheckOptions opt;
  std::vector<GradCheckResult> out;
  auto want = [&](const char* m) { return module == "all" || module == m; };
  if (want("tensor")) run_tensor_suite(out, rng, graphs_per_primitive, opt);
  if (want("layers")) run_layer_suite(out, rng, opt);
  if (want("lstm")) run_lstm_suite(out, rng, opt);
  if (want("losses")) run_loss_suite(out, rng, opt);
  return out;
}

}  // namespace hsad
