#include <gtest/gtest.h>

#include <cmath>

#include "hsad/autodiff.hpp"
#include "hsad/errors.hpp"
#include "hsad/gradcheck.hpp"
#include "oracles.hpp"

using namespace hsad;

namespace {

Tensor t2(std::vector<double> v, Shape s) { return Tensor(std::move(s), std::move(v)); }

}  // namespace

TEST(Tensor, ConstructionAndDtype) {
  Tensor a = Tensor::full({2, 3}, 1.5, DType::kFloat32);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a.dtype(), DType::kFloat32);
  EXPECT_DOUBLE_EQ(a.at(5), 1.5);
  EXPECT_THROW(a.data<double>(), ContractError);
  EXPECT_EQ(a.to(DType::kFloat64).dtype(), DType::kFloat64);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, CopyOnWrite) {
  Tensor a = Tensor::zeros({3});
  Tensor b = a;
  b.set(0, 4.0);
  EXPECT_EQ(a.at(0), 0.0);
  EXPECT_EQ(b.at(0), 4.0);
}

TEST(Tensor, ReshapeKeepsValuesAndChecksSize) {
  Tensor a = t2({1, 2, 3, 4, 5, 6}, {2, 3});
  EXPECT_EQ(a.reshaped({3, 2}).to_vector(), a.to_vector());
  EXPECT_THROW(a.reshaped({4, 2}), ShapeError);
}

TEST(Matmul, IdentityAndOrthogonalPick) {
  Tape tape;
  Var i2 = tape.constant(t2({1, 0, 0, 1}, {2, 2}));
  Var m = tape.constant(t2({1, 2, 3, 4}, {2, 2}));
  EXPECT_EQ(matmul(i2, m).value().to_vector(), (std::vector<double>{1, 2, 3, 4}));
  Var r = tape.constant(t2({1, 0}, {1, 2}));
  Var c = tape.constant(t2({0, 5}, {2, 1}));
  EXPECT_EQ(matmul(r, c).value().to_vector(), (std::vector<double>{0}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor a = oracle::random_tensor({3, 4}, rng), b = oracle::random_tensor({4, 2}, rng);
    const auto ref = oracle::matmul(a.to_vector(), b.to_vector(), 3, 4, 2);
    EXPECT_LE(oracle::max_abs_diff(kernels::matmul(a, b).to_vector(), ref), 1e-12);
    EXPECT_LE(oracle::max_abs_diff(kernels::matmul_tn(a.reshaped({4, 3}), b).to_vector(),
                                   oracle::matmul(
                                       [&] {  // explicit transpose of a viewed as [4, 3]
                                         auto v = a.to_vector();
                                         std::vector<double> t(12);
                                         for (std::size_t i = 0; i < 4; ++i)
                                           for (std::size_t j = 0; j < 3; ++j) t[j * 4 + i] = v[i * 3 + j];
                                         return t;
                                       }(),
                                       b.to_vector(), 3, 4, 2)),
              1e-12);
  }
  EXPECT_THROW(kernels::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Elementwise, KnownValues) {
  Tape tape;
  Var z = tape.constant(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(sigmoid(z).value().item(), 0.5);
  EXPECT_DOUBLE_EQ(tanh(z).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(leaky_relu(tape.constant(Tensor::scalar(-2.0)), 0.01).value().item(), -0.02);
  EXPECT_THROW(log(tape.constant(Tensor::scalar(-1.0))), DomainError);
}

TEST(Elementwise, BroadcastRules) {
  Tape tape;
  Var a = tape.leaf(t2({1, 2, 3, 4, 5, 6}, {2, 3}));
  Var row = tape.leaf(t2({10, 20, 30}, {3}));
  Var s = tape.leaf(Tensor::scalar(2.0));
  EXPECT_EQ(add(a, row).value().to_vector(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(mul(a, s).value().to_vector(), (std::vector<double>{2, 4, 6, 8, 10, 12}));
  EXPECT_THROW(add(a, tape.leaf(Tensor::zeros({2}))), ShapeError);
  Var loss = sum(add(a, row));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(row).to_vector(), (std::vector<double>{2, 2, 2}));
}

TEST(Reductions, KnownValues) {
  Tape tape;
  EXPECT_DOUBLE_EQ(sum(tape.constant(t2({1, 2, 3}, {3}))).value().item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(tape.constant(Tensor::full({2, 5, 3}, 7.0))).value().item(), 7.0);
  Var m = tape.leaf(t2({3, 3, 1}, {3}));
  tape.backward(max(m));
  EXPECT_EQ(tape.grad(m).to_vector(), (std::vector<double>{1, 0, 0}));
  EXPECT_THROW(sum(tape.constant(Tensor::zeros({2, 2})), {3}), ShapeError);
}

TEST(Backward, AnalyticGradients) {
  Rng rng(3);
  Tensor x0 = oracle::random_tensor({2, 3, 4}, rng);
  {
    Tape tape;
    Var x = tape.leaf(x0);
    tape.backward(sum(x));
    EXPECT_EQ(tape.grad(x).to_vector(), std::vector<double>(24, 1.0));
  }
  {
    Tape tape;
    Var x = tape.leaf(x0);
    tape.backward(mul_scalar(sum(square(x)), 0.5));
    EXPECT_LE(oracle::max_abs_diff(tape.grad(x).to_vector(), x0.to_vector()), 1e-15);
  }
}

TEST(Backward, LeakyReluDerivativeAtZeroIsOne) {
  Tape tape;
  Var x = tape.leaf(t2({-1.0, 0.0, 2.0}, {3}));
  tape.backward(sum(leaky_relu(x, 0.01)));
  EXPECT_EQ(tape.grad(x).to_vector(), (std::vector<double>{0.01, 1.0, 1.0}));
}

TEST(Backward, ContractViolations) {
  Tape tape;
  Var x = tape.leaf(Tensor::zeros({2}));
  EXPECT_THROW(tape.backward(x), ContractError);  // non-scalar loss
  Tape off(false);
  Var y = off.leaf(Tensor::scalar(1.0));
  EXPECT_THROW(off.backward(y), ContractError);
  Tape other;
  Var z = other.leaf(Tensor::scalar(1.0));
  EXPECT_THROW(add(tape.leaf(Tensor::scalar(1.0)), z), ContractError);
}

TEST(Backward, ComposedGraphMatchesFiniteDifferences) {
  Rng rng(11);
  GraphFn fn = [](Tape&, const std::vector<Var>& v) {
    Var h = tanh(add(matmul(v[0], v[1]), v[2]));
    return sum(mul(sigmoid(h), exp(mul_scalar(h, 0.3))));
  };
  const auto r = check_gradients("composed", fn,
                                 {oracle::random_tensor({3, 4}, rng), oracle::random_tensor({4, 5}, rng),
                                  oracle::random_tensor({5}, rng)});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Gradcheck, TensorSuitePasses) {
  for (const auto& r : run_gradcheck_suite("tensor", 1, 5)) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
}

TEST(Gradcheck, DetectsAWrongGradient) {
  // A primitive whose backward is off by a factor of two must be flagged.
  GraphFn fn = [](Tape& tape, const std::vector<Var>& v) {
    Tensor val = v[0].value().clone();
    Var bad = tape.record(val, {v[0]}, [](const Tensor& g, const std::vector<bool>&) {
      return std::vector<Tensor>{kernels::scale(g, 2.0)};
    });
    return sum(square(bad));
  };
  Rng rng(5);
  EXPECT_FALSE(check_gradients("bad", fn, {oracle::random_tensor({4}, rng)}).passed);
}

TEST(Gradcheck, RelativeErrorDefinition) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
}
