#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "geotoken/autodiff.hpp"
#include "geotoken/errors.hpp"
#include "geotoken/optim.hpp"

namespace geotoken::ad {
namespace {

Tensor random_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

std::vector<std::size_t> all_indices(const Tensor& t) {
  std::vector<std::size_t> idx(t.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

TEST(TensorTest, ShapeInvariants) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor(std::vector<std::size_t>{2, 0}), ShapeError);
  const Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(TensorTest, NonFiniteValuesAreRejected) {
  Tensor t({2});
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.check_finite("t"), NonFiniteError);
  Tape tape;
  EXPECT_THROW(tape.constant(t), NonFiniteError);
  Tensor big = Tensor::matrix({{1e300, 1e300}});
  const Var b = tape.constant(big);
  EXPECT_THROW(mul(b, b), NonFiniteError);
}

TEST(MatmulTest, IdentityAndSmallCase) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(matmul(a, id), a);
  EXPECT_EQ(matmul(id, a), a);
  EXPECT_THROW(matmul(a, Tensor({3, 2})), ShapeError);
}

TEST(MatmulTest, MatchesNaiveTripleLoop) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {4, 2});
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double want = 0.0;
      for (std::size_t k = 0; k < 4; ++k) want += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), want, 1e-13);
    }
  }
}

TEST(SoftmaxTest, KnownRows) {
  const Tensor y = softmax_rows(Tensor::matrix({{0, 0}, {1000, 1000}, {0, std::log(3.0)}}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(1, 1), 0.5);
  EXPECT_NEAR(y(2, 0), 0.25, 1e-15);
  EXPECT_NEAR(y(2, 1), 0.75, 1e-15);
}

TEST(SoftmaxTest, RowsSumToOneAndIgnoreConstantShift) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {4, 9}, 20.0);
    const Tensor y = softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (double v : y.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (auto& v : x.row(r)) v += 123.25 * static_cast<double>(r + 1);
    }
    const Tensor shifted = softmax_rows(x);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(shifted[i], y[i], 1e-12);
  }
}

TEST(CrossEntropyTest, UniformLogitsGiveLogVocab) {
  const Tensor logits({3, 17});
  const std::vector<int> targets{0, 5, 16};
  EXPECT_NEAR(cross_entropy_value(logits, targets, {true, true, true}), 2.833213344056216, 1e-15);
}

TEST(CrossEntropyTest, ConfidentCorrectLogitsGiveNearZero) {
  // With V classes the exact loss is log(1 + (V-1) e^-30); V = 17 gives
  // 1.5e-12, so a 5-way row is used for the 1e-12 bound.
  Tensor logits({1, 5});
  logits(0, 4) = 30.0;
  EXPECT_LT(cross_entropy_value(logits, std::vector<int>{4}, {true}), 1e-12);
}

TEST(CrossEntropyTest, MatchesHighPrecisionOracle) {
  // mpmath: mean over rows of logsumexp(row) - row[target].
  const Tensor logits = Tensor::matrix({{0.3, -1.2, 2.5, 0.0, 0.7}, {-0.4, 1.1, -2.0, 0.9, 0.05}});
  const std::vector<int> targets{2, 4};
  EXPECT_NEAR(cross_entropy_value(logits, targets, {true, true}), 1.1324478667252260, 1e-12);
  EXPECT_NEAR(cross_entropy_value(logits, targets, {true, false}), 0.32419038803092325, 1e-12);
}

TEST(CrossEntropyTest, ErrorPaths) {
  const Tensor logits({2, 5});
  EXPECT_THROW(cross_entropy_value(logits, std::vector<int>{1, 2}, {false, false}), EmptyLossError);
  EXPECT_THROW(cross_entropy_value(logits, std::vector<int>{1, 5}, {true, true}), IndexError);
  // Masked positions are not range-checked.
  EXPECT_NO_THROW(cross_entropy_value(logits, std::vector<int>{1, 99}, {true, false}));
}

// Every differentiable op, checked against central differences on random
// small tensors.
class OpGradientTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
  double check(Parameter& p, const LossFn& fn) {
    return finite_diff_check(fn, p, all_indices(p.value), 1e-5);
  }
};

TEST_F(OpGradientTest, Elementwise) {
  Parameter a("a", random_tensor(rng, {3, 4}), 0);
  Parameter b("b", random_tensor(rng, {3, 4}), 1);
  Parameter* both[] = {&a, &b};
  const LossFn fn = [&](Tape& t) {
    const Var va = t.param(a), vb = t.param(b);
    return sum(mul(add(va, scale(vb, -0.7)), relu(add(va, vb))));
  };
  std::vector<Coordinate> coords;
  for (std::size_t i = 0; i < 12; ++i) coords.push_back({&a, i}), coords.push_back({&b, i});
  EXPECT_LT(finite_diff_check(fn, both, coords, 1e-5), 1e-6);
}

TEST_F(OpGradientTest, MatmulTransposeBias) {
  Parameter a("a", random_tensor(rng, {3, 4}), 0);
  Parameter b("b", random_tensor(rng, {5, 4}), 1);
  Parameter bias("bias", random_tensor(rng, {5}), 2);
  Parameter w("w", random_tensor(rng, {3, 5}), 3);
  const LossFn fn = [&](Tape& t) {
    const Var c = add_row_bias(matmul(t.param(a), transpose(t.param(b))), t.param(bias));
    return sum(mul(c, t.param(w)));
  };
  EXPECT_LT(check(a, fn), 1e-6);
  EXPECT_LT(check(b, fn), 1e-6);
  EXPECT_LT(check(bias, fn), 1e-6);
}

TEST_F(OpGradientTest, Softmax) {
  Parameter x("x", random_tensor(rng, {3, 6}, 2.0), 0);
  Parameter w("w", random_tensor(rng, {3, 6}), 1);
  const LossFn fn = [&](Tape& t) { return sum(mul(softmax_rows(t.param(x)), t.param(w))); };
  EXPECT_LT(check(x, fn), 1e-6);
}

TEST_F(OpGradientTest, LayerNorm) {
  Parameter x("x", random_tensor(rng, {4, 6}, 2.0), 0);
  Parameter gain("gain", random_tensor(rng, {6}), 1);
  Parameter bias("bias", random_tensor(rng, {6}), 2);
  Parameter w("w", random_tensor(rng, {4, 6}), 3);
  const LossFn fn = [&](Tape& t) {
    return sum(mul(layer_norm_rows(t.param(x), t.param(gain), t.param(bias)), t.param(w)));
  };
  EXPECT_LT(check(x, fn), 1e-6);
  EXPECT_LT(check(gain, fn), 1e-6);
  EXPECT_LT(check(bias, fn), 1e-6);
}

TEST_F(OpGradientTest, EmbeddingAndCrossEntropy) {
  Parameter table("table", random_tensor(rng, {7, 5}, 2.0), 0);
  const std::vector<int> ids{3, 1, 3, 6};
  const std::vector<int> targets{0, 4, 2, 2};
  const std::vector<bool> keep{true, true, false, true};
  const LossFn fn = [&](Tape& t) { return cross_entropy(embedding(t.param(table), ids), targets, keep); };
  EXPECT_LT(check(table, fn), 1e-6);
  // Rows never looked up get exactly zero gradient.
  for (double g : table.grad.row(0)) EXPECT_EQ(g, 0.0);
}

TEST(FiniteDiffTest, QuadraticAndLinear) {
  std::mt19937_64 rng(3);
  Parameter p("p", random_tensor(rng, {10}), 0);
  const LossFn half_sq = [&](Tape& t) {
    const Var v = t.param(p);
    return scale(sum(mul(v, v)), 0.5);
  };
  EXPECT_LT(finite_diff_check(half_sq, p, all_indices(p.value), 1e-5), 1e-9);
  const LossFn linear = [&](Tape& t) { return sum(t.param(p)); };
  EXPECT_LT(finite_diff_check(linear, p, all_indices(p.value), 1e-5), 1e-10);
  for (double g : p.grad.data()) EXPECT_EQ(g, 1.0);
}

TEST(FiniteDiffTest, DetectsWrongGradient) {
  Parameter p("p", Tensor({3}, 1.0), 0);
  // Gradient deliberately cut: the op reports no derivative at all.
  const LossFn broken = [&](Tape& t) {
    const Var v = t.param(p);
    return t.record(Tensor::scalar(3.0 * v.value()[0]), "broken", {v}, [](Tape&, const Tensor&) {});
  };
  const std::size_t idx[] = {0};
  EXPECT_GT(finite_diff_check(broken, p, idx, 1e-5), 0.5);
}

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  std::mt19937_64 rng(4);
  Parameter p("p", random_tensor(rng, {4, 4}), 0);
  const Tensor before = p.value;
  AdamState st;
  Parameter* ps[] = {&p};
  for (int i = 0; i < 10; ++i) adam_step(ps, st);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(st.step_count, 10u);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor::scalar(0.5), 0);
  p.grad[0] = 1.0;
  AdamState st;
  Parameter* ps[] = {&p};
  adam_step(ps, st);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(0.5 - p.value[0], 1e-4 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step_count, 1u);
  EXPECT_EQ(st.m.at(0).shape(), p.value.shape());
}

TEST(AdamTest, IdenticalParametersStayIdentical) {
  std::mt19937_64 rng(5);
  const Tensor init = random_tensor(rng, {3, 3});
  Parameter a("a", init, 0), b("b", init, 1);
  AdamState st;
  st.lr = 1e-2;
  Parameter* ps[] = {&a, &b};
  for (int step = 0; step < 25; ++step) {
    const Tensor g = random_tensor(rng, {3, 3});
    a.grad = g;
    b.grad = g;
    adam_step(ps, st);
  }
  EXPECT_EQ(a.value, b.value);
}

TEST(TapeTest, BackwardRequiresScalarAndAccumulatesSharedUse) {
  Parameter p("p", Tensor::matrix({{1, 2}, {3, 4}}), 0);
  Tape t;
  const Var v = t.param(p);
  EXPECT_THROW(t.backward(v), ShapeError);
  Tape t2;
  const Var w = t2.param(p);
  t2.backward(sum(add(w, w)));
  for (double g : p.grad.data()) EXPECT_EQ(g, 2.0);
}

}  // namespace
}  // namespace geotoken::ad
