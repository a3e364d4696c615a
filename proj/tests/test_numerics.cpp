#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cts/autodiff.hpp"
#include "cts/optim.hpp"
#include "oracles.hpp"

namespace cts {
namespace {

using testing::numeric_gradient;
using testing::random_tensor;
using testing::relative_error;
using testing::gradient_error;
using testing::readout;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape tape;
  Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Var r = matmul(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), tape.constant(a));
  EXPECT_EQ(r.value(), a);
}

TEST(Matmul, HandComputed) {
  Tape tape;
  Var r = matmul(tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})), tape.constant(Tensor::matrix(2, 1, {1, 1})));
  EXPECT_EQ(r.value(), Tensor::matrix(2, 1, {3, 7}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor a = random_tensor({5, 4}, rng), b = random_tensor({4, 3}, rng);
    Tape tape;
    Var r = matmul(tape.constant(a), tape.constant(b));
    EXPECT_LT(testing::max_abs_diff(r.value(), testing::naive_matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), DimensionError);
}

TEST(Softmax, ZeroLogitsAreUniform) {
  Tape tape;
  Var r = softmax_lastdim(tape.constant(Tensor({4})));
  for (double v : r.value().data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = random_tensor({3, 7}, rng, 3.0);
    Tensor shifted = x;
    const double c = std::normal_distribution<double>(0, 20)(rng);
    for (double& v : shifted.data()) v += c;
    const Tensor a = kernels::softmax_lastdim(x), b = kernels::softmax_lastdim(shifted);
    EXPECT_LT(testing::max_abs_diff(a, b), 1e-12);
    for (std::size_t r = 0; r < 3; ++r) {
      auto ra = a.row(r), rb = b.row(r);
      EXPECT_EQ(std::max_element(ra.begin(), ra.end()) - ra.begin(),
                std::max_element(rb.begin(), rb.end()) - rb.begin());
    }
  }
}

TEST(Softmax, MatchesExtendedPrecisionFormula) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor x = random_tensor({2, 9}, rng, 4.0);
    const Tensor y = kernels::softmax_lastdim(x);
    for (std::size_t r = 0; r < 2; ++r) {
      std::vector<double> row(x.row(r).begin(), x.row(r).end());
      const auto ref = testing::softmax_extended(row);
      double total = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_NEAR(y.at(r, j), ref[j], 1e-12);
        EXPECT_GE(y.at(r, j), 0.0);
        total += y.at(r, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, EmptyLastDimensionThrows) {
  Tape tape;
  EXPECT_THROW(softmax_lastdim(tape.constant(Tensor({3, 0}))), DimensionError);
}

TEST(LayerNorm, ConstantSliceMapsToZero) {
  Tape tape;
  Parameter g("g", Tensor::filled({4}, 1.0)), b("b", Tensor({4}));
  Var r = layer_norm(tape.constant(Tensor::filled({2, 4}, 3.5)), tape.param(g), tape.param(b));
  for (double v : r.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedSliceIsFixedPoint) {
  Tape tape;
  Parameter g("g", Tensor::filled({4}, 1.0)), b("b", Tensor({4}));
  Tensor x = Tensor::matrix(1, 4, {1, -1, 1, -1});  // mean 0, variance 1
  Var r = layer_norm(tape.constant(x), tape.param(g), tape.param(b));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.value()[i], x[i], 1e-5);
}

TEST(LayerNorm, OutputStatistics) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = random_tensor({3, 16}, rng, 5.0);
    const Tensor y = kernels::layer_norm_parts(x).xhat;
    for (std::size_t r = 0; r < 3; ++r) {
      double mean = 0.0, var = 0.0;
      for (double v : y.row(r)) mean += v;
      mean /= 16;
      for (double v : y.row(r)) var += (v - mean) * (v - mean);
      var /= 16;
      EXPECT_LT(std::abs(mean), 1e-10);
      EXPECT_LT(std::abs(var - 1.0), 1e-4);
    }
  }
}

TEST(LayerNorm, WidthOneThrows) {
  Tape tape;
  Parameter g("g", Tensor::filled({1}, 1.0)), b("b", Tensor({1}));
  EXPECT_THROW(layer_norm(tape.constant(Tensor({3, 1})), tape.param(g), tape.param(b)), DimensionError);
}

TEST(Gelu, CenterAndAsymptote) {
  EXPECT_EQ(kernels::gelu(0.0), 0.0);
  EXPECT_NEAR(kernels::gelu(10.0), 10.0, 1e-4);
}

TEST(Gelu, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor x = random_tensor({6}, rng, 2.0);
    double max_rel = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double h = 1e-5;
      const double num = (kernels::gelu(x[i] + h) - kernels::gelu(x[i] - h)) / (2 * h);
      const double ana = kernels::gelu_grad(x[i]);
      max_rel = std::max(max_rel, std::abs(num - ana) / std::max(1.0, std::abs(ana)));
    }
    EXPECT_LT(max_rel, 1e-6);
  }
}

TEST(CrossEntropy, NearOneHotHasTinyLoss) {
  Tape tape;
  Tensor z({2, 5});
  z.at(0, 3) = 30;
  z.at(1, 1) = 30;
  std::vector<int> t{3, 1};
  EXPECT_LT(cross_entropy(tape.constant(z), t).value().item(), 1e-9);
}

TEST(CrossEntropy, UniformLogits) {
  Tape tape;
  std::vector<int> t{0, 7, 3};
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor({3, 8})), t).value().item(), std::log(8.0), 1e-15);
}

TEST(CrossEntropy, MatchesPerPositionFormula) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor z = random_tensor({4, 6}, rng, 2.0);
    std::vector<int> t{1, 5, 0, 2};
    double ref = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
      long double s = 0;
      for (std::size_t j = 0; j < 6; ++j) s += std::exp(static_cast<long double>(z.at(r, j)));
      ref += static_cast<double>(std::log(s) - z.at(r, static_cast<std::size_t>(t[r])));
    }
    Tape tape;
    EXPECT_NEAR(cross_entropy(tape.constant(z), t).value().item(), ref / 4, 1e-12);
  }
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  Tape tape;
  std::vector<int> t{8};
  EXPECT_THROW(cross_entropy(tape.constant(Tensor({1, 8})), t), LabelError);
  std::vector<int> neg{-1};
  EXPECT_THROW(cross_entropy(tape.constant(Tensor({1, 8})), neg), LabelError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.variable(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  tape.backward(sum(x));
  for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, NonScalarThrows) {
  Tape tape;
  Var x = tape.variable(Tensor({2, 2}));
  EXPECT_THROW(tape.backward(x), DimensionError);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  const std::vector<int> targets{2, 0, 3};
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor w = random_tensor({5, 4}, rng);
    auto f = [&](const Var& x) {
      Var logits = matmul(x, x.tape().constant(w));
      Var p = softmax_lastdim(logits);
      return cross_entropy(p, targets);
    };
    EXPECT_LT(gradient_error(f, random_tensor({3, 5}, rng)), 1e-6);
  }
}

TEST(Backward, FrozenParameterGradStaysZero) {
  Parameter frozen("frozen", Tensor::matrix(2, 2, {1, 2, 3, 4}));
  frozen.trainable = false;
  Parameter live("live", Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Tape tape;
  Var x = tape.constant(Tensor::matrix(1, 2, {0.5, -1}));
  tape.backward(sum(matmul(matmul(x, tape.param(frozen)), tape.param(live))));
  for (double g : frozen.grad.data()) EXPECT_EQ(g, 0.0);
  double norm = 0.0;
  for (double g : live.grad.data()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(Backward, ParameterGradientsAccumulate) {
  Parameter p("p", Tensor::matrix(1, 1, {2.0}));
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    tape.backward(sum(scale(tape.param(p), 1.5)));
  }
  EXPECT_DOUBLE_EQ(p.grad[0], 4.5);
}

TEST(Tape, NonFiniteOutputIsAnError) {
  Tape tape;
  Var x = tape.constant(Tensor::matrix(1, 1, {1e308}));
  EXPECT_THROW(scale(x, 10.0), NumericError);
}

// Property: analytic vs central differences (h = 1e-5) on 100 random
// instances of every differentiable op.
TEST(GradientProperty, EveryOp) {
  std::mt19937_64 rng(2024);
  Parameter gamma("gamma", Tensor({6})), beta("beta", Tensor({6}));
  for (int rep = 0; rep < 100; ++rep) {
    gamma.value = random_tensor({6}, rng);
    beta.value = random_tensor({6}, rng);
    const Tensor w = random_tensor({4, 6}, rng);
    const Tensor readw = random_tensor({4, 6}, rng);
    const Tensor readsq = random_tensor({4, 4}, rng);
    const Tensor bias = random_tensor({6}, rng);
    const Tensor x = random_tensor({4, 6}, rng);
    const std::vector<int> tgt{1, 5, 0, 3};
    const std::vector<std::size_t> rows{3, 0, 0, 2};

    EXPECT_LT(gradient_error([&](const Var& v) { return readout(matmul(v, v.tape().constant(Tensor({6, 6}, std::vector<double>(36, 0.3)))), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return readout(matmul(v.tape().constant(readsq), v), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return readout(add(v, v), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return readout(add_bias(v, v.tape().constant(bias)), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return readout(gelu(v), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return readout(softmax_lastdim(v), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return readout(log_softmax_lastdim(v), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) {
                return readout(layer_norm(v, v.tape().param(gamma), v.tape().param(beta)), readw);
              }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return cross_entropy(v, tgt); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) { return readout(gather_rows(v, rows), readw); }, x), 1e-5);
    EXPECT_LT(gradient_error([&](const Var& v) {
                Var p = pair_stack(v);
                return sum(gelu(p));
              }, random_tensor({5, 3}, rng)), 1e-5);
    // attention: q, k, v all depend on the probed input.
    const Tensor wk = random_tensor({6, 6}, rng, 0.5);
    std::vector<bool> keep{true, false, true, true};
    for (const kernels::AttentionMask& mask :
         {kernels::AttentionMask{{}, true}, kernels::AttentionMask{keep, false}}) {
      EXPECT_LT(gradient_error([&](const Var& v) {
                  Var k = matmul(v, v.tape().constant(wk));
                  return readout(attention(v, k, gelu(v), 2, mask), readw);
                }, x), 1e-5);
    }
    (void)w;
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter p("p", Tensor::matrix(1, 2, {1.0, -2.0}));
  const Tensor before = p.value;
  Adam opt({&p}, {0.1});
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FrozenParameterUnchangedDespiteGradient) {
  Parameter p("p", Tensor::matrix(1, 2, {1.0, -2.0}));
  p.trainable = false;
  const Tensor before = p.value;
  Adam opt({&p}, {0.1});
  p.grad.fill(3.0);
  opt.step();
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Adam, NanGradientAbortsStep) {
  Parameter p("p", Tensor::matrix(1, 2, {1.0, -2.0}));
  Parameter q("q", Tensor::matrix(1, 1, {4.0}));
  const Tensor before_p = p.value, before_q = q.value;
  Adam opt({&p, &q}, {0.1});
  p.grad.fill(1.0);
  q.grad[0] = std::nan("");
  EXPECT_THROW(opt.step(), NumericError);
  EXPECT_EQ(p.value, before_p);
  EXPECT_EQ(q.value, before_q);
}

TEST(Adam, QuadraticConvergence) {
  // Independent scalar Adam simulation of f(w) = (w-3)^2 from w = 0.
  std::vector<double> expected;
  {
    double w = 0, m = 0, v = 0;
    for (int t = 1; t <= 50; ++t) {
      const double g = 2 * (w - 3);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      expected.push_back(w);
    }
  }
  Parameter p("w", Tensor::matrix(1, 1, {0.0}));
  Adam opt({&p}, {0.1});
  std::vector<double> dist;
  for (int t = 0; t < 50; ++t) {
    Tape tape;
    Var d = add_const(tape.param(p), Tensor::matrix(1, 1, {-3.0}));
    Var sq = matmul(d, d);
    tape.backward(sum(sq));
    opt.step();
    EXPECT_NEAR(p.value[0], expected[static_cast<std::size_t>(t)], 1e-12);
    dist.push_back(std::abs(p.value[0] - 3.0));
  }
  // The simulation shrinks |w-3| on every one of the first 39 steps, then
  // overshoots by less than 0.2.
  for (std::size_t t = 1; t < 39; ++t) EXPECT_LT(dist[t], dist[t - 1]);
  EXPECT_LT(dist.back(), 0.5);
}

TEST(FreezeProperty, RandomStepSequences) {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    Parameter a("a", random_tensor({3, 3}, rng)), b("b", random_tensor({3, 2}, rng));
    b.trainable = false;
    const Tensor frozen = b.value;
    Adam opt({&a, &b}, {0.05});
    for (int s = 0; s < 10; ++s) {
      Tape tape;
      Var x = tape.constant(random_tensor({4, 3}, rng));
      tape.backward(sum(gelu(matmul(matmul(x, tape.param(a)), tape.param(b)))));
      opt.step();
    }
    EXPECT_EQ(b.value, frozen);
  }
}

}  // namespace
}  // namespace cts
