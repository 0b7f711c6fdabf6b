#include <gtest/gtest.h>

#include <cmath>

#include "msv/nn/adam.hpp"
#include "msv/nn/ops.hpp"
#include "support/gradcases.hpp"
#include "support/oracles.hpp"

namespace msv::nn {
namespace {

TEST(Tensor, ShapeAndSize) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.dim(-1), 4);
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), Error);
  EXPECT_THROW(t.Reshaped({5, 5}), Error);
}

TEST(Relu, Values) {
  Tape<double> tape;
  const auto &y = tape.value(Relu(tape, tape.Constant(Tensor<double>({2}, std::vector<double>{-1.0, 2.0}))));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 2.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  auto x = oracle::RandomTensor({1, 4, 5, 3}, rng);
  Tensor<double> k({1, 1, 3, 3});
  for (int c = 0; c < 3; ++c) k[c * 3 + c] = 1.0;
  Tape<double> tape;
  EXPECT_EQ(tape.value(Conv2d(tape, tape.Constant(x), tape.Constant(k))), x);
}

TEST(Conv2d, OutputExtents) {
  Tape<float> tape;
  Var x = tape.Constant(Tensor<float>({1, 40, 200, 1}));
  Var y = Conv2d(tape, x, tape.Constant(Tensor<float>({3, 3, 1, 16})));
  EXPECT_EQ(tape.value(y).shape(), (Shape{1, 40, 200, 16}));
  Var z = Conv2d(tape, y, tape.Constant(Tensor<float>({3, 3, 16, 32})), 2, 2);
  EXPECT_EQ(tape.value(z).shape(), (Shape{1, 20, 100, 32}));
  Var odd = Conv2d(tape, tape.Constant(Tensor<float>({1, 5, 25, 2})), tape.Constant(Tensor<float>({3, 3, 2, 2})), 2, 2);
  EXPECT_EQ(tape.value(odd).shape(), (Shape{1, 3, 13, 2}));
}

TEST(Conv2d, ShapeMismatch) {
  Tape<float> tape;
  EXPECT_THROW(Conv2d(tape, tape.Constant(Tensor<float>({1, 4, 4, 2})), tape.Constant(Tensor<float>({3, 3, 3, 1}))),
               Error);
}

TEST(Conv2d, MatchesNaiveOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 1 + static_cast<int>(rng.Below(8)), w = 1 + static_cast<int>(rng.Below(8));
    const int cin = 1 + static_cast<int>(rng.Below(3)), cout = 1 + static_cast<int>(rng.Below(4));
    const int kh = rng.Below(2) ? 3 : 1, kw = rng.Below(2) ? 3 : 1;
    const int sh = 1 + static_cast<int>(rng.Below(2)), sw = 1 + static_cast<int>(rng.Below(2));
    auto x = oracle::RandomTensor({1, h, w, cin}, rng);
    auto k = oracle::RandomTensor({kh, kw, cin, cout}, rng);
    Tape<float> tape;
    const auto &y = tape.value(
        Conv2d(tape, tape.Constant(x.Cast<float>()), tape.Constant(k.Cast<float>()), sh, sw));
    int oh = 0, ow = 0;
    const auto ref = oracle::NaiveConv(x.storage(), h, w, cin, k.storage(), kh, kw, cout, sh, sw, oh, ow);
    ASSERT_EQ(y.shape(), (Shape{1, oh, ow, cout}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
  }
}

TEST(BatchNorm, ConstantInputGivesBeta) {
  Tape<double> tape;
  Tensor<double> x({3, 4, 2}, 7.0);
  Tensor<double> beta({2}, std::vector<double>{0.5, -1.5});
  BatchNormStats<double> st{Tensor<double>({2}), Tensor<double>({2}, 1.0)};
  const auto &y = tape.value(BatchNorm(tape, tape.Constant(x), tape.Constant(Tensor<double>({2}, 1.0)),
                                       tape.Constant(beta), st, Mode::kTrain));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], beta[i % 2], 1e-12);
}

TEST(BatchNorm, NormalizesAndUpdatesStats) {
  Rng rng(3);
  auto x = oracle::RandomTensor({8, 5, 3}, rng, 3.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += static_cast<double>(i % 3);
  BatchNormStats<double> st{Tensor<double>({3}), Tensor<double>({3}, 1.0)};
  BatchNormStats<double> upd = st;
  Tape<double> tape;
  const auto &y = tape.value(BatchNorm(tape, tape.Constant(x), tape.Constant(Tensor<double>({3}, 1.0)),
                                       tape.Constant(Tensor<double>({3})), st, Mode::kTrain, &upd));
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    const int cnt = 40;
    for (int i = 0; i < cnt; ++i) {
      m += y[i * 3 + c];
      xm += x[i * 3 + c];
    }
    m /= cnt;
    xm /= cnt;
    for (int i = 0; i < cnt; ++i) {
      v += (y[i * 3 + c] - m) * (y[i * 3 + c] - m);
      xv += (x[i * 3 + c] - xm) * (x[i * 3 + c] - xm);
    }
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v / cnt, 1.0, 1e-3);
    EXPECT_NEAR(upd.running_mean[c], 0.1 * xm, 1e-9);
    EXPECT_NEAR(upd.running_var[c], 0.9 + 0.1 * xv / (cnt - 1), 1e-9);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BatchNormStats<double> st{Tensor<double>({1}, 2.0), Tensor<double>({1}, 4.0)};
  Tape<double> tape;
  const auto &y = tape.value(BatchNorm(tape, tape.Constant(Tensor<double>({2, 1}, std::vector<double>{2.0, 6.0})),
                                       tape.Constant(Tensor<double>({1}, 1.0)), tape.Constant(Tensor<double>({1})),
                                       st, Mode::kEval));
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], 4.0 / std::sqrt(4.0 + 1e-5), 1e-12);
}

TEST(SoftmaxCrossEntropy, ZeroLogitsGiveLogC) {
  for (int c : {2, 10, 37}) {
    Tape<double> tape;
    std::vector<int> labels{0, c - 1, c / 2};
    const double l = tape.value(SoftmaxCrossEntropy(tape, tape.Constant(Tensor<double>({3, c})), labels))[0];
    EXPECT_NEAR(l, std::log(c), 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  Tape<double> tape;
  std::vector<int> labels{3};
  try {
    SoftmaxCrossEntropy(tape, tape.Constant(Tensor<double>({1, 3})), labels);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLabelOutOfRange);
  }
}

TEST(AttentiveStats, UniformWeightsGiveMeanAndPopulationStd) {
  Rng rng(4);
  auto h = oracle::RandomTensor({1, 6, 3}, rng);
  Tape<double> tape;
  const auto &y = tape.value(AttentiveStats(tape, tape.Constant(h), tape.Constant(Tensor<double>({1, 6}, 1.0 / 6))));
  for (int k = 0; k < 3; ++k) {
    double m = 0, v = 0;
    for (int t = 0; t < 6; ++t) m += h[t * 3 + k] / 6;
    for (int t = 0; t < 6; ++t) v += (h[t * 3 + k] - m) * (h[t * 3 + k] - m) / 6;
    EXPECT_NEAR(y[k], m, 1e-12);
    EXPECT_NEAR(y[3 + k], std::sqrt(v), 1e-12);
  }
}

TEST(AttentiveStats, IdenticalStepsGiveZeroSigma) {
  Tensor<double> h({1, 5, 2});
  for (int t = 0; t < 5; ++t) {
    h[t * 2] = 1.5;
    h[t * 2 + 1] = -0.25;
  }
  Tape<double> tape;
  const auto &y = tape.value(AttentiveStats(tape, tape.Constant(h), tape.Constant(Tensor<double>({1, 5}, 0.2))));
  EXPECT_NEAR(y[0], 1.5, 1e-12);
  EXPECT_NEAR(y[1], -0.25, 1e-12);
  EXPECT_LE(y[2], 1e-4);
  EXPECT_LE(y[3], 1e-4);
}

TEST(Adam, ZeroGradientLeavesParams) {
  Parameter<float> p("p", Tensor<float>({3}, 1.5f));
  Adam<float> opt;
  p.ZeroGrad();
  for (int i = 0; i < 5; ++i) opt.Step({&p});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.value[i], 1.5f);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  Parameter<double> p("p", Tensor<double>({3}, std::vector<double>{1.0, 2.0, 3.0}));
  p.grad = Tensor<double>({3}, std::vector<double>{0.3, -20.0, 1e-3});
  Adam<double> opt(AdamOptions{.lr = 0.01});
  opt.Step({&p});
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(p.value[1], 2.0 + 0.01, 1e-8);
  EXPECT_NEAR(p.value[2], 3.0 - 0.01, 1e-7);
}

TEST(Adam, MinimizesQuadratic) {
  Parameter<double> x("x", Tensor<double>({1}, 5.0));
  Adam<double> opt(AdamOptions{.lr = 0.05});
  for (int step = 0; step < 2000; ++step) {
    x.grad = Tensor<double>({1}, 2.0 * x.value[0]);
    opt.Step({&x});
  }
  EXPECT_LT(std::abs(x.value[0]), 0.01);
}

TEST(Tape, ForwardIsDeterministic) {
  auto run = [] {
    Rng rng(7);
    Tape<float> tape;
    Var x = tape.Constant(oracle::RandomTensor({2, 6, 6, 2}, rng).Cast<float>());
    Var k = tape.Constant(oracle::RandomTensor({3, 3, 2, 4}, rng).Cast<float>());
    return tape.value(Relu(tape, Conv2d(tape, x, k, 2, 1)));
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, BackwardNeedsScalar) {
  Tape<double> tape;
  EXPECT_THROW(tape.Backward(tape.Leaf(Tensor<double>({2}))), Error);
}

class PrimitiveGradients : public ::testing::TestWithParam<gradcases::NamedCase> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = GetParam().run(seed);
    EXPECT_GT(r.checked, 0);
    EXPECT_LT(r.max_rel_err, 1e-4) << GetParam().name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGradients, ::testing::ValuesIn(gradcases::PrimitiveCases()),
                         [](const auto &info) { return info.param.name; });

}  // namespace
}  // namespace msv::nn
