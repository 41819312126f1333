#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradpath/layers.hpp"

namespace gradpath {
namespace {

// Direct sliding-window cross-correlation, stride 1, zero padding.
TensorD brute_conv(const TensorD& x, const TensorD& w, const TensorD& b, std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(0);
  const std::size_t oh = h + 2 * pad - 2, ow = wd + 2 * pad - 2;
  TensorD out(Shape{n, cout, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long iy = long(y + ky) - long(pad), ix = long(xx + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                acc += x.at(s, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          out.at(s, co, y, xx) = acc;
        }
  return out;
}

TensorD random_d(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  TensorD t(s);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::vector<std::int32_t> labels(std::initializer_list<std::int32_t> l) { return l; }

// ---------------------------------------------------------------------------

TEST(Conv2d, AllOnesMatchesOracle) {
  const Tensor x(Shape{1, 1, 3, 3}, 1.0f), w(Shape{1, 1, 3, 3}, 1.0f), b(Shape{1});
  const Tensor expected(Shape{1, 1, 3, 3}, {4, 6, 4, 6, 9, 6, 4, 6, 4});
  EXPECT_EQ(brute_conv(x.cast<double>(), w.cast<double>(), b.cast<double>(), 1).cast<float>(),
            expected);
  EXPECT_EQ(conv2d_forward(x, w, b, 1), expected);
}

TEST(Conv2d, ZeroKernelGivesZeros) {
  const TensorD x = random_d(Shape{2, 3, 5, 5}, 1);
  EXPECT_EQ(conv2d_forward(x, TensorD(Shape{4, 3, 3, 3}), TensorD(Shape{4}), 1),
            TensorD(Shape{2, 4, 5, 5}));
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  const TensorD x = random_d(Shape{2, 1, 4, 6}, 2);
  TensorD w(Shape{1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  EXPECT_EQ(conv2d_forward(x, w, TensorD(Shape{1}), 1), x);
}

TEST(Conv2d, RandomMatchesBruteForce) {
  const TensorD x = random_d(Shape{2, 3, 6, 5}, 3);
  const TensorD w = random_d(Shape{4, 3, 3, 3}, 4);
  const TensorD b = random_d(Shape{4}, 5);
  for (std::size_t pad : {0u, 1u}) {
    const TensorD got = conv2d_forward(x, w, b, pad), want = brute_conv(x, w, b, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, StrideAndGeometryErrors) {
  const TensorD x(Shape{1, 1, 5, 5});
  const TensorD w(Shape{1, 1, 3, 3});
  const TensorD b(Shape{1});
  EXPECT_EQ(conv2d_forward(x, w, b, 0, 2).shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(conv2d_forward(x, w, b, 1, 2).shape(), (Shape{1, 1, 3, 3}));
  EXPECT_THROW(conv2d_forward(x, w, b, 0, 3), ShapeError);  // (5-3)/3 not integral
  EXPECT_THROW(conv2d_forward(x, w, b, 0, 0), ParameterError);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d_forward(TensorD(Shape{1, 2, 4, 4}), TensorD(Shape{1, 1, 3, 3}),
                              TensorD(Shape{1}), 1),
               DimensionError);
  EXPECT_THROW(conv2d_forward(TensorD(Shape{1, 1, 1, 1}), TensorD(Shape{1, 1, 3, 3}),
                              TensorD(Shape{1}), 0),
               ShapeError);
}

TEST(Relu, ForwardAndBackward) {
  EXPECT_EQ(relu(Tensor(Shape{3}, {-1, 0, 2})), Tensor(Shape{3}, {0, 0, 2}));
  const Tensor pos(Shape{3}, {0.5f, 1, 2});
  EXPECT_EQ(relu(pos), pos);

  Relu<float> layer("relu");
  layer.forward(Tensor(Shape{2}, {-1, 2}), Mode::train);
  EXPECT_EQ(layer.backward(Tensor(Shape{2}, {5, 7})), Tensor(Shape{2}, {0, 7}));

  layer.forward(Tensor(Shape{3}, {-1, -2, -3}), Mode::train);
  EXPECT_EQ(layer.backward(Tensor(Shape{3}, {1, 1, 1})), Tensor(Shape{3}));

  layer.forward(Tensor(Shape{1}, {0}), Mode::train);
  EXPECT_EQ(layer.backward(Tensor(Shape{1}, {9})), Tensor(Shape{1}));
}

TEST(Backward, WithoutForwardIsStateError) {
  Relu<float> relu_layer("r");
  EXPECT_THROW(relu_layer.backward(Tensor(Shape{1})), StateError);
  relu_layer.forward(Tensor(Shape{1}, {1}), Mode::train);
  relu_layer.backward(Tensor(Shape{1}, {1}));
  EXPECT_THROW(relu_layer.backward(Tensor(Shape{1}, {1})), StateError);  // cache consumed
}

TEST(Backward, UpstreamShapeMustMatchOutput) {
  std::mt19937_64 rng(1);
  Dense<float> d("d", 2, 3, rng);
  d.forward(Tensor(Shape{1, 2}), Mode::train);
  EXPECT_THROW(d.backward(Tensor(Shape{1, 2})), DimensionError);
}

// Max over each 2x2 window, scanned independently of the implementation.
Tensor window_max(const Tensor& x) {
  const std::size_t h = x.dim(2), w = x.dim(3);
  Tensor out(Shape{x.dim(0), x.dim(1), h / 2, w / 2});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t y = 0; y < h / 2; ++y)
        for (std::size_t xx = 0; xx < w / 2; ++xx)
          out.at(n, c, y, xx) = std::max({x.at(n, c, 2 * y, 2 * xx), x.at(n, c, 2 * y, 2 * xx + 1),
                                          x.at(n, c, 2 * y + 1, 2 * xx),
                                          x.at(n, c, 2 * y + 1, 2 * xx + 1)});
  return out;
}

TEST(MaxPool, Examples) {
  EXPECT_EQ(maxpool2x2(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4})), Tensor(Shape{1, 1, 1, 1}, {4}));
  EXPECT_EQ(maxpool2x2(Tensor(Shape{1, 2, 4, 4}, 3.5f)), Tensor(Shape{1, 2, 2, 2}, 3.5f));

  Tensor ramp(Shape{1, 1, 4, 4});
  std::iota(ramp.data().begin(), ramp.data().end(), 1.0f);
  const Tensor expected(Shape{1, 1, 2, 2}, {6, 8, 14, 16});
  EXPECT_EQ(window_max(ramp), expected);
  EXPECT_EQ(maxpool2x2(ramp), expected);
}

TEST(MaxPool, TiesRouteToFirstRowMajor) {
  MaxPool2x2<float> pool("p");
  pool.forward(Tensor(Shape{1, 1, 2, 2}, 1.0f), Mode::train);
  EXPECT_EQ(pool.backward(Tensor(Shape{1, 1, 1, 1}, {3})), Tensor(Shape{1, 1, 2, 2}, {3, 0, 0, 0}));

  pool.forward(Tensor(Shape{1, 1, 2, 2}, {0, 2, 2, 1}), Mode::train);
  EXPECT_EQ(pool.backward(Tensor(Shape{1, 1, 1, 1}, {1})), Tensor(Shape{1, 1, 2, 2}, {0, 1, 0, 0}));
}

TEST(MaxPool, OddDimsThrow) {
  EXPECT_THROW(maxpool2x2(Tensor(Shape{1, 1, 3, 4})), ShapeError);
  EXPECT_THROW(maxpool2x2(Tensor(Shape{1, 1, 4, 5})), ShapeError);
}

TEST(MaxPool, BackwardConservesMass) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MaxPool2x2<double> pool("p");
    const TensorD x = random_d(Shape{2, 3, 6, 4}, seed);
    pool.forward(x, Mode::train);
    const TensorD up = random_d(Shape{2, 3, 3, 2}, seed + 100);
    const TensorD dx = pool.backward(up);
    const double s_up = std::accumulate(up.data().begin(), up.data().end(), 0.0);
    const double s_dx = std::accumulate(dx.data().begin(), dx.data().end(), 0.0);
    EXPECT_NEAR(s_up, s_dx, 1e-12);
  }
}

TEST(Dropout, ZeroRateAndEvalAreIdentity) {
  const TensorD x = random_d(Shape{4, 8}, 9);
  Dropout<double> none("d", 0.0, 1);
  EXPECT_EQ(none.forward(x, Mode::train), x);
  Dropout<double> d("d", 0.5, 1);
  EXPECT_EQ(d.forward(x, Mode::eval), x);
  EXPECT_EQ(d.backward(x), x);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  Dropout<float> d("d", 0.2, 42);
  const Tensor ones(Shape{100000}, 1.0f);
  const Tensor y = d.forward(ones, Mode::train);
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 100000.0;
  EXPECT_NEAR(mean, 1.0, 0.01);
  for (float v : y.data()) EXPECT_TRUE(v == 0.0f || v == 1.25f);
}

TEST(Dropout, BackwardUsesSameMask) {
  Dropout<double> d("d", 0.3, 5);
  const TensorD x(Shape{50}, 1.0);
  const TensorD y = d.forward(x, Mode::train);
  EXPECT_EQ(d.backward(x), y);
}

TEST(Dropout, ReseedReproducesMask) {
  Dropout<double> d("d", 0.4, 5);
  const TensorD x(Shape{64}, 1.0);
  d.reseed(77);
  const TensorD a = d.forward(x, Mode::train);
  d.reseed(77);
  EXPECT_EQ(d.forward(x, Mode::train), a);
}

TEST(Dropout, RateOutOfRange) {
  EXPECT_THROW(Dropout<float>("d", 1.0, 0), ParameterError);
  EXPECT_THROW(Dropout<float>("d", -0.1, 0), ParameterError);
}

TEST(BatchNorm, MatchesDirectFormula) {
  BatchNorm<double> bn("bn", 1, 1e-12);
  const TensorD x(Shape{3, 1}, {1, 2, 3});
  const TensorD y = bn.forward(x, Mode::train);
  // mean 2, biased variance 2/3
  const double s = std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(y[0], -1.0 / s, 1e-9);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.0 / s, 1e-9);
  EXPECT_NEAR(y[0], -1.2247, 1e-4);
}

TEST(BatchNorm, GammaZeroGivesBeta) {
  BatchNorm<double> bn("bn", 2);
  bn.gamma().fill(0.0);
  bn.beta()[0] = 0.5;
  bn.beta()[1] = -2.0;
  const TensorD y = bn.forward(random_d(Shape{3, 2, 2, 2}, 4), Mode::train);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(y[(n * 2 + 0) * 4 + i], 0.5);
      EXPECT_EQ(y[(n * 2 + 1) * 4 + i], -2.0);
    }
}

TEST(BatchNorm, ConstantBatchGivesBeta) {
  BatchNorm<float> bn("bn", 1);
  bn.beta()[0] = 0.25f;
  const Tensor y = bn.forward(Tensor(Shape{4, 1, 2, 2}, 7.0f), Mode::train);
  for (float v : y.data()) EXPECT_NEAR(v, 0.25f, 1e-6);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
  BatchNorm<double> bn("bn", 3);
  const TensorD x = random_d(Shape{5, 3, 4, 4}, 12);
  const TensorD y = bn.forward(x, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, sq = 0;
    for (std::size_t n = 0; n < 5; ++n)
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = y[(n * 3 + c) * 16 + i];
        s += v;
        sq += v * v;
      }
    const double mean = s / 80, var = sq / 80 - mean * mean;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-3);  // eps shrinks it slightly
  }
}

TEST(BatchNorm, RunningStatsUpdateAndEval) {
  BatchNorm<double> bn("bn", 1);
  bn.forward(TensorD(Shape{2, 1}, {1, 3}), Mode::train);  // mean 2, var 1
  EXPECT_NEAR(bn.running_mean()[0], 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(bn.running_var()[0], 0.9 * 1.0 + 0.1 * 1.0, 1e-12);
  const TensorD y = bn.forward(TensorD(Shape{1, 1}, {0.2}), Mode::eval);
  EXPECT_NEAR(y[0], 0.0, 1e-6);
  EXPECT_GE(bn.running_var()[0], 0.0);
}

TEST(BatchNorm, TrainNeedsTwoSamples) {
  BatchNorm<float> bn("bn", 1);
  EXPECT_THROW(bn.forward(Tensor(Shape{1, 1, 2, 2}), Mode::train), ParameterError);
  EXPECT_NO_THROW(bn.forward(Tensor(Shape{1, 1, 2, 2}), Mode::eval));
}

TEST(Flatten, RowMajorAndInverse) {
  Flatten<float> f("f");
  const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = f.forward(x, Mode::train);
  EXPECT_EQ(y, Tensor(Shape{1, 4}, {1, 2, 3, 4}));
  EXPECT_EQ(f.backward(y), x);
  EXPECT_EQ(flatten(Tensor(Shape{2, 3, 2, 2})).shape(), (Shape{2, 12}));
}

TEST(Dense, Examples) {
  const Tensor x(Shape{1, 2}, {1, 2});
  EXPECT_EQ(dense_forward(x, Tensor(Shape{2, 2}, {1, 0, 0, 1}), Tensor(Shape{2})), x);
  EXPECT_EQ(dense_forward(Tensor(Shape{2, 2}), Tensor(Shape{2, 3}, 1.0f),
                          Tensor(Shape{3}, {1, 2, 3})),
            Tensor(Shape{2, 3}, {1, 2, 3, 1, 2, 3}));
  EXPECT_EQ(dense_forward(x, Tensor(Shape{2, 1}, {3, 4}), Tensor(Shape{1}, {5})),
            Tensor(Shape{1, 1}, {16}));
  EXPECT_THROW(dense_forward(x, Tensor(Shape{3, 1}), Tensor(Shape{1})), DimensionError);
}

TEST(Dense, ScalarWeightGradient) {
  std::mt19937_64 rng(0);
  Dense<float> d("d", 1, 1, rng);
  d.forward(Tensor(Shape{1, 1}, {2}), Mode::train);
  d.backward(Tensor(Shape{1, 1}, {3}));
  EXPECT_EQ(d.params()[0].grad[0], 6.0f);
  EXPECT_EQ(d.params()[1].grad[0], 3.0f);
}

TEST(Dense, GradientsAccumulateUntilZeroed) {
  std::mt19937_64 rng(0);
  Dense<float> d("d", 1, 1, rng);
  for (int i = 0; i < 2; ++i) {
    d.forward(Tensor(Shape{1, 1}, {2}), Mode::train);
    d.backward(Tensor(Shape{1, 1}, {3}));
  }
  EXPECT_EQ(d.params()[0].grad[0], 12.0f);
  d.zero_grad();
  EXPECT_EQ(d.params()[0].grad[0], 0.0f);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const auto l = labels({3});
  const LossValue<double> v = softmax_cross_entropy(TensorD(Shape{1, 10}), l);
  EXPECT_NEAR(v.loss, std::log(10.0), 1e-12);
  EXPECT_NEAR(v.loss, 2.302585, 1e-6);
}

TEST(SoftmaxCrossEntropy, LargeLogitsStayFinite) {
  const auto l = labels({0});
  const LossValue<float> v = softmax_cross_entropy(Tensor(Shape{1, 2}, {1000, 0}), l);
  EXPECT_TRUE(std::isfinite(v.loss));
  EXPECT_NEAR(v.loss, 0.0f, 1e-6);
  EXPECT_TRUE(v.logits_grad.all_finite());
}

TEST(SoftmaxCrossEntropy, TwoClassSymmetric) {
  const auto l = labels({1});
  const LossValue<double> v = softmax_cross_entropy(TensorD(Shape{1, 2}), l);
  EXPECT_NEAR(v.loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(v.logits_grad[0], 0.5, 1e-12);
  EXPECT_NEAR(v.logits_grad[1], -0.5, 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientRowsSumToZero) {
  const TensorD logits = random_d(Shape{6, 7}, 21);
  const auto l = labels({0, 1, 2, 3, 4, 6});
  const LossValue<double> v = softmax_cross_entropy(logits, l);
  EXPECT_GE(v.loss, 0.0);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += v.logits_grad[r * 7 + c];
    EXPECT_NEAR(s, 0.0, 1e-6);
  }
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  const auto bad = labels({2});
  EXPECT_THROW(softmax_cross_entropy(TensorD(Shape{1, 2}), bad), DataError);
  const auto neg = labels({-1});
  EXPECT_THROW(softmax_cross_entropy(TensorD(Shape{1, 2}), neg), DataError);
}

TEST(Init, KaimingStdAndSameAcrossPrecisions) {
  std::mt19937_64 a(9), b(9);
  const Tensor f = kaiming_normal<float>(Shape{200, 50}, 50, a);
  const TensorD d = kaiming_normal<double>(Shape{200, 50}, 50, b);
  EXPECT_EQ(f, d.cast<float>());
  double sq = 0;
  for (double v : d.data()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / d.size()), std::sqrt(2.0 / 50), 0.01);
}

}  // namespace
}  // namespace gradpath
