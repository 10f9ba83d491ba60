#include <cmath>

#include <gtest/gtest.h>

#include "crfnet/check/finite_difference.hpp"
#include "crfnet/matrix.hpp"
#include "crfnet/nn/layers.hpp"

using namespace crfnet;
using namespace crfnet::nn;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

// Straightforward zero-padded cross-correlation, written independently of
// conv2d: explicit padded copy, then nested sums.
Tensor naive_same_conv(const Tensor& x, const Tensor& k) {
  const std::size_t h = x.dim(1), w = x.dim(2), cin = x.dim(3), ks = k.dim(0), cout = k.dim(3);
  const std::size_t pad = (ks - 1) / 2;
  Tensor padded({1, h + ks - 1, w + ks - 1, cin});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < cin; ++c) padded.at(0, i + pad, j + pad, c) = x.at(0, i, j, c);
  Tensor out({1, h, w, cout});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t o = 0; o < cout; ++o) {
        double s = 0.0;
        for (std::size_t a = 0; a < ks; ++a)
          for (std::size_t b = 0; b < ks; ++b)
            for (std::size_t c = 0; c < cin; ++c) s += padded.at(0, i + a, j + b, c) * k.at(a, b, c, o);
        out.at(0, i, j, o) = s;
      }
  return out;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  Tensor x = random_tensor(rng, {2, 4, 5, 1});
  Tensor k({1, 1, 1, 1}, 1.0);
  EXPECT_EQ(conv2d(x, k, 1, Padding::same), x);
}

TEST(Conv2d, ValidAllOnes) {
  Tensor x({1, 3, 3, 1}, 1.0);
  Tensor k({3, 3, 1, 1}, 1.0);
  Tensor y = conv2d(x, k, 1, Padding::valid);
  ASSERT_EQ(y.shape(), (std::vector<std::size_t>{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, MatchesNaiveReference) {
  Rng rng(2);
  Tensor x = random_tensor(rng, {1, 5, 5, 2});
  Tensor k = random_tensor(rng, {3, 3, 2, 3});
  Tensor y = conv2d(x, k, 1, Padding::same);
  Tensor ref = naive_same_conv(x, k);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, OutputGeometry) {
  EXPECT_EQ(conv_geometry(32, 32, 3, 2, Padding::same).out_h, 16u);
  EXPECT_EQ(conv_geometry(7, 7, 3, 2, Padding::same).out_h, 4u);
  EXPECT_EQ(conv_geometry(7, 7, 3, 2, Padding::valid).out_h, 3u);
  EXPECT_EQ(conv_geometry(8, 8, 3, 1, Padding::valid).out_w, 6u);
  EXPECT_EQ(conv_geometry(8, 8, 3, 1, Padding::same).pad_left, 1u);
}

TEST(Conv2d, ShapeMismatchIsAnError) {
  Tensor x({1, 4, 4, 2});
  Tensor k({3, 3, 3, 1});
  EXPECT_THROW(conv2d(x, k, 1, Padding::same), Error);
  EXPECT_THROW(conv2d(Tensor({1, 2, 2, 3}), k, 1, Padding::valid), Error);
}

TEST(Conv2d, LinearInInput) {
  Rng rng(3);
  Tensor a = random_tensor(rng, {1, 6, 6, 2}), b = random_tensor(rng, {1, 6, 6, 2});
  Tensor k = random_tensor(rng, {3, 3, 2, 2});
  Tensor lhs = conv2d(add(a, b), k, 2, Padding::same);
  Tensor rhs = add(conv2d(a, k, 2, Padding::same), conv2d(b, k, 2, Padding::same));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  for (Padding pad : {Padding::same, Padding::valid}) {
    for (std::size_t stride : {1u, 2u}) {
      Tensor x = random_tensor(rng, {2, 5, 5, 2});
      Tensor k = random_tensor(rng, {3, 3, 2, 3});
      Tensor y = conv2d(x, k, stride, pad);
      Tensor probe = random_tensor(rng, y.shape());
      Tensor gx, gk(k.shape());
      conv2d_backward(x, k, stride, pad, probe, &gx, gk);
      auto loss_x = [&](std::span<const double> v) {
        Tensor xx(x.shape(), std::vector<double>(v.begin(), v.end()));
        Tensor yy = conv2d(xx, k, stride, pad);
        return dot(yy.values(), probe.values());
      };
      auto loss_k = [&](std::span<const double> v) {
        Tensor kk(k.shape(), std::vector<double>(v.begin(), v.end()));
        Tensor yy = conv2d(x, kk, stride, pad);
        return dot(yy.values(), probe.values());
      };
      EXPECT_LE(check::central_difference_check(loss_x, x.storage(), gx.values()).max_error, 1e-6);
      EXPECT_LE(check::central_difference_check(loss_k, k.storage(), gk.values()).max_error, 1e-6);
    }
  }
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  Tensor x({4, 1, 1, 1}, std::vector<double>{-1.0, 1.0, -1.0, 1.0});
  BatchNormState state(1);
  Tensor y = batch_norm(x, state, Mode::training);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, ConstantChannelMapsToShift) {
  Tensor x({3, 2, 2, 1}, 4.25);
  BatchNormState state(1);
  state.scale = {2.5};
  state.shift = {-0.75};
  Tensor y = batch_norm(x, state, Mode::training);
  for (double v : y.values()) EXPECT_EQ(v, -0.75);
}

TEST(BatchNorm, OutputMomentsFollowScaleAndShift) {
  Rng rng(5);
  Tensor x = random_tensor(rng, {16, 3, 3, 2});
  for (double& v : x.values()) v = 3.0 * v + 7.0;
  BatchNormState state(2);
  state.scale = {0.5, 2.0};
  state.shift = {1.0, -3.0};
  Tensor y = batch_norm(x, state, Mode::training);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double mean = 0.0, var = 0.0;
    const double n = static_cast<double>(y.size() / 2);
    for (std::size_t i = ch; i < y.size(); i += 2) mean += y[i];
    mean /= n;
    for (std::size_t i = ch; i < y.size(); i += 2) var += (y[i] - mean) * (y[i] - mean);
    var /= n;
    EXPECT_NEAR(mean, state.shift[ch], 1e-4);
    EXPECT_NEAR(var, state.scale[ch] * state.scale[ch], 1e-4);
  }
}

TEST(BatchNorm, TrainingUpdatesRunningStatsAndInferenceUsesThem) {
  Rng rng(6);
  Tensor x = random_tensor(rng, {8, 2, 2, 1});
  BatchNormState state(1);
  batch_norm(x, state, Mode::training);
  EXPECT_NE(state.running_mean[0], 0.0);
  EXPECT_NE(state.running_var[0], 1.0);
  state.running_mean = {2.0};
  state.running_var = {4.0 - kBatchNormEpsilon};
  Tensor y = batch_norm(Tensor({1, 1, 1, 1}, 6.0), state, Mode::inference);
  EXPECT_NEAR(y[0], 2.0, 1e-12);
}

TEST(BatchNorm, EmptyTrainingBatchIsAnError) {
  BatchNormState state(1);
  EXPECT_THROW(batch_norm(Tensor({0, 2, 2, 1}), state, Mode::training), Error);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor x = random_tensor(rng, {5, 2, 2, 3});
  std::vector<double> scale{0.7, 1.3, -0.4}, shift{0.1, -0.2, 0.3};
  Tensor probe = random_tensor(rng, x.shape());
  BatchNormCache cache;
  batch_norm_train(x, scale, shift, cache);
  Tensor gx;
  std::vector<double> gs(3, 0.0), gb(3, 0.0);
  batch_norm_backward(probe, cache, scale, gx, gs, gb);
  auto loss_x = [&](std::span<const double> v) {
    BatchNormCache c;
    Tensor xx(x.shape(), std::vector<double>(v.begin(), v.end()));
    return dot(batch_norm_train(xx, scale, shift, c).values(), probe.values());
  };
  auto loss_s = [&](std::span<const double> v) {
    BatchNormCache c;
    return dot(batch_norm_train(x, v, shift, c).values(), probe.values());
  };
  EXPECT_LE(check::central_difference_check(loss_x, x.storage(), gx.values()).max_error, 1e-6);
  EXPECT_LE(check::central_difference_check(loss_s, scale, gs).max_error, 1e-6);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Tensor logits({3, 4});
  std::vector<std::size_t> labels{0, 2, 3};
  SoftmaxLoss sl = softmax_cross_entropy(logits, labels);
  EXPECT_NEAR(sl.loss, std::log(4.0), 1e-15);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double expected = (0.25 - (c == labels[b] ? 1.0 : 0.0)) / 3.0;
      EXPECT_NEAR(sl.grad_logits[b * 4 + c], expected, 1e-15);
    }
  }
}

TEST(SoftmaxCrossEntropy, TwoClassSingleSample) {
  std::vector<std::size_t> labels{0};
  EXPECT_NEAR(softmax_cross_entropy(Tensor({1, 2}), labels).loss, 0.693147180559945, 1e-12);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  std::vector<std::size_t> labels{5};
  EXPECT_THROW(softmax_cross_entropy(Tensor({1, 2}), labels), Error);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  Tensor x = random_tensor(rng, {3, 4});
  std::vector<double> w(4 * 2), b{0.3, -0.1};
  for (double& v : w) v = rng.normal();
  Tensor probe = random_tensor(rng, {3, 2});
  std::vector<double> gw(8, 0.0), gb(2, 0.0);
  Tensor gx = dense_backward(x, w, probe, gw, gb);
  auto loss_w = [&](std::span<const double> v) { return dot(dense(x, v, b).values(), probe.values()); };
  auto loss_x = [&](std::span<const double> v) {
    Tensor xx(x.shape(), std::vector<double>(v.begin(), v.end()));
    return dot(dense(xx, w, b).values(), probe.values());
  };
  EXPECT_LE(check::central_difference_check(loss_w, w, gw).max_error, 1e-6);
  EXPECT_LE(check::central_difference_check(loss_x, x.storage(), gx.values()).max_error, 1e-6);
}

TEST(Dropout, MaskIsSeededAndScaled) {
  const auto a = dropout_mask(1000, 0.2, 42), b = dropout_mask(1000, 0.2, 42);
  EXPECT_EQ(a, b);
  std::size_t dropped = 0;
  for (double m : a) {
    EXPECT_TRUE(m == 0.0 || std::abs(m - 1.25) < 1e-15);
    dropped += m == 0.0;
  }
  EXPECT_GT(dropped, 120u);
  EXPECT_LT(dropped, 280u);
}
