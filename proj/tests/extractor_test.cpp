#include <cmath>

#include <gtest/gtest.h>

#include "crfnet/check/finite_difference.hpp"
#include "crfnet/matrix.hpp"
#include "crfnet/nn/extractor.hpp"
#include "crfnet/nn/trainer.hpp"

using namespace crfnet;
using namespace crfnet::nn;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

ExtractorConfig tiny_config() {
  ExtractorConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.channels = 1;
  cfg.num_classes = 3;
  cfg.feature_dim = 6;
  cfg.stem = {{4, 3, 1, Padding::same}};
  cfg.stages = {{StageKind::residual, 2, 3}};
  cfg.dropout_rate = 0.2;
  cfg.seed = 11;
  return cfg;
}

void zero_unit(ResidualUnit& u) {
  for (ConvBn* c : {&u.branch_a, &u.branch_b_in, &u.branch_b_out, &u.project}) {
    c->kernel.fill(0.0);
    std::fill(c->norm.scale.begin(), c->norm.scale.end(), 0.0);
    std::fill(c->norm.shift.begin(), c->norm.shift.end(), 0.0);
  }
}

ResidualUnit unit_of(ExtractorModel& m, std::size_t stage = 0) {
  return std::get<ResidualUnit>(m.stages.at(stage));
}

void zero_output_layer(ExtractorModel& m) {
  std::fill(m.output.weights.begin(), m.output.weights.end(), 0.0);
  std::fill(m.output.bias.begin(), m.output.bias.end(), 0.0);
}

}  // namespace

TEST(ResidualBlock, ZeroBranchIsIdentityOnNonnegativeInput) {
  ExtractorModel m = make_extractor(tiny_config());
  ResidualUnit u = unit_of(m);
  zero_unit(u);
  Rng rng(1);
  Tensor x = random_tensor(rng, {2, 4, 4, 4});
  for (double& v : x.values()) v = std::abs(v);
  EXPECT_EQ(residual_block(u, x, Mode::training), x);
  EXPECT_EQ(residual_block(u, x, Mode::inference), x);
}

TEST(ResidualBlock, ZeroBranchClampsNegativeEntries) {
  ExtractorModel m = make_extractor(tiny_config());
  ResidualUnit u = unit_of(m);
  zero_unit(u);
  Tensor x({1, 2, 2, 4}, 1.0);
  x[0] = -1.0;
  x[5] = -1.0;
  Tensor y = residual_block(u, x, Mode::training);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::max(0.0, x[i]));
}

TEST(ResidualBlock, BranchShapeMismatchIsAnError) {
  ExtractorModel m = make_extractor(tiny_config());
  ResidualUnit u = unit_of(m);
  Tensor x({1, 4, 4, 3});  // unit expects 4 channels
  EXPECT_THROW(residual_block(u, x, Mode::training), Error);
}

TEST(ResidualBlock, BranchGradientsMatchFiniteDifferences) {
  ExtractorModel m = make_extractor(tiny_config());
  ResidualUnit u = unit_of(m);
  Rng rng(2);
  Tensor x = random_tensor(rng, {3, 4, 4, 4});
  Tensor probe = random_tensor(rng, x.shape());

  ResidualTrace trace;
  residual_block(u, x, Mode::training, &trace);
  ResidualUnit g = u;
  for (ConvBn* c : {&g.branch_a, &g.branch_b_in, &g.branch_b_out, &g.project}) {
    c->kernel.fill(0.0);
    std::fill(c->norm.scale.begin(), c->norm.scale.end(), 0.0);
    std::fill(c->norm.shift.begin(), c->norm.shift.end(), 0.0);
  }
  Tensor gx = residual_block_backward(u, trace, probe, g);

  // Flatten branch parameters in a fixed order.
  auto blocks = [](ResidualUnit& r) {
    std::vector<std::span<double>> out;
    for (ConvBn* c : {&r.branch_a, &r.branch_b_in, &r.branch_b_out, &r.project}) {
      out.emplace_back(c->kernel.storage());
      out.emplace_back(c->norm.scale);
      out.emplace_back(c->norm.shift);
    }
    return out;
  };
  std::vector<double> theta, analytic;
  for (auto s : blocks(u)) theta.insert(theta.end(), s.begin(), s.end());
  for (auto s : blocks(g)) analytic.insert(analytic.end(), s.begin(), s.end());

  ResidualUnit probe_unit = u;
  auto loss = [&](std::span<const double> v) {
    std::size_t at = 0;
    for (auto s : blocks(probe_unit)) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(at), s.size(), s.begin());
      at += s.size();
    }
    return dot(residual_block(probe_unit, x, Mode::training).values(), probe.values());
  };
  const auto res = check::central_difference_check(loss, theta, analytic);
  EXPECT_LE(res.max_error, 1e-6) << "worst index " << res.worst_index;

  auto loss_x = [&](std::span<const double> v) {
    Tensor xx(x.shape(), std::vector<double>(v.begin(), v.end()));
    return dot(residual_block(u, xx, Mode::training).values(), probe.values());
  };
  EXPECT_LE(check::central_difference_check(loss_x, x.storage(), gx.values()).max_error, 1e-6);
}

TEST(Forward, ZeroOutputLayerGivesUniformPrediction) {
  ExtractorModel m = make_extractor(ExtractorConfig{});
  zero_output_layer(m);
  Rng rng(3);
  Tensor batch = random_tensor(rng, {2, 32, 32, 1});
  ForwardResult r = forward(m, batch, Mode::inference);
  for (double v : r.logits.values()) EXPECT_EQ(v, 0.0);
  std::vector<std::size_t> labels{1, 6};
  EXPECT_NEAR(backward(m, batch, labels, 5).loss, std::log(7.0), 1e-12);
  EXPECT_EQ(r.features.shape(), (std::vector<std::size_t>{2, 32}));
}

TEST(Forward, InferenceIsDeterministic) {
  ExtractorModel m = make_extractor(tiny_config());
  Rng rng(4);
  Tensor batch = random_tensor(rng, {3, 8, 8, 1});
  ForwardResult a = forward(m, batch, Mode::inference);
  ForwardResult b = forward(m, batch, Mode::inference, 999);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.features, b.features);
}

TEST(Forward, SinglePixelDenseOnlyConfig) {
  ExtractorConfig cfg;
  cfg.height = cfg.width = 1;
  cfg.channels = 2;
  cfg.num_classes = 2;
  cfg.feature_dim = 2;
  cfg.stem.clear();
  cfg.stages.clear();
  ExtractorModel m = make_extractor(cfg);
  m.hidden.weights = {1.0, -1.0, 2.0, 0.5};  // 2 x 2
  m.hidden.bias = {0.5, 0.0};
  m.output.weights = {1.0, 0.0, -1.0, 3.0};
  m.output.bias = {0.25, -0.25};
  Tensor x({1, 1, 1, 2}, std::vector<double>{1.0, 2.0});
  ForwardResult r = forward(m, x, Mode::inference);
  // hidden = relu([1 + 4 + 0.5, -1 + 1 + 0]) = [5.5, 0]
  EXPECT_EQ(r.features[0], 5.5);
  EXPECT_EQ(r.features[1], 0.0);
  // logits = [5.5 * 1 + 0.25, 5.5 * 0 - 0.25]
  EXPECT_EQ(r.logits[0], 5.75);
  EXPECT_EQ(r.logits[1], -0.25);
}

TEST(Forward, WrongBatchShapeIsAnError) {
  ExtractorModel m = make_extractor(tiny_config());
  EXPECT_THROW(forward(m, Tensor({1, 9, 8, 1}), Mode::inference), Error);
}

TEST(Backward, UniformLogitGradient) {
  ExtractorModel m = make_extractor(tiny_config());
  zero_output_layer(m);
  Rng rng(5);
  Tensor batch = random_tensor(rng, {2, 8, 8, 1});
  std::vector<std::size_t> labels{0, 2};
  BackwardResult r = backward(m, batch, labels, 3);
  EXPECT_NEAR(r.loss, std::log(3.0), 1e-12);
  // d loss / d output.bias = mean over batch of (1/K - onehot).
  EXPECT_NEAR(r.gradients.output.bias[0], (1.0 / 3 - 1.0 + 1.0 / 3) / 2, 1e-12);
  EXPECT_NEAR(r.gradients.output.bias[1], (2.0 / 3) / 2, 1e-12);
  EXPECT_NEAR(r.gradients.output.bias[2], (1.0 / 3 - 1.0 + 1.0 / 3) / 2, 1e-12);
}

TEST(Backward, FullParameterFiniteDifferenceCheck) {
  ExtractorModel m = make_extractor(tiny_config());
  Rng rng(6);
  Tensor batch = random_tensor(rng, {4, 8, 8, 1});
  std::vector<std::size_t> labels{0, 1, 2, 1};
  const std::uint64_t dropout_seed = 77;
  BackwardResult r = backward(m, batch, labels, dropout_seed);
  const std::vector<double> analytic = flatten_parameters(r.gradients);

  ExtractorModel probe = m;
  auto loss = [&](std::span<const double> theta) {
    assign_parameters(probe, theta);
    ForwardResult f = forward(probe, batch, Mode::training, dropout_seed);
    return softmax_cross_entropy(f.logits, labels).loss;
  };
  const auto res = check::central_difference_check(loss, flatten_parameters(m), analytic);
  EXPECT_EQ(res.checked, analytic.size());
  EXPECT_LE(res.max_error, 1e-6) << "worst index " << res.worst_index << " analytic "
                                 << res.worst_analytic << " numeric " << res.worst_numeric;
}

TEST(Sgd, LearningRateSchedule) {
  SgdConfig cfg;
  cfg.base_lr = 0.01;
  cfg.lr_drop_every = 100;
  cfg.lr_drop_factor = 10;
  EXPECT_DOUBLE_EQ(lr_at(cfg, 0), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 99), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 100), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(cfg, 250), 0.0001);
}

TEST(Sgd, ScalarUpdateRule) {
  ExtractorModel m = make_extractor(tiny_config());
  for (auto& p : parameters(m)) std::fill(p.values.begin(), p.values.end(), 1.0);
  ExtractorModel g = m;
  std::vector<double> velocity = zero_velocity(m);
  SgdConfig cfg;
  cfg.lr_drop_every = 1000;
  sgd_step(m, g, velocity, cfg, 0);
  for (double v : velocity) EXPECT_NEAR(v, -0.010001, 1e-15);
  for (double w : flatten_parameters(m)) EXPECT_NEAR(w, 0.989999, 1e-15);
}

TEST(Sgd, ZeroGradientWithoutDecayLeavesModelUnchanged) {
  ExtractorModel m = make_extractor(tiny_config());
  const auto before = flatten_parameters(m);
  ExtractorModel g = zeros_like(m);
  std::vector<double> velocity = zero_velocity(m);
  SgdConfig cfg;
  cfg.weight_decay = 0.0;
  sgd_step(m, g, velocity, cfg, 0);
  EXPECT_EQ(flatten_parameters(m), before);
}

TEST(Sgd, RunningStatisticsAreNotDecayed) {
  ExtractorModel m = make_extractor(tiny_config());
  for (auto& s : statistics(m)) std::fill(s.values.begin(), s.values.end(), 3.0);
  ExtractorModel g = zeros_like(m);
  std::vector<double> velocity = zero_velocity(m);
  sgd_step(m, g, velocity, SgdConfig{}, 0);
  for (auto& s : statistics(m)) {
    for (double v : s.values) EXPECT_EQ(v, 3.0);
  }
}

TEST(Sgd, NonFiniteGradientNamesTheLayer) {
  ExtractorModel m = make_extractor(tiny_config());
  ExtractorModel g = zeros_like(m);
  std::get<ResidualUnit>(g.stages[0]).project.kernel[0] = NAN;
  std::vector<double> velocity = zero_velocity(m);
  try {
    sgd_step(m, g, velocity, SgdConfig{}, 0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_finite);
    EXPECT_NE(std::string(e.what()).find("stage0.project.kernel"), std::string::npos);
  }
}

TEST(ExtractFeatures, RowsMatchForwardFeatures) {
  ExtractorModel m = make_extractor(tiny_config());
  Rng rng(7);
  Tensor frame = random_tensor(rng, {8, 8, 1});
  ObservationSequence one = extract_features(m, {frame});
  ForwardResult r = forward(m, Tensor({1, 8, 8, 1}, frame.storage()), Mode::inference);
  ASSERT_EQ(one.length(), 1u);
  ASSERT_EQ(one.dim(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(one.frame(0)[i], r.features[i]);

  ObservationSequence dup = extract_features(m, {frame, frame, frame});
  for (std::size_t t = 1; t < 3; ++t) {
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(dup.frame(t)[i], dup.frame(0)[i]);
  }
  EXPECT_EQ(extract_features(m, {frame}, FeatureTap::logits).dim(), 3u);
}

TEST(Training, SeparableToyImagesAreLearned) {
  // Class 0: bright left half; class 1: bright right half; plus noise.
  ExtractorConfig cfg = tiny_config();
  cfg.num_classes = 2;
  ExtractorModel m = make_extractor(cfg);
  Rng rng(8);
  std::vector<Tensor> frames;
  std::vector<std::size_t> labels;
  for (int i = 0; i < 64; ++i) {
    const std::size_t y = static_cast<std::size_t>(i % 2);
    Tensor f({8, 8, 1});
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c)
        f[r * 8 + c] = ((c < 4) == (y == 0) ? 0.8 : 0.2) + 0.1 * rng.normal();
    frames.push_back(std::move(f));
    labels.push_back(y);
  }
  SgdConfig sgd;
  sgd.batch_size = 16;
  sgd.total_iterations = 150;
  sgd.lr_drop_every = 100;
  const TrainingLog log = train_extractor(m, frames, labels, sgd, 3);
  EXPECT_LT(log.losses.back(), log.losses.front());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    ForwardResult r = forward(m, Tensor({1, 8, 8, 1}, frames[i].storage()), Mode::inference);
    correct += argmax(r.logits.values()) == labels[i];
  }
  EXPECT_GE(static_cast<double>(correct) / frames.size(), 0.99);
}

TEST(Training, FixedSeedIsBitReproducible) {
  ExtractorConfig cfg = tiny_config();
  Rng rng(9);
  std::vector<Tensor> frames;
  std::vector<std::size_t> labels;
  for (int i = 0; i < 12; ++i) {
    frames.push_back(random_tensor(rng, {8, 8, 1}));
    labels.push_back(static_cast<std::size_t>(i % 3));
  }
  SgdConfig sgd;
  sgd.batch_size = 4;
  sgd.total_iterations = 10;
  ExtractorModel a = make_extractor(cfg), b = make_extractor(cfg);
  train_extractor(a, frames, labels, sgd, 5);
  train_extractor(b, frames, labels, sgd, 5);
  EXPECT_EQ(flatten_parameters(a), flatten_parameters(b));
}
