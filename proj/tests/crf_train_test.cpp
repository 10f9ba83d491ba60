#include <cmath>

#include <gtest/gtest.h>

#include "crfnet/crf/inference.hpp"
#include "crfnet/crf/train.hpp"
#include "test_support.hpp"

using namespace crfnet;
using crfnet::testing::labels_of_size;

namespace {

// Label is 1 exactly when the first feature is positive.
RegularizedDataset separable_dataset(std::uint64_t seed, double sigma2) {
  Rng rng(seed);
  RegularizedDataset data;
  data.sigma2 = sigma2;
  for (int s = 0; s < 12; ++s) {
    Matrix x(6, 2);
    LabelSequence y(6);
    for (std::size_t t = 0; t < 6; ++t) {
      const double mag = rng.uniform(0.5, 2.0);
      const bool positive = rng.uniform() < 0.5;
      x(t, 0) = positive ? mag : -mag;
      x(t, 1) = rng.normal();
      y[t] = positive ? 1 : 0;
    }
    data.items.push_back({ObservationSequence(std::move(x)), std::move(y)});
  }
  return data;
}

}  // namespace

TEST(TrainCrf, SeparableDataIsFitExactly) {
  const RegularizedDataset data = separable_dataset(1, 100.0);
  const CrfModel init = zero_model(labels_of_size(2), 2);
  const auto result = train_crf(data, init, OptimConfig{});
  EXPECT_GE(objective(result.model, data), objective(init, data));
  for (const auto& item : data.items) {
    EXPECT_EQ(viterbi_decode(result.model, item.observations), item.labels);
  }
  const auto& trace = result.report.objective_trace;
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LT(trace[i], trace[i - 1] + 1e-12);
}

TEST(TrainCrf, OptimumIsAFixedPoint) {
  const RegularizedDataset data = separable_dataset(2, 10.0);
  const auto first = train_crf(data, zero_model(labels_of_size(2), 2), OptimConfig{});
  ASSERT_TRUE(first.report.converged);
  const auto second = train_crf(data, first.model, OptimConfig{});
  EXPECT_LE(second.report.iterations_used, 1u);
  EXPECT_LE(std::abs(objective(second.model, data) - objective(first.model, data)), 1e-9);
}

TEST(TrainCrf, StrongerPriorShrinksParameters) {
  RegularizedDataset data = separable_dataset(3, 100.0);
  const CrfModel init = zero_model(labels_of_size(2), 2);
  const auto loose = train_crf(data, init, OptimConfig{});
  data.sigma2 = 1e-4;
  const auto tight = train_crf(data, init, OptimConfig{});
  EXPECT_LE(squared_norm(tight.model.flatten()), squared_norm(loose.model.flatten()));
}

TEST(TrainCrf, DeterministicAcrossRuns) {
  const RegularizedDataset data = separable_dataset(4, 10.0);
  const CrfModel init = zero_model(labels_of_size(2), 2);
  const auto a = train_crf(data, init, OptimConfig{});
  const auto b = train_crf(data, init, OptimConfig{});
  EXPECT_EQ(a.model.flatten(), b.model.flatten());
  EXPECT_EQ(a.report.objective_trace, b.report.objective_trace);
}

TEST(TrainCrf, GradientDescentSwitchAlsoImproves) {
  const RegularizedDataset data = separable_dataset(5, 10.0);
  const CrfModel init = zero_model(labels_of_size(2), 2);
  OptimConfig cfg;
  cfg.method = OptimMethod::gradient_descent;
  cfg.descent_step = 1e-3;
  cfg.max_iterations = 200;
  const auto result = train_crf(data, init, cfg);
  EXPECT_GT(objective(result.model, data), objective(init, data));
}

TEST(TrainCrf, RejectsMismatchedInit) {
  const RegularizedDataset data = separable_dataset(6, 10.0);
  EXPECT_THROW(train_crf(data, zero_model(labels_of_size(2), 3), OptimConfig{}), Error);
}
