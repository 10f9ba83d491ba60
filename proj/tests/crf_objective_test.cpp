#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "crfnet/check/enumeration.hpp"
#include "crfnet/check/finite_difference.hpp"
#include "crfnet/crf/objective.hpp"
#include "test_support.hpp"

using namespace crfnet;
using crfnet::testing::labels_of_size;
using crfnet::testing::random_labels;
using crfnet::testing::random_model;
using crfnet::testing::random_observations;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

RegularizedDataset random_dataset(Rng& rng, std::size_t n, std::size_t k, std::size_t d,
                                  std::size_t max_len, double sigma2) {
  RegularizedDataset data;
  data.sigma2 = sigma2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t length = 1 + rng.index(max_len);
    data.items.push_back({random_observations(rng, length, d), random_labels(rng, length, k)});
  }
  return data;
}

}  // namespace

TEST(Objective, ZeroModelIsMinusTLogK) {
  Rng rng(1);
  RegularizedDataset data = random_dataset(rng, 4, 3, 2, 6, kInf);
  double total_frames = 0.0;
  for (const auto& item : data.items) total_frames += static_cast<double>(item.labels.size());
  CrfModel zero(labels_of_size(3), 2);
  EXPECT_NEAR(objective(zero, data), -total_frames * std::log(3.0), 1e-12);
  data.sigma2 = 1.0;
  EXPECT_NEAR(objective(zero, data), -total_frames * std::log(3.0), 1e-12);
}

TEST(Objective, MatchesEnumeratedLogProbabilityMinusPenalty) {
  Rng rng(2);
  CrfModel m = random_model(rng, 3, 2);
  RegularizedDataset data = random_dataset(rng, 1, 3, 2, 5, 10.0);
  const auto& item = data.items[0];
  const double expected = check::log_probability(m, item.observations, item.labels) -
                          squared_norm(m.flatten()) / 20.0;
  EXPECT_NEAR(objective(m, data), expected, 1e-9 * std::abs(expected));
}

TEST(Objective, TermsAreNonPositive) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    CrfModel m = random_model(rng, 3, 2);
    RegularizedDataset data = random_dataset(rng, 3, 3, 2, 5, kInf);
    EXPECT_LE(objective(m, data), 0.0);
    const double unregularized = objective(m, data);
    data.sigma2 = 2.0;
    EXPECT_LE(objective(m, data), unregularized);
  }
}

TEST(Objective, RejectsBadVarianceAndEmptyData) {
  Rng rng(4);
  CrfModel m(labels_of_size(2), 2);
  RegularizedDataset data = random_dataset(rng, 2, 2, 2, 3, 0.0);
  EXPECT_THROW(objective(m, data), Error);
  data.sigma2 = -1.0;
  EXPECT_THROW(objective_gradient(m, data), Error);
  data.items.clear();
  data.sigma2 = 1.0;
  EXPECT_THROW(objective(m, data), Error);
}

TEST(Objective, RejectsDimensionMismatch) {
  Rng rng(5);
  RegularizedDataset data = random_dataset(rng, 2, 2, 3, 3, 1.0);
  EXPECT_THROW(objective(CrfModel(labels_of_size(2), 2), data), Error);
}

TEST(Gradient, LayoutMatchesFlattening) {
  Rng rng(6);
  CrfModel m = random_model(rng, 3, 2);
  RegularizedDataset data = random_dataset(rng, 2, 3, 2, 4, 10.0);
  EXPECT_EQ(objective_gradient(m, data).size(), 3u * 2 + 3 + 9);
}

TEST(Gradient, BalancedTransitionsGiveZeroTransitionGradient) {
  // Every label appears equally often at every position and every ordered
  // pair appears once per transition slot: the nine length-2 sequences.
  RegularizedDataset data;
  data.sigma2 = kInf;
  Rng rng(7);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      data.items.push_back({random_observations(rng, 2, 2), {a, b}});
    }
  }
  CrfModel zero(labels_of_size(3), 2);
  const auto grad = objective_gradient(zero, data);
  for (std::size_t i = zero.transition_offset(); i < grad.size(); ++i) {
    EXPECT_NEAR(grad[i], 0.0, 1e-12);
  }
}

TEST(Gradient, PenaltyIsSeparable) {
  Rng rng(8);
  CrfModel m = random_model(rng, 3, 2);
  RegularizedDataset data = random_dataset(rng, 3, 3, 2, 5, 2.0);
  const auto ga = objective_gradient(m, data);
  data.sigma2 = 5.0;
  const auto gb = objective_gradient(m, data);
  const auto theta = m.flatten();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    EXPECT_NEAR(gb[i] - ga[i], theta[i] * (1.0 / 2.0 - 1.0 / 5.0), 1e-12);
  }
}

TEST(Gradient, MatchesCentralDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    CrfModel m = random_model(rng, 3, 2);
    RegularizedDataset data = random_dataset(rng, 3, 3, 2, 5, 10.0);
    const auto grad = objective_gradient(m, data);
    CrfModel probe = m;
    auto value = [&](std::span<const double> theta) {
      probe.assign(theta);
      return objective(probe, data);
    };
    const auto res = check::central_difference_check(value, m.flatten(), grad, 1e-5);
    EXPECT_LE(res.max_error, 1e-6) << "worst index " << res.worst_index;
  }
}

TEST(Objective, ConcaveAlongSegments) {
  Rng rng(10);
  RegularizedDataset data = random_dataset(rng, 3, 3, 2, 5, 10.0);
  CrfModel a = random_model(rng, 3, 2, 2.0), b = random_model(rng, 3, 2, 2.0);
  const double fa = objective(a, data), fb = objective(b, data);
  const auto ta = a.flatten(), tb = b.flatten();
  for (int i = 0; i < 10; ++i) {
    const double lambda = rng.uniform();
    std::vector<double> mid(ta.size());
    for (std::size_t j = 0; j < mid.size(); ++j) mid[j] = lambda * ta[j] + (1 - lambda) * tb[j];
    CrfModel m = CrfModel::from_flat(a.labels(), 2, mid);
    EXPECT_GE(objective(m, data), std::min(fa, fb) - 1e-12);
  }
}

TEST(Objective, ValueAndGradientAgreeWithSeparateCalls) {
  Rng rng(11);
  CrfModel m = random_model(rng, 4, 3);
  RegularizedDataset data = random_dataset(rng, 5, 4, 3, 6, 3.0);
  const ObjectiveValue both = objective_with_gradient(m, data);
  EXPECT_NEAR(both.value, objective(m, data), 1e-12 * std::abs(both.value));
  EXPECT_EQ(both.gradient, objective_gradient(m, data));
}
