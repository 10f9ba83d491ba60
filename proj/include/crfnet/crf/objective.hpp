#pragma once

// Regularized conditional log-likelihood of a CRF and its gradient.
//
//   L(theta) = sum_j [ score(Y_j, X_j) - log Z(X_j) ] - |theta|^2 / (2 sigma^2)
//
// The gradient is (empirical feature counts) - (expected counts under the
// model's marginals) - theta / sigma^2, laid out in CrfModel's flattening
// order.

#include <cmath>
#include <string>
#include <vector>

#include "crfnet/crf/inference.hpp"
#include "crfnet/crf/model.hpp"

namespace crfnet {

inline void check_dataset(const CrfModel& model, const RegularizedDataset& data) {
  require(!data.items.empty(), ErrorCode::empty_corpus, "training set is empty");
  require(data.sigma2 > 0.0 && !std::isnan(data.sigma2), ErrorCode::invalid_argument,
          "prior variance must be positive, got " + std::to_string(data.sigma2));
  for (const auto& item : data.items) {
    check_compatible(model, item.observations);
    check_labels(model, item.observations, item.labels);
  }
}

inline double prior_penalty(std::span<const double> theta, double sigma2) {
  if (std::isinf(sigma2)) return 0.0;
  return squared_norm(theta) / (2.0 * sigma2);
}

struct ObjectiveValue {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Objective and gradient in one pass. Per-sequence terms are accumulated in
/// dataset order so the result is reproducible bit for bit.
inline ObjectiveValue objective_with_gradient(const CrfModel& model,
                                              const RegularizedDataset& data) {
  check_dataset(model, data);
  const std::size_t k = model.num_labels();
  const std::size_t d = model.dim();
  const std::size_t bias_at = model.bias_offset();
  const std::size_t trans_at = model.transition_offset();

  ObjectiveValue out;
  out.gradient.assign(model.num_parameters(), 0.0);
  auto& grad = out.gradient;

  double loglik = 0.0;
  for (const auto& item : data.items) {
    const auto& obs = item.observations;
    const auto& labels = item.labels;
    const Potentials pot = compute_potentials(model, obs);
    const Marginals marg = forward_backward(pot);
    loglik += sequence_score(pot, labels) - marg.log_z;

    for (std::size_t t = 0; t < obs.length(); ++t) {
      const auto x = obs.frame(t);
      for (std::size_t y = 0; y < k; ++y) {
        const double weight = (labels[t] == y ? 1.0 : 0.0) - marg.node(t, y);
        if (weight == 0.0) continue;
        double* row = grad.data() + y * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += weight * x[i];
        grad[bias_at + y] += weight;
      }
    }
    for (std::size_t t = 1; t < obs.length(); ++t) {
      grad[trans_at + labels[t - 1] * k + labels[t]] += 1.0;
      const Matrix& slice = marg.edge[t - 1];
      for (std::size_t i = 0; i < k * k; ++i) grad[trans_at + i] -= slice.flat()[i];
    }
  }

  const std::vector<double> theta = model.flatten();
  out.value = loglik - prior_penalty(theta, data.sigma2);
  if (!std::isinf(data.sigma2)) {
    for (std::size_t i = 0; i < theta.size(); ++i) grad[i] -= theta[i] / data.sigma2;
  }
  return out;
}

/// Regularized conditional log-likelihood L(theta) (to be maximized).
inline double objective(const CrfModel& model, const RegularizedDataset& data) {
  check_dataset(model, data);
  double loglik = 0.0;
  for (const auto& item : data.items) {
    const Potentials pot = compute_potentials(model, item.observations);
    loglik += sequence_score(pot, item.labels) - log_partition(pot);
  }
  return loglik - prior_penalty(model.flatten(), data.sigma2);
}

inline std::vector<double> objective_gradient(const CrfModel& model,
                                              const RegularizedDataset& data) {
  return objective_with_gradient(model, data).gradient;
}

}  // namespace crfnet
