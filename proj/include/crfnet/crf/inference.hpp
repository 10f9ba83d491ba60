#pragma once

// Exact inference for the linear-chain CRF. Everything runs in log space.

#include <cstddef>
#include <limits>
#include <vector>

#include "crfnet/crf/model.hpp"
#include "crfnet/matrix.hpp"

namespace crfnet {

/// State scores W[y] . x_t + b[y] for every frame, plus the transition matrix.
inline Potentials compute_potentials(const CrfModel& model, const ObservationSequence& obs) {
  check_compatible(model, obs);
  const std::size_t length = obs.length();
  const std::size_t k = model.num_labels();
  Potentials pot{Matrix(length, k), model.transitions()};
  for (std::size_t t = 0; t < length; ++t) {
    const auto x = obs.frame(t);
    for (std::size_t y = 0; y < k; ++y) {
      pot.state(t, y) = dot(model.state_weights().row(y), x) + model.state_bias()[y];
    }
  }
  return pot;
}

inline double sequence_score(const Potentials& pot, const LabelSequence& labels) {
  double score = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    score += pot.state(t, labels[t]);
    if (t > 0) score += pot.transition(labels[t - 1], labels[t]);
  }
  return score;
}

/// Total score sum_k theta_k F_k(Y, X) of one labeling.
inline double sequence_score(const CrfModel& model, const ObservationSequence& obs,
                             const LabelSequence& labels) {
  check_compatible(model, obs);
  check_labels(model, obs, labels);
  return sequence_score(compute_potentials(model, obs), labels);
}

namespace detail {

// alpha(t, y): log of the summed scores of all prefixes ending in y at t.
inline Matrix forward_messages(const Potentials& pot) {
  const std::size_t length = pot.length();
  const std::size_t k = pot.num_labels();
  Matrix alpha(length, k);
  std::vector<double> terms(k);
  for (std::size_t y = 0; y < k; ++y) alpha(0, y) = pot.state(0, y);
  for (std::size_t t = 1; t < length; ++t) {
    for (std::size_t y = 0; y < k; ++y) {
      for (std::size_t prev = 0; prev < k; ++prev) {
        terms[prev] = alpha(t - 1, prev) + pot.transition(prev, y);
      }
      alpha(t, y) = pot.state(t, y) + log_sum_exp(terms);
    }
  }
  return alpha;
}

// beta(t, y): log of the summed scores of all suffixes after t given y at t.
inline Matrix backward_messages(const Potentials& pot) {
  const std::size_t length = pot.length();
  const std::size_t k = pot.num_labels();
  Matrix beta(length, k, 0.0);
  std::vector<double> terms(k);
  for (std::size_t t = length - 1; t-- > 0;) {
    for (std::size_t y = 0; y < k; ++y) {
      for (std::size_t next = 0; next < k; ++next) {
        terms[next] = pot.transition(y, next) + pot.state(t + 1, next) + beta(t + 1, next);
      }
      beta(t, y) = log_sum_exp(terms);
    }
  }
  return beta;
}

}  // namespace detail

inline double log_partition(const Potentials& pot) {
  const Matrix alpha = detail::forward_messages(pot);
  return log_sum_exp(alpha.row(pot.length() - 1));
}

/// log Z(X, theta) via the forward recursion.
inline double log_partition(const CrfModel& model, const ObservationSequence& obs) {
  return log_partition(compute_potentials(model, obs));
}

inline Marginals forward_backward(const Potentials& pot) {
  const std::size_t length = pot.length();
  const std::size_t k = pot.num_labels();
  const Matrix alpha = detail::forward_messages(pot);
  const Matrix beta = detail::backward_messages(pot);

  Marginals out;
  out.log_z = log_sum_exp(alpha.row(length - 1));
  out.node = Matrix(length, k);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t y = 0; y < k; ++y) {
      out.node(t, y) = std::exp(alpha(t, y) + beta(t, y) - out.log_z);
    }
  }
  out.edge.reserve(length > 0 ? length - 1 : 0);
  for (std::size_t t = 0; t + 1 < length; ++t) {
    Matrix slice(k, k);
    for (std::size_t from = 0; from < k; ++from) {
      for (std::size_t to = 0; to < k; ++to) {
        slice(from, to) = std::exp(alpha(t, from) + pot.transition(from, to) +
                                   pot.state(t + 1, to) + beta(t + 1, to) - out.log_z);
      }
    }
    out.edge.push_back(std::move(slice));
  }
  return out;
}

inline Marginals forward_backward(const CrfModel& model, const ObservationSequence& obs) {
  return forward_backward(compute_potentials(model, obs));
}

/// Highest-scoring labeling. Among equally scoring labelings the
/// lexicographically smallest one is returned: max-sum messages are run
/// backwards and the path is read off front to back, taking the smallest
/// label that can still reach the optimum at each position.
inline LabelSequence viterbi_decode(const Potentials& pot) {
  const std::size_t length = pot.length();
  const std::size_t k = pot.num_labels();
  // best(t, y): best score of frames t..T-1 given y at t, including state t.
  Matrix best(length, k);
  for (std::size_t y = 0; y < k; ++y) best(length - 1, y) = pot.state(length - 1, y);
  for (std::size_t t = length - 1; t-- > 0;) {
    for (std::size_t y = 0; y < k; ++y) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t next = 0; next < k; ++next) {
        top = std::max(top, pot.transition(y, next) + best(t + 1, next));
      }
      best(t, y) = pot.state(t, y) + top;
    }
  }

  LabelSequence path(length);
  path[0] = argmax(best.row(0));
  std::vector<double> candidate(k);
  for (std::size_t t = 1; t < length; ++t) {
    for (std::size_t y = 0; y < k; ++y) {
      candidate[y] = pot.transition(path[t - 1], y) + best(t, y);
    }
    path[t] = argmax(candidate);
  }
  return path;
}

inline LabelSequence viterbi_decode(const CrfModel& model, const ObservationSequence& obs) {
  return viterbi_decode(compute_potentials(model, obs));
}

}  // namespace crfnet
