#pragma once

// Brute-force reference quantities for small CRFs, computed by enumerating
// all K^T labelings. Deliberately shares no code with crf/inference.hpp.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "crfnet/crf/model.hpp"

namespace crfnet::check {

struct Enumeration {
  double log_z = 0.0;
  Matrix node;
  std::vector<Matrix> edge;
  LabelSequence best;  // lexicographically smallest maximizer
  double best_score = 0.0;
};

inline double direct_score(const CrfModel& m, const ObservationSequence& obs,
                           const LabelSequence& y) {
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    double e = m.state_bias()[y[t]];
    for (std::size_t i = 0; i < m.dim(); ++i) e += m.state_weights()(y[t], i) * obs.frame(t)[i];
    s += e;
    if (t > 0) s += m.transitions()(y[t - 1], y[t]);
  }
  return s;
}

/// Calls visit(labels) for every labeling in lexicographic order.
template <typename Visit>
void for_each_labeling(std::size_t length, std::size_t k, Visit&& visit) {
  LabelSequence y(length, 0);
  for (;;) {
    visit(static_cast<const LabelSequence&>(y));
    std::size_t pos = length;
    while (pos > 0) {
      --pos;
      if (++y[pos] < k) break;
      y[pos] = 0;
      if (pos == 0) return;
    }
  }
}

inline Enumeration enumerate(const CrfModel& m, const ObservationSequence& obs) {
  const std::size_t length = obs.length();
  const std::size_t k = m.num_labels();

  std::vector<LabelSequence> paths;
  std::vector<double> scores;
  for_each_labeling(length, k, [&](const LabelSequence& y) {
    paths.push_back(y);
    scores.push_back(direct_score(m, obs, y));
  });

  Enumeration out;
  double peak = -std::numeric_limits<double>::infinity();
  std::size_t peak_at = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > peak) {
      peak = scores[i];
      peak_at = i;
    }
  }
  out.best = paths[peak_at];
  out.best_score = peak;

  double total = 0.0;
  for (double s : scores) total += std::exp(s - peak);
  out.log_z = peak + std::log(total);

  out.node = Matrix(length, k);
  out.edge.assign(length > 0 ? length - 1 : 0, Matrix(k, k));
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const double p = std::exp(scores[i] - out.log_z);
    for (std::size_t t = 0; t < length; ++t) {
      out.node(t, paths[i][t]) += p;
      if (t > 0) out.edge[t - 1](paths[i][t - 1], paths[i][t]) += p;
    }
  }
  return out;
}

/// log P(y | x) by enumeration.
inline double log_probability(const CrfModel& m, const ObservationSequence& obs,
                              const LabelSequence& y) {
  return direct_score(m, obs, y) - enumerate(m, obs).log_z;
}

}  // namespace crfnet::check
