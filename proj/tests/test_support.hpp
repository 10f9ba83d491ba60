#pragma once

#include <string>
#include <vector>

#include "crfnet/crf/model.hpp"
#include "crfnet/random.hpp"

namespace crfnet::testing {

inline LabelSet labels_of_size(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("c" + std::to_string(i));
  return LabelSet(std::move(names));
}

inline CrfModel random_model(Rng& rng, std::size_t k, std::size_t d, double scale = 1.0) {
  CrfModel m(labels_of_size(k), d);
  std::vector<double> theta(m.num_parameters());
  for (double& v : theta) v = scale * rng.normal();
  m.assign(theta);
  return m;
}

inline ObservationSequence random_observations(Rng& rng, std::size_t length, std::size_t d) {
  Matrix x(length, d);
  for (double& v : x.flat()) v = rng.normal();
  return ObservationSequence(std::move(x));
}

inline LabelSequence random_labels(Rng& rng, std::size_t length, std::size_t k) {
  LabelSequence y(length);
  for (auto& v : y) v = rng.index(k);
  return y;
}

inline double relative_difference(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

}  // namespace crfnet::testing
