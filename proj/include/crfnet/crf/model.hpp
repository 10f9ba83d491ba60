#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "crfnet/error.hpp"
#include "crfnet/matrix.hpp"

namespace crfnet {

/// Ordered, duplicate-free class inventory. Label indices are 0..size()-1.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    require(names_.size() >= 2, ErrorCode::invalid_argument,
            "a label set needs at least two labels");
    std::set<std::string> seen;
    for (const auto& n : names_) {
      require(seen.insert(n).second, ErrorCode::duplicate_id,
              "duplicate label name '" + n + "'");
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::ptrdiff_t find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
  }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<std::string> names_;
};

using LabelSequence = std::vector<std::size_t>;

/// T x d feature rows, one per frame.
class ObservationSequence {
 public:
  ObservationSequence() = default;
  explicit ObservationSequence(Matrix features) : features_(std::move(features)) {
    require(features_.rows() >= 1 && features_.cols() >= 1,
            ErrorCode::dimension_mismatch,
            "observation sequence needs T >= 1 and d >= 1");
    require(features_.all_finite(), ErrorCode::non_finite,
            "observation sequence contains non-finite entries");
  }

  std::size_t length() const noexcept { return features_.rows(); }
  std::size_t dim() const noexcept { return features_.cols(); }
  std::span<const double> frame(std::size_t t) const { return features_.row(t); }
  const Matrix& features() const noexcept { return features_; }

 private:
  Matrix features_;
};

/// Linear-chain CRF parameters.
///
/// Flattened parameter layout (used by the objective gradient and the
/// optimizer): state weights row-major (K x d), then state biases (K), then
/// transition weights row-major (K x K) where entry (from, to) scores the
/// transition from label `from` at t-1 to label `to` at t.
class CrfModel {
 public:
  CrfModel() = default;
  CrfModel(LabelSet labels, std::size_t dim)
      : labels_(std::move(labels)),
        dim_(dim),
        state_weights_(labels_.size(), dim),
        state_bias_(labels_.size(), 0.0),
        transitions_(labels_.size(), labels_.size()) {
    require(dim >= 1, ErrorCode::dimension_mismatch, "feature dimension must be >= 1");
  }

  const LabelSet& labels() const noexcept { return labels_; }
  std::size_t num_labels() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }

  Matrix& state_weights() { return state_weights_; }
  const Matrix& state_weights() const { return state_weights_; }
  std::vector<double>& state_bias() { return state_bias_; }
  const std::vector<double>& state_bias() const { return state_bias_; }
  Matrix& transitions() { return transitions_; }
  const Matrix& transitions() const { return transitions_; }

  std::size_t num_parameters() const noexcept {
    const std::size_t k = num_labels();
    return k * dim_ + k + k * k;
  }
  std::size_t bias_offset() const noexcept { return num_labels() * dim_; }
  std::size_t transition_offset() const noexcept { return bias_offset() + num_labels(); }

  std::vector<double> flatten() const {
    std::vector<double> theta;
    theta.reserve(num_parameters());
    theta.insert(theta.end(), state_weights_.flat().begin(), state_weights_.flat().end());
    theta.insert(theta.end(), state_bias_.begin(), state_bias_.end());
    theta.insert(theta.end(), transitions_.flat().begin(), transitions_.flat().end());
    return theta;
  }

  void assign(std::span<const double> theta) {
    require(theta.size() == num_parameters(), ErrorCode::dimension_mismatch,
            "parameter vector length " + std::to_string(theta.size()) +
                " does not match model size " + std::to_string(num_parameters()));
    auto it = theta.begin();
    std::copy(it, it + static_cast<std::ptrdiff_t>(state_weights_.size()),
              state_weights_.flat().begin());
    it += static_cast<std::ptrdiff_t>(state_weights_.size());
    std::copy(it, it + static_cast<std::ptrdiff_t>(state_bias_.size()), state_bias_.begin());
    it += static_cast<std::ptrdiff_t>(state_bias_.size());
    std::copy(it, theta.end(), transitions_.flat().begin());
  }

  static CrfModel from_flat(LabelSet labels, std::size_t dim, std::span<const double> theta) {
    CrfModel m(std::move(labels), dim);
    m.assign(theta);
    return m;
  }

  bool all_finite() const {
    for (double b : state_bias_) {
      if (!std::isfinite(b)) return false;
    }
    return state_weights_.all_finite() && transitions_.all_finite();
  }

  friend bool operator==(const CrfModel&, const CrfModel&) = default;

 private:
  LabelSet labels_;
  std::size_t dim_ = 0;
  Matrix state_weights_;
  std::vector<double> state_bias_;
  Matrix transitions_;
};

/// Per-sequence log-potentials: state scores (T x K) and transitions (K x K).
/// Inference routines run on this form so that callers may manipulate scores
/// directly.
struct Potentials {
  Matrix state;
  Matrix transition;

  std::size_t length() const noexcept { return state.rows(); }
  std::size_t num_labels() const noexcept { return state.cols(); }
};

/// Posterior marginals from forward-backward.
struct Marginals {
  Matrix node;                 // T x K
  std::vector<Matrix> edge;    // T-1 slices of K x K, indexed (from, to)
  double log_z = 0.0;
};

struct LabeledObservation {
  ObservationSequence observations;
  LabelSequence labels;
};

/// Training set together with the Gaussian prior variance. An infinite
/// variance disables the penalty.
struct RegularizedDataset {
  std::vector<LabeledObservation> items;
  double sigma2 = 10.0;
};

inline void check_compatible(const CrfModel& model, const ObservationSequence& obs) {
  require(model.num_labels() >= 2, ErrorCode::dimension_mismatch, "model has no label set");
  require(obs.length() >= 1, ErrorCode::dimension_mismatch, "empty observation sequence");
  require(obs.dim() == model.dim(), ErrorCode::dimension_mismatch,
          "observation dimension " + std::to_string(obs.dim()) +
              " does not match model dimension " + std::to_string(model.dim()));
  require(model.all_finite(), ErrorCode::non_finite, "model contains non-finite parameters");
}

inline void check_labels(const CrfModel& model, const ObservationSequence& obs,
                         const LabelSequence& labels) {
  require(labels.size() == obs.length(), ErrorCode::dimension_mismatch,
          "label sequence length " + std::to_string(labels.size()) +
              " does not match observation length " + std::to_string(obs.length()));
  for (std::size_t y : labels) {
    require(y < model.num_labels(), ErrorCode::label_out_of_range,
            "label " + std::to_string(y) + " outside 0.." +
                std::to_string(model.num_labels() - 1));
  }
}

}  // namespace crfnet
