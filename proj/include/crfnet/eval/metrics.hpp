#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crfnet/crf/model.hpp"
#include "crfnet/error.hpp"

namespace crfnet::eval {

using Confusion = std::vector<std::vector<std::uint64_t>>;  // [truth][predicted]

struct Metrics {
  std::size_t num_labels = 0;
  Confusion confusion;
  std::uint64_t num_frames = 0;
  std::uint64_t num_sequences = 0;
  std::uint64_t correct_sequences = 0;  // majority vote, see sequence_vote

  std::uint64_t correct_frames() const {
    std::uint64_t c = 0;
    for (std::size_t k = 0; k < num_labels; ++k) c += confusion[k][k];
    return c;
  }
  double per_frame_accuracy() const {
    return num_frames ? static_cast<double>(correct_frames()) / static_cast<double>(num_frames) : 0.0;
  }
  double sequence_accuracy() const {
    return num_sequences ? static_cast<double>(correct_sequences) / static_cast<double>(num_sequences) : 0.0;
  }
  /// Recall per truth class; 0 for classes that never occur.
  std::vector<double> per_class_recall() const {
    std::vector<double> r(num_labels, 0.0);
    for (std::size_t k = 0; k < num_labels; ++k) {
      std::uint64_t row = 0;
      for (auto v : confusion[k]) row += v;
      if (row) r[k] = static_cast<double>(confusion[k][k]) / static_cast<double>(row);
    }
    return r;
  }
};

inline Metrics empty_metrics(std::size_t k) {
  return {k, Confusion(k, std::vector<std::uint64_t>(k, 0)), 0, 0, 0};
}

/// Sequence-level label: the most frequent label other than label 0 (the
/// neutral/background class), smallest index on ties; 0 if only label 0 occurs.
inline std::size_t sequence_vote(const LabelSequence& y, std::size_t k) {
  std::vector<std::size_t> count(k, 0);
  for (std::size_t v : y) ++count[v];
  std::size_t best = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (count[c] > 0 && (best == 0 || count[c] > count[best])) best = c;
  }
  return best;
}

/// Adds one prediction/truth pair into `m`.
inline void accumulate(Metrics& m, const LabelSequence& predicted, const LabelSequence& truth) {
  require(predicted.size() == truth.size(), ErrorCode::dimension_mismatch,
          "prediction length " + std::to_string(predicted.size()) + " differs from truth length " +
              std::to_string(truth.size()));
  for (std::size_t t = 0; t < truth.size(); ++t) {
    require(truth[t] < m.num_labels && predicted[t] < m.num_labels, ErrorCode::label_out_of_range,
            "label outside 0.." + std::to_string(m.num_labels - 1));
    ++m.confusion[truth[t]][predicted[t]];
  }
  m.num_frames += truth.size();
  ++m.num_sequences;
  if (sequence_vote(predicted, m.num_labels) == sequence_vote(truth, m.num_labels)) ++m.correct_sequences;
}

inline void merge(Metrics& into, const Metrics& m) {
  require(into.num_labels == m.num_labels, ErrorCode::dimension_mismatch, "label counts differ");
  for (std::size_t i = 0; i < m.num_labels; ++i) {
    for (std::size_t j = 0; j < m.num_labels; ++j) into.confusion[i][j] += m.confusion[i][j];
  }
  into.num_frames += m.num_frames;
  into.num_sequences += m.num_sequences;
  into.correct_sequences += m.correct_sequences;
}

inline Metrics evaluate(const std::vector<LabelSequence>& predictions, const std::vector<LabelSequence>& truth,
                        std::size_t num_labels) {
  require(predictions.size() == truth.size(), ErrorCode::dimension_mismatch,
          std::to_string(predictions.size()) + " predictions for " + std::to_string(truth.size()) +
              " sequences");
  require(num_labels >= 1, ErrorCode::invalid_argument, "need at least one label");
  Metrics m = empty_metrics(num_labels);
  for (std::size_t i = 0; i < truth.size(); ++i) accumulate(m, predictions[i], truth[i]);
  return m;
}

}  // namespace crfnet::eval
