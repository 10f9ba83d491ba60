#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crfnet/crf/model.hpp"
#include "crfnet/error.hpp"
#include "crfnet/nn/tensor.hpp"

namespace crfnet::data {

struct FrameRecord {
  nn::Tensor image;  // H x W x C, values in [0, 1]
  std::size_t label = 0;
  std::int64_t index = 0;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct LabeledSequence {
  std::string sequence_id;
  std::string subject_id;
  std::vector<FrameRecord> frames;

  std::size_t length() const noexcept { return frames.size(); }

  LabelSequence labels() const {
    LabelSequence y;
    y.reserve(frames.size());
    for (const auto& f : frames) y.push_back(f.label);
    return y;
  }

  std::vector<nn::Tensor> images() const {
    std::vector<nn::Tensor> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.image);
    return out;
  }

  friend bool operator==(const LabeledSequence&, const LabeledSequence&) = default;
};

struct Corpus {
  std::string name;
  LabelSet labels;
  std::vector<LabeledSequence> sequences;

  std::size_t num_frames() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.length();
    return n;
  }

  /// Distinct subject ids in first-appearance order.
  std::vector<std::string> subjects() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : sequences) {
      if (seen.insert(s.subject_id).second) out.push_back(s.subject_id);
    }
    return out;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Checks every corpus invariant; each violation has its own error code.
inline void validate(const Corpus& c) {
  require(!c.sequences.empty(), ErrorCode::empty_corpus, "corpus '" + c.name + "' has no sequences");
  std::set<std::string> ids;
  for (const auto& s : c.sequences) {
    require(ids.insert(s.sequence_id).second, ErrorCode::duplicate_id,
            "duplicate sequence id '" + s.sequence_id + "'");
    require(!s.frames.empty(), ErrorCode::empty_corpus,
            "sequence '" + s.sequence_id + "' has no frames");
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      const FrameRecord& f = s.frames[t];
      require(f.label < c.labels.size(), ErrorCode::label_out_of_range,
              "label " + std::to_string(f.label) + " out of range in sequence '" +
                  s.sequence_id + "'");
      require(t == 0 || f.index > s.frames[t - 1].index, ErrorCode::non_monotone_frames,
              "frame indices not increasing in sequence '" + s.sequence_id + "'");
      require(f.image.rank() == 3 && f.image.size() > 0, ErrorCode::dimension_mismatch,
              "frame image must be a nonempty H x W x C tensor");
      for (double v : f.image.values()) {
        require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument,
                "pixel outside [0, 1] in sequence '" + s.sequence_id + "'");
      }
    }
  }
}

/// Sequences whose ids appear in `ids`, in corpus order.
inline Corpus select(const Corpus& c, const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  Corpus out{c.name, c.labels, {}};
  for (const auto& s : c.sequences) {
    if (wanted.count(s.sequence_id)) out.sequences.push_back(s);
  }
  return out;
}

}  // namespace crfnet::data
