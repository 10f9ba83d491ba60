#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crfnet/data/corpus.hpp"
#include "crfnet/random.hpp"

namespace crfnet::data {

struct Fold {
  std::vector<std::string> train, validation, test;  // sequence ids
};

struct SplitPlan {
  std::vector<Fold> folds;
};

/// Subjects are shuffled with `seed` and dealt round-robin into k groups;
/// fold i tests on group i. The next `validation_fraction` of subjects after
/// the test group (in shuffled order) form the validation set. With k = 1 a
/// `validation_fraction` share of subjects (at least one) is held out for test.
inline SplitPlan subject_independent_folds(const Corpus& corpus, std::size_t k, std::uint64_t seed,
                                           double validation_fraction = 0.1) {
  require(k >= 1, ErrorCode::invalid_argument, "fold count must be >= 1");
  require(validation_fraction >= 0.0 && validation_fraction < 1.0, ErrorCode::invalid_argument,
          "validation_fraction must lie in [0, 1)");
  std::vector<std::string> subjects = corpus.subjects();
  const std::size_t n = subjects.size();
  require(n >= std::max<std::size_t>(k, 2), ErrorCode::insufficient_subjects,
          std::to_string(n) + " subjects cannot form " + std::to_string(k) + " subject-disjoint folds");
  Rng rng(mix_seed(seed, 0xf01d));
  rng.shuffle(subjects);

  // Group g holds the subjects at shuffled positions g, g + k, g + 2k, ...
  std::vector<std::vector<std::size_t>> groups(k);
  if (k == 1) {
    const auto held = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(validation_fraction * n)));
    groups.assign(2, {});
    for (std::size_t i = 0; i < n; ++i) groups[i < held ? 0 : 1].push_back(i);
  } else {
    for (std::size_t i = 0; i < n; ++i) groups[i % k].push_back(i);
  }

  const auto want_val = static_cast<std::size_t>(std::floor(validation_fraction * n));
  SplitPlan plan;
  for (std::size_t f = 0; f < k; ++f) {
    std::map<std::string, int> role;  // 0 train, 1 validation, 2 test
    for (std::size_t i : groups[f]) role[subjects[i]] = 2;
    // Remaining subjects in the order they follow the test group.
    std::vector<std::size_t> rest;
    for (std::size_t g = 1; g < groups.size(); ++g) {
      for (std::size_t i : groups[(f + g) % groups.size()]) rest.push_back(i);
    }
    const std::size_t n_val = std::min(want_val, rest.size() - 1);
    for (std::size_t j = 0; j < rest.size(); ++j) role[subjects[rest[j]]] = j < n_val ? 1 : 0;

    Fold fold;
    for (const auto& s : corpus.sequences) {
      switch (role.at(s.subject_id)) {
        case 0: fold.train.push_back(s.sequence_id); break;
        case 1: fold.validation.push_back(s.sequence_id); break;
        default: fold.test.push_back(s.sequence_id); break;
      }
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

struct CrossCorpusSplit {
  Corpus train;
  Corpus test;
  std::size_t dropped_train = 0;  // sequences removed for carrying unshared labels
  std::size_t dropped_test = 0;
};

namespace detail {

// Keeps sequences whose labels are all shared, remapping to the new indices.
inline std::size_t restrict_labels(const Corpus& from, const LabelSet& shared, const std::string& prefix,
                                   Corpus& into) {
  std::vector<std::ptrdiff_t> map(from.labels.size());
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = shared.find(from.labels.name(i));
  std::size_t dropped = 0;
  for (const auto& s : from.sequences) {
    const bool keep = std::all_of(s.frames.begin(), s.frames.end(),
                                  [&](const FrameRecord& f) { return map[f.label] >= 0; });
    if (!keep) {
      ++dropped;
      continue;
    }
    LabeledSequence copy = s;
    copy.sequence_id = prefix + s.sequence_id;
    copy.subject_id = prefix + s.subject_id;
    for (auto& f : copy.frames) f.label = static_cast<std::size_t>(map[f.label]);
    into.sequences.push_back(std::move(copy));
  }
  return dropped;
}

}  // namespace detail

/// Test corpus = the named corpus; train = every other corpus. Both are
/// restricted to label names present in all corpora (ordered as in the test
/// corpus). With several training corpora their ids are prefixed
/// "<corpus>/" to keep them unique.
inline CrossCorpusSplit cross_corpus_split(const std::vector<Corpus>& corpora, const std::string& test_name) {
  const auto test_it = std::find_if(corpora.begin(), corpora.end(),
                                    [&](const Corpus& c) { return c.name == test_name; });
  require(test_it != corpora.end(), ErrorCode::unknown_name, "no corpus named '" + test_name + "'");
  require(corpora.size() >= 2, ErrorCode::invalid_argument, "cross-corpus evaluation needs >= 2 corpora");

  std::vector<std::string> shared_names;
  for (const auto& name : test_it->labels.names()) {
    const bool everywhere = std::all_of(corpora.begin(), corpora.end(),
                                        [&](const Corpus& c) { return c.labels.find(name) >= 0; });
    if (everywhere) shared_names.push_back(name);
  }
  require(shared_names.size() >= 2, ErrorCode::empty_label_intersection,
          "corpora share " + std::to_string(shared_names.size()) + " label(s); at least two are needed");
  const LabelSet shared(shared_names);

  CrossCorpusSplit split;
  split.test = {test_it->name, shared, {}};
  split.dropped_test = detail::restrict_labels(*test_it, shared, "", split.test);
  std::string train_name;
  split.train.labels = shared;
  for (const auto& c : corpora) {
    if (&c == &*test_it) continue;
    train_name += (train_name.empty() ? "" : "+") + c.name;
    const std::string prefix = corpora.size() > 2 ? c.name + "/" : "";
    split.dropped_train += detail::restrict_labels(c, shared, prefix, split.train);
  }
  split.train.name = train_name;
  require(!split.train.sequences.empty(), ErrorCode::empty_corpus,
          "no training sequence survives the label intersection");
  require(!split.test.sequences.empty(), ErrorCode::empty_corpus,
          "no test sequence survives the label intersection");
  return split;
}

}  // namespace crfnet::data
