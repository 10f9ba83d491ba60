#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crfnet/data/splits.hpp"
#include "crfnet/eval/metrics.hpp"
#include "crfnet/pipeline/two_step.hpp"

namespace crfnet::eval {

enum class Protocol { subject_independent, cross_corpus };

inline std::string to_string(Protocol p) {
  return p == Protocol::subject_independent ? "subject_independent" : "cross_corpus";
}

struct FoldOutcome {
  Metrics with_crf;
  Metrics without_crf;
  std::size_t train_sequences = 0;
  std::size_t test_sequences = 0;
  bool crf_converged = false;
  std::size_t crf_iterations = 0;
  bool crf_trace_nonincreasing = true;  // minimized form
};

/// Both arms share one trained extractor per fold. The top-level metrics
/// pool the confusion matrices of all folds.
struct AblationReport {
  Protocol protocol = Protocol::subject_independent;
  Metrics with_crf;
  Metrics without_crf;
  std::vector<FoldOutcome> folds;
  std::vector<std::string> label_names;
  std::size_t dropped_sequences = 0;  // cross-corpus label intersection
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  double delta() const { return with_crf.per_frame_accuracy() - without_crf.per_frame_accuracy(); }
};

/// Trains on `train`, scores both arms on `test`.
inline FoldOutcome run_fold(const data::Corpus& train, const data::Corpus& test,
                            const pipeline::TwoStepConfig& config, std::uint64_t config_hash) {
  pipeline::TrainingDiagnostics diag;
  const pipeline::TrainedPipeline p = pipeline::train_two_step(train, config, config_hash, &diag);
  FoldOutcome out{empty_metrics(test.labels.size()), empty_metrics(test.labels.size()),
                  train.sequences.size(), test.sequences.size(), diag.crf_report.converged,
                  diag.crf_report.iterations_used, true};
  const auto& trace = diag.crf_report.objective_trace;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] > trace[i - 1]) out.crf_trace_nonincreasing = false;
  }
  for (const auto& s : test.sequences) {
    const auto images = s.images();
    const LabelSequence truth = s.labels();
    accumulate(out.with_crf, pipeline::predict_sequence(p, images), truth);
    accumulate(out.without_crf, pipeline::predict_frames_softmax(p.extractor, images), truth);
  }
  return out;
}

inline void add_fold(AblationReport& r, FoldOutcome fold) {
  merge(r.with_crf, fold.with_crf);
  merge(r.without_crf, fold.without_crf);
  r.folds.push_back(std::move(fold));
}

inline AblationReport run_subject_independent(const data::Corpus& corpus, const pipeline::TwoStepConfig& config,
                                              std::size_t k, std::uint64_t seed, std::uint64_t config_hash = 0) {
  data::validate(corpus);
  const data::SplitPlan plan = data::subject_independent_folds(corpus, k, seed);
  const std::size_t labels = corpus.labels.size();
  AblationReport r{Protocol::subject_independent, empty_metrics(labels), empty_metrics(labels), {},
                   corpus.labels.names(), 0, config_hash, seed};
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    pipeline::TwoStepConfig cfg = config;
    cfg.seed = mix_seed(seed, 0xf00 + f);
    try {
      add_fold(r, run_fold(data::select(corpus, plan.folds[f].train), data::select(corpus, plan.folds[f].test),
                           cfg, config_hash));
    } catch (const Error& e) {
      throw Error(e.code(), "fold " + std::to_string(f) + ": " + e.what());
    }
  }
  return r;
}

inline AblationReport run_cross_corpus(const std::vector<data::Corpus>& corpora, const std::string& test_name,
                                       const pipeline::TwoStepConfig& config, std::uint64_t seed,
                                       std::uint64_t config_hash = 0) {
  for (const auto& c : corpora) data::validate(c);
  const data::CrossCorpusSplit split = data::cross_corpus_split(corpora, test_name);
  const std::size_t labels = split.test.labels.size();
  AblationReport r{Protocol::cross_corpus, empty_metrics(labels), empty_metrics(labels), {},
                   split.test.labels.names(), split.dropped_train + split.dropped_test, config_hash, seed};
  pipeline::TwoStepConfig cfg = config;
  cfg.seed = mix_seed(seed, 0xc05);
  add_fold(r, run_fold(split.train, split.test, cfg, config_hash));
  return r;
}

// ---------------------------------------------------------------------------
// Structured output.

inline nlohmann::json to_json(const Metrics& m, const std::vector<std::string>& names) {
  return {{"per_frame_accuracy", m.per_frame_accuracy()},
          {"correct_frames", m.correct_frames()},
          {"num_frames", m.num_frames},
          {"sequence_accuracy", m.sequence_accuracy()},
          {"correct_sequences", m.correct_sequences},
          {"num_sequences", m.num_sequences},
          {"per_class_recall", m.per_class_recall()},
          {"labels", names},
          {"confusion", m.confusion}};
}

inline nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"with_crf", f.with_crf.per_frame_accuracy()},
                     {"without_crf", f.without_crf.per_frame_accuracy()},
                     {"train_sequences", f.train_sequences},
                     {"test_sequences", f.test_sequences},
                     {"crf_converged", f.crf_converged},
                     {"crf_iterations", f.crf_iterations},
                     {"crf_trace_nonincreasing", f.crf_trace_nonincreasing}});
  }
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.config_hash));
  return {{"format", "crfnet-ablation"},
          {"version", 1},
          {"protocol", to_string(r.protocol)},
          {"delta", r.delta()},
          {"with_crf", to_json(r.with_crf, r.label_names)},
          {"without_crf", to_json(r.without_crf, r.label_names)},
          {"folds", folds},
          {"dropped_sequences", r.dropped_sequences},
          {"config_hash", hash},
          {"seed", r.seed}};
}

}  // namespace crfnet::eval
