#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crfnet/crf/inference.hpp"
#include "crfnet/crf/train.hpp"
#include "crfnet/data/corpus.hpp"
#include "crfnet/data/image.hpp"
#include "crfnet/nn/trainer.hpp"

namespace crfnet::pipeline {

using nn::FeatureTap;

struct TwoStepConfig {
  nn::ExtractorConfig extractor;  // num_classes is taken from the corpus
  nn::SgdConfig sgd;
  OptimConfig crf;
  double sigma2 = 10.0;
  FeatureTap feature_tap = FeatureTap::penultimate;
  bool standardize = false;  // z-score features with train-split statistics
  std::uint64_t seed = 1;

  void validate() const {
    extractor.validate();
    sgd.validate();
    crf.validate();
    require(sigma2 > 0.0, ErrorCode::invalid_argument, "sigma2 must be positive");
  }
};

/// Per-dimension affine map x -> (x - mean) / scale. Empty means identity.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  bool empty() const noexcept { return mean.empty(); }

  void apply(ObservationSequence& obs) const {
    if (empty()) return;
    Matrix x = obs.features();
    require(x.cols() == mean.size(), ErrorCode::dimension_mismatch,
            "standardizer width differs from the feature width");
    for (std::size_t t = 0; t < x.rows(); ++t) {
      for (std::size_t j = 0; j < x.cols(); ++j) x(t, j) = (x(t, j) - mean[j]) / scale[j];
    }
    obs = ObservationSequence(std::move(x));
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

inline Standardizer fit_standardizer(const std::vector<ObservationSequence>& seqs) {
  const std::size_t d = seqs.at(0).dim();
  Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  double n = 0;
  for (const auto& o : seqs) {
    for (std::size_t t = 0; t < o.length(); ++t) {
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += o.frame(t)[j];
    }
    n += static_cast<double>(o.length());
  }
  for (double& m : s.mean) m /= n;
  for (const auto& o : seqs) {
    for (std::size_t t = 0; t < o.length(); ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = o.frame(t)[j] - s.mean[j];
        s.scale[j] += c * c;
      }
    }
  }
  for (double& v : s.scale) {
    v = std::sqrt(v / n);
    if (!(v > 1e-12)) v = 1.0;  // constant dimension
  }
  return s;
}

struct TrainedPipeline {
  nn::ExtractorModel extractor;
  CrfModel crf;
  LabelSet labels;
  FeatureTap feature_tap = FeatureTap::penultimate;
  Standardizer standardizer;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// What the two training stages reported; not part of the model.
struct TrainingDiagnostics {
  nn::TrainingLog extractor_log;
  OptimReport crf_report;
  std::size_t num_frames = 0;
  std::size_t num_sequences = 0;
};

inline std::vector<nn::Tensor> prepare_frames(const nn::ExtractorConfig& cfg,
                                              const std::vector<nn::Tensor>& frames) {
  std::vector<nn::Tensor> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    require(f.rank() == 3 && f.dim(2) == cfg.channels, ErrorCode::dimension_mismatch,
            "frame " + f.shape_string() + " does not have " + std::to_string(cfg.channels) +
                " channel(s)");
    out.push_back(data::preprocess_frame(f, cfg.height, cfg.width));
  }
  return out;
}

inline void check_coherent(const TrainedPipeline& p) {
  require(p.crf.dim() == nn::tap_width(p.extractor.config, p.feature_tap), ErrorCode::dimension_mismatch,
          "CRF dimension " + std::to_string(p.crf.dim()) + " differs from the extractor tap width");
  require(p.crf.labels() == p.labels && p.extractor.config.num_classes == p.labels.size(),
          ErrorCode::dimension_mismatch, "label sets of the pipeline components disagree");
}

inline ObservationSequence pipeline_features(const TrainedPipeline& p, const std::vector<nn::Tensor>& frames) {
  require(!frames.empty(), ErrorCode::invalid_argument, "cannot label an empty sequence");
  ObservationSequence obs =
      nn::extract_features(p.extractor, prepare_frames(p.extractor.config, frames), p.feature_tap);
  p.standardizer.apply(obs);
  return obs;
}

namespace detail {

inline std::string stage_error(const char* stage, const Error& e) {
  return std::string(stage) + ": " + e.what();
}

}  // namespace detail

/// Step 1 trains the extractor on every frame of `train`; step 2 freezes it
/// and fits the CRF on the extracted feature sequences of all training
/// sequences at once.
inline TrainedPipeline train_two_step(const data::Corpus& train, TwoStepConfig config,
                                      std::uint64_t config_hash = 0,
                                      TrainingDiagnostics* diagnostics = nullptr) {
  data::validate(train);
  config.extractor.num_classes = train.labels.size();
  config.extractor.seed = mix_seed(config.seed, 1);
  config.validate();

  TrainedPipeline p;
  p.labels = train.labels;
  p.feature_tap = config.feature_tap;
  p.config_hash = config_hash;
  p.seed = config.seed;

  std::vector<std::vector<nn::Tensor>> per_sequence;
  std::vector<nn::Tensor> frames;
  std::vector<std::size_t> labels;
  for (const auto& s : train.sequences) {
    per_sequence.push_back(prepare_frames(config.extractor, s.images()));
    frames.insert(frames.end(), per_sequence.back().begin(), per_sequence.back().end());
    for (const auto& f : s.frames) labels.push_back(f.label);
  }

  TrainingDiagnostics diag;
  diag.num_frames = frames.size();
  diag.num_sequences = per_sequence.size();
  try {
    p.extractor = nn::make_extractor(config.extractor);
    diag.extractor_log = nn::train_extractor(p.extractor, frames, labels, config.sgd, mix_seed(config.seed, 2));
  } catch (const Error& e) {
    throw Error(e.code(), detail::stage_error("extractor training", e));
  }
  frames.clear();

  try {
    std::vector<ObservationSequence> feats;
    for (const auto& seq : per_sequence) feats.push_back(nn::extract_features(p.extractor, seq, p.feature_tap));
    if (config.standardize) {
      p.standardizer = fit_standardizer(feats);
      for (auto& f : feats) p.standardizer.apply(f);
    }
    RegularizedDataset data;
    data.sigma2 = config.sigma2;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      data.items.push_back({std::move(feats[i]), train.sequences[i].labels()});
    }
    const std::size_t d = nn::tap_width(config.extractor, config.feature_tap);
    CrfTrainResult r = train_crf(data, zero_model(p.labels, d), config.crf);
    p.crf = std::move(r.model);
    diag.crf_report = std::move(r.report);
  } catch (const Error& e) {
    throw Error(e.code(), detail::stage_error("CRF training", e));
  }
  check_coherent(p);
  if (diagnostics) *diagnostics = std::move(diag);
  return p;
}

/// Viterbi labeling of the extracted feature sequence.
inline LabelSequence predict_sequence(const TrainedPipeline& p, const std::vector<nn::Tensor>& frames) {
  check_coherent(p);
  return viterbi_decode(p.crf, pipeline_features(p, frames));
}

/// The no-CRF baseline: per-frame argmax of the class logits.
inline LabelSequence predict_frames_softmax(const nn::ExtractorModel& extractor,
                                            const std::vector<nn::Tensor>& frames) {
  require(!frames.empty(), ErrorCode::invalid_argument, "cannot label an empty sequence");
  const ObservationSequence logits =
      nn::extract_features(extractor, prepare_frames(extractor.config, frames), FeatureTap::logits);
  LabelSequence y(logits.length());
  for (std::size_t t = 0; t < y.size(); ++t) y[t] = argmax(logits.frame(t));
  return y;
}

}  // namespace crfnet::pipeline
