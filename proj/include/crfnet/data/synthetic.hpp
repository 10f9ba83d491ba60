#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "crfnet/data/corpus.hpp"
#include "crfnet/data/image.hpp"
#include "crfnet/random.hpp"

namespace crfnet::data {

enum class SynthStyle {
  onset_apex_offset,  // neutral -> apex -> neutral
  onset_apex,         // neutral -> apex
};

struct SynthConfig {
  std::string name = "synthetic";
  std::size_t num_subjects = 30;
  std::size_t sequences_per_subject = 10;
  std::size_t num_classes = 5;  // label 0 is neutral
  std::size_t image_size = 32;
  double apex_noise = 0.1;
  std::size_t transition_frames = 6;
  SynthStyle style = SynthStyle::onset_apex_offset;
  std::size_t min_neutral_frames = 1;
  std::size_t max_neutral_frames = 3;
  std::size_t min_apex_frames = 3;
  std::size_t max_apex_frames = 6;
  double subject_bias = 0.08;
  std::uint64_t prototype_seed = 7;  // shared by corpora meant to be comparable
  std::uint64_t seed = 1;

  void validate() const {
    require(num_classes >= 2, ErrorCode::invalid_argument, "synthetic corpora need K >= 2");
    require(num_subjects >= 1 && sequences_per_subject >= 1, ErrorCode::invalid_argument,
            "synthetic corpora need at least one subject and one sequence");
    require(image_size >= 2, ErrorCode::invalid_argument, "image_size must be >= 2");
    require(apex_noise >= 0.0 && std::isfinite(apex_noise), ErrorCode::invalid_argument,
            "apex_noise must be a finite value >= 0");
    require(subject_bias >= 0.0 && std::isfinite(subject_bias), ErrorCode::invalid_argument,
            "subject_bias must be a finite value >= 0");
    require(min_neutral_frames >= 1 && min_neutral_frames <= max_neutral_frames,
            ErrorCode::invalid_argument, "neutral frame range must satisfy 1 <= min <= max");
    require(min_apex_frames >= 1 && min_apex_frames <= max_apex_frames, ErrorCode::invalid_argument,
            "apex frame range must satisfy 1 <= min <= max");
  }
};

inline std::vector<std::string> synthetic_label_names(std::size_t k) {
  static const char* known[] = {"neutral", "anger",    "disgust", "fear",
                                "happiness", "sadness", "surprise", "contempt"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) {
    names.push_back(i < std::size(known) ? known[i] : "class" + std::to_string(i));
  }
  return names;
}

namespace detail {

inline void add_blob(std::vector<double>& img, std::size_t size, double cy, double cx,
                     double sigma, double amplitude) {
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      img[y * size + x] += amplitude * std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
    }
  }
}

}  // namespace detail

/// P_0 (index 0) and one prototype per expression class, all S x S.
inline std::vector<std::vector<double>> synthetic_prototypes(const SynthConfig& cfg) {
  const std::size_t s = cfg.image_size;
  const double sd = static_cast<double>(s);
  std::vector<double> base(s * s);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      base[y * s + x] = 0.45 + 0.1 * std::sin(2 * std::numbers::pi * x / sd) *
                                   std::cos(2 * std::numbers::pi * y / sd);
    }
  }
  std::vector<std::vector<double>> protos{base};
  for (std::size_t c = 1; c < cfg.num_classes; ++c) {
    Rng rng(mix_seed(cfg.prototype_seed, c));
    std::vector<double> p = base;
    for (int b = 0; b < 3; ++b) {
      const double cy = rng.uniform(0.2, 0.8) * sd, cx = rng.uniform(0.2, 0.8) * sd;
      const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 0.35);
      detail::add_blob(p, s, cy, cx, sd / 8, amp);
    }
    protos.push_back(std::move(p));
  }
  return protos;
}

/// Blend coefficients for one sequence: a neutral lead-in, a ramp of
/// `transition_frames`, an apex hold and, for the offset style, the mirror
/// ramp and a neutral tail.
inline std::vector<double> synthetic_alphas(const SynthConfig& cfg, Rng& rng) {
  auto draw = [&](std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); };
  const std::size_t lead = draw(cfg.min_neutral_frames, cfg.max_neutral_frames);
  const std::size_t hold = draw(cfg.min_apex_frames, cfg.max_apex_frames);
  const double steps = static_cast<double>(cfg.transition_frames + 1);
  std::vector<double> a(lead, 0.0);
  for (std::size_t j = 0; j < cfg.transition_frames; ++j) a.push_back((j + 1) / steps);
  a.insert(a.end(), hold, 1.0);
  if (cfg.style == SynthStyle::onset_apex_offset) {
    for (std::size_t j = cfg.transition_frames; j > 0; --j) a.push_back(j / steps);
    a.insert(a.end(), draw(cfg.min_neutral_frames, cfg.max_neutral_frames), 0.0);
  }
  return a;
}

/// Frame image: clamp((1-a) P_0 + a P_c + bias_subject + noise), where noise
/// is pixel Gaussian (sd = apex_noise) plus a pull of random strength toward
/// a randomly chosen other class. Pixels sit on the 16-bit file grid so a
/// saved corpus reloads bit-identically. `alphas`, when given, receives the
/// blend coefficients per sequence.
inline Corpus generate_synthetic_corpus(const SynthConfig& cfg,
                                        std::vector<std::vector<double>>* alphas = nullptr) {
  cfg.validate();
  const std::size_t s = cfg.image_size, k = cfg.num_classes;
  const auto protos = synthetic_prototypes(cfg);
  const double pull = std::min(0.9, 2.0 * cfg.apex_noise);

  Corpus corpus{cfg.name, LabelSet(synthetic_label_names(k)), {}};
  if (alphas) alphas->clear();
  char id[64];
  for (std::size_t subj = 0; subj < cfg.num_subjects; ++subj) {
    Rng subject_rng(mix_seed(cfg.seed, 0x5b1ec7 + subj));
    std::vector<double> bias(s * s, cfg.subject_bias * subject_rng.normal() * 0.5);
    for (int b = 0; b < 2; ++b) {
      const double cy = subject_rng.uniform(0.0, 1.0) * s, cx = subject_rng.uniform(0.0, 1.0) * s;
      detail::add_blob(bias, s, cy, cx, s / 4.0, cfg.subject_bias * subject_rng.normal());
    }
    std::snprintf(id, sizeof id, "s%03zu", subj);
    const std::string subject_id = id;

    for (std::size_t q = 0; q < cfg.sequences_per_subject; ++q) {
      Rng rng(mix_seed(mix_seed(cfg.seed, subj), q));
      const std::size_t cls = 1 + rng.index(k - 1);
      const std::vector<double> a = synthetic_alphas(cfg, rng);
      std::snprintf(id, sizeof id, "s%03zu_q%02zu", subj, q);
      LabeledSequence seq{id, subject_id, {}};
      for (std::size_t t = 0; t < a.size(); ++t) {
        std::size_t other = rng.index(k - 1);
        if (other >= cls) ++other;
        const double u = rng.uniform() * pull;
        nn::Tensor img({s, s, 1});
        for (std::size_t i = 0; i < s * s; ++i) {
          double v = (1 - a[t]) * protos[0][i] + a[t] * protos[cls][i] + bias[i];
          if (cfg.apex_noise > 0) v += u * (protos[other][i] - protos[0][i]) + cfg.apex_noise * rng.normal();
          img[i] = quantize16(v);
        }
        seq.frames.push_back({std::move(img), a[t] >= 0.5 ? cls : 0, static_cast<std::int64_t>(t)});
      }
      corpus.sequences.push_back(std::move(seq));
      if (alphas) alphas->push_back(a);
    }
  }
  return corpus;
}

}  // namespace crfnet::data
