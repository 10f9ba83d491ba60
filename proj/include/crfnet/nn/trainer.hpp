#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "crfnet/crf/model.hpp"
#include "crfnet/nn/extractor.hpp"
#include "crfnet/random.hpp"

namespace crfnet::nn {

/// Minibatch SGD with momentum, weight decay and a step learning-rate
/// schedule: lr(i) = base_lr / lr_drop_factor^floor(i / lr_drop_every).
struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0001;
  double base_lr = 0.01;
  double lr_drop_factor = 10.0;
  std::size_t lr_drop_every = 1000;
  std::size_t batch_size = 32;
  std::size_t total_iterations = 2000;

  void validate() const {
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::invalid_argument,
            "momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, ErrorCode::invalid_argument, "weight_decay must be >= 0");
    require(base_lr > 0.0, ErrorCode::invalid_argument, "base_lr must be positive");
    require(lr_drop_factor > 0.0, ErrorCode::invalid_argument, "lr_drop_factor must be positive");
    require(lr_drop_every > 0, ErrorCode::invalid_argument, "lr_drop_every must be positive");
    require(batch_size > 0, ErrorCode::invalid_argument, "batch_size must be positive");
  }
};

inline double lr_at(const SgdConfig& cfg, std::size_t iteration) {
  const auto drops = static_cast<double>(iteration / cfg.lr_drop_every);
  return cfg.base_lr / std::pow(cfg.lr_drop_factor, drops);
}

/// Flat momentum buffer in parameter-visit order.
inline std::vector<double> zero_velocity(const ExtractorModel& m) {
  return std::vector<double>(flatten_parameters(m).size(), 0.0);
}

/// v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v.
/// Running normalization statistics are not touched.
inline void sgd_step(ExtractorModel& model, ExtractorModel& gradients, std::vector<double>& velocity,
                     const SgdConfig& cfg, std::size_t iteration) {
  auto params = parameters(model);
  auto grads = parameters(gradients);
  require(params.size() == grads.size(), ErrorCode::dimension_mismatch,
          "gradient structure does not match the model");
  const double lr = lr_at(cfg, iteration);
  std::size_t at = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].values;
    auto g = grads[p].values;
    require(w.size() == g.size(), ErrorCode::dimension_mismatch,
            "gradient for " + params[p].name + " has the wrong size");
    for (double v : g) {
      require(std::isfinite(v), ErrorCode::non_finite,
              "non-finite gradient in layer " + params[p].name);
    }
    require(at + w.size() <= velocity.size(), ErrorCode::dimension_mismatch,
            "velocity buffer does not match the model");
    for (std::size_t i = 0; i < w.size(); ++i) {
      double& v = velocity[at + i];
      v = cfg.momentum * v - lr * (g[i] + cfg.weight_decay * w[i]);
      w[i] += v;
    }
    at += w.size();
  }
}

struct TrainingLog {
  std::vector<double> losses;  // one per iteration
};

/// Copies frames[indices] into an N x H x W x C batch.
inline Tensor gather_frames(const std::vector<Tensor>& frames, std::span<const std::size_t> indices) {
  const auto& s = frames.at(indices[0]).shape();
  Tensor batch({indices.size(), s[0], s[1], s[2]});
  const std::size_t stride = frames[indices[0]].size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& f = frames[indices[i]];
    require(f.size() == stride, ErrorCode::dimension_mismatch, "frames differ in size");
    std::copy_n(f.data(), stride, batch.data() + i * stride);
  }
  return batch;
}

/// Frame-wise training. Each frame is an H x W x C tensor. Minibatches walk
/// a seeded permutation that is redrawn every epoch.
inline TrainingLog train_extractor(ExtractorModel& model, const std::vector<Tensor>& frames,
                                   const std::vector<std::size_t>& labels, const SgdConfig& cfg,
                                   std::uint64_t seed) {
  cfg.validate();
  require(!frames.empty(), ErrorCode::empty_corpus, "no training frames");
  require(frames.size() == labels.size(), ErrorCode::dimension_mismatch,
          "frame and label counts differ");
  Rng rng(mix_seed(seed, 0x7a11));
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::size_t cursor = 0;

  std::vector<double> velocity = zero_velocity(model);
  TrainingLog log;
  log.losses.reserve(cfg.total_iterations);
  const std::size_t batch_size = std::min(cfg.batch_size, frames.size());
  std::vector<std::size_t> idx(batch_size), batch_labels(batch_size);
  for (std::size_t it = 0; it < cfg.total_iterations; ++it) {
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      idx[b] = order[cursor++];
      batch_labels[b] = labels[idx[b]];
    }
    const Tensor batch = gather_frames(frames, idx);
    BackwardResult r = backward(model, batch, batch_labels, rng.bits());
    update_running_statistics(model, r.trace);
    sgd_step(model, r.gradients, velocity, cfg, it);
    log.losses.push_back(r.loss);
  }
  return log;
}

enum class FeatureTap { penultimate, logits };

inline std::size_t tap_width(const ExtractorConfig& cfg, FeatureTap tap) {
  return tap == FeatureTap::penultimate ? cfg.feature_dim : cfg.num_classes;
}

/// Inference-mode activations for a sequence of frames, one row per frame.
inline ObservationSequence extract_features(const ExtractorModel& model,
                                            const std::vector<Tensor>& frames,
                                            FeatureTap tap = FeatureTap::penultimate) {
  require(!frames.empty(), ErrorCode::dimension_mismatch, "cannot extract features of zero frames");
  std::vector<std::size_t> idx(frames.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ForwardResult r = forward(model, gather_frames(frames, idx), Mode::inference);
  const Tensor& src = tap == FeatureTap::penultimate ? r.features : r.logits;
  Matrix features(src.dim(0), src.dim(1));
  std::copy_n(src.data(), src.size(), features.flat().begin());
  return ObservationSequence(std::move(features));
}

}  // namespace crfnet::nn
