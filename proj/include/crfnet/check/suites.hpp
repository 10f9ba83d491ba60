#pragma once

// Randomized property suites shared by the command-line `check` command and
// the acceptance runner.

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "crfnet/check/enumeration.hpp"
#include "crfnet/check/finite_difference.hpp"
#include "crfnet/crf/inference.hpp"
#include "crfnet/crf/objective.hpp"
#include "crfnet/nn/extractor.hpp"
#include "crfnet/random.hpp"

namespace crfnet::check {

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string first_failure;

  bool passed() const { return failures == 0 && instances > 0; }

  void record(double err, const std::string& what) {
    max_error = std::max(max_error, err);
    if (!(err <= tolerance)) fail(what);
  }
  void fail(const std::string& what) {
    if (failures++ == 0) first_failure = what;
  }
};

inline LabelSet numbered_labels(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("y" + std::to_string(i));
  return LabelSet(std::move(names));
}

/// Random model and observations. With `integral`, entries are small
/// integers so exact score ties between labelings occur.
inline std::pair<CrfModel, ObservationSequence> random_instance(Rng& rng, std::size_t k, std::size_t t, std::size_t d,
                                                                bool integral) {
  auto draw = [&] { return integral ? static_cast<double>(rng.index(3)) - 1.0 : 1.5 * rng.normal(); };
  CrfModel m(numbered_labels(k), d);
  std::vector<double> theta(m.num_parameters());
  for (double& v : theta) v = draw();
  m.assign(theta);
  Matrix x(t, d);
  for (double& v : x.flat()) v = draw();
  return {std::move(m), ObservationSequence(std::move(x))};
}

/// Forward-backward and Viterbi against exhaustive enumeration
/// (K <= 4, T <= 6, d <= 3).
inline SuiteResult run_oracle_suite(std::size_t instances, std::uint64_t seed, double tolerance = 1e-9) {
  SuiteResult r{"oracle", instances, 0, 0.0, tolerance, {}};
  Rng rng(mix_seed(seed, 0x0ac1e));
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t k = 2 + rng.index(3), t = 1 + rng.index(6), d = 1 + rng.index(3);
    const auto [m, obs] = random_instance(rng, k, t, d, i % 4 == 3);
    const Enumeration e = enumerate(m, obs);
    const Marginals mg = forward_backward(m, obs);
    std::ostringstream tag;
    tag << "instance " << i << " (K=" << k << ", T=" << t << ", d=" << d << ")";

    r.record(gradient_error(log_partition(m, obs), e.log_z), tag.str() + ": log partition");
    r.record(gradient_error(mg.log_z, e.log_z), tag.str() + ": forward-backward log partition");
    for (std::size_t s = 0; s < t; ++s) {
      for (std::size_t y = 0; y < k; ++y) r.record(gradient_error(mg.node(s, y), e.node(s, y)), tag.str() + ": node marginal");
    }
    for (std::size_t s = 0; s + 1 < t; ++s) {
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          r.record(gradient_error(mg.edge[s](a, b), e.edge[s](a, b)), tag.str() + ": edge marginal");
        }
      }
    }
    if (viterbi_decode(m, obs) != e.best) r.fail(tag.str() + ": Viterbi differs from the enumerated argmax");
  }
  return r;
}

/// Analytic CRF objective gradient against central differences.
inline SuiteResult run_crf_gradient_suite(std::size_t instances, std::uint64_t seed, double tolerance = 1e-6,
                                          double step = 1e-5) {
  SuiteResult r{"crf-gradient", instances, 0, 0.0, tolerance, {}};
  Rng rng(mix_seed(seed, 0x97ad));
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t k = 2 + rng.index(3), d = 1 + rng.index(3), n = 1 + rng.index(4);
    CrfModel m = random_instance(rng, k, 1, d, false).first;
    RegularizedDataset data;
    data.sigma2 = i % 5 == 4 ? std::numeric_limits<double>::infinity() : rng.uniform(0.5, 20.0);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t t = 1 + rng.index(5);
      ObservationSequence obs = random_instance(rng, k, t, d, false).second;
      LabelSequence y(t);
      for (auto& v : y) v = rng.index(k);
      data.items.push_back({std::move(obs), std::move(y)});
    }
    const std::vector<double> analytic = objective_gradient(m, data);
    CrfModel probe = m;
    auto value = [&](std::span<const double> theta) {
      probe.assign(theta);
      return objective(probe, data);
    };
    const GradientCheck g = central_difference_check(value, m.flatten(), analytic, step);
    std::ostringstream tag;
    tag << "instance " << i << ": parameter " << g.worst_index << " analytic " << g.worst_analytic << " numeric "
        << g.worst_numeric;
    r.record(g.max_error, tag.str());
  }
  return r;
}

/// Tiny extractor: 8x8x1 input, one stem convolution, one residual block.
inline nn::ExtractorConfig tiny_extractor_config(std::uint64_t seed) {
  nn::ExtractorConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.channels = 1;
  cfg.num_classes = 3;
  cfg.feature_dim = 6;
  cfg.stem = {{4, 3, 1, nn::Padding::same}};
  cfg.stages = {{nn::StageKind::residual, 2, 3}};
  cfg.dropout_rate = 0.2;
  cfg.seed = seed;
  return cfg;
}

/// Every extractor parameter's loss gradient against central differences,
/// training mode with a fixed dropout mask.
inline SuiteResult run_extractor_gradient_suite(std::size_t instances, std::uint64_t seed, double tolerance = 1e-6,
                                                double step = 1e-5) {
  SuiteResult r{"extractor-gradient", instances, 0, 0.0, tolerance, {}};
  Rng rng(mix_seed(seed, 0xe47));
  for (std::size_t i = 0; i < instances; ++i) {
    const nn::ExtractorModel m = nn::make_extractor(tiny_extractor_config(rng.bits()));
    const std::size_t batch_size = 2 + rng.index(3);
    nn::Tensor batch({batch_size, 8, 8, 1});
    for (double& v : batch.values()) v = rng.normal();
    std::vector<std::size_t> labels(batch_size);
    for (auto& y : labels) y = rng.index(3);
    const std::uint64_t dropout_seed = rng.bits();

    const nn::BackwardResult b = nn::backward(m, batch, labels, dropout_seed);
    nn::ExtractorModel probe = m;
    auto value = [&](std::span<const double> theta) {
      nn::assign_parameters(probe, theta);
      return nn::softmax_cross_entropy(nn::forward(probe, batch, nn::Mode::training, dropout_seed).logits, labels).loss;
    };
    const GradientCheck g =
        central_difference_check(value, nn::flatten_parameters(m), nn::flatten_parameters(b.gradients), step);
    std::ostringstream tag;
    tag << "instance " << i << ": parameter " << g.worst_index << " analytic " << g.worst_analytic << " numeric "
        << g.worst_numeric;
    r.record(g.max_error, tag.str());
  }
  return r;
}

}  // namespace crfnet::check
