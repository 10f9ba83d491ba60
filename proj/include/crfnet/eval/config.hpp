#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "crfnet/data/synthetic.hpp"
#include "crfnet/io/files.hpp"
#include "crfnet/pipeline/two_step.hpp"

namespace crfnet::eval {

using nlohmann::json;

// Configuration files are JSON objects with optional sections
//   "extractor", "sgd", "crf", "pipeline", "synth", "ablation".
// Missing keys keep their defaults; unknown keys are rejected so typos
// surface instead of silently doing nothing.

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& section) {
  require(j.is_object(), ErrorCode::invalid_argument, "config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return key == k; });
    require(ok, ErrorCode::invalid_argument, "unknown config key '" + section + "." + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& into, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_argument, "config key '" + section + "." + key + "' has the wrong type");
  }
}

inline nn::Padding padding_from(const std::string& s) {
  if (s == "same") return nn::Padding::same;
  if (s == "valid") return nn::Padding::valid;
  fail(ErrorCode::invalid_argument, "padding must be 'same' or 'valid', got '" + s + "'");
}

}  // namespace detail

inline std::string to_string(nn::FeatureTap tap) {
  return tap == nn::FeatureTap::penultimate ? "penultimate" : "logits";
}

inline nn::FeatureTap feature_tap_from(const std::string& s) {
  if (s == "penultimate") return nn::FeatureTap::penultimate;
  if (s == "logits") return nn::FeatureTap::logits;
  fail(ErrorCode::invalid_argument, "feature_tap must be 'penultimate' or 'logits', got '" + s + "'");
}

inline std::string to_string(OptimMethod m) {
  switch (m) {
    case OptimMethod::lbfgs: return "lbfgs";
    case OptimMethod::bfgs: return "bfgs";
    case OptimMethod::gradient_descent: return "gradient_descent";
  }
  return "lbfgs";
}

inline OptimMethod optim_method_from(const std::string& s) {
  if (s == "lbfgs") return OptimMethod::lbfgs;
  if (s == "bfgs") return OptimMethod::bfgs;
  if (s == "gradient_descent") return OptimMethod::gradient_descent;
  fail(ErrorCode::invalid_argument, "unknown optimizer '" + s + "'");
}

// -- extractor ---------------------------------------------------------------

inline json to_json(const nn::ExtractorConfig& c) {
  json stem = json::array(), stages = json::array();
  for (const auto& s : c.stem) {
    stem.push_back({s.out_channels, s.kernel, s.stride, s.padding == nn::Padding::same ? "same" : "valid"});
  }
  for (const auto& s : c.stages) {
    stages.push_back({s.kind == nn::StageKind::residual ? "residual" : "reduction", s.channels, s.kernel});
  }
  return {{"height", c.height},         {"width", c.width},   {"channels", c.channels},
          {"num_classes", c.num_classes}, {"feature_dim", c.feature_dim}, {"stem", stem},
          {"stages", stages},           {"dropout", c.dropout_rate}, {"seed", c.seed}};
}

inline void from_json(const json& j, nn::ExtractorConfig& c) {
  const std::string sec = "extractor";
  detail::reject_unknown(j, {"height", "width", "input_size", "channels", "num_classes", "feature_dim", "stem",
                             "stages", "dropout", "seed"}, sec);
  if (j.contains("input_size")) {
    detail::read(j, "input_size", c.height, sec);
    c.width = c.height;
  }
  detail::read(j, "height", c.height, sec);
  detail::read(j, "width", c.width, sec);
  detail::read(j, "channels", c.channels, sec);
  detail::read(j, "num_classes", c.num_classes, sec);
  detail::read(j, "feature_dim", c.feature_dim, sec);
  detail::read(j, "dropout", c.dropout_rate, sec);
  detail::read(j, "seed", c.seed, sec);
  try {
    if (j.contains("stem")) {
      c.stem.clear();
      for (const auto& s : j["stem"]) {
        c.stem.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>(),
                          detail::padding_from(s.at(3).get<std::string>())});
      }
    }
    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& s : j["stages"]) {
        const std::string kind = s.at(0).get<std::string>();
        require(kind == "residual" || kind == "reduction", ErrorCode::invalid_argument,
                "stage kind must be 'residual' or 'reduction'");
        c.stages.push_back({kind == "residual" ? nn::StageKind::residual : nn::StageKind::reduction,
                            s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});
      }
    }
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_argument,
         "extractor.stem entries are [channels, kernel, stride, padding]; stages are [kind, channels, kernel]");
  }
}

// -- sgd / crf -------------------------------------------------------------------

inline json to_json(const nn::SgdConfig& c) {
  return {{"momentum", c.momentum},         {"weight_decay", c.weight_decay},
          {"base_lr", c.base_lr},           {"lr_drop_factor", c.lr_drop_factor},
          {"lr_drop_every", c.lr_drop_every}, {"batch_size", c.batch_size},
          {"iterations", c.total_iterations}};
}

inline void from_json(const json& j, nn::SgdConfig& c) {
  const std::string sec = "sgd";
  detail::reject_unknown(j, {"momentum", "weight_decay", "base_lr", "lr_drop_factor", "lr_drop_every",
                             "batch_size", "iterations"}, sec);
  detail::read(j, "momentum", c.momentum, sec);
  detail::read(j, "weight_decay", c.weight_decay, sec);
  detail::read(j, "base_lr", c.base_lr, sec);
  detail::read(j, "lr_drop_factor", c.lr_drop_factor, sec);
  detail::read(j, "lr_drop_every", c.lr_drop_every, sec);
  detail::read(j, "batch_size", c.batch_size, sec);
  detail::read(j, "iterations", c.total_iterations, sec);
}

inline json to_json(const OptimConfig& c, double sigma2) {
  return {{"sigma2", sigma2},
          {"max_iterations", c.max_iterations},
          {"gradient_tolerance", c.gradient_tolerance},
          {"memory", c.lbfgs_memory},
          {"wolfe_c1", c.wolfe_c1},
          {"wolfe_c2", c.wolfe_c2},
          {"max_line_search_steps", c.max_line_search_steps},
          {"method", to_string(c.method)},
          {"descent_step", c.descent_step}};
}

inline void from_json(const json& j, OptimConfig& c, double& sigma2) {
  const std::string sec = "crf";
  detail::reject_unknown(j, {"sigma2", "max_iterations", "gradient_tolerance", "memory", "wolfe_c1", "wolfe_c2",
                             "max_line_search_steps", "method", "descent_step"}, sec);
  detail::read(j, "sigma2", sigma2, sec);
  detail::read(j, "max_iterations", c.max_iterations, sec);
  detail::read(j, "gradient_tolerance", c.gradient_tolerance, sec);
  detail::read(j, "memory", c.lbfgs_memory, sec);
  detail::read(j, "wolfe_c1", c.wolfe_c1, sec);
  detail::read(j, "wolfe_c2", c.wolfe_c2, sec);
  detail::read(j, "max_line_search_steps", c.max_line_search_steps, sec);
  detail::read(j, "descent_step", c.descent_step, sec);
  if (j.contains("method")) {
    std::string m;
    detail::read(j, "method", m, sec);
    c.method = optim_method_from(m);
  }
}

// -- synthetic corpus ----------------------------------------------------------------

inline json to_json(const data::SynthConfig& c) {
  return {{"name", c.name},
          {"num_subjects", c.num_subjects},
          {"sequences_per_subject", c.sequences_per_subject},
          {"num_classes", c.num_classes},
          {"image_size", c.image_size},
          {"apex_noise", c.apex_noise},
          {"transition_frames", c.transition_frames},
          {"style", c.style == data::SynthStyle::onset_apex_offset ? "onset_apex_offset" : "onset_apex"},
          {"neutral_frames", {c.min_neutral_frames, c.max_neutral_frames}},
          {"apex_frames", {c.min_apex_frames, c.max_apex_frames}},
          {"subject_bias", c.subject_bias},
          {"prototype_seed", c.prototype_seed},
          {"seed", c.seed}};
}

inline void from_json(const json& j, data::SynthConfig& c) {
  const std::string sec = "synth";
  detail::reject_unknown(j, {"name", "num_subjects", "sequences_per_subject", "num_classes", "image_size",
                             "apex_noise", "transition_frames", "style", "neutral_frames", "apex_frames",
                             "subject_bias", "prototype_seed", "seed"}, sec);
  detail::read(j, "name", c.name, sec);
  detail::read(j, "num_subjects", c.num_subjects, sec);
  detail::read(j, "sequences_per_subject", c.sequences_per_subject, sec);
  detail::read(j, "num_classes", c.num_classes, sec);
  detail::read(j, "image_size", c.image_size, sec);
  detail::read(j, "apex_noise", c.apex_noise, sec);
  detail::read(j, "transition_frames", c.transition_frames, sec);
  detail::read(j, "subject_bias", c.subject_bias, sec);
  detail::read(j, "prototype_seed", c.prototype_seed, sec);
  detail::read(j, "seed", c.seed, sec);
  if (j.contains("style")) {
    std::string s;
    detail::read(j, "style", s, sec);
    require(s == "onset_apex_offset" || s == "onset_apex", ErrorCode::invalid_argument,
            "synth.style must be 'onset_apex_offset' or 'onset_apex'");
    c.style = s == "onset_apex" ? data::SynthStyle::onset_apex : data::SynthStyle::onset_apex_offset;
  }
  std::array<std::size_t, 2> range{};
  if (j.contains("neutral_frames")) {
    detail::read(j, "neutral_frames", range, sec);
    c.min_neutral_frames = range[0], c.max_neutral_frames = range[1];
  }
  if (j.contains("apex_frames")) {
    detail::read(j, "apex_frames", range, sec);
    c.min_apex_frames = range[0], c.max_apex_frames = range[1];
  }
}

// -- whole file ---------------------------------------------------------------------

struct RunConfig {
  pipeline::TwoStepConfig pipeline;
  data::SynthConfig synth;
  std::size_t folds = 5;
};

inline json to_json(const pipeline::TwoStepConfig& c) {
  return {{"extractor", to_json(c.extractor)},
          {"sgd", to_json(c.sgd)},
          {"crf", to_json(c.crf, c.sigma2)},
          {"pipeline", {{"feature_tap", to_string(c.feature_tap)}, {"standardize", c.standardize}, {"seed", c.seed}}}};
}

inline json to_json(const RunConfig& c) {
  json j = to_json(c.pipeline);
  j["synth"] = to_json(c.synth);
  j["ablation"] = {{"folds", c.folds}};
  return j;
}

inline RunConfig parse_run_config(const json& j) {
  detail::reject_unknown(j, {"extractor", "sgd", "crf", "pipeline", "synth", "ablation"}, "<top>");
  RunConfig c;
  if (j.contains("extractor")) from_json(j["extractor"], c.pipeline.extractor);
  if (j.contains("sgd")) from_json(j["sgd"], c.pipeline.sgd);
  if (j.contains("crf")) from_json(j["crf"], c.pipeline.crf, c.pipeline.sigma2);
  if (j.contains("synth")) from_json(j["synth"], c.synth);
  if (j.contains("pipeline")) {
    const json& p = j["pipeline"];
    detail::reject_unknown(p, {"feature_tap", "standardize", "seed"}, "pipeline");
    std::string tap = to_string(c.pipeline.feature_tap);
    detail::read(p, "feature_tap", tap, "pipeline");
    c.pipeline.feature_tap = feature_tap_from(tap);
    detail::read(p, "standardize", c.pipeline.standardize, "pipeline");
    detail::read(p, "seed", c.pipeline.seed, "pipeline");
  }
  if (j.contains("ablation")) {
    detail::reject_unknown(j["ablation"], {"folds"}, "ablation");
    detail::read(j["ablation"], "folds", c.folds, "ablation");
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_argument, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical (key-sorted, compact) JSON form.
inline std::uint64_t config_hash(const pipeline::TwoStepConfig& c) { return fnv1a(to_json(c).dump()); }

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace crfnet::eval
