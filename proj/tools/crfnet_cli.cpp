// Command-line front end. Every subcommand reads an optional JSON config;
// flags given on the command line override the matching config entry.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crfnet/check/suites.hpp"
#include "crfnet/crf/train.hpp"
#include "crfnet/data/feature_io.hpp"
#include "crfnet/data/manifest.hpp"
#include "crfnet/data/synthetic.hpp"
#include "crfnet/eval/ablation.hpp"
#include "crfnet/eval/config.hpp"
#include "crfnet/eval/metrics.hpp"
#include "crfnet/eval/model_io.hpp"

using namespace crfnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit : int {
  ok = 0,
  usage = 2,
  bad_argument = 3,
  io_error = 4,
  corrupt = 5,
  version = 6,
  dimension = 7,
  non_finite = 8,
  data_error = 9,
  check_failed = 10,
};

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument: return bad_argument;
    case ErrorCode::missing_file:
    case ErrorCode::io_failure: return io_error;
    case ErrorCode::corrupt_file: return corrupt;
    case ErrorCode::version_mismatch: return version;
    case ErrorCode::dimension_mismatch: return dimension;
    case ErrorCode::non_finite: return non_finite;
    default: return data_error;
  }
}

eval::RunConfig load_config(const std::string& path) {
  return path.empty() ? eval::RunConfig{} : eval::load_run_config(path);
}

template <typename T>
void override_with(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

// Pipeline options shared by train and the ablation commands.
struct PipelineFlags {
  std::optional<std::size_t> iterations, batch_size, input_size, feature_dim, crf_iterations;
  std::optional<double> base_lr, sigma2;
  std::optional<std::string> feature_tap;
  bool standardize = false;

  void attach(CLI::App* app) {
    app->add_option("--iterations", iterations, "SGD iterations for the extractor");
    app->add_option("--batch-size", batch_size, "SGD minibatch size");
    app->add_option("--lr", base_lr, "base SGD learning rate");
    app->add_option("--input-size", input_size, "extractor input height and width");
    app->add_option("--feature-dim", feature_dim, "width of the hidden dense layer");
    app->add_option("--sigma2", sigma2, "Gaussian prior variance of the CRF");
    app->add_option("--crf-iterations", crf_iterations, "L-BFGS iteration limit");
    app->add_option("--feature-tap", feature_tap, "penultimate or logits");
    app->add_flag("--standardize", standardize, "z-score CRF features with train statistics");
  }

  void apply(pipeline::TwoStepConfig& c) const {
    override_with(iterations, c.sgd.total_iterations);
    override_with(batch_size, c.sgd.batch_size);
    override_with(base_lr, c.sgd.base_lr);
    if (input_size) c.extractor.height = c.extractor.width = *input_size;
    override_with(feature_dim, c.extractor.feature_dim);
    override_with(sigma2, c.sigma2);
    override_with(crf_iterations, c.crf.max_iterations);
    if (feature_tap) c.feature_tap = eval::feature_tap_from(*feature_tap);
    if (standardize) c.standardize = true;
  }
};

void print_metrics(const std::string& title, const eval::Metrics& m, const std::vector<std::string>& names) {
  std::printf("%s: per-frame accuracy %.4f (%llu/%llu), sequence accuracy %.4f (%llu/%llu)\n", title.c_str(),
              m.per_frame_accuracy(), static_cast<unsigned long long>(m.correct_frames()),
              static_cast<unsigned long long>(m.num_frames), m.sequence_accuracy(),
              static_cast<unsigned long long>(m.correct_sequences), static_cast<unsigned long long>(m.num_sequences));
  const auto recall = m.per_class_recall();
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::printf("  %-12s recall %.4f  row", names[k].c_str(), recall[k]);
    for (auto v : m.confusion[k]) std::printf(" %6llu", static_cast<unsigned long long>(v));
    std::printf("\n");
  }
}

void print_report(const eval::AblationReport& r) {
  std::printf("protocol %s, seed %llu, config %s\n", eval::to_string(r.protocol).c_str(),
              static_cast<unsigned long long>(r.seed), eval::hex64(r.config_hash).c_str());
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    std::printf("  fold %zu: with CRF %.4f, without CRF %.4f (%zu train / %zu test sequences)\n", f,
                r.folds[f].with_crf.per_frame_accuracy(), r.folds[f].without_crf.per_frame_accuracy(),
                r.folds[f].train_sequences, r.folds[f].test_sequences);
  }
  if (r.dropped_sequences) std::printf("  %zu sequence(s) dropped by the label intersection\n", r.dropped_sequences);
  print_metrics("with CRF", r.with_crf, r.label_names);
  print_metrics("without CRF", r.without_crf, r.label_names);
  std::printf("delta (with - without): %+.4f\n", r.delta());
}

void write_json(const std::string& path, const json& j) {
  if (!path.empty()) io::write_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

int cmd_gen_synth(const std::string& config_path, const std::string& out, const std::optional<std::uint64_t>& seed,
                  const std::optional<std::string>& name, const std::optional<std::size_t>& subjects,
                  const std::optional<std::size_t>& per_subject, const std::optional<std::size_t>& classes,
                  const std::optional<std::size_t>& size, const std::optional<double>& noise,
                  const std::optional<std::size_t>& transition, const std::optional<double>& bias,
                  const std::optional<std::string>& style) {
  data::SynthConfig c = load_config(config_path).synth;
  override_with(seed, c.seed);
  override_with(name, c.name);
  override_with(subjects, c.num_subjects);
  override_with(per_subject, c.sequences_per_subject);
  override_with(classes, c.num_classes);
  override_with(size, c.image_size);
  override_with(noise, c.apex_noise);
  override_with(transition, c.transition_frames);
  override_with(bias, c.subject_bias);
  if (style) eval::from_json(json{{"style", *style}}, c);
  const data::Corpus corpus = data::generate_synthetic_corpus(c);
  const fs::path manifest = data::save_corpus(corpus, out);
  std::printf("wrote %zu sequences (%zu frames) to %s\n", corpus.sequences.size(), corpus.num_frames(),
              manifest.string().c_str());
  return ok;
}

int cmd_train(const std::string& corpus_path, const std::string& config_path, const std::string& out_model,
              const std::optional<std::uint64_t>& seed, const PipelineFlags& flags) {
  eval::RunConfig rc = load_config(config_path);
  override_with(seed, rc.pipeline.seed);
  flags.apply(rc.pipeline);
  const data::Corpus corpus = data::load_corpus(corpus_path);
  pipeline::TrainingDiagnostics diag;
  const auto p = pipeline::train_two_step(corpus, rc.pipeline, eval::config_hash(rc.pipeline), &diag);
  eval::save_model(p, out_model);
  std::printf("trained on %zu frames in %zu sequences; final SGD loss %.4f\n", diag.num_frames, diag.num_sequences,
              diag.extractor_log.losses.empty() ? 0.0 : diag.extractor_log.losses.back());
  std::printf("CRF: %zu iterations, objective %.6f, %s\n", diag.crf_report.iterations_used,
              -diag.crf_report.final_objective, diag.crf_report.converged ? "converged" : diag.crf_report.diagnostic.c_str());
  std::printf("model written to %s (config %s)\n", out_model.c_str(), eval::hex64(p.config_hash).c_str());
  return ok;
}

int cmd_predict(const std::string& model_path, const std::string& corpus_path, const std::string& out,
                const std::string& arm, const std::string& features_dir) {
  require(arm == "crf" || arm == "softmax", ErrorCode::invalid_argument, "--arm must be 'crf' or 'softmax'");
  const auto p = eval::load_model(model_path);
  const data::Corpus corpus = data::load_corpus(corpus_path);
  eval::check_labels_match(p, corpus.labels);
  json seqs = json::array();
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    const auto& s = corpus.sequences[i];
    const auto images = s.images();
    const LabelSequence y =
        arm == "crf" ? pipeline::predict_sequence(p, images) : pipeline::predict_frames_softmax(p.extractor, images);
    seqs.push_back({{"sequence_id", s.sequence_id}, {"labels", y}});
    if (!features_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.feat", i);
      data::save_features(fs::path(features_dir) / name, p.labels, pipeline::pipeline_features(p, images), s.labels());
    }
  }
  write_json(out, {{"format", "crfnet-predictions"},
                   {"version", 1},
                   {"arm", arm},
                   {"labels", p.labels.names()},
                   {"sequences", seqs}});
  std::printf("wrote predictions for %zu sequences to %s\n", corpus.sequences.size(), out.c_str());
  return ok;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path, const std::string& report) {
  const json pred = json::parse(io::read_text(pred_path), nullptr, false);
  require(!pred.is_discarded() && pred.value("format", "") == "crfnet-predictions", ErrorCode::corrupt_file,
          pred_path + " is not a predictions file");
  require(pred.value("version", 0) == 1, ErrorCode::version_mismatch, "unsupported predictions version");
  const data::Corpus truth = data::load_corpus(truth_path);
  require(pred["labels"].get<std::vector<std::string>>() == truth.labels.names(), ErrorCode::dimension_mismatch,
          "prediction and corpus label sets differ");
  std::map<std::string, LabelSequence> by_id;
  for (const auto& s : pred["sequences"]) by_id[s["sequence_id"].get<std::string>()] = s["labels"].get<LabelSequence>();
  std::vector<LabelSequence> p, t;
  for (const auto& s : truth.sequences) {
    const auto it = by_id.find(s.sequence_id);
    require(it != by_id.end(), ErrorCode::dimension_mismatch, "no prediction for sequence '" + s.sequence_id + "'");
    p.push_back(it->second);
    t.push_back(s.labels());
  }
  require(by_id.size() == truth.sequences.size(), ErrorCode::dimension_mismatch,
          "predictions cover sequences missing from the corpus");
  const eval::Metrics m = eval::evaluate(p, t, truth.labels.size());
  print_metrics("evaluation", m, truth.labels.names());
  write_json(report, eval::to_json(m, truth.labels.names()));
  return ok;
}

int cmd_ablate_si(const std::string& corpus_path, const std::string& config_path, std::optional<std::size_t> folds,
                  const std::optional<std::uint64_t>& seed, const PipelineFlags& flags, const std::string& report) {
  eval::RunConfig rc = load_config(config_path);
  flags.apply(rc.pipeline);
  override_with(folds, rc.folds);
  const std::uint64_t s = seed.value_or(rc.pipeline.seed);
  const data::Corpus corpus = data::load_corpus(corpus_path);
  const auto r = eval::run_subject_independent(corpus, rc.pipeline, rc.folds, s, eval::config_hash(rc.pipeline));
  print_report(r);
  write_json(report, eval::to_json(r));
  return ok;
}

int cmd_ablate_cross(const std::vector<std::string>& corpora_paths, const std::string& test_name,
                     const std::string& config_path, const std::optional<std::uint64_t>& seed,
                     const PipelineFlags& flags, const std::string& report) {
  eval::RunConfig rc = load_config(config_path);
  flags.apply(rc.pipeline);
  const std::uint64_t s = seed.value_or(rc.pipeline.seed);
  std::vector<data::Corpus> corpora;
  for (const auto& p : corpora_paths) corpora.push_back(data::load_corpus(p));
  const auto r = eval::run_cross_corpus(corpora, test_name, rc.pipeline, s, eval::config_hash(rc.pipeline));
  print_report(r);
  write_json(report, eval::to_json(r));
  return ok;
}

int cmd_crf_train(const std::string& dir, const std::string& config_path, std::optional<double> sigma2,
                  std::optional<std::size_t> iterations, const std::string& out_model) {
  eval::RunConfig rc = load_config(config_path);
  override_with(sigma2, rc.pipeline.sigma2);
  override_with(iterations, rc.pipeline.crf.max_iterations);
  const auto files = data::load_feature_dir(dir);
  RegularizedDataset data;
  data.sigma2 = rc.pipeline.sigma2;
  for (const auto& f : files) data.items.push_back(f.sequence);
  const LabelSet labels = files.front().labels;
  const CrfTrainResult r =
      train_crf(data, zero_model(labels, data.items.front().observations.dim()), rc.pipeline.crf);
  std::size_t correct = 0, total = 0;
  for (const auto& item : data.items) {
    const LabelSequence y = viterbi_decode(r.model, item.observations);
    for (std::size_t t = 0; t < y.size(); ++t) correct += y[t] == item.labels[t];
    total += y.size();
  }
  std::printf("CRF on %zu sequences: %zu iterations, objective %.6f, %s; training accuracy %.4f\n",
              data.items.size(), r.report.iterations_used, -r.report.final_objective,
              r.report.converged ? "converged" : r.report.diagnostic.c_str(),
              static_cast<double>(correct) / static_cast<double>(total));
  write_json(out_model, {{"format", "crfnet-crf"},
                         {"version", 1},
                         {"labels", labels.names()},
                         {"dim", r.model.dim()},
                         {"sigma2", std::isfinite(data.sigma2) ? json(data.sigma2) : json("inf")},
                         {"theta", r.model.flatten()},
                         {"objective_trace", r.report.objective_trace}});
  return ok;
}

int cmd_check(const std::string& suite, std::optional<std::size_t> instances, std::uint64_t seed) {
  std::vector<check::SuiteResult> results;
  if (suite == "oracle") {
    results.push_back(check::run_oracle_suite(instances.value_or(200), seed));
  } else if (suite == "grad") {
    results.push_back(check::run_crf_gradient_suite(instances.value_or(50), seed));
    results.push_back(check::run_extractor_gradient_suite(instances ? std::max<std::size_t>(1, *instances / 10) : 3, seed));
  } else {
    fail(ErrorCode::invalid_argument, "--suite must be 'oracle' or 'grad'");
  }
  bool all = true;
  for (const auto& r : results) {
    std::printf("%s %s: %zu instances, max error %.3g (tolerance %.0e)%s%s\n", r.passed() ? "PASS" : "FAIL",
                r.name.c_str(), r.instances, r.max_error, r.tolerance, r.passed() ? "" : "; first failure: ",
                r.first_failure.c_str());
    all = all && r.passed();
  }
  return all ? ok : check_failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-step CNN + linear-chain CRF sequence labeling"};
  app.require_subcommand(1);

  std::string config, out, corpus, model, pred, truth, report, test_name, features_dir, suite, arm = "crf";
  std::vector<std::string> corpora;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> folds, instances;
  PipelineFlags flags;

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic corpus");
  std::optional<std::string> name, style;
  std::optional<std::size_t> subjects, per_subject, classes, size, transition;
  std::optional<double> noise, bias;
  gen->add_option("--config", config, "JSON config (uses its \"synth\" section)");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--name", name, "corpus name");
  gen->add_option("--subjects", subjects, "number of subjects");
  gen->add_option("--sequences-per-subject", per_subject, "sequences per subject");
  gen->add_option("--num-classes", classes, "label count including neutral");
  gen->add_option("--image-size", size, "square image side");
  gen->add_option("--apex-noise", noise, "noise level");
  gen->add_option("--transition-frames", transition, "ramp length");
  gen->add_option("--subject-bias", bias, "per-subject bias strength");
  gen->add_option("--style", style, "onset_apex_offset or onset_apex");

  auto* train = app.add_subcommand("train", "train the two-step pipeline");
  train->add_option("--corpus", corpus, "corpus manifest")->required();
  train->add_option("--config", config, "JSON config");
  train->add_option("--out-model", out, "model file to write")->required();
  train->add_option("--seed", seed, "training seed");
  flags.attach(train);

  auto* predict = app.add_subcommand("predict", "label every sequence of a corpus");
  predict->add_option("--model", model, "model file")->required();
  predict->add_option("--corpus", corpus, "corpus manifest")->required();
  predict->add_option("--out", out, "predictions file to write")->required();
  predict->add_option("--arm", arm, "crf (default) or softmax");
  predict->add_option("--features-out", features_dir, "also write per-sequence feature files here");

  auto* evaluate = app.add_subcommand("eval", "score predictions against a corpus");
  evaluate->add_option("--pred", pred, "predictions file")->required();
  evaluate->add_option("--truth", truth, "corpus manifest")->required();
  evaluate->add_option("--report", report, "structured metrics output");

  auto* si = app.add_subcommand("ablate-si", "subject-independent k-fold ablation");
  si->add_option("--corpus", corpus, "corpus manifest")->required();
  si->add_option("--config", config, "JSON config");
  si->add_option("--folds", folds, "number of folds");
  si->add_option("--seed", seed, "split and training seed");
  si->add_option("--report", report, "structured report output");
  flags.attach(si);

  auto* cross = app.add_subcommand("ablate-cross", "cross-corpus ablation");
  cross->add_option("--corpora", corpora, "corpus manifests")->required()->expected(2, -1);
  cross->add_option("--test-name", test_name, "name of the held-out corpus")->required();
  cross->add_option("--config", config, "JSON config");
  cross->add_option("--seed", seed, "training seed");
  cross->add_option("--report", report, "structured report output");
  flags.attach(cross);

  auto* crf = app.add_subcommand("crf-train", "train a CRF on feature interchange files");
  std::optional<double> sigma2;
  std::optional<std::size_t> crf_iterations;
  crf->add_option("--features-dir", features_dir, "directory of .feat files")->required();
  crf->add_option("--config", config, "JSON config (uses its \"crf\" section)");
  crf->add_option("--sigma2", sigma2, "Gaussian prior variance");
  crf->add_option("--max-iterations", crf_iterations, "L-BFGS iteration limit");
  crf->add_option("--out-model", out, "CRF model file to write")->required();

  auto* chk = app.add_subcommand("check", "run the randomized property suites");
  chk->add_option("--suite", suite, "oracle or grad")->required()->check(CLI::IsMember({"oracle", "grad"}));
  chk->add_option("--instances", instances, "number of random instances");
  chk->add_option("--seed", seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*gen) {
      return cmd_gen_synth(config, out, seed, name, subjects, per_subject, classes, size, noise, transition, bias, style);
    }
    if (*train) return cmd_train(corpus, config, out, seed, flags);
    if (*predict) return cmd_predict(model, corpus, out, arm, features_dir);
    if (*evaluate) return cmd_eval(pred, truth, report);
    if (*si) return cmd_ablate_si(corpus, config, folds, seed, flags, report);
    if (*cross) return cmd_ablate_cross(corpora, test_name, config, seed, flags, report);
    if (*crf) return cmd_crf_train(features_dir, config, sigma2, crf_iterations, out);
    if (*chk) return cmd_check(suite, instances, seed.value_or(1));
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: corrupt-file: %s\n", e.what());
    return corrupt;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return io_error;
  }
  return usage;
}
