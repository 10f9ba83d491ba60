#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "crfnet/crf/model.hpp"
#include "crfnet/io/files.hpp"

namespace crfnet::data {

// Text layout, one item per line:
//   crfnet-features 1
//   T d K
//   <K label names, space separated>
//   <T label indices>
//   <T rows of d numbers, shortest round-trip decimal>
inline constexpr int feature_file_version = 1;

namespace detail {

inline void check_label_range(const LabelSequence& y, std::size_t k) {
  for (std::size_t v : y) {
    require(v < k, ErrorCode::label_out_of_range,
            "label " + std::to_string(v) + " out of range for " + std::to_string(k) + " labels");
  }
}

}  // namespace detail

struct FeatureFile {
  LabelSet labels;
  LabeledObservation sequence;
};

inline std::string format_features(const LabelSet& labels, const ObservationSequence& x,
                                   const LabelSequence& y) {
  require(y.size() == x.length(), ErrorCode::dimension_mismatch, "label row length differs from T");
  detail::check_label_range(y, labels.size());
  std::ostringstream out;
  out << "crfnet-features " << feature_file_version << '\n'
      << x.length() << ' ' << x.dim() << ' ' << labels.size() << '\n';
  for (std::size_t k = 0; k < labels.size(); ++k) out << (k ? " " : "") << labels.name(k);
  out << '\n';
  for (std::size_t t = 0; t < y.size(); ++t) out << (t ? " " : "") << y[t];
  out << '\n';
  char buf[32];
  for (std::size_t t = 0; t < x.length(); ++t) {
    const auto row = x.frame(t);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const auto r = std::to_chars(buf, buf + sizeof buf, row[j]);
      out << (j ? " " : "") << std::string_view(buf, r.ptr - buf);
    }
    out << '\n';
  }
  return out.str();
}

inline void save_features(const std::filesystem::path& path, const LabelSet& labels,
                          const ObservationSequence& x, const LabelSequence& y) {
  io::write_atomic(path, format_features(labels, x, y));
}

inline FeatureFile parse_features(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  auto bad = [&](const std::string& what) { fail(ErrorCode::corrupt_file, what + " in " + where); };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "crfnet-features") bad("missing feature header");
  require(version == feature_file_version, ErrorCode::version_mismatch,
          "feature file version " + std::to_string(version) + " is not supported (" + where + ")");
  std::size_t t_len = 0, dim = 0, k = 0;
  if (!(in >> t_len >> dim >> k)) bad("missing T d K line");
  std::vector<std::string> names(k);
  for (auto& n : names)
    if (!(in >> n)) bad("missing label names");
  LabelSequence y(t_len);
  for (auto& v : y)
    if (!(in >> v)) bad("missing label row");
  Matrix x(t_len, dim);
  std::string token;
  for (double& v : x.flat()) {
    if (!(in >> token)) bad("truncated feature rows");
    const auto r = std::from_chars(token.data(), token.data() + token.size(), v);
    if (r.ec != std::errc() || r.ptr != token.data() + token.size()) bad("bad number '" + token + "'");
  }
  if (in >> token) bad("trailing data");
  FeatureFile file{LabelSet(std::move(names)), {ObservationSequence(std::move(x)), std::move(y)}};
  detail::check_label_range(file.sequence.labels, file.labels.size());
  return file;
}

inline FeatureFile load_features(const std::filesystem::path& path) {
  return parse_features(io::read_text(path), path.string());
}

/// Every `*.feat` file under `dir`, sorted by file name. All files must
/// agree on dimension and label names.
inline std::vector<FeatureFile> load_feature_dir(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::missing_file,
          "feature directory not found: " + dir.string());
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".feat") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  require(!paths.empty(), ErrorCode::empty_corpus, "no .feat files in " + dir.string());
  std::vector<FeatureFile> files;
  for (const auto& p : paths) {
    files.push_back(load_features(p));
    require(files.back().labels == files.front().labels, ErrorCode::dimension_mismatch,
            p.string() + " uses a different label set");
    require(files.back().sequence.observations.dim() == files.front().sequence.observations.dim(),
            ErrorCode::dimension_mismatch, p.string() + " has a different feature dimension");
  }
  return files;
}

}  // namespace crfnet::data
