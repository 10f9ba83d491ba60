#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "crfnet/data/corpus.hpp"
#include "crfnet/data/image.hpp"
#include "crfnet/io/files.hpp"

namespace crfnet::data {

// Manifest layout (JSON):
//   {"format": "crfnet-corpus", "version": 1, "name": ..., "labels": [names],
//    "sequences": [{"sequence_id": ..., "subject_id": ...,
//                   "frames": [{"image": path, "label": k, "index": i}]}]}
// Image paths are relative to the manifest's directory. "index" defaults to
// the frame's position.
inline constexpr int manifest_version = 1;

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  require(j.is_object() && j.contains(key), ErrorCode::corrupt_file,
          std::string("missing field '") + key + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::corrupt_file, std::string("field '") + key + "' has the wrong type in " + where);
  }
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& manifest_path) {
  const std::string text = io::read_text(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::corrupt_file, "manifest " + manifest_path.string() + " is not JSON: " + e.what());
  }
  const std::string where = manifest_path.string();
  require(detail::field<std::string>(j, "format", where) == "crfnet-corpus",
          ErrorCode::corrupt_file, where + " is not a corpus manifest");
  const int version = detail::field<int>(j, "version", where);
  require(version == manifest_version, ErrorCode::version_mismatch,
          "manifest version " + std::to_string(version) + " is not supported");

  Corpus corpus;
  corpus.name = detail::field<std::string>(j, "name", where);
  corpus.labels = LabelSet(detail::field<std::vector<std::string>>(j, "labels", where));
  const auto& seqs = j.contains("sequences") ? j["sequences"] : nlohmann::json::array();
  require(seqs.is_array(), ErrorCode::corrupt_file, "'sequences' must be a list in " + where);
  require(!seqs.empty(), ErrorCode::empty_corpus, "manifest " + where + " lists no sequences");

  const std::filesystem::path root = manifest_path.parent_path();
  for (const auto& js : seqs) {
    LabeledSequence s;
    s.sequence_id = detail::field<std::string>(js, "sequence_id", where);
    s.subject_id = detail::field<std::string>(js, "subject_id", where);
    const auto& frames = js.contains("frames") ? js["frames"] : nlohmann::json::array();
    require(frames.is_array(), ErrorCode::corrupt_file, "'frames' must be a list in " + where);
    std::int64_t position = 0;
    for (const auto& jf : frames) {
      FrameRecord f;
      const auto label = detail::field<std::int64_t>(jf, "label", where);
      require(label >= 0 && static_cast<std::size_t>(label) < corpus.labels.size(),
              ErrorCode::label_out_of_range,
              "label " + std::to_string(label) + " out of range in sequence '" + s.sequence_id + "'");
      f.label = static_cast<std::size_t>(label);
      f.index = jf.contains("index") ? detail::field<std::int64_t>(jf, "index", where) : position;
      f.image = read_image(root / detail::field<std::string>(jf, "image", where));
      s.frames.push_back(std::move(f));
      ++position;
    }
    corpus.sequences.push_back(std::move(s));
  }
  validate(corpus);
  return corpus;
}

/// Writes `dir/manifest.json` plus one 16-bit image per frame under
/// `dir/frames/`. Returns the manifest path.
inline std::filesystem::path save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  validate(corpus);
  std::filesystem::create_directories(dir / "frames");
  nlohmann::json j;
  j["format"] = "crfnet-corpus";
  j["version"] = manifest_version;
  j["name"] = corpus.name;
  j["labels"] = corpus.labels.names();
  j["sequences"] = nlohmann::json::array();
  char buf[64];
  for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
    const LabeledSequence& seq = corpus.sequences[s];
    nlohmann::json js{{"sequence_id", seq.sequence_id}, {"subject_id", seq.subject_id}};
    js["frames"] = nlohmann::json::array();
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      const FrameRecord& f = seq.frames[t];
      const char* ext = f.image.dim(2) == 1 ? "pgm" : "ppm";
      std::snprintf(buf, sizeof buf, "frames/s%05zu_f%04zu.%s", s, t, ext);
      write_image(dir / buf, f.image);
      js["frames"].push_back({{"image", buf}, {"label", f.label}, {"index", f.index}});
    }
    j["sequences"].push_back(std::move(js));
  }
  const std::filesystem::path manifest = dir / "manifest.json";
  io::write_atomic(manifest, j.dump(1));
  return manifest;
}

}  // namespace crfnet::data
