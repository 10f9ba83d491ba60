#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crfnet/eval/config.hpp"
#include "crfnet/io/files.hpp"
#include "crfnet/pipeline/two_step.hpp"

namespace crfnet::eval {

// Container layout, all integers little-endian:
//   8 bytes   magic "CRFNETPL"
//   u32       format version
//   u8        byte order of the payload (1 = little-endian)
//   u64       header length, then the JSON header
//   u64       value count, then that many IEEE-754 doubles
//   u64       FNV-1a of every preceding byte
// The header carries the extractor config, label names, feature tap,
// provenance and the ordered tensor table describing the payload.
inline constexpr std::array<char, 8> model_magic{'C', 'R', 'F', 'N', 'E', 'T', 'P', 'L'};
inline constexpr std::uint32_t model_version = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)]);
  return v;
}

struct Block {
  std::string name;
  std::vector<double> values;
};

inline std::vector<Block> blocks_of(const pipeline::TrainedPipeline& p) {
  std::vector<Block> out;
  auto& m = const_cast<nn::ExtractorModel&>(p.extractor);
  for (const auto& v : nn::parameters(m)) out.push_back({v.name, {v.values.begin(), v.values.end()}});
  for (const auto& v : nn::statistics(m)) out.push_back({v.name, {v.values.begin(), v.values.end()}});
  out.push_back({"crf.theta", p.crf.flatten()});
  out.push_back({"standardizer.mean", p.standardizer.mean});
  out.push_back({"standardizer.scale", p.standardizer.scale});
  return out;
}

}  // namespace detail

inline std::string encode_model(const pipeline::TrainedPipeline& p) {
  pipeline::check_coherent(p);
  const auto blocks = detail::blocks_of(p);
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t count = 0;
  for (const auto& b : blocks) {
    table.push_back({{"name", b.name}, {"count", b.values.size()}});
    count += b.values.size();
  }
  const nlohmann::json header{{"extractor", to_json(p.extractor.config)},
                              {"labels", p.labels.names()},
                              {"feature_tap", to_string(p.feature_tap)},
                              {"crf_dim", p.crf.dim()},
                              {"config_hash", hex64(p.config_hash)},
                              {"seed", p.seed},
                              {"tensors", table}};
  const std::string head = header.dump();

  std::string out(model_magic.begin(), model_magic.end());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((model_version >> (8 * i)) & 0xff));
  out.push_back(1);
  detail::put_u64(out, head.size());
  out += head;
  detail::put_u64(out, count);
  for (const auto& b : blocks) {
    for (double v : b.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  detail::put_u64(out, fnv1a(out));
  return out;
}

inline void save_model(const pipeline::TrainedPipeline& p, const std::filesystem::path& path) {
  io::write_atomic(path, encode_model(p));
}

inline pipeline::TrainedPipeline decode_model(std::string_view bytes, const std::string& where) {
  auto corrupt = [&](const std::string& what) { fail(ErrorCode::corrupt_file, where + ": " + what); };
  const std::size_t fixed = model_magic.size() + 4 + 1 + 8;
  if (bytes.size() < fixed || !std::equal(model_magic.begin(), model_magic.end(), bytes.begin())) {
    corrupt("not a crfnet model file");
  }
  std::uint32_t version = 0;
  for (int i = 3; i >= 0; --i) version = (version << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)]);
  require(version == model_version, ErrorCode::version_mismatch,
          where + ": model format version " + std::to_string(version) + ", expected " + std::to_string(model_version));
  if (bytes[12] != 1) corrupt("unsupported byte order marker");
  const std::uint64_t head_len = detail::get_u64(bytes, 13);
  if (head_len > bytes.size() - fixed) corrupt("truncated header");
  std::size_t at = fixed + head_len;
  if (bytes.size() < at + 16) corrupt("truncated payload");
  const std::uint64_t count = detail::get_u64(bytes, at);
  at += 8;
  if (count > (bytes.size() - at - 8) / 8 || bytes.size() != at + 8 * count + 8) corrupt("truncated payload");
  if (fnv1a(bytes.substr(0, bytes.size() - 8)) != detail::get_u64(bytes, bytes.size() - 8)) corrupt("checksum mismatch");

  nlohmann::json header;
  pipeline::TrainedPipeline p;
  std::vector<std::pair<std::string, std::uint64_t>> table;
  std::size_t crf_dim = 0;
  try {
    header = nlohmann::json::parse(bytes.substr(fixed, head_len));
    from_json(header.at("extractor"), p.extractor.config);
    p.labels = LabelSet(header.at("labels").get<std::vector<std::string>>());
    p.feature_tap = feature_tap_from(header.at("feature_tap").get<std::string>());
    p.config_hash = std::stoull(header.at("config_hash").get<std::string>(), nullptr, 16);
    p.seed = header.at("seed").get<std::uint64_t>();
    crf_dim = header.at("crf_dim").get<std::size_t>();
    for (const auto& t : header.at("tensors")) {
      table.emplace_back(t.at("name").get<std::string>(), t.at("count").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("bad header: ") + e.what());
  }

  // Rebuild the architecture, then check it against the tensor table.
  require(p.extractor.config.num_classes == p.labels.size(), ErrorCode::dimension_mismatch,
          where + ": extractor has " + std::to_string(p.extractor.config.num_classes) + " classes but " +
              std::to_string(p.labels.size()) + " labels are named");
  require(crf_dim == nn::tap_width(p.extractor.config, p.feature_tap), ErrorCode::dimension_mismatch,
          where + ": CRF dimension does not match the extractor tap");
  p.extractor = nn::make_extractor(p.extractor.config);
  p.crf = CrfModel(p.labels, crf_dim);
  const auto expected = detail::blocks_of(p);
  require(expected.size() == table.size(), ErrorCode::dimension_mismatch, where + ": tensor table size differs");

  std::size_t offset = 0;
  std::vector<std::vector<double>> values;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const bool optional = table[i].first.rfind("standardizer.", 0) == 0;
    require(table[i].first == expected[i].name &&
                (table[i].second == expected[i].values.size() || (optional && (table[i].second == crf_dim))),
            ErrorCode::dimension_mismatch, where + ": tensor '" + table[i].first + "' does not fit the architecture");
    std::vector<double> v(table[i].second);
    for (auto& x : v) {
      x = std::bit_cast<double>(detail::get_u64(bytes, at + 8 * offset));
      ++offset;
    }
    values.push_back(std::move(v));
  }
  if (offset != count) corrupt("payload size disagrees with the tensor table");

  auto& m = p.extractor;
  std::size_t i = 0;
  for (auto& v : nn::parameters(m)) std::copy(values[i].begin(), values[i].end(), v.values.begin()), ++i;
  for (auto& v : nn::statistics(m)) std::copy(values[i].begin(), values[i].end(), v.values.begin()), ++i;
  p.crf.assign(values[i++]);
  p.standardizer.mean = std::move(values[i++]);
  p.standardizer.scale = std::move(values[i++]);
  require(p.standardizer.mean.size() == p.standardizer.scale.size(), ErrorCode::dimension_mismatch,
          where + ": standardizer mean and scale differ in length");
  pipeline::check_coherent(p);
  return p;
}

inline pipeline::TrainedPipeline load_model(const std::filesystem::path& path) {
  return decode_model(io::read_text(path), path.string());
}

/// Predicting on a corpus whose labels differ from the model's is a
/// dimension error.
inline void check_labels_match(const pipeline::TrainedPipeline& p, const LabelSet& corpus_labels) {
  require(p.labels == corpus_labels, ErrorCode::dimension_mismatch,
          "model has " + std::to_string(p.labels.size()) + " labels, corpus has " +
              std::to_string(corpus_labels.size()) + " (or their names differ)");
}

}  // namespace crfnet::eval
