#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crfnet {

/// Error categories. The CLI maps each category onto a distinct exit code.
enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  non_finite,
  missing_file,
  io_failure,
  corrupt_file,
  version_mismatch,
  empty_corpus,
  label_out_of_range,
  duplicate_id,
  non_monotone_frames,
  unknown_name,
  empty_label_intersection,
  insufficient_subjects,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::missing_file: return "missing-file";
    case ErrorCode::io_failure: return "io-failure";
    case ErrorCode::corrupt_file: return "corrupt-file";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::empty_corpus: return "empty-corpus";
    case ErrorCode::label_out_of_range: return "label-out-of-range";
    case ErrorCode::duplicate_id: return "duplicate-id";
    case ErrorCode::non_monotone_frames: return "non-monotone-frames";
    case ErrorCode::unknown_name: return "unknown-name";
    case ErrorCode::empty_label_intersection: return "empty-label-intersection";
    case ErrorCode::insufficient_subjects: return "insufficient-subjects";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace crfnet
