#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rpr {

/// Failure categories. Each maps to a distinct CLI exit code.
enum class ErrorCategory {
  kInvalidCloud,
  kInvalidArgument,
  kShape,
  kNumerical,
  kFormat,
  kConfig,
  kEmptyBatch,
  kEmptyDatabase,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kInvalidCloud: return "InvalidCloud";
    case ErrorCategory::kInvalidArgument: return "InvalidArgument";
    case ErrorCategory::kShape: return "ShapeError";
    case ErrorCategory::kNumerical: return "NumericalError";
    case ErrorCategory::kFormat: return "FormatError";
    case ErrorCategory::kConfig: return "ConfigError";
    case ErrorCategory::kEmptyBatch: return "EmptyBatch";
    case ErrorCategory::kEmptyDatabase: return "EmptyDatabase";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct InvalidCloud : Error {
  explicit InvalidCloud(const std::string& w) : Error(ErrorCategory::kInvalidCloud, w) {}
};
struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorCategory::kInvalidArgument, w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorCategory::kShape, w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorCategory::kNumerical, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::kConfig, w) {}
};
struct EmptyBatch : Error {
  explicit EmptyBatch(const std::string& w) : Error(ErrorCategory::kEmptyBatch, w) {}
};
struct EmptyDatabase : Error {
  explicit EmptyDatabase(const std::string& w) : Error(ErrorCategory::kEmptyDatabase, w) {}
};

/// Malformed file contents; `offset` is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(ErrorCategory::kFormat, what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace rpr
