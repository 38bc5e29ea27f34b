#pragma once

#include <stdexcept>
#include <string>

namespace metapi {

// Shape or width bookkeeping violated.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced or consumed by a numeric primitive.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Target sequence cannot be aligned to the available frames.
class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or incompatible file on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage was requested before the stages it depends on.
class DependencyError : public std::runtime_error {
 public:
  DependencyError(std::string missing, const std::string& what)
      : std::runtime_error(what), missing_(std::move(missing)) {}
  const std::string& missing() const { return missing_; }

 private:
  std::string missing_;
};

}  // namespace metapi
