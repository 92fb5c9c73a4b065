#pragma once

#include <stdexcept>
#include <string>

namespace gorqat {

// Shape/dimension mismatches between tensors.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad argument values (out-of-range bits, negative temperature, ...).
class ValueError : public std::invalid_argument {
 public:
  explicit ValueError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Index out of range (e.g. class target outside [0, C)).
class IndexError : public std::out_of_range {
 public:
  explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

// Operation attempted on an object in the wrong state
// (unfinalized quant range, corrupted regularizer scalar, ...).
class StateError : public std::logic_error {
 public:
  explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

// A documented numeric contract was violated by the caller
// (e.g. a row that should be a probability distribution is not).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Training produced a non-finite loss; the run is aborted.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration (unknown key, missing teacher, bad mode...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-system and serialization failures.
class IoError : public std::runtime_error {
 public:
  enum class Kind { generic, bad_magic, bad_version, truncated, bad_checksum, parse };

  explicit IoError(const std::string& msg, Kind kind = Kind::generic)
      : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace gorqat
