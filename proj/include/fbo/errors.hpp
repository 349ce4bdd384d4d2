// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fbo {

/// Violated call contract (dimension mismatch, non-finite input).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unknown client id or missing entry.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A configuration value outside its admissible range. `name()` is the
/// offending parameter so callers can report it verbatim.
class ParameterError : public std::invalid_argument {
 public:
  ParameterError(std::string name, const std::string& what)
      : std::invalid_argument(name + ": " + what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// Server/client exchange misuse, e.g. aggregating over nobody.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Operation not available for this problem type.
class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Iterates left the finite region; the run is aborted.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fbo
