#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace parscale {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model/train/hardware configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad user input: unreadable file, malformed row, out-of-range token.
class InputError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Law fitting cannot identify a parameter from the given observations.
class IdentifiabilityError : public ContractError {
 public:
  using ContractError::ContractError;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace parscale
