#pragma once

#include <stdexcept>
#include <string>

namespace ugg {

// Precondition broken by the caller: shape mismatch, missing modality,
// out-of-range label and so on.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Argument outside the mathematical domain of an operation
// (negative sigma, zero-degree graph row, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid configuration value or unknown configuration key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary file. Subclasses name the specific defect.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagic : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};
class Truncated : public FormatError {
 public:
  using FormatError::FormatError;
};

// Training produced a NaN/Inf loss term. `term()` names the first
// offending term.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::string term, long step)
      : std::runtime_error("non-finite loss term '" + term + "' at step " +
                           std::to_string(step)),
        term_(std::move(term)),
        step_(step) {}

  const std::string& term() const noexcept { return term_; }
  long step() const noexcept { return step_; }

 private:
  std::string term_;
  long step_;
};

}  // namespace ugg
