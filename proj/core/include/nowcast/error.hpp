#pragma once

#include <stdexcept>
#include <string>

namespace nowcast {

/// Caller violated a precondition (bad shape, bad argument, malformed input).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value left its mathematical domain (non-finite number, negative count, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace nowcast
