#pragma once

#include <stdexcept>
#include <string>

namespace pkode {

/// Raised when a caller breaks an operation's precondition (shape mismatch,
/// unsorted times, empty input, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when an ODE integration cannot reach its end time.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double last_time)
      : std::runtime_error(what), last_time_(last_time) {}

  double last_time() const noexcept { return last_time_; }

 private:
  double last_time_;
};

/// Raised for malformed dataset, checkpoint and configuration files.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace pkode
