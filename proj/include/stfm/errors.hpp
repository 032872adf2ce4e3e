#pragma once

#include <stdexcept>
#include <string>

namespace stfm {

// Bad input data, malformed files, inconsistent dimensions.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Factorization or sampling failure.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, double jitter = 0.0)
      : std::runtime_error(what), jitter_(jitter) {}

  // Largest diagonal jitter that was attempted before giving up.
  double jitter() const noexcept { return jitter_; }

 private:
  double jitter_;
};

}  // namespace stfm
