#pragma once

#include <stdexcept>
#include <string>

namespace cmr {

/// Invalid distribution or heaping parameters.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An observation has zero probability under the model, so the likelihood is -inf.
class FitInfeasible : public std::runtime_error {
 public:
  FitInfeasible(const std::string& what, long row) : std::runtime_error(what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

/// An estimator could not produce a point estimate (empty arm, unconverged fit, ...).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The bread matrix of a sandwich estimator is numerically singular.
class SingularBreadError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

/// Malformed input data (CSV contents, column contract).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cmr
