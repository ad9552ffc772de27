#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avgsim {

/// Precondition violations on public entry points (bad dims, empty grids, s >= t, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A parameter set that is well-formed but violates a model inequality.
class ConfigurationRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation requires structure the bundle does not carry (e.g. limit metadata).
class UnsupportedBundle : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Newton iteration of an implicit step did not converge.
class StepFailure : public std::runtime_error {
 public:
  StepFailure(const std::string& what, double residual, int iterations, double time)
      : std::runtime_error(what), residual_(residual), iterations_(iterations), time_(time) {}
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }
  double time() const noexcept { return time_; }

 private:
  double residual_;
  int iterations_;
  double time_;
};

/// Non-finite state or a coefficient above the divergence threshold.
class DivergenceDetected : public std::runtime_error {
 public:
  DivergenceDetected(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Nested Monte Carlo stderr above tolerance. Retryable with a larger ensemble.
class EnsembleTooSmall : public std::runtime_error {
 public:
  EnsembleTooSmall(const std::string& what, std::size_t required_M)
      : std::runtime_error(what), required_M_(required_M) {}
  std::size_t required_M() const noexcept { return required_M_; }

 private:
  std::size_t required_M_;
};

/// Pullback horizon too short for the requested bias tolerance.
class PullbackTooShort : public std::runtime_error {
 public:
  PullbackTooShort(const std::string& what, double required_S)
      : std::runtime_error(what), required_S_(required_S) {}
  double required_S() const noexcept { return required_S_; }

 private:
  double required_S_;
};

/// Config document syntax error with 1-based location.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line, int column)
      : std::runtime_error(what), line_(line), column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace avgsim
