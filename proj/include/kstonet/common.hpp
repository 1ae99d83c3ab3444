#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kstonet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// report a single machine-parsable record (stage, module, message).
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}
  const std::string& module() const { return module_; }

 private:
  std::string module_;
};

// Caller passed malformed or inconsistent data.
class InputError : public Error {
 public:
  using Error::Error;
};

// A configuration value is missing, out of range, or unusable.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An iterative solver hit its iteration budget before meeting tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(std::string module, std::string message, double residual)
      : Error(std::move(module), std::move(message)), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Linear algebra failed beyond repair (singular systems, indefinite factorizations).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A sampler produced non-finite or absurdly large state.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& module, const std::string& message) {
  if (!cond) throw InputError(module, message);
}

}  // namespace kstonet
