#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace geoelim {

// Process exit codes shared by the library error types and the CLI.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  input = 2,
  prediction_domain = 3,
  design_infeasible = 4,
  evaluation_abort = 5,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::failure)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }
  virtual const char* kind() const noexcept { return "error"; }

 private:
  ExitCode code_;
};

// Malformed files, missing config keys, violated preconditions on inputs.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(what, ExitCode::input) {}
  const char* kind() const noexcept override { return "input"; }
};

// An evaluation unit cannot carry a population-weighted target.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(what, ExitCode::prediction_domain) {}
  const char* kind() const noexcept override { return "prediction_domain"; }
};

class InfeasibleDesignError : public Error {
 public:
  InfeasibleDesignError(const std::string& what, std::vector<std::string> eu_ids,
                        int best_k)
      : Error(what, ExitCode::design_infeasible),
        eu_ids_(std::move(eu_ids)),
        best_k_(best_k) {}
  const char* kind() const noexcept override { return "design_infeasible"; }
  const std::vector<std::string>& eu_ids() const noexcept { return eu_ids_; }
  // Largest k reached by the inhibition search (minimum over the listed EUs).
  int best_k() const noexcept { return best_k_; }

 private:
  std::vector<std::string> eu_ids_;
  int best_k_;
};

class EvaluationAbort : public Error {
 public:
  explicit EvaluationAbort(const std::string& what)
      : Error(what, ExitCode::evaluation_abort) {}
  const char* kind() const noexcept override { return "evaluation_abort"; }
};

// Cholesky failure that survived the jitter policy.
class FactorisationError : public Error {
 public:
  explicit FactorisationError(const std::string& what) : Error(what) {}
  const char* kind() const noexcept override { return "factorisation"; }
};

// All observed counts are zero, so the spatial parameters are not estimable.
class DegenerateDataError : public Error {
 public:
  explicit DegenerateDataError(const std::string& what) : Error(what) {}
  const char* kind() const noexcept override { return "degenerate_data"; }
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<std::vector<double>> trajectory)
      : Error(what), trajectory_(std::move(trajectory)) {}
  const char* kind() const noexcept override { return "convergence"; }
  const std::vector<std::vector<double>>& trajectory() const noexcept {
    return trajectory_;
  }

 private:
  std::vector<std::vector<double>> trajectory_;
};

}  // namespace geoelim
