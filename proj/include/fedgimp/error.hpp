#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedgimp {

enum class ErrorCode {
  kShapeError,
  kInvalidArgument,
  kInvalidRate,
  kInfeasibleMask,
  kIncompatibleModels,
  kDivergedTraining,
  kDivergedInference,
  kSiteFailure,
  kIoError,
  kNotFound,
  kEmptyInput,
  kConfigError,
};

// Stable names; the CLI prints these on stderr.
constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeError: return "shape-error";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidRate: return "invalid-rate";
    case ErrorCode::kInfeasibleMask: return "infeasible-mask";
    case ErrorCode::kIncompatibleModels: return "incompatible-models";
    case ErrorCode::kDivergedTraining: return "diverged-training";
    case ErrorCode::kDivergedInference: return "diverged-inference";
    case ErrorCode::kSiteFailure: return "site-failure";
    case ErrorCode::kIoError: return "io-error";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kConfigError: return "config-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

// Raised by training/inference loops; carries the step that produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(ErrorCode code, int step, const std::string& what)
      : Error(code, what + " (step " + std::to_string(step) + ")"), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace fedgimp
