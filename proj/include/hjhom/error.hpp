#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hjhom {

/// Failure categories raised by the solvers. Each maps to one documented
/// failure mode of an operation.
enum class ErrorCode {
  InvalidArgument,
  OutOfRange,
  NoPositiveEigenvector,
  NonConvergence,
  MismatchedSolutions,
  NotPositiveDefinite,
  NewtonDiverged,
  NoQuadraticGrowth,
  ResolutionRefused,
  Underflow,
  CFLViolation,
  NullspaceDegenerate,
  SolveFailure,
  QuadratureFailure,
  IoFailure,
  InvariantViolation,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NoPositiveEigenvector: return "NoPositiveEigenvector";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::MismatchedSolutions: return "MismatchedSolutions";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NewtonDiverged: return "NewtonDiverged";
    case ErrorCode::NoQuadraticGrowth: return "NoQuadraticGrowth";
    case ErrorCode::ResolutionRefused: return "ResolutionRefused";
    case ErrorCode::Underflow: return "Underflow";
    case ErrorCode::CFLViolation: return "CFLViolation";
    case ErrorCode::NullspaceDegenerate: return "NullspaceDegenerate";
    case ErrorCode::SolveFailure: return "SolveFailure";
    case ErrorCode::QuadratureFailure: return "QuadratureFailure";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for failures of a numerical method (as opposed to bad input or a
  /// violated precondition).
  bool is_solver_failure() const noexcept {
    switch (code_) {
      case ErrorCode::NoPositiveEigenvector:
      case ErrorCode::NonConvergence:
      case ErrorCode::NotPositiveDefinite:
      case ErrorCode::NewtonDiverged:
      case ErrorCode::Underflow:
      case ErrorCode::NullspaceDegenerate:
      case ErrorCode::SolveFailure:
      case ErrorCode::QuadratureFailure:
      case ErrorCode::IoFailure:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace hjhom
