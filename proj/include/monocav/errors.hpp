#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace monocav {

enum class ErrorCode {
  InvalidParameter,
  CavityTouchesBoundary,
  DegenerateCavity,
  EmptySigma,
  InvalidBranch,
  ShapeMismatch,
  LinearSolveDiverged,
  PicardStalled,
  IncompatibleTraces,
  MalformedFile,
  AllStartsFailed,
  InvalidConfig,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::CavityTouchesBoundary: return "CavityTouchesBoundary";
    case ErrorCode::DegenerateCavity: return "DegenerateCavity";
    case ErrorCode::EmptySigma: return "EmptySigma";
    case ErrorCode::InvalidBranch: return "InvalidBranch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LinearSolveDiverged: return "LinearSolveDiverged";
    case ErrorCode::PicardStalled: return "PicardStalled";
    case ErrorCode::IncompatibleTraces: return "IncompatibleTraces";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::AllStartsFailed: return "AllStartsFailed";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Single exception type for the library; the code tells callers which
/// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Reading a trace or field file failed at a specific line.
class MalformedFileError : public Error {
 public:
  MalformedFileError(std::size_t line, const std::string& message)
      : Error(ErrorCode::MalformedFile, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Picard iteration hit its cap; the last observed contraction ratio is kept.
class PicardStalledError : public Error {
 public:
  PicardStalledError(int iterations, double final_ratio)
      : Error(ErrorCode::PicardStalled,
              "no convergence after " + std::to_string(iterations) +
                  " iterations (final ratio " + std::to_string(final_ratio) + ")"),
        final_ratio_(final_ratio) {}

  double final_ratio() const noexcept { return final_ratio_; }

 private:
  double final_ratio_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace monocav
