#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cubedesign {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  NoKernel,
  Infeasible,
  Unbounded,
  DomainError,
  InvalidProbability,
  InvalidGroupSize,
  OddSampleSize,
  PropensityOutOfRange,
  NumericalBreakdown,
  TooManyUnresolved,
  HeterogeneousPi,
  EmptyGroup,
  NoIdentifiedStrata,
  InsufficientData,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoKernel: return "NoKernel";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::Unbounded: return "Unbounded";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::InvalidGroupSize: return "InvalidGroupSize";
    case ErrorCode::OddSampleSize: return "OddSampleSize";
    case ErrorCode::PropensityOutOfRange: return "PropensityOutOfRange";
    case ErrorCode::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::TooManyUnresolved: return "TooManyUnresolved";
    case ErrorCode::HeterogeneousPi: return "HeterogeneousPi";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::NoIdentifiedStrata: return "NoIdentifiedStrata";
    case ErrorCode::InsufficientData: return "InsufficientData";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace detail
}  // namespace cubedesign
