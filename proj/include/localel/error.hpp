#ifndef LOCALEL_ERROR_HPP
#define LOCALEL_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace localel {

enum class ErrorKind {
  NotPositiveDefinite,
  SingularAfterRidge,
  NotInvertible,
  NonFinite,
  NoSignChange,
  DegenerateMoments,
  InfeasibleLambda,
  IllConditionedDirections,
  InnerSolveFailed,
  NoJacobian,
  AllInfeasible,
  PathDegenerate,
  EmptyEstimates,
  InvalidArgument,
  UnknownKey,
  TypeMismatch,
  MissingEstimates,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::SingularAfterRidge: return "SingularAfterRidge";
    case ErrorKind::NotInvertible: return "NotInvertible";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NoSignChange: return "NoSignChange";
    case ErrorKind::DegenerateMoments: return "DegenerateMoments";
    case ErrorKind::InfeasibleLambda: return "InfeasibleLambda";
    case ErrorKind::IllConditionedDirections: return "IllConditionedDirections";
    case ErrorKind::InnerSolveFailed: return "InnerSolveFailed";
    case ErrorKind::NoJacobian: return "NoJacobian";
    case ErrorKind::AllInfeasible: return "AllInfeasible";
    case ErrorKind::PathDegenerate: return "PathDegenerate";
    case ErrorKind::EmptyEstimates: return "EmptyEstimates";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::UnknownKey: return "UnknownKey";
    case ErrorKind::TypeMismatch: return "TypeMismatch";
    case ErrorKind::MissingEstimates: return "MissingEstimates";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace localel

#endif  // LOCALEL_ERROR_HPP
