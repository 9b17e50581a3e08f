#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace openmap {

enum class ErrorKind {
  NumericalFailure,
  IllConditioned,
  NotRankDeficient,
  NotOpen,
  GenericScaleFailed,
  DeltaTooLarge,
  RankInfeasible,
  RadicandNegative,
  PivotTooSmall,
  NotPSD,
  DirectionConstructionFailed,
  NotConstructible,
  UnsupportedActivation,
  InvalidInput,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::IllConditioned: return "IllConditioned";
    case ErrorKind::NotRankDeficient: return "NotRankDeficient";
    case ErrorKind::NotOpen: return "NotOpen";
    case ErrorKind::GenericScaleFailed: return "GenericScaleFailed";
    case ErrorKind::DeltaTooLarge: return "DeltaTooLarge";
    case ErrorKind::RankInfeasible: return "RankInfeasible";
    case ErrorKind::RadicandNegative: return "RadicandNegative";
    case ErrorKind::PivotTooSmall: return "PivotTooSmall";
    case ErrorKind::NotPSD: return "NotPSD";
    case ErrorKind::DirectionConstructionFailed: return "DirectionConstructionFailed";
    case ErrorKind::NotConstructible: return "NotConstructible";
    case ErrorKind::UnsupportedActivation: return "UnsupportedActivation";
    case ErrorKind::InvalidInput: return "InvalidInput";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::optional<double> delta0 = std::nullopt,
        std::optional<int> index = std::nullopt)
      : std::runtime_error(what), kind_(kind), delta0_(delta0), index_(index) {}

  ErrorKind kind() const { return kind_; }
  // Admissible perturbation size, when the refusal is about δ.
  std::optional<double> delta0() const { return delta0_; }
  std::optional<int> index() const { return index_; }

 private:
  ErrorKind kind_;
  std::optional<double> delta0_;
  std::optional<int> index_;
};

}  // namespace openmap
