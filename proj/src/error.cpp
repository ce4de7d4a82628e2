#include "ncca/error.hpp"

namespace ncca {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidDimension: return "InvalidDimension";
    case ErrorCode::InvalidCorrelation: return "InvalidCorrelation";
    case ErrorCode::UnrealizableCorrelation: return "UnrealizableCorrelation";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::InsufficientBatch: return "InsufficientBatch";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::DegenerateTarget: return "DegenerateTarget";
    case ErrorCode::RankDeficientSpan: return "RankDeficientSpan";
    case ErrorCode::DominanceViolated: return "DominanceViolated";
    case ErrorCode::WrongExperiment: return "WrongExperiment";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace ncca
