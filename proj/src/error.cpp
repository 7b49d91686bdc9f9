#include "treecarbon/error.hpp"

namespace treecarbon {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Invariant: return "invariant";
    case ErrorKind::Io: return "io";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::UnsupportedFormat: return "unsupported-format";
    case ErrorKind::MalformedGeoreference: return "malformed-georeference";
    case ErrorKind::QuantizationOverflow: return "quantization-overflow";
    case ErrorKind::EmptySelection: return "empty-selection";
    case ErrorKind::NoGroundSurface: return "no-ground-surface";
    case ErrorKind::InsufficientCoverage: return "insufficient-coverage";
    case ErrorKind::EmptySegmentation: return "empty-segmentation";
    case ErrorKind::IncompleteCoverage: return "incomplete-coverage";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Overlap: return "overlap";
    case ErrorKind::SingularFit: return "singular-fit";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::Calibration: return "calibration";
    case ErrorKind::Ambiguity: return "ambiguity";
    case ErrorKind::Deserialization: return "deserialization";
    case ErrorKind::Placement: return "placement";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::Stage: return "stage";
  }
  return "unknown";
}

}  // namespace treecarbon
