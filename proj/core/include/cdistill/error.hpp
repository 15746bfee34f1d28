// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cdistill {

/// Every failure raised by the library carries one of these kinds so callers
/// (and the CLI exit-code mapping) can branch without parsing messages.
enum class ErrorKind {
  UnknownArchitecture,
  ShapeError,
  NoNormalizationLayers,
  EmptyBatch,
  EmptyDataset,
  LabelError,
  TrainingDiverged,
  InvalidConfig,
  IncompleteCommittee,
  MissingPrior,
  InvalidSubsetSize,
  InvalidScore,
  InsufficientData,
  SynthesisDiverged,
  InvalidMomentum,
  DegenerateNormalization,
  DegenerateBatch,
  RangeError,
  InsufficientSamples,
  AlignmentError,
  IncompleteLog,
  DependencyError,
  UnknownPreset,
  FormatError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace cdistill
