#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace regle {

/// Error categories surfaced to callers and, through the CLI, as the `kind`
/// field of the machine-readable error line.
enum class ErrorKind {
  Dimension,
  Usage,
  Config,
  Training,
  Metric,
  Analysis,
  Fit,
  Report,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Config: return "config";
    case ErrorKind::Training: return "training";
    case ErrorKind::Metric: return "metric";
    case ErrorKind::Analysis: return "analysis";
    case ErrorKind::Fit: return "fit";
    case ErrorKind::Report: return "report";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& message) : Error(K, message) {}
};

using DimensionError = TypedError<ErrorKind::Dimension>;
using UsageError = TypedError<ErrorKind::Usage>;
using ConfigError = TypedError<ErrorKind::Config>;
using TrainingError = TypedError<ErrorKind::Training>;
using MetricError = TypedError<ErrorKind::Metric>;
using AnalysisError = TypedError<ErrorKind::Analysis>;
using FitError = TypedError<ErrorKind::Fit>;
using ReportError = TypedError<ErrorKind::Report>;
using IoError = TypedError<ErrorKind::Io>;

}  // namespace regle
