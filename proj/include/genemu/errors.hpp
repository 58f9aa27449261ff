// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace genemu {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a documented precondition.
struct InvalidArgument : Error {
  using Error::Error;
};

/// Bad key, value, or missing required entry in a config file.
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed text input (CSV, config, checkpoint header).
struct ParseError : Error {
  ParseError(const std::string& what, long line_number)
      : Error(what + " (line " + std::to_string(line_number) + ")"),
        line(line_number) {}
  long line;
};

/// Shape mismatch between related containers (channel counts, dims).
struct ShapeError : Error {
  using Error::Error;
};

/// Requested dispatch exceeds the static transfer limit.
struct NoEquilibrium : Error {
  using Error::Error;
};

/// The integrator left the basin of attraction or produced non-finite state.
struct SimulationDiverged : Error {
  SimulationDiverged(const std::string& what, double t_seconds)
      : Error(what), time_seconds(t_seconds) {}
  double time_seconds;
};

/// Repeated redraws failed to produce a valid randomized configuration.
struct RandomizationFailed : Error {
  using Error::Error;
};

/// Series too short for the requested operation.
struct TooShort : Error {
  using Error::Error;
};

/// A channel has (numerically) zero variance where scaling needs it.
struct DegenerateChannel : Error {
  using Error::Error;
};

/// Normal equations are singular: not enough independent rows.
struct SingularDesign : Error {
  using Error::Error;
};

/// Data does not satisfy the length requirements for the requested order.
struct IdentifiabilityError : Error {
  using Error::Error;
};

/// Forecast requested with fewer history rows than the model order.
struct InsufficientHistory : Error {
  using Error::Error;
};

/// Information criterion undefined for this sample/parameter combination.
struct UndefinedCriterion : Error {
  using Error::Error;
};

/// No candidate order produced a finite criterion value.
struct NoValidOrder : Error {
  using Error::Error;
};

/// Lag diagnostic could not be computed (constant channel, bad window).
struct DiagnosticFailed : Error {
  using Error::Error;
};

/// Loss became non-finite during optimization.
struct TrainingDiverged : Error {
  TrainingDiverged(const std::string& what, int at_epoch)
      : Error(what), epoch(at_epoch) {}
  int epoch;
};

/// Pearson correlation of a constant sequence.
struct ZeroVariance : Error {
  using Error::Error;
};

/// NRMSE denominator is zero (truth identically zero).
struct UndefinedNormalization : Error {
  using Error::Error;
};

/// Empty collection where at least one element is required.
struct EmptyInput : Error {
  using Error::Error;
};

}  // namespace genemu
