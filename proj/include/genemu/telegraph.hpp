// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "genemu/errors.hpp"
#include "genemu/rng.hpp"

namespace genemu {

/// Fault resistances are floored here so shunt admittances stay finite.
inline constexpr double kMinFaultResistance = 1e-6;

/// Two-state continuous-time Markov switch between a clear line and an
/// active fault. Rates are per second.
struct TelegraphParams {
  double rate_to_fault = 0.03;  // clear -> fault transition rate
  double rate_to_clear = 0.02;  // fault -> clear transition rate

  void validate() const;

  /// Long-run probability of sitting in the fault state.
  double stationary_fault_probability() const {
    return rate_to_fault / (rate_to_fault + rate_to_clear);
  }
};

enum class FaultStatus { Clear, Fault };

/// Occupancy law plus the realized state of one sampled path.
struct TelegraphState {
  double prob_fault = 0.0;
  double prob_clear = 1.0;
  FaultStatus current = FaultStatus::Clear;

  void validate() const;
};

/// Closed-form occupancy distribution after t seconds from `initial`.
TelegraphState occupancy(const TelegraphParams& params,
                         const TelegraphState& initial, double t);

/// Advance one sampling interval: draws the next realized state from the
/// exact conditional law given the current state, and advances the
/// marginal occupancy alongside it. Consumes exactly one draw from `rng`.
TelegraphState step(const TelegraphParams& params, const TelegraphState& state,
                    double dt, Rng& rng);

/// Impedance of an active fault shunt, in per unit.
struct FaultParams {
  double resistance = 0.01;
  double reactance = 0.0;

  void validate() const;
};

/// Jitter fault parameters around `base`: each field is drawn from a normal
/// with stddev = spread * |base value|, then clamped to stay physical.
/// spread = 0 returns base unchanged.
FaultParams sample_fault_params(const FaultParams& base, Rng& rng,
                                double spread = 0.1);

}  // namespace genemu
