// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>

#include "genemu/rng.hpp"
#include "genemu/series.hpp"
#include "genemu/telegraph.hpp"

namespace genemu {

/// Integration aborts once the rotor speed deviation passes this bound
/// (per unit of synchronous speed); a machine that far from synchronism
/// has lost step and the trajectory is not usable telemetry.
inline constexpr double kMaxSpeedDeviation = 0.2;

/// Single machine behind a transformer and a double-circuit line, tied to
/// an infinite bus. Faults attach as a shunt at the transformer-line
/// junction. All impedances in per unit on the machine base.
struct PlantConfig {
  double inertia_h = 3.5;              // seconds
  double damping_d = 4.0;              // pu torque per pu speed
  double transient_reactance_xd = 0.3;
  double transformer_reactance_xt = 0.15;
  double line_reactance_1 = 0.5;
  double line_reactance_2 = 0.5;
  double infinite_bus_voltage = 1.0;
  double mechanical_power = 0.9;
  double internal_emf = 1.2;
  double base_frequency = 60.0;        // Hz
  double fine_dt = 1e-3;               // integrator step, seconds
  double sample_dt = 0.1;              // telemetry step, seconds

  void validate() const;

  double parallel_line_reactance() const {
    return line_reactance_1 * line_reactance_2 /
           (line_reactance_1 + line_reactance_2);
  }
  double total_reactance() const {
    return transient_reactance_xd + transformer_reactance_xt +
           parallel_line_reactance();
  }
  /// Fine steps per telemetry sample.
  int substeps() const;
};

/// Mechanical state of the machine plus the fault attached right now.
struct PlantState {
  double rotor_angle = 0.0;      // radians, relative to the infinite bus
  double speed_deviation = 0.0;  // pu of synchronous speed
  bool fault_active = false;
  FaultParams fault{};
};

/// Instantaneous terminal-bus measurement.
struct TerminalReading {
  double active_power = 0.0;
  double reactive_power = 0.0;
  double voltage = 0.0;
  double phase = 0.0;  // radians
};

/// Network solve at a fixed rotor angle: air-gap electrical power plus the
/// terminal phasor quantities. `fault` is the active shunt, if any.
struct NetworkSolution {
  double electrical_power = 0.0;
  TerminalReading terminal;
};
NetworkSolution solve_network(const PlantConfig& config, double rotor_angle,
                              const std::optional<FaultParams>& fault);

/// Pre-fault equilibrium. Throws NoEquilibrium when the dispatch exceeds
/// the static transfer limit E*V/X.
PlantState solve_steady_state(const PlantConfig& config);

/// Fault schedule for deterministic runs: maps a telemetry interval index
/// (1-based, covering (t_{k-1}, t_k]) to the active fault, or nothing.
using FaultSchedule = std::function<std::optional<FaultParams>(int interval)>;

/// Integrate the swing dynamics under a prescribed fault schedule, starting
/// from steady state. Returns channels P, Q, V, phi, fault. With
/// `record_fine` the series is sampled every integrator step instead of
/// every telemetry step.
MultiSeries simulate_schedule(const PlantConfig& config,
                              const FaultSchedule& schedule, double duration,
                              bool record_fine = false);

/// Full stochastic run: telegraph-driven fault switching with per-onset
/// impedance jitter around `base_fault`. One telegraph draw per telemetry
/// interval; fault parameters are redrawn only at clear-to-fault onsets.
MultiSeries simulate(const PlantConfig& config,
                     const TelegraphParams& telegraph,
                     const FaultParams& base_fault, double duration, Rng& rng);

/// Redraw the mechanical and network parameters around `config` (normal,
/// stddev = spread * value) until the result is a valid, feasible plant.
PlantConfig randomize_plant(const PlantConfig& config, Rng& rng,
                            double spread = 0.1);

/// True when the plant rides through `hold_seconds` of the given fault and
/// the recovery window without losing synchronism.
bool survives_fault(const PlantConfig& config, const FaultParams& fault,
                    double hold_seconds = 5.0, double settle_seconds = 10.0);

/// Largest fault reactance on a 1.0 .. 0.1 grid (step 0.1) that the plant
/// survives for `hold_seconds` at the given resistance.
double calibrate_fault_reactance(const PlantConfig& config, double resistance,
                                 double hold_seconds = 5.0);

/// Smallest resistance of the form r_start * 10^k (k >= 0) the plant
/// survives at the given reactance.
double find_survivable_resistance(const PlantConfig& config, double reactance,
                                  double r_start);

}  // namespace genemu
