// SPDX-License-Identifier: Apache-2.0
#include "genemu/plant.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

namespace genemu {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void positive_finite(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw InvalidArgument(std::string(name) + " must be positive and finite");
  }
}

struct Derivs {
  double d_angle;
  double d_speed;
};

// Swing equation right-hand side. Speed deviation is in per unit, so the
// angle advances at omega_s * dw radians per second.
Derivs swing_rhs(const PlantConfig& c, const PlantState& s,
                 const std::optional<FaultParams>& fault) {
  const double pe = solve_network(c, s.rotor_angle, fault).electrical_power;
  const double omega_s = kTwoPi * c.base_frequency;
  return {omega_s * s.speed_deviation,
          (c.mechanical_power - pe - c.damping_d * s.speed_deviation) /
              (2.0 * c.inertia_h)};
}

PlantState rk4_step(const PlantConfig& c, const PlantState& s, double h,
                    const std::optional<FaultParams>& fault) {
  const Derivs k1 = swing_rhs(c, s, fault);
  const PlantState s2{s.rotor_angle + 0.5 * h * k1.d_angle,
                      s.speed_deviation + 0.5 * h * k1.d_speed};
  const Derivs k2 = swing_rhs(c, s2, fault);
  const PlantState s3{s.rotor_angle + 0.5 * h * k2.d_angle,
                      s.speed_deviation + 0.5 * h * k2.d_speed};
  const Derivs k3 = swing_rhs(c, s3, fault);
  const PlantState s4{s.rotor_angle + h * k3.d_angle,
                      s.speed_deviation + h * k3.d_speed};
  const Derivs k4 = swing_rhs(c, s4, fault);
  return {s.rotor_angle + h / 6.0 *
                              (k1.d_angle + 2.0 * k2.d_angle +
                               2.0 * k3.d_angle + k4.d_angle),
          s.speed_deviation + h / 6.0 *
                                  (k1.d_speed + 2.0 * k2.d_speed +
                                   2.0 * k3.d_speed + k4.d_speed)};
}

void check_state(const PlantState& s, double t) {
  if (!std::isfinite(s.rotor_angle) || !std::isfinite(s.speed_deviation) ||
      std::abs(s.speed_deviation) > kMaxSpeedDeviation) {
    throw SimulationDiverged(
        "machine lost synchronism at t = " + std::to_string(t) + " s", t);
  }
}

void record_sample(MultiSeries& out, const TerminalReading& r, bool faulted) {
  out.channels[0].values.push_back(r.active_power);
  out.channels[1].values.push_back(r.reactive_power);
  out.channels[2].values.push_back(r.voltage);
  out.channels[3].values.push_back(r.phase);
  out.channels[4].values.push_back(faulted ? 1.0 : 0.0);
}

int checked_samples(double duration, double dt, const char* what) {
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw InvalidArgument("duration must be positive and finite");
  }
  const double raw = duration / dt;
  const int n = static_cast<int>(std::lround(raw));
  if (n < 1 || std::abs(raw - n) > 1e-6) {
    throw InvalidArgument(std::string(what) +
                          " must be an integer number of steps");
  }
  return n;
}

}  // namespace

void PlantConfig::validate() const {
  positive_finite(inertia_h, "inertia_h");
  if (!(damping_d >= 0.0) || !std::isfinite(damping_d)) {
    throw InvalidArgument("damping_d must be nonnegative and finite");
  }
  positive_finite(transient_reactance_xd, "transient_reactance_xd");
  positive_finite(transformer_reactance_xt, "transformer_reactance_xt");
  positive_finite(line_reactance_1, "line_reactance_1");
  positive_finite(line_reactance_2, "line_reactance_2");
  positive_finite(infinite_bus_voltage, "infinite_bus_voltage");
  if (!(mechanical_power >= 0.0) || !std::isfinite(mechanical_power)) {
    throw InvalidArgument("mechanical_power must be nonnegative and finite");
  }
  positive_finite(internal_emf, "internal_emf");
  positive_finite(base_frequency, "base_frequency");
  positive_finite(fine_dt, "fine_dt");
  positive_finite(sample_dt, "sample_dt");
  const double ratio = sample_dt / fine_dt;
  if (std::abs(ratio - std::lround(ratio)) > 1e-9 || ratio < 1.0) {
    throw InvalidArgument("sample_dt must be an integer multiple of fine_dt");
  }
}

int PlantConfig::substeps() const {
  return static_cast<int>(std::lround(sample_dt / fine_dt));
}

NetworkSolution solve_network(const PlantConfig& config, double rotor_angle,
                              const std::optional<FaultParams>& fault) {
  using namespace std::complex_literals;
  const std::complex<double> emf = std::polar(config.internal_emf, rotor_angle);
  const std::complex<double> y_gen =
      1.0 / (1i * (config.transient_reactance_xd + config.transformer_reactance_xt));
  const std::complex<double> y_line = 1.0 / (1i * config.parallel_line_reactance());

  std::complex<double> y_total = y_gen + y_line;
  if (fault) {
    fault->validate();
    y_total += 1.0 / std::complex<double>(fault->resistance, fault->reactance);
  }
  // Junction voltage by nodal balance, then everything else follows.
  const std::complex<double> v_mid =
      (y_gen * emf + y_line * config.infinite_bus_voltage) / y_total;
  const std::complex<double> current = (emf - v_mid) * y_gen;
  const std::complex<double> v_term =
      emf - 1i * config.transient_reactance_xd * current;
  const std::complex<double> s_term = v_term * std::conj(current);

  NetworkSolution sol;
  sol.electrical_power = (emf * std::conj(current)).real();
  sol.terminal.active_power = s_term.real();
  sol.terminal.reactive_power = s_term.imag();
  sol.terminal.voltage = std::abs(v_term);
  sol.terminal.phase = std::arg(v_term);
  return sol;
}

PlantState solve_steady_state(const PlantConfig& config) {
  config.validate();
  const double x = config.total_reactance();
  const double pmax = config.internal_emf * config.infinite_bus_voltage / x;
  const double ratio = config.mechanical_power / pmax;
  if (ratio > 1.0) {
    throw NoEquilibrium("mechanical power exceeds the static transfer limit");
  }
  double delta = std::asin(ratio);
  // Two Newton polish steps against the full network solve, in case the
  // closed form and the nodal solution disagree in the last bits.
  for (int i = 0; i < 2; ++i) {
    const double pe = solve_network(config, delta, std::nullopt).electrical_power;
    const double dpe = pmax * std::cos(delta);
    if (dpe <= 0.0) break;
    delta -= (pe - config.mechanical_power) / dpe;
  }
  return {delta, 0.0};
}

MultiSeries simulate_schedule(const PlantConfig& config,
                              const FaultSchedule& schedule, double duration,
                              bool record_fine) {
  config.validate();
  const int n_samples = checked_samples(duration, config.sample_dt, "duration");
  const int n_sub = config.substeps();

  MultiSeries out =
      MultiSeries::with_labels(record_fine ? 1.0 / config.fine_dt
                                           : 1.0 / config.sample_dt,
                               {"P", "Q", "V", "phi", "fault"});

  PlantState state = solve_steady_state(config);
  record_sample(out, solve_network(config, state.rotor_angle, std::nullopt).terminal,
                false);

  for (int k = 1; k <= n_samples; ++k) {
    const std::optional<FaultParams> fault = schedule(k);
    for (int s = 0; s < n_sub; ++s) {
      state = rk4_step(config, state, config.fine_dt, fault);
      const double t =
          (static_cast<double>(k - 1) * n_sub + s + 1) * config.fine_dt;
      check_state(state, t);
      if (record_fine) {
        record_sample(out,
                      solve_network(config, state.rotor_angle, fault).terminal,
                      fault.has_value());
      }
    }
    if (!record_fine) {
      record_sample(out,
                    solve_network(config, state.rotor_angle, fault).terminal,
                    fault.has_value());
    }
  }
  out.validate();
  return out;
}

MultiSeries simulate(const PlantConfig& config,
                     const TelegraphParams& telegraph,
                     const FaultParams& base_fault, double duration, Rng& rng) {
  config.validate();
  telegraph.validate();
  base_fault.validate();
  const int n_samples = checked_samples(duration, config.sample_dt, "duration");
  const int n_sub = config.substeps();

  MultiSeries out = MultiSeries::with_labels(1.0 / config.sample_dt,
                                             {"P", "Q", "V", "phi", "fault"});

  PlantState state = solve_steady_state(config);
  record_sample(out, solve_network(config, state.rotor_angle, std::nullopt).terminal,
                false);

  TelegraphState tstate;  // starts clear with certainty
  FaultParams active = base_fault;
  for (int k = 1; k <= n_samples; ++k) {
    const FaultStatus prev = tstate.current;
    tstate = step(telegraph, tstate, config.sample_dt, rng);
    if (tstate.current == FaultStatus::Fault && prev == FaultStatus::Clear) {
      active = sample_fault_params(base_fault, rng, 0.1);
    }
    const bool faulted = tstate.current == FaultStatus::Fault;
    const std::optional<FaultParams> fault =
        faulted ? std::optional<FaultParams>(active) : std::nullopt;
    for (int s = 0; s < n_sub; ++s) {
      state = rk4_step(config, state, config.fine_dt, fault);
      const double t =
          (static_cast<double>(k - 1) * n_sub + s + 1) * config.fine_dt;
      check_state(state, t);
    }
    record_sample(out, solve_network(config, state.rotor_angle, fault).terminal,
                  faulted);
  }
  out.validate();
  return out;
}

PlantConfig randomize_plant(const PlantConfig& config, Rng& rng, double spread) {
  config.validate();
  if (!(spread >= 0.0) || !std::isfinite(spread)) {
    throw InvalidArgument("spread must be finite and nonnegative");
  }
  if (spread == 0.0) return config;
  for (int attempt = 0; attempt < 100; ++attempt) {
    PlantConfig c = config;
    c.inertia_h = rng.normal(config.inertia_h, spread * config.inertia_h);
    c.damping_d = rng.normal(config.damping_d, spread * config.damping_d);
    c.transient_reactance_xd =
        rng.normal(config.transient_reactance_xd,
                   spread * config.transient_reactance_xd);
    c.transformer_reactance_xt =
        rng.normal(config.transformer_reactance_xt,
                   spread * config.transformer_reactance_xt);
    c.line_reactance_1 =
        rng.normal(config.line_reactance_1, spread * config.line_reactance_1);
    c.line_reactance_2 =
        rng.normal(config.line_reactance_2, spread * config.line_reactance_2);
    try {
      c.validate();
      solve_steady_state(c);  // randomized plant must still have a dispatch
    } catch (const Error&) {
      continue;
    }
    return c;
  }
  throw RandomizationFailed("no valid plant after 100 redraws");
}

bool survives_fault(const PlantConfig& config, const FaultParams& fault,
                    double hold_seconds, double settle_seconds) {
  config.validate();
  fault.validate();
  const int hold =
      checked_samples(hold_seconds, config.sample_dt, "hold_seconds");
  const int settle =
      checked_samples(settle_seconds, config.sample_dt, "settle_seconds");
  const double duration = (hold + settle) * config.sample_dt;
  try {
    simulate_schedule(
        config,
        [&](int k) {
          return k <= hold ? std::optional<FaultParams>(fault) : std::nullopt;
        },
        duration);
  } catch (const SimulationDiverged&) {
    return false;
  }
  return true;
}

double calibrate_fault_reactance(const PlantConfig& config, double resistance,
                                 double hold_seconds) {
  config.validate();
  for (int i = 10; i >= 1; --i) {
    const double x = 0.1 * i;
    if (survives_fault(config, {resistance, x}, hold_seconds)) return x;
  }
  throw SimulationDiverged(
      "no reactance on the calibration grid keeps the machine in step", 0.0);
}

double find_survivable_resistance(const PlantConfig& config, double reactance,
                                  double r_start) {
  if (!(r_start > 0.0) || !std::isfinite(r_start)) {
    throw InvalidArgument("starting resistance must be positive and finite");
  }
  double r = r_start;
  while (r <= 1e3) {
    if (survives_fault(config, {r, reactance})) return r;
    r *= 10.0;
  }
  throw SimulationDiverged(
      "no survivable resistance found up to 1000 pu", 0.0);
}

}  // namespace genemu
