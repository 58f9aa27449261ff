// SPDX-License-Identifier: Apache-2.0
#include "genemu/telegraph.hpp"

#include <algorithm>
#include <cmath>

namespace genemu {

void TelegraphParams::validate() const {
  if (!(rate_to_fault >= 0.0) || !std::isfinite(rate_to_fault) ||
      !(rate_to_clear >= 0.0) || !std::isfinite(rate_to_clear)) {
    throw InvalidArgument("telegraph rates must be finite and nonnegative");
  }
  if (rate_to_fault + rate_to_clear <= 0.0) {
    throw InvalidArgument("at least one telegraph rate must be positive");
  }
}

void TelegraphState::validate() const {
  if (!(prob_fault >= 0.0 && prob_fault <= 1.0) ||
      !(prob_clear >= 0.0 && prob_clear <= 1.0)) {
    throw InvalidArgument("occupancy probabilities must lie in [0, 1]");
  }
  if (std::abs(prob_fault + prob_clear - 1.0) > 1e-9) {
    throw InvalidArgument("occupancy probabilities must sum to one");
  }
}

TelegraphState occupancy(const TelegraphParams& params,
                         const TelegraphState& initial, double t) {
  params.validate();
  initial.validate();
  if (!(t >= 0.0) || !std::isfinite(t)) {
    throw InvalidArgument("occupancy time must be finite and nonnegative");
  }
  const double total = params.rate_to_fault + params.rate_to_clear;
  const double stationary = params.rate_to_fault / total;
  const double decay = std::exp(-total * t);
  double pf = stationary + (initial.prob_fault - stationary) * decay;
  pf = std::clamp(pf, 0.0, 1.0);
  return {pf, 1.0 - pf, initial.current};
}

TelegraphState step(const TelegraphParams& params, const TelegraphState& state,
                    double dt, Rng& rng) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw InvalidArgument("step interval must be positive and finite");
  }
  // Conditional transition law given the realized state.
  TelegraphState conditional;
  conditional.prob_fault = state.current == FaultStatus::Fault ? 1.0 : 0.0;
  conditional.prob_clear = 1.0 - conditional.prob_fault;
  conditional.current = state.current;
  const double p_fault = occupancy(params, conditional, dt).prob_fault;

  TelegraphState next = occupancy(params, state, dt);
  next.current = rng.bernoulli(p_fault) ? FaultStatus::Fault : FaultStatus::Clear;
  return next;
}

void FaultParams::validate() const {
  if (!(resistance > 0.0) || !std::isfinite(resistance)) {
    throw InvalidArgument("fault resistance must be positive and finite");
  }
  if (!std::isfinite(reactance)) {
    throw InvalidArgument("fault reactance must be finite");
  }
}

FaultParams sample_fault_params(const FaultParams& base, Rng& rng,
                                double spread) {
  base.validate();
  if (!(spread >= 0.0) || !std::isfinite(spread)) {
    throw InvalidArgument("spread must be finite and nonnegative");
  }
  if (spread == 0.0) return base;
  FaultParams out;
  out.resistance = rng.normal(base.resistance, spread * base.resistance);
  out.resistance = std::max(out.resistance, kMinFaultResistance);
  out.reactance = rng.normal(base.reactance, spread * std::abs(base.reactance));
  if (base.reactance >= 0.0) out.reactance = std::max(out.reactance, 0.0);
  out.validate();
  return out;
}

}  // namespace genemu
