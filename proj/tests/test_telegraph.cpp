// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "genemu/rng.hpp"
#include "genemu/telegraph.hpp"

using namespace genemu;

namespace {
const TelegraphParams kDefaultRates{0.03, 0.02};
}

TEST_CASE("occupancy matches the closed form") {
  TelegraphState clear;  // starts clear with certainty

  // Independent oracle: p_f(t) = s + (p0 - s) e^{-(sum) t} with
  // s = 0.03 / 0.05 = 0.6.
  const auto at_10 = occupancy(kDefaultRates, clear, 10.0);
  const double expect = 0.6 * (1.0 - std::exp(-0.05 * 10.0));
  CHECK(at_10.prob_fault == doctest::Approx(expect).epsilon(1e-12));
  CHECK(at_10.prob_fault == doctest::Approx(0.2360816).epsilon(1e-6));

  // Long horizon forgets the initial condition.
  const auto far = occupancy(kDefaultRates, clear, 1e6);
  CHECK(far.prob_fault == doctest::Approx(0.6).epsilon(1e-12));

  // Zero elapsed time is the identity.
  const auto t0 = occupancy(kDefaultRates, clear, 0.0);
  CHECK(t0.prob_fault == 0.0);
  CHECK(t0.prob_clear == 1.0);
}

TEST_CASE("occupancy conserves probability for random parameter tuples") {
  Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    TelegraphParams p{0.001 + rng.uniform(), 0.001 + rng.uniform()};
    TelegraphState s;
    s.prob_fault = rng.uniform();
    s.prob_clear = 1.0 - s.prob_fault;
    const double t = rng.uniform() * 100.0;
    const auto next = occupancy(p, s, t);
    CHECK(next.prob_fault >= 0.0);
    CHECK(next.prob_fault <= 1.0);
    CHECK(next.prob_fault + next.prob_clear == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("occupancy solves the master equation") {
  // dp_f/dt = rate_to_fault * p_c - rate_to_clear * p_f, checked by a
  // centered finite difference at random points.
  Rng rng(77);
  for (int i = 0; i < 5; ++i) {
    TelegraphParams p{0.01 + 0.2 * rng.uniform(), 0.01 + 0.2 * rng.uniform()};
    TelegraphState s;
    s.prob_fault = rng.uniform();
    s.prob_clear = 1.0 - s.prob_fault;
    const double t = 0.5 + 20.0 * rng.uniform();
    const double h = 1e-5;
    const double fwd = occupancy(p, s, t + h).prob_fault;
    const double bwd = occupancy(p, s, t - h).prob_fault;
    const double deriv = (fwd - bwd) / (2.0 * h);
    const auto at_t = occupancy(p, s, t);
    const double expect =
        p.rate_to_fault * at_t.prob_clear - p.rate_to_clear * at_t.prob_fault;
    CHECK(deriv == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("absorbing fault state when the clear rate vanishes") {
  TelegraphParams p{0.05, 0.0};
  TelegraphState clear;
  const auto far = occupancy(p, clear, 1e5);
  CHECK(far.prob_fault == doctest::Approx(1.0).epsilon(1e-12));

  // Once the realized path enters the fault it never leaves.
  Rng rng(5);
  TelegraphState s;
  bool seen_fault = false;
  for (int i = 0; i < 2000; ++i) {
    s = step(p, s, 0.5, rng);
    if (seen_fault) CHECK(s.current == FaultStatus::Fault);
    seen_fault = seen_fault || s.current == FaultStatus::Fault;
  }
  CHECK(seen_fault);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(TelegraphParams({-0.1, 0.2}).validate(), InvalidArgument);
  CHECK_THROWS_AS(TelegraphParams({0.0, 0.0}).validate(), InvalidArgument);
  CHECK_NOTHROW(TelegraphParams({0.0, 0.1}).validate());
  TelegraphState bad;
  bad.prob_fault = 0.7;
  bad.prob_clear = 0.7;
  CHECK_THROWS_AS(occupancy(kDefaultRates, bad, 1.0), InvalidArgument);
  TelegraphState ok;
  Rng rng(1);
  CHECK_THROWS_AS(step(kDefaultRates, ok, 0.0, rng), InvalidArgument);
  CHECK_THROWS_AS(step(kDefaultRates, ok, -1.0, rng), InvalidArgument);
  CHECK_THROWS_AS(occupancy(kDefaultRates, ok, -1.0), InvalidArgument);
}

TEST_CASE("step agrees with the occupancy law over multiple intervals") {
  // Empirical distribution of many independent chains after j steps must
  // match occupancy(j * dt). 20000 chains leave ~0.01 Monte-Carlo noise.
  const double dt = 0.7;
  const int n_chains = 20000;
  const int n_steps = 8;
  Rng root(2024);
  std::vector<int> fault_counts(n_steps, 0);
  for (int c = 0; c < n_chains; ++c) {
    Rng rng = root.fork(static_cast<std::uint64_t>(c));
    TelegraphState s;
    for (int j = 0; j < n_steps; ++j) {
      s = step(kDefaultRates, s, dt, rng);
      fault_counts[j] += s.current == FaultStatus::Fault;
    }
  }
  TelegraphState clear;
  for (int j = 0; j < n_steps; ++j) {
    const double expect =
        occupancy(kDefaultRates, clear, dt * (j + 1)).prob_fault;
    const double got = fault_counts[j] / double(n_chains);
    const double sigma = std::sqrt(expect * (1.0 - expect) / n_chains);
    CHECK(std::abs(got - expect) < 4.0 * sigma + 1e-12);
  }
}

TEST_CASE("step advances the marginal occupancy fields") {
  Rng rng(9);
  TelegraphState s;
  const auto next = step(kDefaultRates, s, 2.0, rng);
  const auto expect = occupancy(kDefaultRates, s, 2.0);
  CHECK(next.prob_fault == expect.prob_fault);
  CHECK(next.prob_clear == expect.prob_clear);
}

TEST_CASE("sampled paths replay exactly under the same seed") {
  Rng a(31), b(31);
  TelegraphState sa, sb;
  for (int i = 0; i < 500; ++i) {
    sa = step(kDefaultRates, sa, 0.1, a);
    sb = step(kDefaultRates, sb, 0.1, b);
    CHECK(sa.current == sb.current);
  }
}

TEST_CASE("long-run fault occupancy approaches the stationary value") {
  CHECK(kDefaultRates.stationary_fault_probability() ==
        doctest::Approx(0.6).epsilon(1e-12));
  Rng rng(100);
  TelegraphState s;
  const int n = 2000000;
  long faults = 0;
  for (int i = 0; i < n; ++i) {
    s = step(kDefaultRates, s, 0.1, rng);
    faults += s.current == FaultStatus::Fault;
  }
  // The chain decorrelates over ~20 s (200 steps), so the effective sample
  // is n/400 and the band below sits at roughly three standard errors.
  CHECK(std::abs(faults / double(n) - 0.6) < 0.02);
}

TEST_CASE("fault parameter sampling") {
  Rng rng(8);
  const FaultParams base{0.01, 1.0};

  SUBCASE("zero spread returns the base unchanged") {
    const auto got = sample_fault_params(base, rng, 0.0);
    CHECK(got.resistance == base.resistance);
    CHECK(got.reactance == base.reactance);
  }

  SUBCASE("sample mean tracks the base value") {
    const int n = 10000;
    double racc = 0.0, xacc = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto got = sample_fault_params(base, rng, 0.1);
      CHECK(got.resistance > 0.0);
      racc += got.resistance;
      xacc += got.reactance;
    }
    // stddev of the mean is 0.001/100 = 1e-5; 0.0005 is a wide gate.
    CHECK(std::abs(racc / n - 0.01) < 0.0005);
    CHECK(std::abs(xacc / n - 1.0) < 0.005);
  }

  SUBCASE("resistance never drops below the floor") {
    const FaultParams tiny{2e-6, 0.0};
    for (int i = 0; i < 2000; ++i) {
      const auto got = sample_fault_params(tiny, rng, 2.0);
      CHECK(got.resistance >= kMinFaultResistance);
      CHECK(got.reactance == 0.0);  // nonnegative base stays nonnegative
    }
  }

  SUBCASE("invalid inputs are rejected") {
    CHECK_THROWS_AS(sample_fault_params({0.0, 0.0}, rng, 0.1), InvalidArgument);
    CHECK_THROWS_AS(sample_fault_params(base, rng, -0.5), InvalidArgument);
  }
}
