// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "genemu/plant.hpp"
#include "genemu/rng.hpp"

using namespace genemu;

namespace {

// Independent scalar-arithmetic oracle for the no-fault network: series
// reactance chain from internal EMF to the infinite bus.
TerminalReading prefault_oracle(const PlantConfig& c, double delta) {
  const double x = c.total_reactance();
  const double e_re = c.internal_emf * std::cos(delta);
  const double e_im = c.internal_emf * std::sin(delta);
  const double i_re = e_im / x;
  const double i_im = (c.infinite_bus_voltage - e_re) / x;
  const double v_re = e_re + c.transient_reactance_xd * i_im;
  const double v_im = e_im - c.transient_reactance_xd * i_re;
  TerminalReading r;
  r.active_power = v_re * i_re + v_im * i_im;
  r.reactive_power = v_im * i_re - v_re * i_im;
  r.voltage = std::hypot(v_re, v_im);
  r.phase = std::atan2(v_im, v_re);
  return r;
}

}  // namespace

TEST_CASE("steady state inverts the power-angle relation") {
  PlantConfig c;  // defaults: E'=1.2, Vbus=1.0, X_total=0.7, Pm=0.9

  SUBCASE("zero dispatch is quiescent") {
    c.mechanical_power = 0.0;
    const auto s = solve_steady_state(c);
    CHECK(s.rotor_angle == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.speed_deviation == 0.0);
  }

  SUBCASE("analytic angle for a round-number case") {
    c.transient_reactance_xd = 0.3;
    c.transformer_reactance_xt = 0.1;
    c.line_reactance_1 = 0.4;
    c.line_reactance_2 = 0.4;
    c.mechanical_power = 1.0;
    REQUIRE(c.total_reactance() == doctest::Approx(0.6).epsilon(1e-15));
    const auto s = solve_steady_state(c);
    CHECK(s.rotor_angle == doctest::Approx(std::asin(0.5)).epsilon(1e-10));
    CHECK(s.rotor_angle == doctest::Approx(0.5236).epsilon(1e-4));
  }

  SUBCASE("swing right-hand side vanishes at the equilibrium") {
    const auto s = solve_steady_state(c);
    const double pe =
        solve_network(c, s.rotor_angle, std::nullopt).electrical_power;
    CHECK(std::abs(c.mechanical_power - pe) < 1e-10);
  }

  SUBCASE("dispatch above the transfer limit is refused") {
    c.mechanical_power = 2.0;  // limit is 1.2/0.7 = 1.714
    CHECK_THROWS_AS(solve_steady_state(c), NoEquilibrium);
  }
}

TEST_CASE("terminal measurement matches the series-circuit oracle") {
  const PlantConfig c;
  const auto s = solve_steady_state(c);
  const auto got = solve_network(c, s.rotor_angle, std::nullopt).terminal;
  const auto want = prefault_oracle(c, s.rotor_angle);
  CHECK(got.active_power == doctest::Approx(want.active_power).epsilon(1e-12));
  CHECK(got.reactive_power ==
        doctest::Approx(want.reactive_power).epsilon(1e-12));
  CHECK(got.voltage == doctest::Approx(want.voltage).epsilon(1e-12));
  CHECK(got.phase == doctest::Approx(want.phase).epsilon(1e-12));
  // Lossless network: terminal P equals the dispatch.
  CHECK(got.active_power == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("no faults means the equilibrium persists") {
  const PlantConfig c;
  const TelegraphParams never{0.0, 0.1};  // clear state absorbing
  Rng rng(1);
  const auto out = simulate(c, never, {0.01, 1.0}, 100.0, rng);
  REQUIRE(out.length() == 1001);
  for (const auto& ch : out.channels) {
    for (double v : ch.values) {
      CHECK(std::abs(v - ch.values.front()) < 1e-9);
    }
  }
  CHECK(out.values("fault").back() == 0.0);
}

TEST_CASE("equilibrium drift over ten thousand samples stays tiny") {
  PlantConfig c;
  const auto schedule = [](int) { return std::optional<FaultParams>{}; };
  const auto out = simulate_schedule(c, schedule, 1000.0);
  REQUIRE(out.length() == 10001);
  for (const auto& ch : {"P", "Q", "V", "phi"}) {
    const auto& v = out.values(ch);
    double lo = v.front(), hi = v.front();
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    CHECK(hi - lo < 1e-8);
  }
}

TEST_CASE("paper-regime trajectory is bounded with visible fault response") {
  const PlantConfig c;
  const TelegraphParams rates{0.03, 0.02};
  Rng rng(42);
  const auto out = simulate(c, rates, {0.01, 1.0}, 600.0, rng);
  REQUIRE(out.length() == 6001);

  const double v_pre = out.values("V").front();
  const auto& fault = out.values("fault");
  const auto& volt = out.values("V");
  int fault_samples = 0;
  for (std::size_t k = 0; k < out.length(); ++k) {
    CHECK((fault[k] == 0.0 || fault[k] == 1.0));
    if (fault[k] == 1.0) {
      ++fault_samples;
      CHECK(volt[k] < v_pre);  // fault drags the terminal voltage down
    }
  }
  CHECK(fault_samples > 0);
  CHECK(fault_samples < static_cast<int>(out.length()));
}

TEST_CASE("post-fault recovery returns to the pre-fault equilibrium") {
  const PlantConfig c;
  const FaultParams fault{0.01, 1.0};
  const int hold = 50;  // 5 s of fault, then 30 s to settle
  const auto schedule = [&](int k) {
    return k <= hold ? std::optional<FaultParams>(fault) : std::nullopt;
  };
  const auto out = simulate_schedule(c, schedule, 35.0);
  for (const auto& ch : {"P", "Q", "V", "phi"}) {
    const auto& v = out.values(ch);
    CHECK(std::abs(v.back() - v.front()) < 1e-3);
  }
}

TEST_CASE("sampled outputs equal the fine grid at sample instants") {
  PlantConfig c;
  c.fine_dt = 1e-3;
  c.sample_dt = 0.1;
  const FaultParams fault{0.1, 0.5};
  const auto schedule = [&](int k) {
    return k >= 3 && k <= 20 ? std::optional<FaultParams>(fault) : std::nullopt;
  };
  const auto coarse = simulate_schedule(c, schedule, 4.0, false);
  const auto fine = simulate_schedule(c, schedule, 4.0, true);
  const int stride = c.substeps();
  REQUIRE(fine.length() == (coarse.length() - 1) * stride + 1);
  for (std::size_t ch = 0; ch < coarse.channels.size(); ++ch) {
    for (std::size_t k = 0; k < coarse.length(); ++k) {
      // No interpolation anywhere: bitwise equality.
      CHECK(coarse.channels[ch].values[k] ==
            fine.channels[ch].values[k * stride]);
    }
  }
}

TEST_CASE("integrator shows fourth-order convergence on a faulted run") {
  const FaultParams fault{0.1, 0.5};
  const auto schedule = [&](int k) {
    return k <= 20 ? std::optional<FaultParams>(fault) : std::nullopt;
  };
  auto run = [&](double dt) {
    PlantConfig c;
    c.fine_dt = dt;
    c.sample_dt = 0.1;
    return simulate_schedule(c, schedule, 5.0);
  };
  const auto ref = run(2.5e-4);
  auto err = [&](const MultiSeries& s) {
    double m = 0.0;
    for (const auto& ch : {"P", "phi"}) {
      const auto& a = s.values(ch);
      const auto& b = ref.values(ch);
      for (std::size_t k = 0; k < a.size(); ++k) {
        m = std::max(m, std::abs(a[k] - b[k]));
      }
    }
    return m;
  };
  const double e1 = err(run(2e-3));
  const double e2 = err(run(1e-3));
  REQUIRE(e1 > 0.0);
  REQUIRE(e2 > 0.0);
  const double ratio = e1 / e2;
  CHECK(ratio > 8.0);
  CHECK(ratio < 32.0);
}

TEST_CASE("bolted fault drives the machine out of step") {
  const PlantConfig c;
  const FaultParams bolted{1e-3, 0.0};
  const auto schedule = [&](int) { return std::optional<FaultParams>(bolted); };
  CHECK_THROWS_AS(simulate_schedule(c, schedule, 10.0), SimulationDiverged);
  try {
    simulate_schedule(c, schedule, 10.0);
  } catch (const SimulationDiverged& e) {
    CHECK(e.time_seconds > 0.0);
    CHECK(e.time_seconds <= 10.0);
  }
}

TEST_CASE("survivability boundaries on the default plant") {
  const PlantConfig c;
  CHECK(survives_fault(c, {10.0, 0.0}));
  CHECK(survives_fault(c, {0.1, 0.0}));
  CHECK_FALSE(survives_fault(c, {0.01, 0.0}));
  CHECK(find_survivable_resistance(c, 0.0, 0.01) == doctest::Approx(0.1));
}

TEST_CASE("fault reactance calibration returns the largest surviving X") {
  const PlantConfig c;
  const double x = calibrate_fault_reactance(c, 0.01);
  CHECK(x == doctest::Approx(1.0));
  CHECK(survives_fault(c, {0.01, x}));
}

TEST_CASE("plant randomization") {
  const PlantConfig base;
  Rng rng(55);

  SUBCASE("zero spread is the identity") {
    const auto same = randomize_plant(base, rng, 0.0);
    CHECK(same.inertia_h == base.inertia_h);
    CHECK(same.line_reactance_2 == base.line_reactance_2);
  }

  SUBCASE("inertia spread matches the requested ten percent") {
    const int n = 10000;
    double acc = 0.0, acc2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double h = randomize_plant(base, rng).inertia_h;
      acc += h;
      acc2 += h * h;
    }
    const double mean = acc / n;
    const double sd = std::sqrt(acc2 / n - mean * mean);
    CHECK(std::abs(mean - 3.5) < 0.02);
    CHECK(std::abs(sd - 0.35) < 0.02);
  }

  SUBCASE("every draw satisfies the config invariants and has a dispatch") {
    for (int i = 0; i < 200; ++i) {
      const auto c = randomize_plant(base, rng, 0.3);
      CHECK_NOTHROW(c.validate());
      CHECK_NOTHROW(solve_steady_state(c));
    }
  }

  SUBCASE("same seed gives the same plant") {
    Rng a(7), b(7);
    const auto ca = randomize_plant(base, a);
    const auto cb = randomize_plant(base, b);
    CHECK(ca.inertia_h == cb.inertia_h);
    CHECK(ca.transient_reactance_xd == cb.transient_reactance_xd);
    CHECK(ca.line_reactance_1 == cb.line_reactance_1);
  }
}

TEST_CASE("simulate replays bit-identically under a fixed seed") {
  const PlantConfig c;
  const TelegraphParams rates{0.03, 0.02};
  Rng a(2718), b(2718);
  const auto s1 = simulate(c, rates, {0.01, 1.0}, 60.0, a);
  const auto s2 = simulate(c, rates, {0.01, 1.0}, 60.0, b);
  REQUIRE(s1.length() == s2.length());
  for (std::size_t ch = 0; ch < s1.channels.size(); ++ch) {
    for (std::size_t k = 0; k < s1.length(); ++k) {
      CHECK(s1.channels[ch].values[k] == s2.channels[ch].values[k]);
    }
  }
}

TEST_CASE("config validation") {
  PlantConfig c;
  c.sample_dt = 0.0955;  // not a multiple of fine_dt
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = PlantConfig{};
  c.line_reactance_1 = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = PlantConfig{};
  c.inertia_h = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = PlantConfig{};
  CHECK_NOTHROW(c.validate());
  CHECK(c.substeps() == 100);
  CHECK(c.parallel_line_reactance() == doctest::Approx(0.25));
  CHECK(c.total_reactance() == doctest::Approx(0.7));
}
