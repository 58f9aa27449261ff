// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "genemu/metrics.hpp"
#include "genemu/rng.hpp"
#include "genemu/telegraph.hpp"

using namespace genemu;

namespace {

MultiSeries two_channel(const std::vector<double>& a,
                        const std::vector<double>& b) {
  MultiSeries s = MultiSeries::with_labels(10.0, {"x", "y"});
  s.channels[0].values = a;
  s.channels[1].values = b;
  return s;
}

}  // namespace

TEST_CASE("nrmse basic identities") {
  const auto x = two_channel({1.0, -2.0, 3.0}, {0.5, 0.25, -1.0});
  CHECK(nrmse(x, x) == 0.0);

  const auto zeros = two_channel({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0});
  CHECK(nrmse(x, zeros) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(nrmse(zeros, x), UndefinedNormalization);

  // Hand-computed value: truth (3,4), estimate (3,5) over one step.
  MultiSeries t = two_channel({3.0}, {4.0});
  MultiSeries e = two_channel({3.0}, {5.0});
  CHECK(nrmse(t, e) == doctest::Approx(1.0 / 5.0).epsilon(1e-15));
}

TEST_CASE("nrmse scale invariance") {
  Rng rng(4);
  std::vector<double> a(64), b(64), a2(64), b2(64);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    a2[i] = a[i] + 0.1 * rng.normal();
    b2[i] = b[i] + 0.1 * rng.normal();
  }
  const auto truth = two_channel(a, b);
  const auto est = two_channel(a2, b2);
  const double base = nrmse(truth, est);

  auto scale = [](std::vector<double> v) {
    for (double& x : v) x *= 7.5;
    return v;
  };
  const auto truth_s = two_channel(scale(a), scale(b));
  const auto est_s = two_channel(scale(a2), scale(b2));
  CHECK(nrmse(truth_s, est_s) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("literal nrmse differs from the energy-ratio form") {
  const auto t = two_channel({3.0, 1.0}, {4.0, 2.0});
  const auto e = two_channel({2.0, 1.5}, {4.0, 1.0});
  // energy ratio: sqrt((1+0+0.25+1)/(9+16+1+4)) = sqrt(2.25/30)
  CHECK(nrmse(t, e, false) == doctest::Approx(std::sqrt(2.25 / 30.0)));
  // literal: norms enter unsquared.
  const double err = std::sqrt(1.0) + std::sqrt(1.25);
  const double ref = 5.0 + std::sqrt(5.0);
  CHECK(nrmse(t, e, true) == doctest::Approx(std::sqrt(err) / std::sqrt(ref)));
  CHECK(nrmse(t, e, true) != doctest::Approx(nrmse(t, e, false)));
}

TEST_CASE("layout mismatches are rejected") {
  const auto a = two_channel({1.0, 2.0}, {3.0, 4.0});
  auto b = a;
  b.channels[1].label = "z";
  CHECK_THROWS_AS(nrmse(a, b), ShapeError);
  auto c = two_channel({1.0}, {3.0});
  CHECK_THROWS_AS(nrmse(a, c), ShapeError);
}

TEST_CASE("pearson matches hand values and affine invariance") {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0};
  const std::vector<double> y{2.0, 4.0, 6.0, 8.0, 10.0};
  CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-15));

  std::vector<double> yn{2.1, 3.8, 6.3, 7.9, 9.7};
  const double r = pearson(x, yn);
  CHECK(r > 0.99);
  CHECK(r < 1.0);

  // Affine maps on either argument leave r unchanged (up to sign).
  std::vector<double> xa(x.size()), yb(yn.size());
  for (std::size_t i = 0; i < x.size(); ++i) xa[i] = -3.0 * x[i] + 11.0;
  for (std::size_t i = 0; i < yn.size(); ++i) yb[i] = 0.5 * yn[i] - 2.0;
  CHECK(pearson(xa, yb) == doctest::Approx(-r).epsilon(1e-12));
  CHECK(std::abs(std::abs(pearson(xa, yb)) - r) < 1e-12);

  const std::vector<double> c{5.0, 5.0, 5.0, 5.0, 5.0};
  CHECK_THROWS_AS(pearson(x, c), ZeroVariance);
  CHECK_THROWS_AS(pearson(std::vector<double>{1.0}, std::vector<double>{2.0}),
                  TooShort);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("autocorrelation of white noise sits inside the band") {
  Rng rng(6);
  std::vector<double> x(20000);
  for (double& v : x) v = rng.normal();
  const auto r = autocorrelation(x, 20);
  CHECK(r[0] == 1.0);
  const double band = 3.0 / std::sqrt(double(x.size()));
  for (int k = 1; k <= 20; ++k) {
    CHECK(std::abs(r[static_cast<std::size_t>(k)]) < band);
  }
}

TEST_CASE("autocorrelation of an AR(1) follows the geometric law") {
  Rng rng(16);
  const double phi = 0.8;
  std::vector<double> x(60000);
  x[0] = rng.normal();
  for (std::size_t i = 1; i < x.size(); ++i) {
    x[i] = phi * x[i - 1] + rng.normal();
  }
  const auto r = autocorrelation(x, 8);
  for (int k = 1; k <= 8; ++k) {
    CHECK(r[static_cast<std::size_t>(k)] ==
          doctest::Approx(std::pow(phi, k)).epsilon(0.05));
  }
}

TEST_CASE("telegraph path autocorrelation decays with the rate sum") {
  // Envelope r_k = exp(-(sum of rates) k dt); here sum = 0.05 per second.
  const TelegraphParams rates{0.03, 0.02};
  Rng rng(1009);
  TelegraphState s;
  const int n = 400000;
  const double dt = 0.1;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) {
    s = step(rates, s, dt, rng);
    x[static_cast<std::size_t>(i)] =
        s.current == FaultStatus::Fault ? 1.0 : 0.0;
  }
  const auto r = autocorrelation(x, 120);
  for (int k : {10, 40, 80, 120}) {
    const double expect = std::exp(-0.05 * k * dt);
    CHECK(r[static_cast<std::size_t>(k)] ==
          doctest::Approx(expect).epsilon(0.12));
  }
}

TEST_CASE("summarize order statistics") {
  CHECK_THROWS_AS(summarize({}), EmptyInput);

  const auto one = summarize({2.5});
  CHECK(one.mean == 2.5);
  CHECK(one.median == 2.5);
  CHECK(one.p95 == 2.5);

  const auto s = summarize({4.0, 1.0, 3.0, 2.0});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  // h = 0.95 * 3 = 2.85 -> between sorted[2]=3 and sorted[3]=4.
  CHECK(s.p95 == doctest::Approx(3.85).epsilon(1e-12));
  CHECK(s.p95 >= s.median);
  CHECK(s.values == std::vector<double>{4.0, 1.0, 3.0, 2.0});

  // Percentile of 1000 uniforms lands near 0.95.
  Rng rng(12);
  std::vector<double> u(1000);
  for (double& v : u) v = rng.uniform();
  const auto us = summarize(u);
  CHECK(std::abs(us.p95 - 0.95) < 0.02);
  CHECK(us.p95 >= us.median);
}

TEST_CASE("regime sweep marks failing cells and keeps the rest") {
  const std::vector<double> levels{10.0, 1.0, 0.1};
  auto make_pair = [](double r) {
    if (r < 0.5) throw SimulationDiverged("lost synchronism", 1.0);
    MultiSeries m = MultiSeries::with_labels(10.0, {"x"});
    m.channels[0].values = {r, r, r};
    return std::make_pair(m, m);
  };
  auto fit_eval = [](const MultiSeries& train, const MultiSeries&) {
    return 1.0 / train.channels[0].values[0];
  };
  const auto grid = regime_sweep(levels, make_pair, fit_eval);
  CHECK(grid.row_labels.size() == 1);
  CHECK(grid.col_labels.size() == 3);
  CHECK(grid.cells[0][0].valid);
  CHECK(grid.cells[0][0].value == doctest::Approx(0.1));
  CHECK(grid.cells[0][1].valid);
  CHECK_FALSE(grid.cells[0][2].valid);
  CHECK(grid.cells[0][2].note.find("synchronism") != std::string::npos);

  // Single resistance gives a 1x1 grid.
  const auto tiny = regime_sweep({10.0}, make_pair, fit_eval);
  CHECK(tiny.cells.size() == 1);
  CHECK(tiny.cells[0].size() == 1);

  // A score of inf or nan (an exploding forecast) is a broken cell too.
  auto bad_eval = [](const MultiSeries& train, const MultiSeries&) {
    return train.channels[0].values[0] > 5.0
               ? std::numeric_limits<double>::quiet_NaN()
               : 0.25;
  };
  const auto mixed = regime_sweep({10.0, 1.0}, make_pair, bad_eval);
  CHECK_FALSE(mixed.cells[0][0].valid);
  CHECK(mixed.cells[0][0].note == "non-finite score");
  CHECK(mixed.cells[0][1].valid);
  CHECK(mixed.cells[0][1].value == doctest::Approx(0.25));
}

TEST_CASE("grid CSV round trip") {
  RegimeGrid g;
  g.row_labels = {"var"};
  g.col_labels = {"10", "1", "0.1"};
  g.cells = {{{0.0123, true, ""}, {0.5, true, ""}, {0.0, false, "diverged"}}};
  const auto path = std::filesystem::temp_directory_path() / "genemu_grid.csv";
  save_grid_csv(g, path);
  const auto back = load_grid_csv(path);
  CHECK(back.row_labels == g.row_labels);
  CHECK(back.col_labels == g.col_labels);
  CHECK(back.cells[0][0].valid);
  CHECK(back.cells[0][0].value == g.cells[0][0].value);
  CHECK(back.cells[0][1].value == g.cells[0][1].value);
  CHECK_FALSE(back.cells[0][2].valid);
  std::filesystem::remove(path);
}
