// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genemu/series.hpp"

namespace genemu {

/// Normalized RMS error between two series with identical layout, returned
/// as a fraction (multiply by 100 to report percent).
///
/// Default convention: sqrt(sum ||x_t - y_t||^2 / sum ||x_t||^2), i.e. the
/// ratio of total error energy to total signal energy. With `literal` set,
/// the per-step Euclidean norms enter the time averages unsquared:
/// sqrt(mean_t ||x_t - y_t||) / sqrt(mean_t ||x_t||).
double nrmse(const MultiSeries& truth, const MultiSeries& estimate,
             bool literal = false);

/// Sample Pearson correlation. Throws ZeroVariance on constant input.
double pearson(std::span<const double> x, std::span<const double> y);

/// Autocorrelation r_0..r_max_lag of one channel; r_0 is exactly 1.
std::vector<double> autocorrelation(std::span<const double> x, int max_lag);

/// Order statistics of a batch of per-trajectory scores.
struct NrmseSummary {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  std::vector<double> values;  // input order preserved
};

NrmseSummary summarize(std::vector<double> values);

/// Rectangular result grid for parameter sweeps. Cells that failed to
/// simulate or fit stay marked instead of poisoning the rest of the grid.
struct RegimeGrid {
  struct Cell {
    double value = 0.0;
    bool valid = false;
    std::string note;  // failure reason when !valid
  };
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<Cell>> cells;  // [row][col]

  void validate() const;
};

/// Evaluate one model recipe across fault resistance levels. `make_pair`
/// produces a (train, test) trajectory pair for a resistance; `fit_eval`
/// fits on the first and returns the NRMSE fraction on the second. Any
/// library error inside a cell marks that cell failed and moves on.
RegimeGrid regime_sweep(
    const std::vector<double>& resistances,
    const std::function<std::pair<MultiSeries, MultiSeries>(double)>& make_pair,
    const std::function<double(const MultiSeries&, const MultiSeries&)>& fit_eval,
    const std::string& row_label = "nrmse");

void save_grid_csv(const RegimeGrid& grid, const std::filesystem::path& path);
RegimeGrid load_grid_csv(const std::filesystem::path& path);

}  // namespace genemu
