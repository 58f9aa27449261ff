// SPDX-License-Identifier: Apache-2.0
#include "genemu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "genemu/errors.hpp"

namespace genemu {

namespace {

void check_same_layout(const MultiSeries& a, const MultiSeries& b) {
  a.validate();
  b.validate();
  if (a.channels.size() != b.channels.size() || a.length() != b.length()) {
    throw ShapeError("series layouts differ");
  }
  for (std::size_t c = 0; c < a.channels.size(); ++c) {
    if (a.channels[c].label != b.channels[c].label) {
      throw ShapeError("channel labels differ: '" + a.channels[c].label +
                       "' vs '" + b.channels[c].label + "'");
    }
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double nrmse(const MultiSeries& truth, const MultiSeries& estimate,
             bool literal) {
  check_same_layout(truth, estimate);
  const std::size_t n = truth.length();
  if (n == 0) throw EmptyInput("nrmse of empty series");

  double err_acc = 0.0, ref_acc = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double err2 = 0.0, ref2 = 0.0;
    for (std::size_t c = 0; c < truth.channels.size(); ++c) {
      const double x = truth.channels[c].values[t];
      const double y = estimate.channels[c].values[t];
      err2 += (x - y) * (x - y);
      ref2 += x * x;
    }
    if (literal) {
      err_acc += std::sqrt(err2);
      ref_acc += std::sqrt(ref2);
    } else {
      err_acc += err2;
      ref_acc += ref2;
    }
  }
  if (ref_acc <= 0.0) {
    throw UndefinedNormalization("reference series is identically zero");
  }
  return std::sqrt(err_acc) / std::sqrt(ref_acc);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson inputs differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw TooShort("pearson needs at least two samples");

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw ZeroVariance("pearson of a constant sequence");
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
  if (max_lag < 0) throw InvalidArgument("max_lag must be nonnegative");
  if (x.size() < static_cast<std::size_t>(max_lag) + 2) {
    throw TooShort("series too short for requested autocorrelation lag");
  }
  std::vector<double> r(static_cast<std::size_t>(max_lag) + 1);
  r[0] = 1.0;
  for (int k = 1; k <= max_lag; ++k) {
    const std::size_t m = x.size() - static_cast<std::size_t>(k);
    r[static_cast<std::size_t>(k)] =
        pearson(x.subspan(0, m), x.subspan(static_cast<std::size_t>(k), m));
  }
  return r;
}

NrmseSummary summarize(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("summarize of empty batch");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("summarize: non-finite value");
  }
  NrmseSummary s;
  s.values = values;

  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(values.size());

  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  s.median = n % 2 == 1 ? sorted[n / 2]
                        : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  // Linear interpolation between closest ranks (the common "type 7" rule).
  const double h = 0.95 * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - std::floor(h);
  s.p95 = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  return s;
}

void RegimeGrid::validate() const {
  if (cells.size() != row_labels.size()) {
    throw ShapeError("grid row count does not match row labels");
  }
  for (const auto& row : cells) {
    if (row.size() != col_labels.size()) {
      throw ShapeError("grid is ragged");
    }
  }
}

RegimeGrid regime_sweep(
    const std::vector<double>& resistances,
    const std::function<std::pair<MultiSeries, MultiSeries>(double)>& make_pair,
    const std::function<double(const MultiSeries&, const MultiSeries&)>& fit_eval,
    const std::string& row_label) {
  if (resistances.empty()) throw EmptyInput("sweep needs at least one level");
  RegimeGrid grid;
  grid.row_labels = {row_label};
  grid.cells.resize(1);
  for (double r : resistances) {
    grid.col_labels.push_back(format_double(r));
    RegimeGrid::Cell cell;
    try {
      auto [train, test] = make_pair(r);
      cell.value = fit_eval(train, test);
      if (std::isfinite(cell.value)) {
        cell.valid = true;
      } else {
        // An exploding closed-loop forecast yields inf or nan; report the
        // cell as broken instead of a valid non-number.
        cell.value = 0.0;
        cell.note = "non-finite score";
      }
    } catch (const Error& e) {
      cell.note = e.what();
    }
    grid.cells[0].push_back(std::move(cell));
  }
  grid.validate();
  return grid;
}

void save_grid_csv(const RegimeGrid& grid, const std::filesystem::path& path) {
  grid.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "row";
  for (const auto& c : grid.col_labels) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < grid.row_labels.size(); ++r) {
    out << grid.row_labels[r];
    for (const auto& cell : grid.cells[r]) {
      out << ',';
      if (cell.valid) {
        out << format_double(cell.value);
      } else {
        out << "FAILED";
      }
    }
    out << '\n';
  }
  if (!out.good()) throw Error("write failed for '" + path.string() + "'");
}

RegimeGrid load_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  RegimeGrid grid;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> fields;
    while (std::getline(ss, cell, ',')) fields.push_back(cell);
    if (line.back() == ',') fields.push_back("");
    if (line_no == 1) {
      if (fields.empty()) throw ParseError("empty header", line_no);
      grid.col_labels.assign(fields.begin() + 1, fields.end());
      continue;
    }
    if (fields.size() != grid.col_labels.size() + 1) {
      throw ParseError("row has wrong number of cells", line_no);
    }
    grid.row_labels.push_back(fields[0]);
    std::vector<RegimeGrid::Cell> row;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      RegimeGrid::Cell c;
      if (fields[i] != "FAILED") {
        try {
          c.value = std::stod(fields[i]);
        } catch (const std::exception&) {
          throw ParseError("bad cell value '" + fields[i] + "'", line_no);
        }
        c.valid = true;
      }
      row.push_back(c);
    }
    grid.cells.push_back(std::move(row));
  }
  if (grid.col_labels.empty()) throw ParseError("missing header", 1);
  grid.validate();
  return grid;
}

}  // namespace genemu
