// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "genemu/dataset.hpp"

namespace genemu {

/// Vector autoregression with exogenous inputs:
///   y_t = mu + sum_i A_i y_{t-i} + sum_i B_i x_{t-i} + e_t,  i = 1..p.
/// Estimated by equation-wise ordinary least squares on stacked lags.
struct VarxModel {
  int order = 0;
  Eigen::VectorXd intercept;                  // out
  std::vector<Eigen::MatrixXd> endo_coeffs;   // p matrices, out x out
  std::vector<Eigen::MatrixXd> exo_coeffs;    // p matrices, out x in
  Eigen::MatrixXd noise_cov;                  // out x out, MLE residual cov
  double fit_loglik = 0.0;                    // Gaussian log-likelihood
  long n_eff = 0;                             // stacked regression rows

  int output_dim() const { return static_cast<int>(intercept.size()); }
  int input_dim() const {
    return exo_coeffs.empty() ? 0 : static_cast<int>(exo_coeffs[0].cols());
  }
  /// Regressors per scalar equation: intercept + p lags of each block.
  int regressors_per_equation() const {
    return 1 + order * (output_dim() + input_dim());
  }
  /// Total estimated coefficients (noise_cov excluded).
  int param_count() const {
    return output_dim() * regressors_per_equation();
  }

  void validate() const;
};

VarxModel fit_varx(const SampleSet& train, int order);

/// Restricted variant sharing one scalar between the endogenous and
/// exogenous blocks: y_t = mu + sum_i A_i (y_{t-i} + beta x_{t-i}).
/// Estimated by alternating least squares.
struct RestrictedVarx {
  VarxModel model;  // exo_coeffs hold beta * A_i
  double beta = 0.0;
  int iterations = 0;
};
RestrictedVarx fit_varx_restricted(const SampleSet& train, int order,
                                   int max_iterations = 50);

/// Recursive forecast from the end of `history.outputs`. Exogenous inputs
/// are teacher-forced: history.inputs must extend `horizon` steps past the
/// output history (its extra tail is the future input trajectory).
MultiSeries predict(const VarxModel& model, const Dataset& history,
                    int horizon);

/// One-step-ahead fitted values over a dataset (true lags on both blocks).
/// Row t of the result predicts outputs[t] for t >= order.
MultiSeries one_step_predictions(const VarxModel& model, const Dataset& data);

double aic(const VarxModel& model);
double bic(const VarxModel& model);
double hqic(const VarxModel& model);
double fpe(const VarxModel& model);

enum class OrderCriterion { Aic, Bic, Hqic, Fpe };

/// Scan p in [1, p_max], scoring every candidate on the common sample that
/// conditions on the first p_max observations of each trajectory, so the
/// likelihoods are comparable across orders. Ties break toward smaller p.
int select_order_ic(const SampleSet& train, int p_max, OrderCriterion criterion);
int select_order_ic(const SampleSet& train, int p_max,
                    const std::function<double(const VarxModel&)>& score);

/// One row of an order scan: every criterion evaluated for one candidate
/// order. Criteria that are undefined for a candidate, or candidates that
/// fail to fit at all, are NaN so the curve keeps one row per order.
struct OrderScanRow {
  int order = 0;
  double aic = 0.0;
  double bic = 0.0;
  double hqic = 0.0;
  double fpe = 0.0;
};

/// The full criterion-versus-order curves behind select_order_ic, on the
/// same common sample. Returns exactly p_max rows for p = 1..p_max.
std::vector<OrderScanRow> scan_orders(const SampleSet& train, int p_max);

/// Coefficient-decay rule: fit once at p_max, find the first adjacent pair
/// with ||A_i - A_{i-1}||_F < epsilon * ||A_1||_F and return i - 1 (floored
/// at 2); p_max when no pair saturates.
int select_order_decay(const SampleSet& train, int p_max, double epsilon = 0.3);

/// Cross-lag dependence probe for a channel pair. C[i][j] holds the Pearson
/// correlation of a delayed by i steps against b delayed by j steps;
/// entries insignificant at the 3/sqrt(N) level are zeroed, the matrix is
/// inverted through a truncated SVD pseudo-inverse, and the top-row strip
/// of the inverse is read for its last significant lag.
struct LagDiagnostic {
  std::string label_a;
  std::string label_b;
  Eigen::MatrixXd corr;          // (L+1) x (L+1)
  Eigen::MatrixXd inverse_corr;  // (L+1) x (L+1)
  double zero_threshold = 0.05;
  int detected_lag = 0;          // in [0, L]
  bool regularized = false;      // true when the SVD dropped directions
};

LagDiagnostic lag_diagnostic(std::span<const double> a,
                             std::span<const double> b, int max_lag,
                             double zero_threshold = 0.05);

/// Model persistence: JSON with row-major matrices plus caller-supplied
/// transform metadata (returned verbatim by load).
void save_varx(const VarxModel& model, const std::filesystem::path& path,
               const std::string& transform_metadata_json = "{}");
std::pair<VarxModel, std::string> load_varx(const std::filesystem::path& path);

}  // namespace genemu
