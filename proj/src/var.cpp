// SPDX-License-Identifier: Apache-2.0
#include "genemu/var.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "genemu/errors.hpp"
#include "genemu/metrics.hpp"

namespace genemu {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Blocks {
  int d = 0;  // output dim
  int q = 0;  // input dim
};

Blocks block_dims(const SampleSet& train) {
  train.validate();
  const auto& first = train.items.front();
  return {static_cast<int>(first.outputs.channels.size()),
          static_cast<int>(first.inputs.channels.size())};
}

// Regressor column layout for order p scans embedded in a p_ref fit:
// [intercept | endo lags 1..p | exo lags 1..p], with the endo block of the
// embedding laid out first. For p == p_ref this is the plain layout.
std::vector<int> column_subset(int p, int p_ref, const Blocks& b) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(1 + p * (b.d + b.q)));
  idx.push_back(0);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < b.d; ++j) idx.push_back(1 + i * b.d + j);
  }
  const int exo_base = 1 + p_ref * b.d;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < b.q; ++j) idx.push_back(exo_base + i * b.q + j);
  }
  return idx;
}

// Stack one trajectory's regressors (order p, rows starting at start_t) and
// targets into dense matrices.
void build_design(const Dataset& traj, int p, int start_t, const Blocks& b,
                  MatrixXd& x, MatrixXd& y) {
  const long t_len = static_cast<long>(traj.outputs.length());
  const long rows = t_len - start_t;
  const int m = 1 + p * (b.d + b.q);
  x.resize(rows, m);
  y.resize(rows, b.d);
  for (long r = 0; r < rows; ++r) {
    const long t = start_t + r;
    x(r, 0) = 1.0;
    for (int i = 1; i <= p; ++i) {
      for (int j = 0; j < b.d; ++j) {
        x(r, 1 + (i - 1) * b.d + j) = traj.outputs.channels[j].values[t - i];
      }
      for (int j = 0; j < b.q; ++j) {
        x(r, 1 + p * b.d + (i - 1) * b.q + j) =
            traj.inputs.channels[j].values[t - i];
      }
    }
    for (int j = 0; j < b.d; ++j) {
      y(r, j) = traj.outputs.channels[j].values[t];
    }
  }
}

void check_identifiable(const SampleSet& train, int p, const Blocks& b) {
  for (const auto& traj : train.items) {
    const long t_len = static_cast<long>(traj.outputs.length());
    if (t_len <= static_cast<long>(p) + static_cast<long>(b.d) * p) {
      throw IdentifiabilityError(
          "trajectory of length " + std::to_string(t_len) +
          " too short for order " + std::to_string(p));
    }
  }
}

// Gram accumulation over all trajectories with rows starting at start_t.
struct Normal {
  MatrixXd g;   // X'X
  MatrixXd h;   // X'Y
  long rows = 0;
};

Normal accumulate_normal(const SampleSet& train, int p, int start_t,
                         const Blocks& b) {
  const int m = 1 + p * (b.d + b.q);
  Normal n;
  n.g = MatrixXd::Zero(m, m);
  n.h = MatrixXd::Zero(m, b.d);
  MatrixXd x, y;
  for (const auto& traj : train.items) {
    build_design(traj, p, start_t, b, x, y);
    n.g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    n.h.noalias() += x.transpose() * y;
    n.rows += x.rows();
  }
  n.g.triangularView<Eigen::Upper>() = n.g.transpose();
  return n;
}

// Solve the normal equations, guarding against rank deficiency.
MatrixXd solve_normal(const MatrixXd& g, const MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  if (es.info() != Eigen::Success) {
    throw SingularDesign("eigendecomposition of the Gram matrix failed");
  }
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || lo < 1e-12 * hi) {
    throw SingularDesign("regressor matrix is rank deficient");
  }
  return g.ldlt().solve(h);
}

double log_det_spd(const MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(s);
  double acc = 0.0;
  for (long i = 0; i < es.eigenvalues().size(); ++i) {
    acc += std::log(std::max(es.eigenvalues()[i], 1e-300));
  }
  return acc;
}

// Residual covariance and Gaussian log-likelihood via an explicit second
// pass; the textbook identity from the Gram blocks cancels catastrophically
// when the fit is near exact.
struct FitStats {
  MatrixXd sigma;
  double loglik = 0.0;
};

FitStats residual_stats(const SampleSet& train, int p, int start_t,
                        const Blocks& b, const MatrixXd& coeffs, long rows) {
  MatrixXd ee = MatrixXd::Zero(b.d, b.d);
  MatrixXd x, y;
  for (const auto& traj : train.items) {
    build_design(traj, p, start_t, b, x, y);
    const MatrixXd e = y - x * coeffs;
    ee.noalias() += e.transpose() * e;
  }
  FitStats st;
  st.sigma = ee / static_cast<double>(rows);
  const double n = static_cast<double>(rows);
  const double d = static_cast<double>(b.d);
  st.loglik = -0.5 * n *
              (d * std::log(2.0 * std::numbers::pi) + log_det_spd(st.sigma) + d);
  return st;
}

VarxModel unpack_model(const MatrixXd& coeffs, int p, const Blocks& b,
                       const FitStats& st, long rows) {
  VarxModel m;
  m.order = p;
  m.intercept = coeffs.row(0).transpose();
  for (int i = 0; i < p; ++i) {
    m.endo_coeffs.push_back(coeffs.middleRows(1 + i * b.d, b.d).transpose());
  }
  for (int i = 0; i < p; ++i) {
    m.exo_coeffs.push_back(
        coeffs.middleRows(1 + p * b.d + i * b.q, b.q).transpose());
  }
  m.noise_cov = st.sigma;
  m.fit_loglik = st.loglik;
  m.n_eff = rows;
  m.validate();
  return m;
}

void require_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw InvalidArgument(std::string(what) + " not finite");
}

}  // namespace

void VarxModel::validate() const {
  if (order < 1) throw InvalidArgument("model order must be at least 1");
  if (static_cast<int>(endo_coeffs.size()) != order ||
      static_cast<int>(exo_coeffs.size()) != order) {
    throw ShapeError("coefficient block count does not equal the order");
  }
  require_finite(intercept, "intercept");
  const int d = output_dim();
  for (const auto& a : endo_coeffs) {
    if (a.rows() != d || a.cols() != d) throw ShapeError("bad endo block shape");
    require_finite(a, "endo coefficients");
  }
  for (const auto& bm : exo_coeffs) {
    if (bm.rows() != d) throw ShapeError("bad exo block shape");
    require_finite(bm, "exo coefficients");
  }
  if (noise_cov.rows() != d || noise_cov.cols() != d) {
    throw ShapeError("noise covariance shape mismatch");
  }
  require_finite(noise_cov, "noise covariance");
  if (!noise_cov.isApprox(noise_cov.transpose(), 1e-9)) {
    throw InvalidArgument("noise covariance must be symmetric");
  }
}

VarxModel fit_varx(const SampleSet& train, int order) {
  if (order < 1) throw InvalidArgument("order must be at least 1");
  const Blocks b = block_dims(train);
  check_identifiable(train, order, b);
  const Normal n = accumulate_normal(train, order, order, b);
  const MatrixXd coeffs = solve_normal(n.g, n.h);
  const FitStats st = residual_stats(train, order, order, b, coeffs, n.rows);
  return unpack_model(coeffs, order, b, st, n.rows);
}

RestrictedVarx fit_varx_restricted(const SampleSet& train, int order,
                                   int max_iterations) {
  if (order < 1) throw InvalidArgument("order must be at least 1");
  if (max_iterations < 1) throw InvalidArgument("need at least one iteration");
  const Blocks b = block_dims(train);
  if (b.q != b.d) {
    throw ShapeError("shared-scale fit needs matching input/output dims");
  }
  check_identifiable(train, order, b);

  // Alternate between (mu, A_i) given beta and beta given (mu, A_i); each
  // half step is a least-squares solve of the residual objective.
  double beta = 0.0;
  MatrixXd coeffs;  // layout: [mu; A blocks] against composite regressors
  const int m = 1 + order * b.d;
  int iter = 0;
  double prev_obj = std::numeric_limits<double>::infinity();
  for (iter = 1; iter <= max_iterations; ++iter) {
    // Composite regressors z_{t-i} = y_{t-i} + beta x_{t-i}.
    MatrixXd g = MatrixXd::Zero(m, m);
    MatrixXd h = MatrixXd::Zero(m, b.d);
    MatrixXd x, y;
    long rows = 0;
    for (const auto& traj : train.items) {
      build_design(traj, order, order, b, x, y);
      MatrixXd z(x.rows(), m);
      z.col(0) = x.col(0);
      for (int i = 0; i < order; ++i) {
        z.middleCols(1 + i * b.d, b.d) =
            x.middleCols(1 + i * b.d, b.d) +
            beta * x.middleCols(1 + order * b.d + i * b.q, b.q);
      }
      g.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose());
      h.noalias() += z.transpose() * y;
      rows += z.rows();
    }
    g.triangularView<Eigen::Upper>() = g.transpose();
    coeffs = solve_normal(g, h);

    // beta step: regress remaining residual on the A-weighted input lags.
    double num = 0.0, den = 0.0, obj = 0.0;
    for (const auto& traj : train.items) {
      build_design(traj, order, order, b, x, y);
      MatrixXd base = MatrixXd::Zero(x.rows(), b.d);
      MatrixXd slope = MatrixXd::Zero(x.rows(), b.d);
      base.rowwise() += coeffs.row(0);
      for (int i = 0; i < order; ++i) {
        const auto a_i = coeffs.middleRows(1 + i * b.d, b.d);
        base.noalias() += x.middleCols(1 + i * b.d, b.d) * a_i;
        slope.noalias() +=
            x.middleCols(1 + order * b.d + i * b.q, b.q) * a_i;
      }
      const MatrixXd resid = y - base;
      num += (resid.array() * slope.array()).sum();
      den += (slope.array() * slope.array()).sum();
      obj += (resid - beta * slope).squaredNorm();
    }
    if (den > 0.0) beta = num / den;
    if (std::abs(prev_obj - obj) < 1e-12 * (1.0 + std::abs(obj))) break;
    prev_obj = obj;
  }

  // Package as an unrestricted-form model with B_i = beta * A_i.
  const int m_full = 1 + order * (b.d + b.q);
  MatrixXd full = MatrixXd::Zero(m_full, b.d);
  full.row(0) = coeffs.row(0);
  for (int i = 0; i < order; ++i) {
    full.middleRows(1 + i * b.d, b.d) = coeffs.middleRows(1 + i * b.d, b.d);
    full.middleRows(1 + order * b.d + i * b.q, b.q) =
        beta * coeffs.middleRows(1 + i * b.d, b.d);
  }
  const Normal n = accumulate_normal(train, order, order, b);
  const FitStats st = residual_stats(train, order, order, b, full, n.rows);
  RestrictedVarx out;
  out.model = unpack_model(full, order, b, st, n.rows);
  out.beta = beta;
  out.iterations = iter;
  return out;
}

MultiSeries predict(const VarxModel& model, const Dataset& history,
                    int horizon) {
  model.validate();
  if (horizon < 0) throw InvalidArgument("horizon must be nonnegative");
  history.inputs.validate();
  history.outputs.validate();
  const int p = model.order;
  const int d = model.output_dim();
  const int q = model.input_dim();
  const long out_len = static_cast<long>(history.outputs.length());
  if (out_len < p) {
    throw InsufficientHistory("history shorter than the model order");
  }
  if (static_cast<int>(history.outputs.channels.size()) != d) {
    throw ShapeError("history output channels do not match the model");
  }
  if (q > 0) {
    if (static_cast<int>(history.inputs.channels.size()) != q) {
      throw ShapeError("history input channels do not match the model");
    }
    if (static_cast<long>(history.inputs.length()) < out_len + horizon) {
      throw ShapeError(
          "inputs must extend `horizon` steps past the output history "
          "(teacher-forced exogenous lags)");
    }
  }

  MultiSeries fc;
  fc.sample_rate = history.outputs.sample_rate;
  for (const auto& c : history.outputs.channels) fc.channels.push_back({c.label, {}});

  // Rolling endogenous buffer seeded with the last p history rows.
  std::vector<VectorXd> recent;
  for (long t = out_len - p; t < out_len; ++t) {
    VectorXd y(d);
    for (int j = 0; j < d; ++j) y[j] = history.outputs.channels[j].values[t];
    recent.push_back(y);
  }
  for (int h = 0; h < horizon; ++h) {
    const long t = out_len + h;  // global index of the forecast row
    VectorXd y = model.intercept;
    for (int i = 1; i <= p; ++i) {
      y.noalias() += model.endo_coeffs[i - 1] * recent[recent.size() - i];
      if (q > 0) {
        VectorXd x(q);
        for (int j = 0; j < q; ++j) {
          x[j] = history.inputs.channels[j].values[t - i];
        }
        y.noalias() += model.exo_coeffs[i - 1] * x;
      }
    }
    for (int j = 0; j < d; ++j) fc.channels[j].values.push_back(y[j]);
    recent.push_back(y);
    recent.erase(recent.begin());
  }
  fc.validate();
  return fc;
}

MultiSeries one_step_predictions(const VarxModel& model, const Dataset& data) {
  model.validate();
  data.validate();
  const Blocks b{model.output_dim(), model.input_dim()};
  if (static_cast<int>(data.outputs.channels.size()) != b.d ||
      static_cast<int>(data.inputs.channels.size()) != b.q) {
    throw ShapeError("dataset channels do not match the model");
  }
  const int p = model.order;
  if (static_cast<long>(data.outputs.length()) <= p) {
    throw InsufficientHistory("dataset shorter than the model order");
  }
  MatrixXd x, y;
  build_design(data, p, p, b, x, y);
  const int m = 1 + p * (b.d + b.q);
  MatrixXd coeffs(m, b.d);
  coeffs.row(0) = model.intercept.transpose();
  for (int i = 0; i < p; ++i) {
    coeffs.middleRows(1 + i * b.d, b.d) = model.endo_coeffs[i].transpose();
    coeffs.middleRows(1 + p * b.d + i * b.q, b.q) =
        model.exo_coeffs[i].transpose();
  }
  const MatrixXd pred = x * coeffs;
  MultiSeries out;
  out.sample_rate = data.outputs.sample_rate;
  for (int j = 0; j < b.d; ++j) {
    Channel c;
    c.label = data.outputs.channels[j].label;
    c.values.assign(pred.col(j).data(), pred.col(j).data() + pred.rows());
    out.channels.push_back(std::move(c));
  }
  out.validate();
  return out;
}

double aic(const VarxModel& model) {
  return 2.0 * model.param_count() - 2.0 * model.fit_loglik;
}

double bic(const VarxModel& model) {
  if (model.n_eff < 1) throw UndefinedCriterion("no effective sample");
  return model.param_count() * std::log(static_cast<double>(model.n_eff)) -
         2.0 * model.fit_loglik;
}

double hqic(const VarxModel& model) {
  if (model.n_eff < 3) throw UndefinedCriterion("sample too small for HQIC");
  return 2.0 * model.param_count() *
             std::log(std::log(static_cast<double>(model.n_eff))) -
         2.0 * model.fit_loglik;
}

double fpe(const VarxModel& model) {
  const double n = static_cast<double>(model.n_eff);
  const double m = model.regressors_per_equation();
  if (n <= m) {
    throw UndefinedCriterion("FPE undefined: sample not larger than regressors");
  }
  const double d = model.output_dim();
  return model.noise_cov.determinant() * std::pow((n + m) / (n - m), d);
}

namespace {

// Fit the order-p candidate on the common sample that conditions on the
// first p_max rows of each trajectory; without a shared sample the
// likelihoods are not comparable across orders.
VarxModel fit_candidate(const SampleSet& train, const Normal& full, int p,
                        int p_max, const Blocks& b) {
  const auto idx = column_subset(p, p_max, b);
  const MatrixXd g = full.g(idx, idx);
  const MatrixXd h = full.h(idx, Eigen::all);
  const MatrixXd coeffs_sub = solve_normal(g, h);

  // Re-expand to the plain order-p layout for the residual pass.
  MatrixXd x, y;
  MatrixXd ee = MatrixXd::Zero(b.d, b.d);
  long rows = 0;
  for (const auto& traj : train.items) {
    build_design(traj, p, p_max, b, x, y);
    const MatrixXd e = y - x * coeffs_sub;
    ee.noalias() += e.transpose() * e;
    rows += x.rows();
  }
  FitStats st;
  st.sigma = ee / static_cast<double>(rows);
  const double n = static_cast<double>(rows);
  st.loglik = -0.5 * n *
              (b.d * std::log(2.0 * std::numbers::pi) + log_det_spd(st.sigma) +
               b.d);

  return unpack_model(coeffs_sub, p, b, st, full.rows);
}

}  // namespace

int select_order_ic(const SampleSet& train, int p_max,
                    const std::function<double(const VarxModel&)>& score) {
  if (p_max < 1) throw InvalidArgument("p_max must be at least 1");
  const Blocks b = block_dims(train);
  check_identifiable(train, p_max, b);
  const Normal full = accumulate_normal(train, p_max, p_max, b);

  int best_p = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int p = 1; p <= p_max; ++p) {
    try {
      const VarxModel cand = fit_candidate(train, full, p, p_max, b);
      const double v = score(cand);
      if (std::isfinite(v) && v < best) {
        best = v;
        best_p = p;
      }
    } catch (const Error&) {
      continue;  // skip candidates that fail to fit
    }
  }
  if (best_p == 0) throw NoValidOrder("every candidate order failed");
  return best_p;
}

std::vector<OrderScanRow> scan_orders(const SampleSet& train, int p_max) {
  if (p_max < 1) throw InvalidArgument("p_max must be at least 1");
  const Blocks b = block_dims(train);
  check_identifiable(train, p_max, b);
  const Normal full = accumulate_normal(train, p_max, p_max, b);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto guarded = [](double (*crit)(const VarxModel&),
                          const VarxModel& m) {
    try {
      return crit(m);
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  std::vector<OrderScanRow> rows;
  rows.reserve(static_cast<std::size_t>(p_max));
  for (int p = 1; p <= p_max; ++p) {
    OrderScanRow row{p, nan, nan, nan, nan};
    try {
      const VarxModel cand = fit_candidate(train, full, p, p_max, b);
      row.aic = guarded(&aic, cand);
      row.bic = guarded(&bic, cand);
      row.hqic = guarded(&hqic, cand);
      row.fpe = guarded(&fpe, cand);
    } catch (const Error&) {
      // leaves the row NaN: the curve keeps one entry per candidate order
    }
    rows.push_back(row);
  }
  return rows;
}

int select_order_ic(const SampleSet& train, int p_max,
                    OrderCriterion criterion) {
  switch (criterion) {
    case OrderCriterion::Aic:
      return select_order_ic(train, p_max, [](const VarxModel& m) { return aic(m); });
    case OrderCriterion::Bic:
      return select_order_ic(train, p_max, [](const VarxModel& m) { return bic(m); });
    case OrderCriterion::Hqic:
      return select_order_ic(train, p_max, [](const VarxModel& m) { return hqic(m); });
    case OrderCriterion::Fpe:
      return select_order_ic(train, p_max, [](const VarxModel& m) { return fpe(m); });
  }
  throw InvalidArgument("unknown criterion");
}

int select_order_decay(const SampleSet& train, int p_max, double epsilon) {
  if (p_max < 2) throw InvalidArgument("p_max must be at least 2");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  const VarxModel m = fit_varx(train, p_max);
  const double ref = m.endo_coeffs[0].norm();
  for (int i = 2; i <= p_max; ++i) {
    const double diff = (m.endo_coeffs[static_cast<std::size_t>(i - 1)] -
                         m.endo_coeffs[static_cast<std::size_t>(i - 2)])
                            .norm();
    // First adjacent pair that saturates marks the last informative lag.
    if (diff < epsilon * ref) return std::max(2, i - 1);
  }
  return p_max;
}

LagDiagnostic lag_diagnostic(std::span<const double> a,
                             std::span<const double> b, int max_lag,
                             double zero_threshold) {
  if (max_lag < 1) throw InvalidArgument("max_lag must be at least 1");
  if (!(zero_threshold > 0.0 && zero_threshold < 1.0)) {
    throw InvalidArgument("zero_threshold must lie in (0, 1)");
  }
  if (a.size() != b.size()) throw ShapeError("channel lengths differ");
  const long n = static_cast<long>(a.size());
  const long l = max_lag;
  if (n < 10 * l) throw TooShort("need at least 10 * max_lag samples");

  const long window = n - l;  // common support for every shift pair
  LagDiagnostic diag;
  diag.zero_threshold = zero_threshold;
  diag.corr.resize(l + 1, l + 1);
  std::vector<double> av(static_cast<std::size_t>(window));
  std::vector<double> bv(static_cast<std::size_t>(window));
  for (long i = 0; i <= l; ++i) {
    for (long j = 0; j <= l; ++j) {
      for (long t = 0; t < window; ++t) {
        av[static_cast<std::size_t>(t)] = a[static_cast<std::size_t>(l + t - i)];
        bv[static_cast<std::size_t>(t)] = b[static_cast<std::size_t>(l + t - j)];
      }
      try {
        diag.corr(i, j) = pearson(av, bv);
      } catch (const ZeroVariance&) {
        throw DiagnosticFailed("constant channel in the diagnostic window");
      }
    }
  }

  // Entries indistinguishable from zero at the 3-sigma level only inject
  // sampling noise into the inversion; drop them first.
  const double significance = 3.0 / std::sqrt(static_cast<double>(window));
  Eigen::MatrixXd thresholded = diag.corr;
  for (long i = 0; i <= l; ++i) {
    for (long j = 0; j <= l; ++j) {
      if (std::abs(thresholded(i, j)) < significance) thresholded(i, j) = 0.0;
    }
  }

  // Truncated-SVD pseudo-inverse: the shifted-correlation matrix is close
  // to singular by construction, so a plain inverse amplifies noise.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      thresholded, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv[0] : 0.0;
  const double cutoff = std::max(1e-8 * smax, 1e-12);
  Eigen::VectorXd inv_sv = Eigen::VectorXd::Zero(sv.size());
  long kept = 0;
  for (long i = 0; i < sv.size(); ++i) {
    if (sv[i] > cutoff) {
      inv_sv[i] = 1.0 / sv[i];
      ++kept;
    }
  }
  diag.inverse_corr =
      svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
  diag.regularized = kept < l + 1;
  if (!diag.inverse_corr.allFinite()) {
    throw DiagnosticFailed("inverse correlation matrix is not finite");
  }

  // Strip reading: in row 0 of the inverse (zero shift of `a` against all
  // shifts of `b`), the farthest significant column is the detected lag.
  const double peak = diag.inverse_corr.cwiseAbs().maxCoeff();
  diag.detected_lag = 0;
  if (peak > 0.0) {
    for (long j = l; j >= 1; --j) {
      if (std::abs(diag.inverse_corr(0, j)) >= zero_threshold * peak) {
        diag.detected_lag = static_cast<int>(j);
        break;
      }
    }
  }
  return diag;
}

void save_varx(const VarxModel& model, const std::filesystem::path& path,
               const std::string& transform_metadata_json) {
  model.validate();
  nlohmann::json j;
  j["format"] = "genemu-varx";
  j["version"] = 1;
  j["order"] = model.order;
  j["output_dim"] = model.output_dim();
  j["input_dim"] = model.input_dim();
  j["n_eff"] = model.n_eff;
  j["fit_loglik"] = model.fit_loglik;
  auto matrix_rows = [](const MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (long r = 0; r < m.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (long c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["intercept"] = std::vector<double>(
      model.intercept.data(), model.intercept.data() + model.intercept.size());
  j["endo_coeffs"] = nlohmann::json::array();
  for (const auto& m : model.endo_coeffs) j["endo_coeffs"].push_back(matrix_rows(m));
  j["exo_coeffs"] = nlohmann::json::array();
  for (const auto& m : model.exo_coeffs) j["exo_coeffs"].push_back(matrix_rows(m));
  j["noise_cov"] = matrix_rows(model.noise_cov);
  j["transform"] = nlohmann::json::parse(transform_metadata_json);

  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out.good()) throw Error("write failed for '" + path.string() + "'");
}

std::pair<VarxModel, std::string> load_varx(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model JSON: ") + e.what(), 0);
  }
  try {
    if (j.at("format") != "genemu-varx") {
      throw ParseError("not a VARX model file", 0);
    }
    VarxModel m;
    m.order = j.at("order").get<int>();
    const int d = j.at("output_dim").get<int>();
    const int q = j.at("input_dim").get<int>();
    m.n_eff = j.at("n_eff").get<long>();
    m.fit_loglik = j.at("fit_loglik").get<double>();
    const auto iv = j.at("intercept").get<std::vector<double>>();
    m.intercept = Eigen::Map<const VectorXd>(iv.data(), static_cast<long>(iv.size()));
    auto parse_matrix = [](const nlohmann::json& rows, int nr, int nc) {
      MatrixXd m2(nr, nc);
      if (static_cast<int>(rows.size()) != nr) throw ShapeError("bad matrix rows");
      for (int r = 0; r < nr; ++r) {
        if (static_cast<int>(rows[static_cast<std::size_t>(r)].size()) != nc) {
          throw ShapeError("bad matrix cols");
        }
        for (int c = 0; c < nc; ++c) {
          m2(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]
                         .get<double>();
        }
      }
      return m2;
    };
    for (const auto& rows : j.at("endo_coeffs")) {
      m.endo_coeffs.push_back(parse_matrix(rows, d, d));
    }
    for (const auto& rows : j.at("exo_coeffs")) {
      m.exo_coeffs.push_back(parse_matrix(rows, d, q));
    }
    m.noise_cov = parse_matrix(j.at("noise_cov"), d, d);
    m.validate();
    return {std::move(m), j.at("transform").dump()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model JSON: ") + e.what(), 0);
  }
}

}  // namespace genemu
