#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/parallel.hpp"

namespace kstonet {

struct LassoConfig {
  double lambda = 0.0;
  double tol = 1e-7;
  int max_sweeps = 1000000;
  bool penalize_bias = false;  // the intercept stays unpenalized

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("glm", "lambda must be nonnegative");
    if (!(tol > 0.0)) throw ConfigError("glm", "tol must be positive");
    if (max_sweeps < 1) throw ConfigError("glm", "max_sweeps must be positive");
    if (penalize_bias) throw ConfigError("glm", "penalizing the intercept is not supported");
  }
};

struct FitResult {
  Matrix weights;            // outputs x features
  Vector bias;               // outputs
  Vector residual_variance;  // RSS_j / max(1, n - df_j)
  bool converged = false;
  int sweeps_used = 0;
  bool separation_detected = false;
};

namespace detail {

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// Cyclic coordinate descent for one output of
//   (1/n) sum_s (y_s - b - w.a_s)^2 + lambda ||w||_1,
// run on the sufficient statistics G = A'A, c = A'y, s = A'1 so a sweep costs
// O(q^2) regardless of n. Returns the max KKT violation through *violation
// when not converged.
inline bool lasso_cd_single(const Matrix& gram, const Vector& aty, const Vector& at1,
                            double y_mean, Eigen::Index n, const LassoConfig& cfg, Vector& w,
                            double& b, int& sweeps, double* violation) {
  const auto q = gram.rows();
  const double inv_n2 = 2.0 / static_cast<double>(n);
  Vector gw = gram * w;  // maintained incrementally
  for (sweeps = 1; sweeps <= cfg.max_sweeps; ++sweeps) {
    for (Eigen::Index j = 0; j < q; ++j) {
      const double col_sq = inv_n2 * gram(j, j);
      if (col_sq == 0.0) continue;
      // (2/n) a_j . r  with  r = y - b - A w
      const double grad_j = inv_n2 * (aty[j] - gw[j] - b * at1[j]);
      const double w_new = soft_threshold(grad_j + col_sq * w[j], cfg.lambda) / col_sq;
      if (w_new != w[j]) {
        gw += gram.col(j) * (w_new - w[j]);
        w[j] = w_new;
      }
    }
    const double db = y_mean - at1.dot(w) / static_cast<double>(n) - b;
    b += db;
    // KKT on the subgradient conditions.
    double worst = std::abs(y_mean - at1.dot(w) / static_cast<double>(n) - b);
    for (Eigen::Index j = 0; j < q; ++j) {
      if (gram(j, j) == 0.0) continue;
      const double g = inv_n2 * (aty[j] - gw[j] - b * at1[j]);
      if (w[j] == 0.0)
        worst = std::max(worst, std::max(0.0, std::abs(g) - cfg.lambda));
      else
        worst = std::max(worst, std::abs(g - cfg.lambda * (w[j] > 0.0 ? 1.0 : -1.0)));
    }
    if (worst <= cfg.tol) return true;
    if (violation) *violation = worst;
  }
  sweeps = cfg.max_sweeps;
  return false;
}

inline double residual_variance_of(const Vector& resid, Eigen::Index n, Eigen::Index df) {
  const auto denom = std::max<Eigen::Index>(1, n - df);
  return resid.squaredNorm() / static_cast<double>(denom);
}

}  // namespace detail

// Multi-target Lasso, each output fit independently by coordinate descent.
inline FitResult lasso_fit(const Matrix& a, const Matrix& y, const LassoConfig& cfg) {
  cfg.validate();
  require(a.rows() >= 1 && a.rows() == y.rows(), "glm", "lasso_fit: row mismatch");
  require(a.allFinite() && y.allFinite(), "glm", "lasso_fit: non-finite inputs");
  const auto n = a.rows();
  const auto q = a.cols();
  const auto m = y.cols();

  FitResult fit;
  fit.weights = Matrix::Zero(m, q);
  fit.bias = Vector::Zero(m);
  fit.residual_variance = Vector::Zero(m);
  fit.converged = true;

  const Matrix gram = a.transpose() * a;
  const Vector at1 = a.colwise().sum().transpose();
  std::vector<int> sweeps(static_cast<std::size_t>(m), 0);
  std::vector<double> violations(static_cast<std::size_t>(m), 0.0);
  std::vector<char> ok(static_cast<std::size_t>(m), 1);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t jout) {
    const auto col = static_cast<Eigen::Index>(jout);
    Vector w = Vector::Zero(q);
    double b = y.col(col).mean();
    int sw = 0;
    const Vector aty = a.transpose() * y.col(col);
    ok[jout] = detail::lasso_cd_single(gram, aty, at1, y.col(col).mean(), n, cfg, w, b, sw,
                                       &violations[jout])
                   ? 1
                   : 0;
    sweeps[jout] = sw;
    fit.weights.row(col) = w.transpose();
    fit.bias[col] = b;
    Vector resid = y.col(col) - Vector::Constant(n, b) - a * w;
    Eigen::Index df = 1 + (w.array() != 0.0).count();
    fit.residual_variance[col] = detail::residual_variance_of(resid, n, df);
  });
  for (std::size_t jout = 0; jout < static_cast<std::size_t>(m); ++jout) {
    fit.sweeps_used = std::max(fit.sweeps_used, sweeps[jout]);
    if (!ok[jout])
      throw ConvergenceError("glm", "lasso_fit: max_sweeps exceeded", violations[jout]);
  }
  return fit;
}

// Ordinary least squares through the normal equations with escalating ridge
// jitter; residual variance uses df = q + 1.
inline FitResult ols_fit(const Matrix& a, const Matrix& y) {
  require(a.rows() >= 1 && a.rows() == y.rows(), "glm", "ols_fit: row mismatch");
  require(a.allFinite() && y.allFinite(), "glm", "ols_fit: non-finite inputs");
  const auto n = a.rows();
  const auto q = a.cols();
  const auto m = y.cols();

  Matrix design(n, q + 1);
  design.leftCols(q) = a;
  design.col(q).setOnes();
  Matrix gram = design.transpose() * design;
  Matrix rhs = design.transpose() * y;

  Matrix theta;
  bool solved = false;
  for (double jitter : {0.0, 1e-10}) {
    Matrix reg = gram;
    reg.diagonal().array() += jitter;
    Eigen::LDLT<Matrix> ldlt(reg);
    if (ldlt.info() != Eigen::Success) continue;
    theta = ldlt.solve(rhs);
    if (!theta.allFinite()) continue;
    // Reject factorizations that failed silently on rank-deficient input.
    if ((reg * theta - rhs).norm() > 1e-6 * (1.0 + rhs.norm())) continue;
    solved = true;
    break;
  }
  if (!solved) throw NumericalError("glm", "ols_fit: design rank-deficient beyond jitter");

  FitResult fit;
  fit.weights = theta.topRows(q).transpose();
  fit.bias = theta.row(q).transpose();
  fit.residual_variance = Vector::Zero(m);
  fit.converged = true;
  fit.sweeps_used = 1;
  Matrix resid = y - design * theta;
  for (Eigen::Index j = 0; j < m; ++j)
    fit.residual_variance[j] = detail::residual_variance_of(resid.col(j), n, q + 1);
  return fit;
}

// L1-penalized logistic regression via iteratively reweighted coordinate
// descent (quadratic working model per outer pass). Targets are 0/1.
inline FitResult logistic_lasso_fit(const Matrix& a, const Vector& y, const LassoConfig& cfg) {
  cfg.validate();
  require(a.rows() >= 1 && a.rows() == y.size(), "glm", "logistic_lasso_fit: row mismatch");
  const auto n = a.rows();
  const auto q = a.cols();
  bool has0 = false, has1 = false;
  for (Eigen::Index s = 0; s < n; ++s) {
    require(y[s] == 0.0 || y[s] == 1.0, "glm", "logistic_lasso_fit: labels must be 0/1");
    (y[s] == 0.0 ? has0 : has1) = true;
  }
  if (!has0 || !has1) throw InputError("glm", "logistic_lasso_fit: both classes required");

  Vector w = Vector::Zero(q);
  double b = std::log(y.mean() / (1.0 - y.mean()));
  constexpr double kMinWeight = 1e-5;
  constexpr double kSeparationCap = 1e4;

  FitResult fit;
  fit.converged = false;
  int outer = 0;
  double violation = 0.0;
  for (outer = 1; outer <= cfg.max_sweeps; ++outer) {
    Vector eta = Vector::Constant(n, b) + a * w;
    Vector p(n), omega(n), z(n);
    for (Eigen::Index s = 0; s < n; ++s) {
      p[s] = 1.0 / (1.0 + std::exp(-eta[s]));
      omega[s] = std::max(p[s] * (1.0 - p[s]), kMinWeight);
      z[s] = eta[s] + (y[s] - p[s]) / omega[s];
    }
    // One full CD sweep on (1/2n) sum omega (z - b - w.a)^2 + lambda ||w||_1.
    const double inv_n = 1.0 / static_cast<double>(n);
    Vector r = z - Vector::Constant(n, b) - a * w;
    for (Eigen::Index j = 0; j < q; ++j) {
      const double denom = inv_n * (omega.array() * a.col(j).array().square()).sum();
      if (denom == 0.0) continue;
      const double rho =
          inv_n * (omega.array() * a.col(j).array() * r.array()).sum() + denom * w[j];
      const double w_new = detail::soft_threshold(rho, cfg.lambda) / denom;
      if (w_new != w[j]) {
        r -= a.col(j) * (w_new - w[j]);
        w[j] = w_new;
      }
    }
    const double db = (omega.array() * r.array()).sum() / omega.sum();
    b += db;
    r.array() -= db;

    if (w.lpNorm<Eigen::Infinity>() > kSeparationCap || std::abs(b) > kSeparationCap) {
      fit.separation_detected = true;
      break;
    }

    // KKT on the true penalized logistic objective.
    eta = Vector::Constant(n, b) + a * w;
    for (Eigen::Index s = 0; s < n; ++s) p[s] = 1.0 / (1.0 + std::exp(-eta[s]));
    Vector g = a.transpose() * (p - y) * inv_n;
    violation = std::abs((p - y).mean());
    for (Eigen::Index j = 0; j < q; ++j) {
      if (w[j] == 0.0)
        violation = std::max(violation, std::max(0.0, std::abs(g[j]) - cfg.lambda));
      else
        violation = std::max(violation, std::abs(g[j] + cfg.lambda * (w[j] > 0.0 ? 1.0 : -1.0)));
    }
    if (violation <= cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged && !fit.separation_detected && outer > cfg.max_sweeps)
    throw ConvergenceError("glm", "logistic_lasso_fit: max_sweeps exceeded", violation);

  fit.weights = w.transpose();
  fit.bias = Vector::Constant(1, b);
  // Working-response variance stand-in keeps the layout uniform for callers.
  Vector eta = Vector::Constant(n, b) + a * w;
  Vector resid(n);
  for (Eigen::Index s = 0; s < n; ++s) resid[s] = y[s] - 1.0 / (1.0 + std::exp(-eta[s]));
  Eigen::Index df = 1 + (w.array() != 0.0).count();
  fit.residual_variance = Vector::Constant(1, detail::residual_variance_of(resid, n, df));
  fit.sweeps_used = outer;
  return fit;
}

}  // namespace kstonet
