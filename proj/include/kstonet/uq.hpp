#pragma once

#include <cmath>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/model.hpp"
#include "kstonet/svr.hpp"
#include "kstonet/trainer.hpp"

namespace kstonet {

// Inverse standard normal CDF (Wichura's PPND16 rational approximation,
// absolute error well below 1e-9 over (0, 1)).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.5) return 0.0;
    throw InputError("uq", "normal_quantile: p must lie in (0, 1)");
  }
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
              6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
            1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
          1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    return q * num / den;
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
    val = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    val = num / den;
  }
  return q < 0.0 ? -val : val;
}

// Per-layer forward means and covariances at one test point.
struct CovarianceEstimate {
  std::vector<Vector> mean;  // Z_1 .. Z_{h+1}
  std::vector<Matrix> cov;   // Sigma_1 .. Sigma_{h+1}
};

struct PredictionInterval {
  double center = 0.0;
  double half_width = 0.0;
  double level = 0.0;
  double residual_component = 0.0;  // mean squared training residual
  double model_component = 0.0;     // propagated output variance
};

// Diagonal first-layer covariance diag{svr posterior variance per unit}.
inline Matrix first_layer_cov(const KStoNetModel& model, const Vector& z) {
  const auto m1 = static_cast<Eigen::Index>(model.svr_layer.size());
  Matrix cov = Matrix::Zero(m1, m1);
  for (Eigen::Index k = 0; k < m1; ++k)
    cov(k, k) = svr_variance(model.svr_layer[static_cast<std::size_t>(k)], z);
  return cov;
}

namespace detail {

inline Matrix solve_spd_jitter(const Matrix& gram, const Matrix& rhs, const char* what) {
  for (double jitter = 1e-8; jitter <= 1e-4 * 1.0000001; jitter *= 10.0) {
    Matrix reg = gram + jitter * Matrix::Identity(gram.rows(), gram.cols());
    Eigen::LLT<Matrix> llt(reg);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
  }
  throw NumericalError("uq", std::string(what) + " singular beyond ridge repair");
}

// Core of the covariance recursion, taking psi_gram = design' * design.
inline Matrix propagate_cov_gram(const Matrix& psi_gram, const Vector& z_prev,
                                 const Matrix& cov_prev, const Vector& sigma_hat_sq,
                                 const Matrix& w, Activation act) {
  const Vector psi_z = activate(act, z_prev);
  const Vector dpsi_z = activate_deriv(act, z_prev);
  const Matrix var_psi =
      dpsi_z.asDiagonal() * cov_prev * dpsi_z.asDiagonal();  // D Sigma D
  const Matrix g_inv_v = solve_spd_jitter(psi_gram, var_psi, "design Gram");
  const Vector g_inv_z = solve_spd_jitter(psi_gram, psi_z, "design Gram");
  const double scale = g_inv_v.trace() + psi_z.dot(g_inv_z);
  Matrix cov = Matrix(sigma_hat_sq.asDiagonal()) * scale + w * var_psi * w.transpose();
  cov = 0.5 * (cov + cov.transpose());
  return cov;
}

}  // namespace detail

// One step of the recursion: Sigma_i from Sigma_{i-1}, the activated imputed
// design of the epoch's solve, the forward mean Z_{i-1}, the layer's residual
// variances, and its weight matrix.
inline Matrix propagate_cov(const Matrix& psi_design, const Vector& z_prev,
                            const Matrix& cov_prev, const Vector& sigma_hat_sq, const Matrix& w,
                            Activation act) {
  require(psi_design.cols() == z_prev.size(), "uq", "propagate_cov: design width mismatch");
  require(cov_prev.rows() == z_prev.size() && cov_prev.cols() == z_prev.size(), "uq",
          "propagate_cov: covariance shape mismatch");
  require(w.cols() == z_prev.size() && w.rows() == sigma_hat_sq.size(), "uq",
          "propagate_cov: weight shape mismatch");
  return detail::propagate_cov_gram(psi_design.transpose() * psi_design, z_prev, cov_prev,
                                    sigma_hat_sq, w, act);
}

// Full chain Sigma_1 .. Sigma_{h+1} for one snapshot at test point z.
inline CovarianceEstimate covariance_chain(const Snapshot& snap, const Vector& z) {
  const auto& model = snap.model;
  const int h = model.config.depth();
  require(static_cast<int>(snap.uq.psi_gram.size()) == h, "uq",
          "snapshot lacks the sampling context needed for covariance propagation");
  CovarianceEstimate est;
  est.mean = forward(model, z);
  est.cov.push_back(first_layer_cov(model, z));
  for (int layer = 2; layer <= h + 1; ++layer) {
    const auto idx = static_cast<std::size_t>(layer - 2);
    est.cov.push_back(detail::propagate_cov_gram(
        snap.uq.psi_gram[idx], est.mean[idx], est.cov[idx], snap.uq.sigma_hat_sq[idx],
        model.dense(layer).w, model.config.activation));
  }
  return est;
}

enum class IntervalAveraging { kEndpoints, kVariance };

// Prediction intervals for a batch of test points: per selected snapshot the
// variance is (mean squared training residual) + (propagated output variance);
// the reported interval averages the per-snapshot endpoints across the last k
// snapshots (or averages variances when so configured).
inline std::vector<PredictionInterval> interval_batch(
    const std::vector<Snapshot>& snapshots, const Matrix& train_x, const Matrix& train_y,
    const Matrix& test_x, double level, int k,
    IntervalAveraging averaging = IntervalAveraging::kEndpoints) {
  require(!snapshots.empty() && k >= 1 && static_cast<std::size_t>(k) <= snapshots.size(), "uq",
          "interval: need at least k snapshots");
  require(level >= 0.0 && level < 1.0, "uq", "interval: level must lie in [0, 1)");
  const auto& cfg = snapshots.back().model.config;
  if (cfg.task != Task::kRegression)
    throw InputError("uq", "prediction intervals support regression tasks only");
  require(cfg.output_dim == 1, "uq", "interval: scalar response expected");

  const double quantile = level == 0.0 ? 0.0 : normal_quantile(0.5 * (1.0 + level));
  const auto n_test = test_x.rows();
  std::vector<PredictionInterval> out(static_cast<std::size_t>(n_test));
  std::vector<double> lo(static_cast<std::size_t>(n_test), 0.0);
  std::vector<double> hi(static_cast<std::size_t>(n_test), 0.0);

  for (std::size_t t = snapshots.size() - static_cast<std::size_t>(k); t < snapshots.size();
       ++t) {
    const auto& snap = snapshots[t];
    // Mean squared training residual under this snapshot.
    double resid_ms = 0.0;
    for (Eigen::Index s = 0; s < train_x.rows(); ++s) {
      const double pred = forward_output(snap.model, train_x.row(s).transpose())[0];
      const double r = train_y(s, 0) - pred;
      resid_ms += r * r;
    }
    resid_ms /= static_cast<double>(train_x.rows());

    // Factor each unit's marginal-vector system once for all test points.
    std::vector<SvrPosterior> posteriors;
    posteriors.reserve(snap.model.svr_layer.size());
    for (const auto& unit : snap.model.svr_layer) posteriors.emplace_back(unit);

    for (Eigen::Index p = 0; p < n_test; ++p) {
      const Vector z = test_x.row(p).transpose();
      CovarianceEstimate est;
      est.mean = forward(snap.model, z);
      const auto m1 = static_cast<Eigen::Index>(snap.model.svr_layer.size());
      Matrix cov0 = Matrix::Zero(m1, m1);
      for (Eigen::Index u = 0; u < m1; ++u)
        cov0(u, u) = posteriors[static_cast<std::size_t>(u)].variance(z);
      est.cov.push_back(std::move(cov0));
      for (int layer = 2; layer <= cfg.depth() + 1; ++layer) {
        const auto idx = static_cast<std::size_t>(layer - 2);
        est.cov.push_back(detail::propagate_cov_gram(
            snap.uq.psi_gram[idx], est.mean[idx], est.cov[idx], snap.uq.sigma_hat_sq[idx],
            snap.model.dense(layer).w, cfg.activation));
      }
      const double center = est.mean.back()[0];
      const double model_var = est.cov.back()(0, 0);
      const double variance = resid_ms + model_var;
      const double hw = quantile * std::sqrt(std::max(0.0, variance));
      auto& acc = out[static_cast<std::size_t>(p)];
      acc.level = level;
      acc.residual_component += resid_ms / static_cast<double>(k);
      acc.model_component += model_var / static_cast<double>(k);
      if (averaging == IntervalAveraging::kEndpoints) {
        lo[static_cast<std::size_t>(p)] += (center - hw) / static_cast<double>(k);
        hi[static_cast<std::size_t>(p)] += (center + hw) / static_cast<double>(k);
      } else {
        acc.center += center / static_cast<double>(k);
      }
    }
  }

  for (Eigen::Index p = 0; p < n_test; ++p) {
    auto& iv = out[static_cast<std::size_t>(p)];
    if (averaging == IntervalAveraging::kEndpoints) {
      iv.center = 0.5 * (lo[static_cast<std::size_t>(p)] + hi[static_cast<std::size_t>(p)]);
      iv.half_width = 0.5 * (hi[static_cast<std::size_t>(p)] - lo[static_cast<std::size_t>(p)]);
    } else {
      iv.half_width = quantile * std::sqrt(std::max(0.0, iv.residual_component + iv.model_component));
    }
  }
  return out;
}

inline PredictionInterval interval(const std::vector<Snapshot>& snapshots, const Matrix& train_x,
                                   const Matrix& train_y, const Vector& z, double level, int k,
                                   IntervalAveraging averaging = IntervalAveraging::kEndpoints) {
  Matrix one(1, z.size());
  one.row(0) = z.transpose();
  return interval_batch(snapshots, train_x, train_y, one, level, k, averaging)[0];
}

}  // namespace kstonet
