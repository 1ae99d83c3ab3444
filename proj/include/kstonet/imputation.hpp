#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/model.hpp"
#include "kstonet/parallel.hpp"
#include "kstonet/rng.hpp"

namespace kstonet {

struct HmcConfig {
  int steps = 25;               // sweeps per imputation
  std::vector<double> lr;      // per-layer step sizes, broadcast if size 1
  double alpha = 0.1;           // friction; 1 - alpha is the momentum kept per step
  std::uint64_t seed = 0;

  double lr_for(int layer) const {  // layer in 1..h
    if (lr.size() == 1) return lr[0];
    return lr[static_cast<std::size_t>(layer - 1)];
  }

  void validate(int depth) const {
    if (steps < 1) throw ConfigError("imputation", "steps must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("imputation", "alpha must be in (0, 1]");
    if (lr.empty() || !(lr.size() == 1 || lr.size() == static_cast<std::size_t>(depth)))
      throw ConfigError("imputation", "lr must have one entry or one per hidden layer");
    for (double e : lr)
      if (!(e >= 0.0)) throw ConfigError("imputation", "lr must be nonnegative");
  }
};

// Latent outputs Y_1..Y_h and velocity buffers for one training sample.
struct LatentState {
  std::vector<Vector> y;
  std::vector<Vector> v;
  Vector first_layer_mean;  // SVR outputs at x, cached at initialization
};

// Stacked per-layer latent matrices for a whole dataset; layers[i] is n x m_{i+1}.
struct LatentBatch {
  std::vector<Matrix> layers;
};

namespace detail {

inline LatentState init_latent_from_z1(const KStoNetModel& model, const Vector& z1) {
  const int h = model.config.depth();
  LatentState st;
  st.first_layer_mean = z1;
  st.y.resize(static_cast<std::size_t>(h));
  st.v.resize(static_cast<std::size_t>(h));
  st.y[0] = z1;
  for (int layer = 2; layer <= h; ++layer) {
    const auto& lay = model.dense(layer);
    st.y[static_cast<std::size_t>(layer - 1)] =
        lay.b + lay.w * activate(model.config.activation, st.y[static_cast<std::size_t>(layer - 2)]);
  }
  for (int i = 0; i < h; ++i)
    st.v[static_cast<std::size_t>(i)] = Vector::Zero(model.config.width(i + 1));
  return st;
}

}  // namespace detail

// Deterministic start of an imputation: latents at the noise-free forward
// values, velocities zero.
inline LatentState init_latent(const KStoNetModel& model, const Vector& x) {
  Vector z1(static_cast<Eigen::Index>(model.svr_layer.size()));
  for (std::size_t k = 0; k < model.svr_layer.size(); ++k)
    z1[static_cast<Eigen::Index>(k)] = svr_predict(model.svr_layer[k], x);
  return detail::init_latent_from_z1(model, z1);
}

// Gradient wrt Y_i of  log pi(Y_i | Y_{i-1}) + log pi(Y_{i+1} | Y_i),  layer in 1..h.
// The downhill (self) term at the first layer uses the epsilon-insensitive score;
// a classification head contributes a (tempered) Bernoulli score at layer h.
inline Vector latent_grad(const KStoNetModel& model, const Vector& y_obs,
                          const LatentState& state, int layer) {
  const auto& cfg = model.config;
  const int h = cfg.depth();
  require(layer >= 1 && layer <= h, "imputation", "latent_grad: layer out of range");
  const auto idx = static_cast<std::size_t>(layer - 1);
  const Vector& yi = state.y[idx];
  const Vector psi = activate(cfg.activation, yi);
  const Vector dpsi = activate_deriv(cfg.activation, yi);

  Vector grad = Vector::Zero(yi.size());

  // Term from the layer above.
  const auto& up = model.dense(layer + 1);
  if (layer < h) {
    const Vector resid = state.y[idx + 1] - up.b - up.w * psi;
    grad += (up.w.transpose() * resid).cwiseProduct(dpsi) / cfg.sigma_sq_of(layer + 1);
  } else if (cfg.task == Task::kRegression) {
    const Vector resid = y_obs - up.b - up.w * psi;
    grad += (up.w.transpose() * resid).cwiseProduct(dpsi) / cfg.sigma_sq_of(layer + 1);
  } else {
    const double logit = up.b[0] + up.w.row(0).dot(psi);
    double score = y_obs[0] - sigmoid(logit);
    if (cfg.temper_classification) score /= cfg.sigma_sq_of(layer + 1);
    grad += score * up.w.row(0).transpose().cwiseProduct(dpsi);
  }

  // Term from this layer's own conditional.
  if (layer == 1) {
    const NoiseDensity d = cfg.first_layer_noise();
    for (Eigen::Index k = 0; k < yi.size(); ++k)
      grad[k] += noise_score(d, yi[k] - state.first_layer_mean[k]);
  } else {
    const auto& self = model.dense(layer);
    const Vector resid =
        yi - self.b - self.w * activate(cfg.activation, state.y[idx - 1]);
    grad -= resid / cfg.sigma_sq_of(layer);
  }
  return grad;
}

// Complete-data log density  sum_i log pi(Y_i | Y_{i-1}) + log pi(y | Y_h)
// at the state's latent values. Finite-difference target for gradient checks.
inline double complete_log_density(const KStoNetModel& model, const Vector& y_obs,
                                   const LatentState& state) {
  const auto& cfg = model.config;
  const int h = cfg.depth();
  double acc = 0.0;
  const NoiseDensity d = cfg.first_layer_noise();
  for (Eigen::Index k = 0; k < state.y[0].size(); ++k)
    acc += noise_logpdf(d, state.y[0][k] - state.first_layer_mean[k]);
  for (int layer = 2; layer <= h; ++layer) {
    const auto& lay = model.dense(layer);
    const auto idx = static_cast<std::size_t>(layer - 1);
    const Vector resid =
        state.y[idx] - lay.b - lay.w * activate(cfg.activation, state.y[idx - 1]);
    const double s2 = cfg.sigma_sq_of(layer);
    acc += -0.5 * resid.squaredNorm() / s2 -
           0.5 * resid.size() * std::log(2.0 * 3.141592653589793238462643 * s2);
  }
  const auto& out = model.dense(h + 1);
  const Vector z_out = out.b + out.w * activate(cfg.activation, state.y[static_cast<std::size_t>(h - 1)]);
  acc += output_loglik(cfg, y_obs, z_out);
  return acc;
}

using HmcObserver = std::function<void(int step, const LatentState&)>;

// Runs cfg.steps sweeps of the underdamped update over layers h..1:
//   v <- (1 - alpha) v + lr grad + sqrt(2 alpha lr) z,   Y <- Y + v.
inline LatentState hmc_impute(const KStoNetModel& model, const Vector& y_obs,
                              LatentState state, const HmcConfig& cfg,
                              const HmcObserver& observer = nullptr) {
  const int h = model.config.depth();
  cfg.validate(h);
  Rng rng(cfg.seed);
  for (int step = 1; step <= cfg.steps; ++step) {
    for (int layer = h; layer >= 1; --layer) {
      const auto idx = static_cast<std::size_t>(layer - 1);
      const double lr = cfg.lr_for(layer);
      const Vector grad = latent_grad(model, y_obs, state, layer);
      Vector& v = state.v[idx];
      Vector& y = state.y[idx];
      const double noise_scale = std::sqrt(2.0 * cfg.alpha * lr);
      for (Eigen::Index k = 0; k < v.size(); ++k) {
        v[k] = (1.0 - cfg.alpha) * v[k] + lr * grad[k] + noise_scale * rng.next_normal();
        y[k] += v[k];
        if (!std::isfinite(y[k]) || std::abs(y[k]) > 1e8)
          throw DivergenceError(
              "imputation", "latent diverged at layer " + std::to_string(layer) + ", step " +
                                std::to_string(step) + ", |Y|=" + std::to_string(std::abs(y[k])));
      }
    }
    if (observer) observer(step, state);
  }
  return state;
}

// Imputes every sample independently. Per-sample noise streams are derived from
// (cfg.seed, sample), so results do not depend on the parallel schedule. The
// optional z1 matrix supplies precomputed first-layer forward values.
inline LatentBatch impute_all(const KStoNetModel& model, const Matrix& x, const Matrix& y_obs,
                              const HmcConfig& cfg, const Matrix* z1 = nullptr) {
  const auto n = x.rows();
  require(n > 0, "imputation", "impute_all: empty dataset");
  require(y_obs.rows() == n, "imputation", "impute_all: X/Y row mismatch");
  const int h = model.config.depth();

  LatentBatch batch;
  batch.layers.resize(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i)
    batch.layers[static_cast<std::size_t>(i)].resize(n, model.config.width(i + 1));

  std::string first_error;
  std::mutex err_mutex;
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t s) {
    const auto row = static_cast<Eigen::Index>(s);
    LatentState st = z1 ? detail::init_latent_from_z1(model, z1->row(row).transpose())
                        : init_latent(model, x.row(row).transpose());
    HmcConfig local = cfg;
    local.seed = Rng::derive(cfg.seed, {static_cast<std::uint64_t>(s)});
    try {
      st = hmc_impute(model, y_obs.row(row).transpose(), std::move(st), local);
    } catch (const DivergenceError& e) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (first_error.empty()) first_error = "sample " + std::to_string(s) + ": " + e.what();
      return;
    }
    for (int i = 0; i < h; ++i)
      batch.layers[static_cast<std::size_t>(i)].row(row) = st.y[static_cast<std::size_t>(i)];
  });
  if (!first_error.empty()) throw DivergenceError("imputation", first_error);
  return batch;
}

}  // namespace kstonet
