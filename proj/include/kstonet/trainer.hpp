#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/glm.hpp"
#include "kstonet/imputation.hpp"
#include "kstonet/kernel.hpp"
#include "kstonet/model.hpp"
#include "kstonet/parallel.hpp"
#include "kstonet/rng.hpp"
#include "kstonet/svr.hpp"

namespace kstonet {

enum class GlmKind { kLasso, kOls };

struct TrainConfig {
  int epochs = 40;
  HmcConfig hmc;
  SvrConfig svr;
  LassoConfig lasso;
  GlmKind glm_kind = GlmKind::kLasso;
  int average_last_k = 1;
  std::uint64_t seed = 1;
  // Above this epoch count only the last average_last_k snapshots are kept.
  int snapshot_keep_all_limit = 1000;

  void validate(int depth) const {
    if (epochs < 0) throw ConfigError("trainer", "epochs must be nonnegative");
    if (average_last_k < 0 || average_last_k > std::max(1, epochs))
      throw ConfigError("trainer", "average_last_k must lie in [0, epochs]");
    hmc.validate(depth);
    for (double e : hmc.lr)
      if (!(e > 0.0)) throw ConfigError("trainer", "hmc lr must be positive for training");
    svr.validate();
    lasso.validate();
  }
};

// Sampling-theory context captured at the epoch's solve, consumed by the
// covariance recursion: per layer i in 2..h+1 the Gram of the activated
// imputed design and the per-unit residual variances.
struct UqContext {
  std::vector<Matrix> psi_gram;      // [i-2] = psi(Y_{i-1})' psi(Y_{i-1})
  std::vector<Vector> sigma_hat_sq;  // [i-2] = per-output residual variance
};

struct Snapshot {
  int epoch = 0;
  KStoNetModel model;
  UqContext uq;
};

struct EpochTrace {
  int epoch = 0;
  double train_metric = 0.0;
  double test_metric = 0.0;  // NaN when no test set is given
  double sv_count_mean = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<Snapshot> snapshots;
  std::vector<EpochTrace> traces;
  double gamma = 0.0;  // resolved shared bandwidth (first unit's when heterogeneous)
};

struct TrainHooks {
  std::function<void(int epoch, const LatentBatch&, const KStoNetModel&)> on_epoch;
};

namespace detail {

// Forward through the dense layers given first-layer outputs for many samples.
inline Matrix dense_forward(const KStoNetModel& model, const Matrix& z1) {
  Matrix z = z1;
  for (int layer = 2; layer <= model.config.depth() + 1; ++layer) {
    const auto& lay = model.dense(layer);
    Matrix act(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      for (Eigen::Index j = 0; j < z.cols(); ++j)
        act(i, j) = activate(model.config.activation, z(i, j));
    z = (act * lay.w.transpose()).rowwise() + lay.b.transpose();
  }
  return z;
}

inline double metric_of(Task task, const Matrix& y, const Matrix& out) {
  if (task == Task::kRegression)
    return (y - out).array().square().sum() / static_cast<double>(y.rows() * y.cols());
  Eigen::Index hits = 0;
  for (Eigen::Index s = 0; s < y.rows(); ++s)
    if ((out(s, 0) > 0.0 ? 1.0 : 0.0) == y(s, 0)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(y.rows());
}

inline Matrix batch_first_layer(const KStoNetModel& model,
                                const std::vector<std::shared_ptr<const Matrix>>& cross) {
  // cross[k]: kernel block K(eval points, train points) for unit k's gamma.
  const auto m1 = static_cast<Eigen::Index>(model.svr_layer.size());
  Matrix z1(cross[0]->rows(), m1);
  for (Eigen::Index k = 0; k < m1; ++k) {
    const auto& unit = model.svr_layer[static_cast<std::size_t>(k)];
    Vector pred = Vector::Constant(cross[0]->rows(), unit.bias);
    for (int i : unit.support_ids)
      pred += unit.dual_coefs[i] * cross[static_cast<std::size_t>(k)]->col(i);
    z1.col(k) = pred;
  }
  return z1;
}

}  // namespace detail

// Randomly initialized network. Each SVR unit is fitted on iid standard
// normal targets so the first-layer outputs start with O(1) spread across
// samples; a degenerate (near-constant) start makes the first readout fit
// blow up and pushes the imputation dynamics past their stability edge.
// Dense weights and biases are uniform on (-0.1, 0.1).
inline KStoNetModel init_model(
    const std::shared_ptr<const Matrix>& x, const NetConfig& net, const KernelSpec& kernel,
    const SvrConfig& svr_cfg, std::uint64_t seed,
    const std::vector<std::shared_ptr<const GramMatrix>>* unit_grams = nullptr) {
  net.validate();
  kernel.validate(static_cast<std::size_t>(net.hidden_widths[0]));
  KStoNetModel model;
  model.config = net;
  Rng rng(Rng::derive(seed, {0x1417u}));
  const int m1 = net.hidden_widths[0];
  std::vector<std::pair<double, std::shared_ptr<const GramMatrix>>> local_grams;
  for (int k = 0; k < m1; ++k) {
    const double g = kernel.gamma_for_unit(static_cast<std::size_t>(k));
    Vector targets(x->rows());
    for (Eigen::Index i = 0; i < targets.size(); ++i) targets[i] = rng.next_normal();
    std::shared_ptr<const GramMatrix> gm;
    if (unit_grams) {
      gm = (*unit_grams)[static_cast<std::size_t>(k)];
    } else {
      for (const auto& [gamma_key, cached] : local_grams)
        if (gamma_key == g) gm = cached;
      if (!gm) {
        gm = std::make_shared<const GramMatrix>(gram(*x, *x, g));
        local_grams.emplace_back(g, gm);
      }
    }
    model.svr_layer.push_back(svr_fit(x, targets, svr_cfg, g, gm.get()));
  }
  int prev = m1;
  for (int layer = 2; layer <= net.depth() + 1; ++layer) {
    const int rows = net.width(layer);
    DenseLayer lay;
    lay.w.resize(rows, prev);
    lay.b.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < prev; ++c) lay.w(r, c) = rng.uniform(-0.1, 0.1);
      lay.b[r] = rng.uniform(-0.1, 0.1);
    }
    model.dense_layers.push_back(std::move(lay));
    prev = rows;
  }
  return model;
}

// One imputation-then-solve pass per epoch: impute latents backward by HMC,
// refit each SVR unit on its imputed first-layer column, then refit every
// dense layer by penalized regression on activated imputed designs.
inline TrainResult iro_train(const Matrix& x_in, const Matrix& y, const NetConfig& net,
                             const TrainConfig& cfg, const KernelSpec& kernel_in,
                             const Matrix* x_test = nullptr, const Matrix* y_test = nullptr,
                             const TrainHooks& hooks = {}) {
  net.validate();
  cfg.validate(net.depth());
  require(x_in.rows() >= 1 && x_in.rows() == y.rows(), "trainer", "X/Y row mismatch");
  require(y.cols() == net.output_dim, "trainer", "target width must equal output_dim");
  if (net.task == Task::kBinaryClassification)
    for (Eigen::Index s = 0; s < y.rows(); ++s)
      require(y(s, 0) == 0.0 || y(s, 0) == 1.0, "trainer", "labels must be 0/1");

  auto x = std::make_shared<const Matrix>(x_in);
  KernelSpec kernel = kernel_in;
  kernel.validate(static_cast<std::size_t>(net.hidden_widths[0]));

  const int m1 = net.hidden_widths[0];
  const int h = net.depth();

  // One symmetric training Gram per distinct bandwidth, shared across units.
  std::vector<double> unit_gamma(static_cast<std::size_t>(m1));
  for (int k = 0; k < m1; ++k)
    unit_gamma[static_cast<std::size_t>(k)] = kernel.gamma_for_unit(static_cast<std::size_t>(k));
  std::vector<std::shared_ptr<const GramMatrix>> unit_grams(static_cast<std::size_t>(m1));
  std::vector<std::shared_ptr<const Matrix>> train_cross(static_cast<std::size_t>(m1));
  std::vector<std::shared_ptr<const Matrix>> test_cross(static_cast<std::size_t>(m1));
  for (std::size_t k = 0; k < static_cast<std::size_t>(m1); ++k) {
    const double g = unit_gamma[k];
    for (std::size_t p = 0; p < k; ++p)
      if (unit_gamma[p] == g) {
        unit_grams[k] = unit_grams[p];
        train_cross[k] = train_cross[p];
        test_cross[k] = test_cross[p];
        break;
      }
    if (!unit_grams[k]) {
      unit_grams[k] = std::make_shared<const GramMatrix>(gram(*x, *x, g));
      train_cross[k] = std::shared_ptr<const Matrix>(unit_grams[k], &unit_grams[k]->values);
      if (x_test) test_cross[k] = std::make_shared<const Matrix>(gram(*x_test, *x, g).values);
    }
  }

  KStoNetModel model = init_model(x, net, kernel, cfg.svr, cfg.seed, &unit_grams);

  TrainResult result;
  result.gamma = unit_gamma[0];
  const bool keep_all = cfg.epochs <= cfg.snapshot_keep_all_limit;
  const std::size_t ring = static_cast<std::size_t>(std::max(1, cfg.average_last_k));
  if (cfg.epochs == 0) {
    result.snapshots.push_back({0, model, {}});
    return result;
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    // STEP 1: backward imputation from the current parameter estimate.
    Matrix z1 = detail::batch_first_layer(model, train_cross);
    HmcConfig hmc = cfg.hmc;
    hmc.seed = Rng::derive(cfg.seed, {0xEF0Cu, static_cast<std::uint64_t>(epoch)});
    LatentBatch batch;
    try {
      batch = impute_all(model, *x, y, hmc, &z1);
    } catch (const DivergenceError& e) {
      throw DivergenceError("trainer", "epoch " + std::to_string(epoch) + ": " + e.what());
    }

    // STEP 2.1: one SVR per first-layer unit on (X, imputed Y_1 column).
    KStoNetModel next;
    next.config = net;
    next.svr_layer.resize(static_cast<std::size_t>(m1));
    std::string svr_error;
    std::mutex err_mutex;
    parallel_for(static_cast<std::size_t>(m1), [&](std::size_t k) {
      try {
        next.svr_layer[k] = svr_fit(x, batch.layers[0].col(static_cast<Eigen::Index>(k)),
                                    cfg.svr, unit_gamma[k], unit_grams[k].get());
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (svr_error.empty())
          svr_error = "epoch " + std::to_string(epoch) + ", svr unit " + std::to_string(k) +
                      ": " + e.what();
      }
    });
    if (!svr_error.empty()) throw ConvergenceError("trainer", svr_error, 0.0);

    // STEP 2.2: penalized regression per dense layer on activated designs.
    UqContext uq;
    for (int layer = 2; layer <= h + 1; ++layer) {
      const Matrix& lat = batch.layers[static_cast<std::size_t>(layer - 2)];
      Matrix design(lat.rows(), lat.cols());
      for (Eigen::Index i = 0; i < lat.rows(); ++i)
        for (Eigen::Index j = 0; j < lat.cols(); ++j)
          design(i, j) = activate(net.activation, lat(i, j));
      const bool output_layer = layer == h + 1;
      const Matrix& targets = output_layer ? y : batch.layers[static_cast<std::size_t>(layer - 1)];
      FitResult fit;
      try {
        if (output_layer && net.task == Task::kBinaryClassification)
          fit = logistic_lasso_fit(design, targets.col(0), cfg.lasso);
        else if (cfg.glm_kind == GlmKind::kOls)
          fit = ols_fit(design, targets);
        else
          fit = lasso_fit(design, targets, cfg.lasso);
      } catch (const Error& e) {
        throw ConvergenceError("trainer",
                               "epoch " + std::to_string(epoch) + ", layer " +
                                   std::to_string(layer) + ": " + e.what(),
                               0.0);
      }
      next.dense_layers.push_back({fit.weights, fit.bias});
      uq.psi_gram.push_back(design.transpose() * design);
      uq.sigma_hat_sq.push_back(fit.residual_variance);
    }

    model = std::move(next);
    if (hooks.on_epoch) hooks.on_epoch(epoch, batch, model);

    EpochTrace trace;
    trace.epoch = epoch;
    Matrix train_out = detail::dense_forward(model, detail::batch_first_layer(model, train_cross));
    trace.train_metric = detail::metric_of(net.task, y, train_out);
    if (x_test && y_test) {
      Matrix test_out = detail::dense_forward(model, detail::batch_first_layer(model, test_cross));
      trace.test_metric = detail::metric_of(net.task, *y_test, test_out);
    } else {
      trace.test_metric = std::numeric_limits<double>::quiet_NaN();
    }
    double sv = 0.0;
    for (const auto& unit : model.svr_layer) sv += static_cast<double>(unit.support_ids.size());
    trace.sv_count_mean = sv / static_cast<double>(m1);
    trace.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.traces.push_back(trace);

    result.snapshots.push_back({epoch, model, std::move(uq)});
    if (!keep_all && result.snapshots.size() > ring)
      result.snapshots.erase(result.snapshots.begin());
  }
  return result;
}

// Mean forward output over the last k snapshots. Classification averages
// logits; use predict_label for the thresholded class.
inline Vector predict_mean(const std::vector<Snapshot>& snapshots, const Vector& z, int k) {
  require(k >= 1 && static_cast<std::size_t>(k) <= snapshots.size(), "trainer",
          "predict: need at least k snapshots");
  Vector acc;
  for (std::size_t t = snapshots.size() - static_cast<std::size_t>(k); t < snapshots.size(); ++t) {
    Vector out = forward_output(snapshots[t].model, z);
    if (acc.size() == 0)
      acc = out;
    else
      acc += out;
  }
  return acc / static_cast<double>(k);
}

inline Vector predict(const std::vector<Snapshot>& snapshots, const Vector& z, int k) {
  Vector mean = predict_mean(snapshots, z, k);
  if (!snapshots.empty() &&
      snapshots.back().model.config.task == Task::kBinaryClassification) {
    Vector label(1);
    label[0] = mean[0] > 0.0 ? 1.0 : 0.0;
    return label;
  }
  return mean;
}

// Batched snapshot-averaged outputs for many evaluation points; kernel blocks
// against the training inputs are computed once per distinct bandwidth.
inline Matrix predict_mean_batch(const std::vector<Snapshot>& snapshots, const Matrix& x_eval,
                                 int k) {
  require(k >= 1 && static_cast<std::size_t>(k) <= snapshots.size(), "trainer",
          "predict: need at least k snapshots");
  const auto& ref = snapshots.back().model;
  const auto m1 = ref.svr_layer.size();
  std::vector<std::shared_ptr<const Matrix>> cross(m1);
  for (std::size_t u = 0; u < m1; ++u) {
    const double g = ref.svr_layer[u].gamma;
    for (std::size_t p = 0; p < u; ++p)
      if (ref.svr_layer[p].gamma == g) {
        cross[u] = cross[p];
        break;
      }
    if (!cross[u])
      cross[u] =
          std::make_shared<const Matrix>(gram(x_eval, *ref.svr_layer[u].train_x, g).values);
  }
  Matrix acc;
  for (std::size_t t = snapshots.size() - static_cast<std::size_t>(k); t < snapshots.size();
       ++t) {
    Matrix out = detail::dense_forward(snapshots[t].model,
                                       detail::batch_first_layer(snapshots[t].model, cross));
    if (acc.size() == 0)
      acc = out;
    else
      acc += out;
  }
  return acc / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Minimal SGD-with-momentum multilayer perceptron used as a comparison
// baseline in the simulation experiments.
// ---------------------------------------------------------------------------

struct MlpModel {
  std::vector<Matrix> w;
  std::vector<Vector> b;
  Activation activation = Activation::kTanh;
  Task task = Task::kRegression;

  Matrix forward(const Matrix& x) const {
    Matrix z = x;
    for (std::size_t l = 0; l < w.size(); ++l) {
      z = (z * w[l].transpose()).rowwise() + b[l].transpose();
      if (l + 1 < w.size())
        for (Eigen::Index i = 0; i < z.rows(); ++i)
          for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = activate(activation, z(i, j));
    }
    return z;
  }
};

struct MlpConfig {
  std::vector<int> hidden_widths;
  double lr = 0.005;
  double momentum = 0.0;
  double lasso_lambda = 0.0;
  int epochs = 100;
  int batch = 100;
  std::uint64_t seed = 1;
  Task task = Task::kRegression;
  Activation activation = Activation::kTanh;
};

struct MlpResult {
  MlpModel model;
  std::vector<EpochTrace> traces;
};

inline MlpResult sgd_mlp_train(const Matrix& x, const Matrix& y, const MlpConfig& cfg,
                               const Matrix* x_test = nullptr, const Matrix* y_test = nullptr) {
  require(x.rows() == y.rows() && x.rows() >= 1, "trainer", "sgd_mlp: row mismatch");
  if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("trainer", "sgd_mlp: bad epochs/batch");
  const auto n = x.rows();

  MlpModel model;
  model.activation = cfg.activation;
  model.task = cfg.task;
  std::vector<int> dims;
  dims.push_back(static_cast<int>(x.cols()));
  for (int wdt : cfg.hidden_widths) dims.push_back(wdt);
  dims.push_back(static_cast<int>(y.cols()));
  Rng rng(Rng::derive(cfg.seed, {0x3147u}));
  std::vector<Matrix> vel_w;
  std::vector<Vector> vel_b;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    Matrix wl(dims[l + 1], dims[l]);
    for (Eigen::Index r = 0; r < wl.rows(); ++r)
      for (Eigen::Index c = 0; c < wl.cols(); ++c) wl(r, c) = rng.uniform(-bound, bound);
    model.w.push_back(std::move(wl));
    model.b.push_back(Vector::Zero(dims[l + 1]));
    vel_w.push_back(Matrix::Zero(dims[l + 1], dims[l]));
    vel_b.push_back(Vector::Zero(dims[l + 1]));
  }

  MlpResult out;
  const std::size_t layers = model.w.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(Rng::derive(cfg.seed, {0x5u, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

    for (Eigen::Index start = 0; start < n; start += cfg.batch) {
      const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch, n - start);
      Matrix xb(bsz, x.cols());
      Matrix yb(bsz, y.cols());
      for (Eigen::Index r = 0; r < bsz; ++r) {
        xb.row(r) = x.row(order[static_cast<std::size_t>(start + r)]);
        yb.row(r) = y.row(order[static_cast<std::size_t>(start + r)]);
      }
      // Forward with cached pre-activations.
      std::vector<Matrix> acts;  // post-activation inputs per layer
      acts.push_back(xb);
      std::vector<Matrix> pre(layers);
      for (std::size_t l = 0; l < layers; ++l) {
        pre[l] = (acts.back() * model.w[l].transpose()).rowwise() + model.b[l].transpose();
        if (l + 1 < layers) {
          Matrix a(pre[l].rows(), pre[l].cols());
          for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j)
              a(i, j) = activate(cfg.activation, pre[l](i, j));
          acts.push_back(std::move(a));
        }
      }
      // Output delta: d loss / d pre-activation.
      Matrix delta;
      if (cfg.task == Task::kRegression) {
        delta = 2.0 * (pre[layers - 1] - yb) / static_cast<double>(bsz);
      } else {
        delta.resize(bsz, 1);
        for (Eigen::Index r = 0; r < bsz; ++r)
          delta(r, 0) = (sigmoid(pre[layers - 1](r, 0)) - yb(r, 0)) / static_cast<double>(bsz);
      }
      for (std::size_t l = layers; l-- > 0;) {
        Matrix gw = delta.transpose() * acts[l];
        Vector gb = delta.colwise().sum().transpose();
        if (cfg.lasso_lambda > 0.0)
          gw += cfg.lasso_lambda * model.w[l].array().sign().matrix();
        if (l > 0) {
          Matrix back = delta * model.w[l];
          delta.resize(back.rows(), back.cols());
          for (Eigen::Index i = 0; i < back.rows(); ++i)
            for (Eigen::Index j = 0; j < back.cols(); ++j)
              delta(i, j) = back(i, j) * activate_deriv(cfg.activation, pre[l - 1](i, j));
        }
        vel_w[l] = cfg.momentum * vel_w[l] - cfg.lr * gw;
        vel_b[l] = cfg.momentum * vel_b[l] - cfg.lr * gb;
        model.w[l] += vel_w[l];
        model.b[l] += vel_b[l];
        if (!model.w[l].allFinite())
          throw DivergenceError("trainer", "sgd_mlp diverged at epoch " + std::to_string(epoch));
      }
    }

    EpochTrace trace;
    trace.epoch = epoch;
    trace.train_metric = detail::metric_of(cfg.task, y, model.forward(x));
    trace.test_metric = (x_test && y_test)
                            ? detail::metric_of(cfg.task, *y_test, model.forward(*x_test))
                            : std::numeric_limits<double>::quiet_NaN();
    trace.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.traces.push_back(trace);
  }
  out.model = std::move(model);
  return out;
}

}  // namespace kstonet
