#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/kernel.hpp"
#include "kstonet/svr.hpp"

namespace kstonet {

enum class Activation { kTanh, kSoftplus, kSigmoid };
enum class Task { kRegression, kBinaryClassification };

inline double activate(Activation a, double s) {
  switch (a) {
    case Activation::kTanh:
      return std::tanh(s);
    case Activation::kSoftplus:
      return s > 30.0 ? s : std::log1p(std::exp(s));
    case Activation::kSigmoid:
      return 1.0 / (1.0 + std::exp(-s));
  }
  return 0.0;
}

inline double activate_deriv(Activation a, double s) {
  switch (a) {
    case Activation::kTanh: {
      double t = std::tanh(s);
      return 1.0 - t * t;
    }
    case Activation::kSoftplus:
      return 1.0 / (1.0 + std::exp(-s));
    case Activation::kSigmoid: {
      double sig = 1.0 / (1.0 + std::exp(-s));
      return sig * (1.0 - sig);
    }
  }
  return 0.0;
}

inline Vector activate(Activation a, const Vector& s) {
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) out[i] = activate(a, s[i]);
  return out;
}

inline Vector activate_deriv(Activation a, const Vector& s) {
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) out[i] = activate_deriv(a, s[i]);
  return out;
}

// Density of the first-layer auxiliary noise,
//   f(r) = C / (2 (1 + C eps)) * exp(-C max(0, |r| - eps)),
// flat inside the tube [-eps, eps] with Laplace tails.
struct NoiseDensity {
  double c = 1.0;
  double eps = 0.0;

  void validate() const {
    if (!(c > 0.0)) throw ConfigError("model", "noise scale C must be positive");
    if (!(eps >= 0.0)) throw ConfigError("model", "noise tube eps must be nonnegative");
  }
};

inline double noise_logpdf(const NoiseDensity& d, double r) {
  return std::log(d.c) - std::log(2.0 * (1.0 + d.c * d.eps)) -
         d.c * std::max(0.0, std::abs(r) - d.eps);
}

// d/dr noise_logpdf: zero inside the closed tube, -C sign(r) outside.
inline double noise_score(const NoiseDensity& d, double r) {
  if (std::abs(r) <= d.eps) return 0.0;
  return r > 0.0 ? -d.c : d.c;
}

// Closed-form variance 2/C^2 + eps^2 (eps C + 3) / (3 (eps C + 1)).
inline double noise_variance(const NoiseDensity& d) {
  const double ce = d.c * d.eps;
  return 2.0 / (d.c * d.c) + d.eps * d.eps * (ce + 3.0) / (3.0 * (ce + 1.0));
}

struct NetConfig {
  std::vector<int> hidden_widths;  // m_1 .. m_h
  int output_dim = 1;              // m_{h+1}
  Activation activation = Activation::kTanh;
  Task task = Task::kRegression;
  double c_noise = 10.0;                // C of the first-layer noise
  double eps_noise = 0.01;              // tube half-width of the first-layer noise
  std::vector<double> sigma_sq;         // sigma^2_2 .. sigma^2_{h+1}
  bool enforce_pyramidal = false;       // optional m_1 >= m_2 >= ... check
  bool temper_classification = true;    // scale the Bernoulli score by 1/sigma^2_{h+1}

  int depth() const { return static_cast<int>(hidden_widths.size()); }

  // Width of layer i in 1..h+1.
  int width(int layer) const {
    return layer <= depth() ? hidden_widths[layer - 1] : output_dim;
  }

  void validate() const {
    if (hidden_widths.empty()) throw ConfigError("model", "need at least one hidden layer");
    for (int w : hidden_widths)
      if (w < 1) throw ConfigError("model", "hidden widths must be positive");
    if (output_dim < 1) throw ConfigError("model", "output_dim must be positive");
    if (task == Task::kBinaryClassification && output_dim != 1)
      throw ConfigError("model", "binary classification uses a single logit output");
    if (sigma_sq.size() != hidden_widths.size())
      throw ConfigError("model", "sigma_sq must list one value per layer 2..h+1");
    for (double s : sigma_sq)
      if (!(s > 0.0)) throw ConfigError("model", "sigma_sq entries must be positive");
    NoiseDensity{c_noise, eps_noise}.validate();
    if (enforce_pyramidal) {
      for (std::size_t i = 1; i < hidden_widths.size(); ++i)
        if (hidden_widths[i] > hidden_widths[i - 1])
          throw ConfigError("model", "widths must be nonincreasing (pyramidal)");
      if (output_dim > hidden_widths.back())
        throw ConfigError("model", "widths must be nonincreasing (pyramidal)");
    }
  }

  // sigma^2 of layer i in 2..h+1.
  double sigma_sq_of(int layer) const { return sigma_sq[layer - 2]; }

  NoiseDensity first_layer_noise() const { return NoiseDensity{c_noise, eps_noise}; }
};

struct DenseLayer {
  Matrix w;  // m_i x m_{i-1}
  Vector b;  // m_i
};

// Full model: one SVR per first-layer unit plus dense layers 2..h+1.
struct KStoNetModel {
  std::vector<SvrModel> svr_layer;
  std::vector<DenseLayer> dense_layers;  // index k holds layer k+2
  NetConfig config;

  void validate() const {
    config.validate();
    require(static_cast<int>(svr_layer.size()) == config.hidden_widths[0], "model",
            "svr_layer size must equal the first hidden width");
    require(static_cast<int>(dense_layers.size()) == config.depth(), "model",
            "need one dense layer per layer 2..h+1");
    int prev = config.hidden_widths[0];
    for (int i = 0; i < config.depth(); ++i) {
      const auto& lay = dense_layers[static_cast<std::size_t>(i)];
      int rows = config.width(i + 2);
      require(lay.w.rows() == rows && lay.w.cols() == prev && lay.b.size() == rows, "model",
              "dense layer shapes must chain");
      require(lay.w.allFinite() && lay.b.allFinite(), "model", "parameters must be finite");
      prev = rows;
    }
  }

  const DenseLayer& dense(int layer) const {  // layer in 2..h+1
    return dense_layers[static_cast<std::size_t>(layer - 2)];
  }
};

// Noise-free pass: Z_1[k] = svr_k(x); Z_i = b_i + w_i act(Z_{i-1}); the output
// entry is the raw regression value or the classification logit.
inline std::vector<Vector> forward(const KStoNetModel& model, const Vector& x) {
  const int h = model.config.depth();
  std::vector<Vector> z(static_cast<std::size_t>(h) + 1);
  Vector z1(static_cast<Eigen::Index>(model.svr_layer.size()));
  for (std::size_t k = 0; k < model.svr_layer.size(); ++k)
    z1[static_cast<Eigen::Index>(k)] = svr_predict(model.svr_layer[k], x);
  z[0] = std::move(z1);
  for (int layer = 2; layer <= h + 1; ++layer) {
    const auto& lay = model.dense(layer);
    z[static_cast<std::size_t>(layer - 1)] =
        lay.b + lay.w * activate(model.config.activation, z[static_cast<std::size_t>(layer - 2)]);
  }
  return z;
}

inline Vector forward_output(const KStoNetModel& model, const Vector& x) {
  return forward(model, x).back();
}

// Batched first-layer outputs at the training points via a shared Gram.
inline Matrix first_layer_train_outputs(const KStoNetModel& model,
                                        const std::vector<GramMatrix>& unit_grams) {
  const auto m1 = static_cast<Eigen::Index>(model.svr_layer.size());
  require(static_cast<Eigen::Index>(unit_grams.size()) == m1, "model",
          "one Gram per first-layer unit expected");
  Matrix out(unit_grams[0].values.rows(), m1);
  for (Eigen::Index k = 0; k < m1; ++k)
    out.col(k) = svr_predict_train(model.svr_layer[static_cast<std::size_t>(k)],
                                   unit_grams[static_cast<std::size_t>(k)]);
  return out;
}

inline double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// log Bernoulli(y | logit), stable for large |logit|.
inline double bernoulli_logpmf(double y, double logit) {
  // y*logit - log(1 + exp(logit))
  const double softplus = logit > 30.0 ? logit : std::log1p(std::exp(logit));
  return y * logit - softplus;
}

// Output-layer log-likelihood of y given the pre-activation output vector.
inline double output_loglik(const NetConfig& cfg, const Vector& y, const Vector& z_out) {
  if (cfg.task == Task::kRegression) {
    const double s2 = cfg.sigma_sq_of(cfg.depth() + 1);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      const double r = y[j] - z_out[j];
      acc += -0.5 * r * r / s2 - 0.5 * std::log(2.0 * 3.141592653589793238462643 * s2);
    }
    return acc;
  }
  double ll = bernoulli_logpmf(y[0], z_out[0]);
  if (cfg.temper_classification) ll /= cfg.sigma_sq_of(cfg.depth() + 1);
  return ll;
}

}  // namespace kstonet
