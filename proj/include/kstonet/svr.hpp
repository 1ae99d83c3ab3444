#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/kernel.hpp"

namespace kstonet {

enum class CostScaling {
  kTotal,      // box bound = cost, matching off-the-shelf SVR solvers
  kPerSample,  // box bound = cost / n, the literal 1/n-scaled objective
};

struct SvrConfig {
  double cost = 1.0;      // regularization weight on the epsilon-insensitive loss
  double epsilon = 0.1;   // tube half-width
  double kkt_tol = 1e-3;  // stop when the maximal KKT violation falls below this
  long max_iter = 10'000'000;
  CostScaling cost_scaling = CostScaling::kTotal;

  void validate() const {
    if (!(cost > 0.0)) throw ConfigError("svr", "cost must be positive");
    if (!(epsilon >= 0.0)) throw ConfigError("svr", "epsilon must be nonnegative");
    if (!(kkt_tol > 0.0)) throw ConfigError("svr", "kkt_tol must be positive");
    if (max_iter < 1) throw ConfigError("svr", "max_iter must be positive");
  }

  double box_bound(Eigen::Index n) const {
    return cost_scaling == CostScaling::kTotal ? cost : cost / static_cast<double>(n);
  }
};

// Fitted epsilon-SVR in representer form: f(z) = bias + sum_i dual_coefs[i] K(x_i, z).
// dual_coefs[i] = alpha_i - alpha*_i. Marginal vectors are support vectors whose
// dual coefficient sits strictly inside the box; they pin the posterior variance.
struct SvrModel {
  std::shared_ptr<const Matrix> train_x;
  Vector dual_coefs;
  double bias = 0.0;
  double gamma = 1.0;
  double box = 0.0;  // per-sample bound the solver used
  double epsilon = 0.0;
  std::vector<int> support_ids;
  std::vector<int> marginal_ids;
  double dual_objective = 0.0;
};

namespace detail {

// Relative slack below which a dual coefficient counts as zero. SMO clips
// exactly to the bounds, so this only absorbs accumulated round-off.
constexpr double kCoefZeroRel = 1e-12;
// A coefficient below box*(1 - kMarginalRel) in magnitude is treated as
// strictly interior, i.e. a marginal vector.
constexpr double kMarginalRel = 1e-3;

struct SmoResult {
  Vector beta;  // 2n working variables: [alpha; alpha*]
  double rho = 0.0;
  double dual_objective = 0.0;
  long iterations = 0;
};

// Sequential minimal optimization on the epsilon-SVR dual with maximal
// violating pair selection. Variables t < n carry z_t = +1 (alpha side),
// t >= n carry z_t = -1 (alpha* side); Q_{st} = z_s z_t K(s%n, t%n).
inline SmoResult smo_solve(const Matrix& k, const Vector& y, double box, double epsilon,
                           double tol, long max_iter, std::vector<double>* objective_trace) {
  const Eigen::Index n = y.size();
  const Eigen::Index l = 2 * n;
  constexpr double kTau = 1e-12;

  Vector beta = Vector::Zero(l);
  Vector grad(l);  // grad_t = sum_u Q_tu beta_u + p_t; zero beta gives grad = p
  for (Eigen::Index t = 0; t < n; ++t) grad[t] = epsilon - y[t];
  for (Eigen::Index t = 0; t < n; ++t) grad[n + t] = epsilon + y[t];

  auto sign_of = [n](Eigen::Index t) { return t < n ? 1.0 : -1.0; };
  auto point_of = [n](Eigen::Index t) { return t < n ? t : t - n; };

  SmoResult out;
  long iter = 0;
  for (; iter < max_iter; ++iter) {
    // Maximal violating pair: i maximizes -z grad over the up-set,
    // j minimizes -z grad over the down-set.
    double g_max = -std::numeric_limits<double>::infinity();
    double g_min = std::numeric_limits<double>::infinity();
    Eigen::Index i = -1, j = -1;
    for (Eigen::Index t = 0; t < l; ++t) {
      const double z = sign_of(t);
      const double zg = -z * grad[t];
      const bool can_up = (z > 0.0) ? beta[t] < box : beta[t] > 0.0;
      const bool can_dn = (z > 0.0) ? beta[t] > 0.0 : beta[t] < box;
      if (can_up && zg > g_max) {
        g_max = zg;
        i = t;
      }
      if (can_dn && zg < g_min) {
        g_min = zg;
        j = t;
      }
    }
    if (i < 0 || j < 0 || g_max - g_min < tol) break;

    const double zi = sign_of(i);
    const double zj = sign_of(j);
    const auto pi = point_of(i);
    const auto pj = point_of(j);
    const double kii = k(pi, pi);
    const double kjj = k(pj, pj);
    const double kij = k(pi, pj);
    const double old_bi = beta[i];
    const double old_bj = beta[j];

    if (zi != zj) {
      double quad = kii + kjj - 2.0 * kij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = beta[i] - beta[j];
      beta[i] += delta;
      beta[j] += delta;
      if (diff > 0.0) {
        if (beta[j] < 0.0) {
          beta[j] = 0.0;
          beta[i] = diff;
        }
      } else {
        if (beta[i] < 0.0) {
          beta[i] = 0.0;
          beta[j] = -diff;
        }
      }
      if (diff > 0.0) {
        if (beta[i] > box) {
          beta[i] = box;
          beta[j] = box - diff;
        }
      } else {
        if (beta[j] > box) {
          beta[j] = box;
          beta[i] = box + diff;
        }
      }
    } else {
      double quad = kii + kjj - 2.0 * kij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = beta[i] + beta[j];
      beta[i] -= delta;
      beta[j] += delta;
      if (sum > box) {
        if (beta[i] > box) {
          beta[i] = box;
          beta[j] = sum - box;
        }
      } else {
        if (beta[j] < 0.0) {
          beta[j] = 0.0;
          beta[i] = sum;
        }
      }
      if (sum > box) {
        if (beta[j] > box) {
          beta[j] = box;
          beta[i] = sum - box;
        }
      } else {
        if (beta[i] < 0.0) {
          beta[i] = 0.0;
          beta[j] = sum;
        }
      }
    }

    const double di = beta[i] - old_bi;
    const double dj = beta[j] - old_bj;
    if (di == 0.0 && dj == 0.0) {
      // Numerically stuck pair; treat as converged at current violation.
      break;
    }
    // grad_t += Q_ti di + Q_tj dj with Q_ts = z_t z_s K(t%n, s%n).
    const auto ci = k.col(pi);
    const auto cj = k.col(pj);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double upd = ci[t] * (zi * di) + cj[t] * (zj * dj);
      grad[t] += upd;
      grad[n + t] -= upd;
    }
    if (objective_trace) {
      // 0.5 b'Qb + p'b via grad: p'b = sum_t beta_t (grad_t - (Qb)_t) is O(l^2);
      // use the identity obj = 0.5 * sum_t beta_t (grad_t + p_t).
      double obj = 0.0;
      for (Eigen::Index t = 0; t < n; ++t) {
        obj += 0.5 * beta[t] * (grad[t] + epsilon - y[t]);
        obj += 0.5 * beta[n + t] * (grad[n + t] + epsilon + y[t]);
      }
      objective_trace->push_back(obj);
    }
  }

  if (iter >= max_iter) {
    double g_max = -std::numeric_limits<double>::infinity();
    double g_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < l; ++t) {
      const double z = sign_of(t);
      const double zg = -z * grad[t];
      const bool can_up = (z > 0.0) ? beta[t] < box : beta[t] > 0.0;
      const bool can_dn = (z > 0.0) ? beta[t] > 0.0 : beta[t] < box;
      if (can_up) g_max = std::max(g_max, zg);
      if (can_dn) g_min = std::min(g_min, zg);
    }
    throw ConvergenceError("svr", "SMO exceeded max_iter before KKT satisfaction",
                           g_max - g_min);
  }

  // Feasible interval for the constraint multiplier; bias = -midpoint.
  double lb = -std::numeric_limits<double>::infinity();
  double ub = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < l; ++t) {
    const double z = sign_of(t);
    const double zg = z * grad[t];
    const bool at_upper = beta[t] >= box;
    const bool at_lower = beta[t] <= 0.0;
    if (!at_upper && !at_lower) {
      lb = std::max(lb, zg);
      ub = std::min(ub, zg);
    } else if ((at_upper && z > 0.0) || (at_lower && z < 0.0)) {
      lb = std::max(lb, zg);
    } else {
      ub = std::min(ub, zg);
    }
  }
  out.rho = 0.5 * (lb + ub);

  double obj = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    obj += 0.5 * beta[t] * (grad[t] + epsilon - y[t]);
    obj += 0.5 * beta[n + t] * (grad[n + t] + epsilon + y[t]);
  }
  out.dual_objective = obj;
  out.beta = std::move(beta);
  out.iterations = iter;
  return out;
}

}  // namespace detail

// Solves min over f in the RKHS of  cost_term * sum_i |y_i - f(x_i)|_eps + 0.5 ||f||^2
// through its dual, to KKT tolerance cfg.kkt_tol. A precomputed symmetric Gram
// matrix over x may be supplied to share work across per-unit fits.
inline SvrModel svr_fit(const std::shared_ptr<const Matrix>& x, const Vector& y,
                        const SvrConfig& cfg, double gamma,
                        const GramMatrix* precomputed = nullptr,
                        std::vector<double>* objective_trace = nullptr) {
  cfg.validate();
  require(x != nullptr && x->rows() == y.size(), "svr", "svr_fit: row count mismatch");
  require(x->rows() >= 1, "svr", "svr_fit: empty training set");
  require(x->allFinite() && y.allFinite(), "svr", "svr_fit: non-finite inputs");
  require(gamma > 0.0, "svr", "svr_fit: gamma must be positive");

  const Eigen::Index n = y.size();
  const double box = cfg.box_bound(n);

  GramMatrix local;
  const GramMatrix* g = precomputed;
  if (g) {
    require(g->symmetric && g->values.rows() == n && g->gamma == gamma, "svr",
            "svr_fit: precomputed Gram does not match inputs");
  } else {
    local = gram(*x, *x, gamma);
    g = &local;
  }

  auto sol = detail::smo_solve(g->values, y, box, cfg.epsilon, cfg.kkt_tol, cfg.max_iter,
                               objective_trace);

  SvrModel model;
  model.train_x = x;
  model.gamma = gamma;
  model.box = box;
  model.epsilon = cfg.epsilon;
  model.bias = -sol.rho;
  model.dual_objective = sol.dual_objective;
  model.dual_coefs.resize(n);
  const double zero_tol = box * detail::kCoefZeroRel;
  const double interior_cap = box * (1.0 - detail::kMarginalRel);
  for (Eigen::Index i = 0; i < n; ++i) {
    double c = sol.beta[i] - sol.beta[n + i];
    if (std::abs(c) <= zero_tol) c = 0.0;
    model.dual_coefs[i] = c;
    if (c != 0.0) {
      model.support_ids.push_back(static_cast<int>(i));
      if (std::abs(c) < interior_cap) model.marginal_ids.push_back(static_cast<int>(i));
    }
  }
  return model;
}

inline double svr_predict(const SvrModel& model, const Vector& z) {
  require(model.train_x && z.size() == model.train_x->cols(), "svr",
          "svr_predict: dimension mismatch");
  double acc = model.bias;
  for (int i : model.support_ids)
    acc += model.dual_coefs[i] * rbf_eval(model.train_x->row(i).transpose(), z, model.gamma);
  return acc;
}

// Predictions at all original training points, reusing a symmetric training Gram.
inline Vector svr_predict_train(const SvrModel& model, const GramMatrix& g) {
  require(g.symmetric && g.values.rows() == model.dual_coefs.size(), "svr",
          "svr_predict_train: Gram mismatch");
  Vector out = Vector::Constant(g.values.rows(), model.bias);
  for (int i : model.support_ids) out += model.dual_coefs[i] * g.values.col(i);
  return out;
}

// Posterior variance at z from the marginal-vector set:
//   K_zz - K_{M,z}' K_{M,M}^{-1} K_{M,z},  clamped to [0, K_zz].
// A cached factorization can serve many test points; see SvrPosterior.
class SvrPosterior {
 public:
  explicit SvrPosterior(const SvrModel& model) : model_(&model) {
    const auto& ids = model.marginal_ids;
    const auto m = static_cast<Eigen::Index>(ids.size());
    if (m == 0) return;
    Matrix kmm(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b <= a; ++b) {
        double v = rbf_eval(model.train_x->row(ids[a]).transpose(),
                            model.train_x->row(ids[b]).transpose(), model.gamma);
        kmm(a, b) = v;
        kmm(b, a) = v;
      }
    double jitter = 1e-8;
    for (; jitter <= 1e-4 * 1.0000001; jitter *= 10.0) {
      Matrix reg = kmm + jitter * Matrix::Identity(m, m);
      llt_.compute(reg);
      if (llt_.info() == Eigen::Success) return;
    }
    throw NumericalError("svr", "marginal-vector Gram singular beyond ridge repair");
  }

  double variance(const Vector& z) const {
    const auto& ids = model_->marginal_ids;
    const double kzz = 1.0;  // RBF diagonal
    if (ids.empty()) return kzz;
    Vector kz(static_cast<Eigen::Index>(ids.size()));
    for (std::size_t a = 0; a < ids.size(); ++a)
      kz[static_cast<Eigen::Index>(a)] =
          rbf_eval(model_->train_x->row(ids[a]).transpose(), z, model_->gamma);
    double v = kzz - kz.dot(llt_.solve(kz));
    return std::clamp(v, 0.0, kzz);
  }

 private:
  const SvrModel* model_;
  Eigen::LLT<Matrix> llt_;
};

inline double svr_variance(const SvrModel& model, const Vector& z) {
  return SvrPosterior(model).variance(z);
}

// Primal objective cost_term * sum |resid|_eps + 0.5 c'Kc of a fitted model,
// used by the retraining-optimality checks.
inline double svr_primal_objective(const SvrModel& model, const GramMatrix& g, const Vector& y,
                                   double cost_term_per_sample) {
  Vector f = svr_predict_train(model, g);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    loss += std::max(0.0, std::abs(y[i] - f[i]) - model.epsilon);
  double quad = 0.0;
  for (int a : model.support_ids)
    for (int b : model.support_ids)
      quad += model.dual_coefs[a] * model.dual_coefs[b] * g.values(a, b);
  return cost_term_per_sample * loss + 0.5 * quad;
}

}  // namespace kstonet
