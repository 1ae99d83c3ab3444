#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/parallel.hpp"

namespace kstonet {

// RBF kernel parameters. A single bandwidth is shared by all first-layer
// units unless per_unit_gamma supplies a heterogeneous set.
struct KernelSpec {
  double gamma = 1.0;
  std::optional<std::vector<double>> per_unit_gamma;

  double gamma_for_unit(std::size_t unit) const {
    if (per_unit_gamma && unit < per_unit_gamma->size()) return (*per_unit_gamma)[unit];
    return gamma;
  }

  void validate(std::size_t m1) const {
    if (!(gamma > 0.0)) throw ConfigError("kernel", "gamma must be positive");
    if (per_unit_gamma) {
      if (per_unit_gamma->size() != m1)
        throw ConfigError("kernel", "per_unit_gamma length must equal the first hidden width");
      for (double g : *per_unit_gamma)
        if (!(g > 0.0)) throw ConfigError("kernel", "per_unit_gamma entries must be positive");
    }
  }
};

// k(x, z) = exp(-gamma * ||x - z||^2), in (0, 1].
inline double rbf_eval(const Vector& x, const Vector& z, double gamma) {
  require(x.size() == z.size(), "kernel", "rbf_eval: dimension mismatch");
  require(gamma > 0.0, "kernel", "rbf_eval: gamma must be positive");
  return std::exp(-gamma * (x - z).squaredNorm());
}

// Default bandwidth 1 / (p * Var(x)) with the variance pooled over all n*p
// entries after per-column centering.
inline double default_gamma(const Matrix& x) {
  const auto n = x.rows();
  const auto p = x.cols();
  require(n >= 2, "kernel", "default_gamma: need at least two rows");
  double ss = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    double mean = x.col(j).mean();
    ss += (x.col(j).array() - mean).square().sum();
  }
  double pooled_var = ss / static_cast<double>(n * p - 1);
  if (!(pooled_var > 0.0))
    throw ConfigError("kernel", "default_gamma: zero variance; set gamma explicitly");
  return 1.0 / (static_cast<double>(p) * pooled_var);
}

// Cached kernel evaluations K(x_i, z_j) between two sample sets.
// Immutable after construction; safe to share across threads.
struct GramMatrix {
  Matrix values;
  double gamma = 0.0;
  bool symmetric = false;  // row set == column set
};

inline GramMatrix gram(const Matrix& x, const Matrix& z, double gamma) {
  require(x.cols() == z.cols(), "kernel", "gram: feature dimensions differ");
  require(gamma > 0.0, "kernel", "gram: gamma must be positive");
  GramMatrix g;
  g.gamma = gamma;
  g.symmetric = (&x == &z) || (x.rows() == z.rows() && x == z);
  g.values.resize(x.rows(), z.rows());
  // ||x - z||^2 = ||x||^2 + ||z||^2 - 2 x.z, row-parallel.
  Vector xn = x.rowwise().squaredNorm();
  Vector zn = z.rowwise().squaredNorm();
  parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    Vector cross = z * x.row(row).transpose();
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      double d2 = xn[row] + zn[j] - 2.0 * cross[j];
      g.values(row, j) = std::exp(-gamma * std::max(0.0, d2));
    }
  });
  if (g.symmetric) {
    for (Eigen::Index i = 0; i < g.values.rows(); ++i) g.values(i, i) = 1.0;
  }
  return g;
}

}  // namespace kstonet
