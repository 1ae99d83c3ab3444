#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kstonet/common.hpp"
#include "kstonet/csv.hpp"
#include "kstonet/kernel.hpp"
#include "kstonet/model.hpp"
#include "kstonet/rng.hpp"
#include "kstonet/svr.hpp"

namespace kstonet {

struct Dataset {
  Matrix x;
  Matrix y;  // n x 1 targets (reals, or 0/1 labels)
  std::vector<std::string> feature_names;
  bool standardized = false;
  Vector col_mean;
  Vector col_sd;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }

  void validate() const {
    require(x.rows() == y.rows(), "data", "X/Y row mismatch");
    require(x.allFinite() && y.allFinite(), "data", "dataset contains NaN/Inf");
  }
};

namespace detail {

inline std::vector<std::string> default_names(Eigen::Index p) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

// Rows with pairwise correlation 0.5 via the shared-factor construction
// x_j = (e + z_j) / sqrt(2), all components standard normal.
inline Matrix equicorrelated_normal(Eigen::Index n, Eigen::Index p, Rng& rng) {
  Matrix x(n, p);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double shared = rng.next_normal();
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = (shared + rng.next_normal()) * inv_sqrt2;
  }
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Simulation generators
// ---------------------------------------------------------------------------

// Planted two-hidden-layer tanh network with weights drawn from {-2,-1,1,2}.
struct FullRankGenerator {
  Matrix w1, w2, w3;

  static FullRankGenerator sample(Eigen::Index p, std::uint64_t seed,
                                  Eigen::Index width = 5) {
    Rng rng(Rng::derive(seed, {0xF111u}));
    const double choices[4] = {-2.0, -1.0, 1.0, 2.0};
    auto fill = [&](Matrix& m, Eigen::Index r, Eigen::Index c) {
      m.resize(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = choices[rng.next_below(4)];
    };
    FullRankGenerator g;
    fill(g.w1, width, p);
    fill(g.w2, width, width);
    fill(g.w3, 1, width);
    return g;
  }

  double mean(const Vector& x) const {
    const Vector h1 = (w1 * x).array().tanh();
    const Vector h2 = (w2 * h1).array().tanh();
    return (w3 * h2)(0, 0);
  }

  Dataset sample_data(Eigen::Index n, std::uint64_t seed, double noise_sd = 1.0) const {
    Rng rng(Rng::derive(seed, {0xF112u}));
    Dataset ds;
    ds.x = detail::equicorrelated_normal(n, w1.cols(), rng);
    ds.y.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i)
      ds.y(i, 0) = mean(ds.x.row(i).transpose()) + noise_sd * rng.next_normal();
    ds.feature_names = detail::default_names(ds.p());
    return ds;
  }
};

inline Dataset gen_full_rank(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  return FullRankGenerator::sample(p, seed).sample_data(n, seed);
}

// Planted first-layer-kernel network: five SVRs fitted on standard-normal
// targets give the dual parameters, then y = w2 tanh(svr outputs) + b2 + noise.
struct KnnSimGenerator {
  std::vector<SvrModel> units;
  Vector w2;
  double b2 = 0.0;

  static KnnSimGenerator make(const std::shared_ptr<const Matrix>& anchors, std::uint64_t seed,
                              int width = 5) {
    Rng rng(Rng::derive(seed, {0x5119u}));
    KnnSimGenerator g;
    const double gamma = default_gamma(*anchors);
    SvrConfig cfg;
    cfg.cost = 5.0;
    cfg.epsilon = 0.01;
    GramMatrix gm = gram(*anchors, *anchors, gamma);
    for (int k = 0; k < width; ++k) {
      Vector targets(anchors->rows());
      for (Eigen::Index i = 0; i < targets.size(); ++i) targets[i] = rng.next_normal();
      g.units.push_back(svr_fit(anchors, targets, cfg, gamma, &gm));
    }
    g.w2.resize(width);
    for (int k = 0; k < width; ++k) g.w2[k] = rng.next_normal();
    g.b2 = rng.next_normal();
    return g;
  }

  double mean(const Vector& x) const {
    double acc = b2;
    for (Eigen::Index k = 0; k < w2.size(); ++k)
      acc += w2[k] * std::tanh(svr_predict(units[static_cast<std::size_t>(k)], x));
    return acc;
  }

  Dataset sample_data(const Matrix& x, std::uint64_t seed, double noise_sd = 1.0) const {
    Rng rng(Rng::derive(seed, {0x511Au}));
    Dataset ds;
    ds.x = x;
    ds.y.resize(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      ds.y(i, 0) = mean(x.row(i).transpose()) + noise_sd * rng.next_normal();
    ds.feature_names = detail::default_names(ds.p());
    return ds;
  }
};

struct KnnSimPair {
  Dataset train;
  Dataset test;
  KnnSimGenerator generator;
};

inline KnnSimPair gen_knn_pair(Eigen::Index n_train, Eigen::Index n_test, Eigen::Index p,
                               std::uint64_t seed) {
  Rng rng(Rng::derive(seed, {0x511Bu}));
  auto anchors =
      std::make_shared<const Matrix>(detail::equicorrelated_normal(n_train, p, rng));
  KnnSimGenerator g = KnnSimGenerator::make(anchors, seed);
  KnnSimPair pair;
  pair.train = g.sample_data(*anchors, Rng::derive(seed, {1u}));
  if (n_test > 0) {
    Matrix x_test = detail::equicorrelated_normal(n_test, p, rng);
    pair.test = g.sample_data(x_test, Rng::derive(seed, {2u}));
  }
  pair.generator = std::move(g);
  return pair;
}

inline Dataset gen_knn_data(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  return gen_knn_pair(n, 0, p, seed).train;
}

inline double measurement_error_mean(const Vector& x) {
  return 5.0 * x[1] / (1.0 + x[0] * x[0]) + 5.0 * std::sin(x[2] * x[3]) + 2.0 * x[4];
}

// Nonlinear regression in five correlated predictors; the response is built
// from the clean predictors, which are afterwards perturbed by measurement
// noise. me_scale is a variance by default, a standard deviation when
// scale_is_sd is set.
inline Dataset gen_measurement_error(Eigen::Index n, std::uint64_t seed, double me_scale = 0.5,
                                     bool scale_is_sd = false, double noise_sd = 1.0) {
  Rng rng(Rng::derive(seed, {0x3E88u}));
  Dataset ds;
  Matrix clean = detail::equicorrelated_normal(n, 5, rng);
  ds.y.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i)
    ds.y(i, 0) = measurement_error_mean(clean.row(i).transpose()) + noise_sd * rng.next_normal();
  const double me_sd = scale_is_sd ? me_scale : std::sqrt(me_scale);
  ds.x = clean;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) ds.x(i, j) += me_sd * rng.next_normal();
  ds.feature_names = detail::default_names(5);
  return ds;
}

// ---------------------------------------------------------------------------
// Ingestion, splitting, standardization
// ---------------------------------------------------------------------------

struct CsvSchema {
  std::string label_column = "y";
  Task task = Task::kRegression;
};

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  CsvTable table = read_csv(path);
  Eigen::Index label_idx = -1;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (table.header[j] == schema.label_column) label_idx = static_cast<Eigen::Index>(j);
  require(label_idx >= 0, "data", path + ": label column '" + schema.label_column + "' not found");

  const auto n = static_cast<Eigen::Index>(table.rows.size());
  const auto p = static_cast<Eigen::Index>(table.header.size()) - 1;
  require(n >= 1, "data", path + ": no data rows");
  Dataset ds;
  ds.x.resize(n, p);
  ds.y.resize(n, 1);
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (static_cast<Eigen::Index>(j) != label_idx) ds.feature_names.push_back(table.header[j]);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    Eigen::Index col = 0;
    for (std::size_t j = 0; j < table.rows[i].size(); ++j) {
      const double v = parse_double(table.rows[i][j], path, i);
      if (static_cast<Eigen::Index>(j) == label_idx)
        ds.y(static_cast<Eigen::Index>(i), 0) = v;
      else
        ds.x(static_cast<Eigen::Index>(i), col++) = v;
    }
  }
  if (schema.task == Task::kBinaryClassification) {
    for (Eigen::Index i = 0; i < n; ++i)
      require(ds.y(i, 0) == 0.0 || ds.y(i, 0) == 1.0, "data",
              path + ": row " + std::to_string(i + 2) + ": label must be 0 or 1");
  }
  ds.validate();
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path,
                     const std::string& label_column = "y") {
  CsvWriter w(path);
  std::vector<std::string> header = ds.feature_names;
  if (header.empty()) header = detail::default_names(ds.p());
  header.push_back(label_column);
  w.header(header);
  std::vector<double> row(static_cast<std::size_t>(ds.p()) + 1);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < ds.p(); ++j) row[static_cast<std::size_t>(j)] = ds.x(i, j);
    row.back() = ds.y(i, 0);
    w.row(row);
  }
}

inline Dataset take_rows(const Dataset& ds, const std::vector<Eigen::Index>& idx) {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(idx.size()), ds.p());
  out.y.resize(static_cast<Eigen::Index>(idx.size()), ds.y.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = ds.x.row(idx[i]);
    out.y.row(static_cast<Eigen::Index>(i)) = ds.y.row(idx[i]);
  }
  out.feature_names = ds.feature_names;
  out.standardized = ds.standardized;
  out.col_mean = ds.col_mean;
  out.col_sd = ds.col_sd;
  return out;
}

// Deterministic shuffled split; fraction is the training share.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction,
                                         std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "data", "split fraction must lie in (0, 1)");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.n()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  Rng rng(Rng::derive(seed, {0x59117u}));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  const auto n_train = static_cast<std::size_t>(
      std::max<Eigen::Index>(1, static_cast<Eigen::Index>(fraction * static_cast<double>(ds.n()))));
  std::vector<Eigen::Index> tr(order.begin(), order.begin() + static_cast<long>(n_train));
  std::vector<Eigen::Index> te(order.begin() + static_cast<long>(n_train), order.end());
  return {take_rows(ds, tr), take_rows(ds, te)};
}

// k disjoint, exhaustive folds with sizes differing by at most one;
// returned as (train, held-out) pairs.
inline std::vector<std::pair<Dataset, Dataset>> k_fold_split(const Dataset& ds, int k_folds,
                                                             std::uint64_t seed) {
  require(k_folds >= 2 && k_folds <= ds.n(), "data", "k_folds must lie in [2, n]");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.n()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  Rng rng(Rng::derive(seed, {0x5F01Du}));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  std::vector<std::pair<Dataset, Dataset>> folds;
  for (int f = 0; f < k_folds; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (std::size_t i = 0; i < order.size(); ++i)
      (static_cast<int>(i % static_cast<std::size_t>(k_folds)) == f ? te : tr)
          .push_back(order[i]);
    folds.emplace_back(take_rows(ds, tr), take_rows(ds, te));
  }
  return folds;
}

// Per-column affine map to zero mean, unit variance; constant columns are
// left unscaled. Records the map so it can be inverted or reapplied.
inline Dataset standardize(const Dataset& ds) {
  Dataset out = ds;
  out.col_mean.resize(ds.p());
  out.col_sd.resize(ds.p());
  for (Eigen::Index j = 0; j < ds.p(); ++j) {
    const double mean = ds.x.col(j).mean();
    double var = (ds.x.col(j).array() - mean).square().sum() /
                 std::max<double>(1.0, static_cast<double>(ds.n() - 1));
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    out.col_mean[j] = mean;
    out.col_sd[j] = sd;
    out.x.col(j) = (ds.x.col(j).array() - mean) / sd;
  }
  out.standardized = true;
  return out;
}

inline Matrix apply_standardization(const Dataset& reference, const Matrix& x) {
  require(reference.standardized, "data", "reference dataset is not standardized");
  Matrix out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    out.col(j) = (x.col(j).array() - reference.col_mean[j]) / reference.col_sd[j];
  return out;
}

inline Dataset unstandardize(const Dataset& ds) {
  require(ds.standardized, "data", "dataset is not standardized");
  Dataset out = ds;
  for (Eigen::Index j = 0; j < ds.p(); ++j)
    out.x.col(j) = ds.x.col(j).array() * ds.col_sd[j] + ds.col_mean[j];
  out.standardized = false;
  return out;
}

}  // namespace kstonet
