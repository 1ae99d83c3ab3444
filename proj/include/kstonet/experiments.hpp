#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kstonet/common.hpp"
#include "kstonet/config.hpp"
#include "kstonet/csv.hpp"
#include "kstonet/data.hpp"
#include "kstonet/trainer.hpp"
#include "kstonet/uq.hpp"

namespace kstonet {

// Reproductions of the simulation studies and the QSAR benchmark. Every run
// writes a metrics.csv and a summary.json into its output directory; both
// files are deterministic functions of (options, seed). Wall-clock timing only
// appears in trace files, never in these outputs.

namespace experiments {

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("experiment", "cannot create output dir " + dir);
}

inline void write_summary(const std::string& dir, const json& summary) {
  std::ofstream out(dir + "/summary.json");
  if (!out) throw InputError("experiment", "cannot write summary.json");
  out << summary.dump(2) << '\n';
}

inline void append_traces(CsvWriter& w, const std::string& model,
                          const std::vector<EpochTrace>& traces) {
  for (const auto& t : traces) {
    std::vector<std::string> cells = {model, std::to_string(t.epoch), format_double(t.train_metric),
                                      std::isnan(t.test_metric) ? "" : format_double(t.test_metric),
                                      format_double(t.sv_count_mean)};
    w.raw_row(cells);
  }
}

inline CsvWriter open_metrics(const std::string& dir) {
  CsvWriter w(dir + "/metrics.csv");
  w.header({"model", "epoch", "train_metric", "test_metric", "sv_count_mean"});
  return w;
}

}  // namespace detail

// The paper-default preset with the overrides used by each study.
inline RunConfig full_rank_preset() {
  RunConfig c;
  c.task = Task::kRegression;
  c.hidden_widths = {5};
  c.c_noise = 1.0;
  c.eps_noise = 0.1;
  c.sigma_sq = {0.001};
  c.epochs = 40;
  c.hmc_steps = 25;
  c.hmc_lr = {5e-7};
  c.hmc_alpha = 0.1;
  c.svr_cost = 1.0;
  c.svr_epsilon = 0.1;
  c.glm = "lasso";
  c.lasso_lambda = 1e-4;
  return c;
}

inline RunConfig knn_sim_preset() {
  RunConfig c;
  c.task = Task::kRegression;
  c.hidden_widths = {5};
  c.c_noise = 5.0;
  c.eps_noise = 0.01;
  c.sigma_sq = {0.001};
  c.epochs = 20;
  c.hmc_steps = 25;
  c.hmc_lr = {5e-4};
  c.hmc_alpha = 0.1;
  c.svr_cost = 5.0;
  c.svr_epsilon = 0.01;
  c.glm = "lasso";
  c.lasso_lambda = 1e-4;
  return c;
}

inline RunConfig measurement_error_preset(int hidden_layers, int width, double epsilon) {
  RunConfig c;
  c.task = Task::kRegression;
  c.hidden_widths = std::vector<int>(static_cast<std::size_t>(hidden_layers), width);
  c.c_noise = 1.0;
  c.eps_noise = epsilon;
  c.sigma_sq = std::vector<double>(static_cast<std::size_t>(hidden_layers), 0.001);
  c.sigma_sq.back() = 0.01;  // output layer
  c.epochs = 50;
  c.hmc_steps = 25;
  c.hmc_lr = {5e-5};
  c.hmc_alpha = 1.0;
  c.svr_cost = 1.0;
  c.svr_epsilon = epsilon;
  c.glm = "lasso";
  c.lasso_lambda = 1e-4;
  return c;
}

inline RunConfig qsar_preset() {
  RunConfig c;
  c.task = Task::kBinaryClassification;
  c.hidden_widths = {5};
  c.c_noise = 1.0;
  c.eps_noise = 0.1;
  c.sigma_sq = {0.001};
  c.epochs = 40;
  c.hmc_steps = 25;
  c.hmc_lr = {5e-5};
  c.hmc_alpha = 0.1;
  c.svr_cost = 1.0;
  c.svr_epsilon = 0.1;
  c.glm = "lasso";
  c.lasso_lambda = 1e-4;
  c.average_last_k = 10;
  return c;
}

inline RunConfig coverage_preset() {
  RunConfig c;
  c.task = Task::kRegression;
  c.hidden_widths = {5};
  c.c_noise = 10.0;
  c.eps_noise = 0.05;
  c.sigma_sq = {0.001};
  c.epochs = 50;
  c.hmc_steps = 25;
  c.hmc_lr = {5e-6};
  c.hmc_alpha = 0.1;
  c.svr_cost = 10.0;
  c.svr_epsilon = 0.05;
  c.glm = "ols";
  c.average_last_k = 1;
  return c;
}

// Planted two-hidden-layer network data, n = p = 1000: the IRO-trained model
// against an SGD-trained network of the generating architecture.
inline json run_full_rank(const std::string& out_dir, const json& opts) {
  detail::ensure_dir(out_dir);
  const std::uint64_t seed = opts.value("seed", 1);
  const Eigen::Index n_train = opts.value("n_train", 1000);
  const Eigen::Index n_test = opts.value("n_test", 1000);
  const Eigen::Index p = opts.value("p", 1000);
  const bool run_mlp = opts.value("run_mlp", true);

  auto generator = FullRankGenerator::sample(p, seed);
  Dataset train = generator.sample_data(n_train, Rng::derive(seed, {11u}));
  Dataset test = generator.sample_data(n_test, Rng::derive(seed, {12u}));

  RunConfig rc = full_rank_preset();
  rc.epochs = opts.value("epochs", rc.epochs);
  rc.seed = seed;
  KernelSpec kernel;
  kernel.gamma = default_gamma(train.x);

  TrainResult result = iro_train(train.x, train.y, rc.net_config(), rc.train_config(), kernel,
                                 &test.x, &test.y);

  CsvWriter metrics = detail::open_metrics(out_dir);
  detail::append_traces(metrics, "kstonet", result.traces);

  json summary;
  summary["experiment"] = "full_rank";
  summary["seed"] = seed;
  summary["n_train"] = n_train;
  summary["p"] = p;
  summary["gamma"] = kernel.gamma;
  summary["kstonet_final_train_mse"] = result.traces.back().train_metric;
  summary["kstonet_final_test_mse"] = result.traces.back().test_metric;
  double best_train = result.traces.front().train_metric;
  double min_test = result.traces.front().test_metric;
  double final_test = result.traces.back().test_metric;
  for (const auto& t : result.traces) {
    best_train = std::min(best_train, t.train_metric);
    min_test = std::min(min_test, t.test_metric);
  }
  summary["kstonet_best_train_mse"] = best_train;
  summary["kstonet_min_test_mse"] = min_test;
  summary["kstonet_test_rise_ratio"] = final_test / min_test;

  if (run_mlp) {
    MlpConfig mlp;
    mlp.hidden_widths = {5, 5};
    mlp.lr = 0.005;
    mlp.momentum = 0.0;
    mlp.epochs = opts.value("mlp_epochs", 2000);
    mlp.batch = 100;
    mlp.seed = seed;
    MlpResult base = sgd_mlp_train(train.x, train.y, mlp, &test.x, &test.y);
    detail::append_traces(metrics, "sgd_mlp", base.traces);
    summary["mlp_final_train_mse"] = base.traces.back().train_metric;
    summary["mlp_final_test_mse"] = base.traces.back().test_metric;
    double mlp_best = base.traces.front().train_metric;
    for (const auto& t : base.traces) mlp_best = std::min(mlp_best, t.train_metric);
    summary["mlp_best_train_mse"] = mlp_best;
  }
  detail::write_summary(out_dir, summary);
  return summary;
}

// Data planted from a first-layer-kernel network, n = 5000.
inline json run_knn_sim(const std::string& out_dir, const json& opts) {
  detail::ensure_dir(out_dir);
  const std::uint64_t seed = opts.value("seed", 1);
  const Eigen::Index n_train = opts.value("n_train", 5000);
  const Eigen::Index n_test = opts.value("n_test", 5000);
  const Eigen::Index p = opts.value("p", 5);

  KnnSimPair pair = gen_knn_pair(n_train, n_test, p, seed);

  RunConfig rc = knn_sim_preset();
  rc.epochs = opts.value("epochs", rc.epochs);
  rc.hidden_widths = {opts.value("hidden", 5)};
  rc.seed = seed;
  KernelSpec kernel;
  kernel.gamma = default_gamma(pair.train.x);

  TrainResult result = iro_train(pair.train.x, pair.train.y, rc.net_config(), rc.train_config(),
                                 kernel, &pair.test.x, &pair.test.y);

  CsvWriter metrics = detail::open_metrics(out_dir);
  detail::append_traces(metrics, "kstonet", result.traces);

  json summary;
  summary["experiment"] = "knn_sim";
  summary["seed"] = seed;
  summary["n_train"] = n_train;
  summary["final_train_mse"] = result.traces.back().train_metric;
  summary["final_test_mse"] = result.traces.back().test_metric;
  detail::write_summary(out_dir, summary);
  return summary;
}

// Measurement-error regression with a small and an oversized network.
inline json run_measurement_error(const std::string& out_dir, const json& opts) {
  detail::ensure_dir(out_dir);
  const std::uint64_t seed = opts.value("seed", 1);
  const Eigen::Index n = opts.value("n", 500);
  const Eigen::Index n_test = opts.value("n_test", 500);
  const double epsilon = opts.value("epsilon", 0.01);
  const int epochs = opts.value("epochs", 50);

  Dataset train = gen_measurement_error(n, Rng::derive(seed, {21u}));
  Dataset test = gen_measurement_error(n_test, Rng::derive(seed, {22u}));

  CsvWriter metrics = detail::open_metrics(out_dir);
  json summary;
  summary["experiment"] = "measurement_error";
  summary["seed"] = seed;
  summary["epsilon"] = epsilon;

  const struct {
    const char* tag;
    int layers;
    int width;
  } archs[] = {{"one_hidden", 1, 5}, {"three_hidden", 3, 20}};
  for (const auto& arch : archs) {
    RunConfig rc = measurement_error_preset(arch.layers, arch.width, epsilon);
    rc.epochs = epochs;
    rc.seed = seed;
    KernelSpec kernel;
    kernel.gamma = default_gamma(train.x);
    TrainResult result = iro_train(train.x, train.y, rc.net_config(), rc.train_config(), kernel,
                                   &test.x, &test.y);
    detail::append_traces(metrics, arch.tag, result.traces);
    summary[std::string(arch.tag) + "_final_train_mse"] = result.traces.back().train_metric;
    summary[std::string(arch.tag) + "_final_test_mse"] = result.traces.back().test_metric;
    summary[std::string(arch.tag) + "_sv_count"] = result.traces.back().sv_count_mean;
  }
  detail::write_summary(out_dir, summary);
  return summary;
}

// Support-vector sparsity against the tube width on the measurement-error
// data, three-hidden-layer architecture.
inline json run_sparsity_sweep(const std::string& out_dir, const json& opts) {
  detail::ensure_dir(out_dir);
  const std::uint64_t seed = opts.value("seed", 1);
  const Eigen::Index n = opts.value("n", 500);
  const int epochs = opts.value("epochs", 30);
  std::vector<double> grid = {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1};
  if (opts.contains("eps_grid")) grid = opts.at("eps_grid").get<std::vector<double>>();

  Dataset train = gen_measurement_error(n, Rng::derive(seed, {21u}));
  Dataset test = gen_measurement_error(n, Rng::derive(seed, {22u}));

  CsvWriter metrics(out_dir + "/metrics.csv");
  metrics.header({"epsilon", "sv_count_mean", "train_mse", "test_mse"});

  json rows = json::array();
  double sv_first = 0.0, sv_last = 0.0;
  for (double eps : grid) {
    RunConfig rc = measurement_error_preset(3, opts.value("width", 20), eps);
    rc.epochs = epochs;
    rc.seed = seed;
    KernelSpec kernel;
    kernel.gamma = default_gamma(train.x);
    TrainResult result = iro_train(train.x, train.y, rc.net_config(), rc.train_config(), kernel,
                                   &test.x, &test.y);
    const auto& last = result.traces.back();
    metrics.row({eps, last.sv_count_mean, last.train_metric, last.test_metric});
    rows.push_back({{"epsilon", eps},
                    {"sv_count_mean", last.sv_count_mean},
                    {"train_mse", last.train_metric},
                    {"test_mse", last.test_metric}});
    if (eps == grid.front()) sv_first = last.sv_count_mean;
    if (eps == grid.back()) sv_last = last.sv_count_mean;
  }
  json summary;
  summary["experiment"] = "sparsity_sweep";
  summary["seed"] = seed;
  summary["rows"] = rows;
  summary["sv_ratio_last_over_first"] = sv_first > 0.0 ? sv_last / sv_first : 0.0;
  detail::write_summary(out_dir, summary);
  return summary;
}

// Five-fold cross-validation on the QSAR androgen receptor data. Skips with a
// documented status when the CSV is not present.
inline json run_qsar_cv(const std::string& out_dir, const json& opts) {
  detail::ensure_dir(out_dir);
  const std::uint64_t seed = opts.value("seed", 1);
  const std::string csv = opts.value("csv", "data/qsar_androgen_receptor.csv");
  const int folds = opts.value("folds", 5);

  json summary;
  summary["experiment"] = "qsar_cv";
  summary["seed"] = seed;
  summary["csv"] = csv;
  if (!std::filesystem::exists(csv)) {
    summary["status"] = "skipped_missing_data";
    CsvWriter metrics(out_dir + "/metrics.csv");
    metrics.header({"fold", "train_accuracy", "test_accuracy"});
    detail::write_summary(out_dir, summary);
    return summary;
  }

  CsvSchema schema;
  schema.label_column = opts.value("label", "label");
  schema.task = Task::kBinaryClassification;
  Dataset full = load_csv(csv, schema);

  RunConfig rc = qsar_preset();
  rc.epochs = opts.value("epochs", rc.epochs);
  rc.average_last_k = opts.value("average_last_k", rc.average_last_k);
  rc.seed = seed;

  CsvWriter metrics(out_dir + "/metrics.csv");
  metrics.header({"fold", "train_accuracy", "test_accuracy"});

  auto fold_sets = k_fold_split(full, folds, seed);
  double train_acc_sum = 0.0, test_acc_sum = 0.0;
  json fold_rows = json::array();
  for (std::size_t f = 0; f < fold_sets.size(); ++f) {
    const auto& train = fold_sets[f].first;
    const auto& test = fold_sets[f].second;
    KernelSpec kernel;
    kernel.gamma = default_gamma(train.x);
    RunConfig frc = rc;
    frc.seed = Rng::derive(seed, {static_cast<std::uint64_t>(f)});
    TrainResult result = iro_train(train.x, train.y, frc.net_config(), frc.train_config(),
                                   kernel, &test.x, &test.y);
    const int k = std::min<int>(rc.average_last_k, static_cast<int>(result.snapshots.size()));
    auto accuracy = [&](const Dataset& ds) {
      Matrix logits = predict_mean_batch(result.snapshots, ds.x, k);
      Eigen::Index hits = 0;
      for (Eigen::Index s = 0; s < ds.n(); ++s)
        if ((logits(s, 0) > 0.0 ? 1.0 : 0.0) == ds.y(s, 0)) ++hits;
      return static_cast<double>(hits) / static_cast<double>(ds.n());
    };
    const double tr_acc = accuracy(train);
    const double te_acc = accuracy(test);
    metrics.row({static_cast<double>(f + 1), tr_acc, te_acc});
    fold_rows.push_back({{"fold", f + 1}, {"train_accuracy", tr_acc}, {"test_accuracy", te_acc}});
    train_acc_sum += tr_acc;
    test_acc_sum += te_acc;
  }
  summary["status"] = "ok";
  summary["folds"] = fold_rows;
  summary["mean_train_accuracy"] = train_acc_sum / static_cast<double>(fold_sets.size());
  summary["mean_test_accuracy"] = test_acc_sum / static_cast<double>(fold_sets.size());
  detail::write_summary(out_dir, summary);
  return summary;
}

// Prediction-interval coverage on the measurement-error data: many training
// datasets, one shared test set, nominal-level intervals from the last epoch.
inline json run_coverage(const std::string& out_dir, const json& opts) {
  detail::ensure_dir(out_dir);
  const std::uint64_t seed = opts.value("seed", 1);
  const int datasets = opts.value("datasets", 20);
  const Eigen::Index n = opts.value("n", 500);
  const Eigen::Index test_points = opts.value("test_points", 200);
  const double level = opts.value("level", 0.95);
  const int epochs = opts.value("epochs", 50);
  const int avg_k = opts.value("average_last_k", 1);

  Dataset test = gen_measurement_error(test_points, Rng::derive(seed, {7000u}));

  std::vector<std::vector<char>> covered(
      static_cast<std::size_t>(datasets),
      std::vector<char>(static_cast<std::size_t>(test_points), 0));
  std::vector<double> width_sum(static_cast<std::size_t>(test_points), 0.0);

  RunConfig rc = coverage_preset();
  rc.epochs = epochs;
  rc.average_last_k = avg_k;

  for (int d = 0; d < datasets; ++d) {
    Dataset train = gen_measurement_error(n, Rng::derive(seed, {100u, static_cast<std::uint64_t>(d)}));
    KernelSpec kernel;
    kernel.gamma = default_gamma(train.x);
    RunConfig drc = rc;
    drc.seed = Rng::derive(seed, {200u, static_cast<std::uint64_t>(d)});
    TrainResult result =
        iro_train(train.x, train.y, drc.net_config(), drc.train_config(), kernel);
    auto intervals =
        interval_batch(result.snapshots, train.x, train.y, test.x, level, avg_k);
    for (Eigen::Index p = 0; p < test_points; ++p) {
      const auto& iv = intervals[static_cast<std::size_t>(p)];
      const double y = test.y(p, 0);
      covered[static_cast<std::size_t>(d)][static_cast<std::size_t>(p)] =
          std::abs(y - iv.center) <= iv.half_width ? 1 : 0;
      width_sum[static_cast<std::size_t>(p)] += 2.0 * iv.half_width;
    }
  }

  CsvWriter metrics(out_dir + "/metrics.csv");
  metrics.header({"point_id", "coverage_rate", "mean_width"});
  double mean_cov = 0.0;
  std::vector<double> point_rates(static_cast<std::size_t>(test_points));
  for (Eigen::Index p = 0; p < test_points; ++p) {
    double rate = 0.0;
    for (int d = 0; d < datasets; ++d) rate += covered[static_cast<std::size_t>(d)][static_cast<std::size_t>(p)];
    rate /= static_cast<double>(datasets);
    point_rates[static_cast<std::size_t>(p)] = rate;
    mean_cov += rate;
    metrics.row({static_cast<double>(p), rate,
                 width_sum[static_cast<std::size_t>(p)] / static_cast<double>(datasets)});
  }
  mean_cov /= static_cast<double>(test_points);
  double sd = 0.0;
  for (double r : point_rates) sd += (r - mean_cov) * (r - mean_cov);
  sd = std::sqrt(sd / std::max(1.0, static_cast<double>(test_points - 1)));

  json summary;
  summary["experiment"] = "coverage";
  summary["seed"] = seed;
  summary["datasets"] = datasets;
  summary["test_points"] = test_points;
  summary["level"] = level;
  summary["mean_coverage"] = mean_cov;
  summary["coverage_sd_over_points"] = sd;
  detail::write_summary(out_dir, summary);
  return summary;
}

// Defaults merged with user overrides; unknown keys are rejected so typos
// cannot silently fall back to defaults. The merged object is echoed next to
// the outputs and re-running from the echo reproduces them byte-identically.
inline json effective_experiment_opts(const std::string& name, const json& user) {
  json defaults;
  if (name == "full_rank")
    defaults = {{"seed", 1},      {"n_train", 1000},  {"n_test", 1000}, {"p", 1000},
                {"epochs", 40},   {"run_mlp", true},  {"mlp_epochs", 2000}};
  else if (name == "knn_sim")
    defaults = {{"seed", 1}, {"n_train", 5000}, {"n_test", 5000}, {"p", 5},
                {"epochs", 20}, {"hidden", 5}};
  else if (name == "measurement_error")
    defaults = {{"seed", 1}, {"n", 500}, {"n_test", 500}, {"epochs", 50}, {"epsilon", 0.01}};
  else if (name == "sparsity_sweep")
    defaults = {{"seed", 1},
                {"n", 500},
                {"epochs", 30},
                {"width", 20},
                {"eps_grid", {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1}}};
  else if (name == "qsar_cv")
    defaults = {{"seed", 1},
                {"csv", "data/qsar_androgen_receptor.csv"},
                {"label", "label"},
                {"folds", 5},
                {"epochs", 40},
                {"average_last_k", 10}};
  else if (name == "coverage")
    defaults = {{"seed", 1},           {"datasets", 20}, {"n", 500}, {"test_points", 200},
                {"level", 0.95},       {"epochs", 50},   {"average_last_k", 1}};
  else
    throw ConfigError("experiment",
                      "unknown experiment '" + name +
                          "'; expected one of full_rank, knn_sim, measurement_error, "
                          "sparsity_sweep, qsar_cv, coverage");
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (it.key() == "name") continue;
    if (!defaults.contains(it.key()))
      throw ConfigError("experiment",
                        "unknown key '" + it.key() + "' for experiment " + name);
    defaults[it.key()] = it.value();
  }
  return defaults;
}

inline json run(const std::string& name, const std::string& out_dir, const json& opts) {
  if (name == "full_rank") return run_full_rank(out_dir, opts);
  if (name == "knn_sim") return run_knn_sim(out_dir, opts);
  if (name == "measurement_error") return run_measurement_error(out_dir, opts);
  if (name == "sparsity_sweep") return run_sparsity_sweep(out_dir, opts);
  if (name == "qsar_cv") return run_qsar_cv(out_dir, opts);
  if (name == "coverage") return run_coverage(out_dir, opts);
  throw ConfigError("experiment",
                    "unknown experiment '" + name +
                        "'; expected one of full_rank, knn_sim, measurement_error, "
                        "sparsity_sweep, qsar_cv, coverage");
}

}  // namespace experiments
}  // namespace kstonet
