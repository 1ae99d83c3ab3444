#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kstonet/common.hpp"
#include "kstonet/config.hpp"
#include "kstonet/csv.hpp"
#include "kstonet/data.hpp"
#include "kstonet/experiments.hpp"
#include "kstonet/serialize.hpp"
#include "kstonet/trainer.hpp"
#include "kstonet/uq.hpp"

namespace kstonet {
namespace cli {

// Command implementations, kept separate from argument parsing so they can be
// driven in-process by tests. Each writes machine-readable outputs to the
// paths it is given and returns a small JSON status object.

struct SimulateArgs {
  std::string generator;
  Eigen::Index n = 0;
  Eigen::Index p = 0;  // 0 means the generator default
  std::uint64_t seed = 1;
  std::string out;
};

inline json cmd_simulate(const SimulateArgs& args) {
  require(!args.out.empty(), "cli", "simulate: --out is required");
  require(args.n > 0, "cli", "simulate: --n must be positive");
  Dataset ds;
  Eigen::Index p = args.p;
  if (args.generator == "full_rank") {
    if (p == 0) p = 1000;
    ds = gen_full_rank(args.n, p, args.seed);
  } else if (args.generator == "knn_sim") {
    if (p == 0) p = 5;
    ds = gen_knn_data(args.n, p, args.seed);
  } else if (args.generator == "measurement_error") {
    p = 5;
    ds = gen_measurement_error(args.n, args.seed);
  } else {
    throw ConfigError("cli", "unknown generator '" + args.generator +
                                 "'; expected full_rank, knn_sim or measurement_error");
  }
  save_csv(ds, args.out);
  json meta = {{"generator", args.generator}, {"n", args.n}, {"p", p}, {"seed", args.seed}};
  std::ofstream meta_out(args.out + ".meta.json");
  if (meta_out) meta_out << meta.dump(2) << '\n';
  return meta;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cli", "cannot create directory " + dir);
}

struct TrainOutputs {
  TrainResult result;
  RunConfig effective;
  Dataset train;
  std::optional<Dataset> test;
};

inline TrainOutputs run_training(RunConfig rc) {
  require(!rc.train_csv.empty(), "cli", "train: data.train_csv is required");
  CsvSchema schema;
  schema.label_column = rc.label_column;
  schema.task = rc.task;
  Dataset train = load_csv(rc.train_csv, schema);
  std::optional<Dataset> test;
  if (!rc.test_csv.empty()) test = load_csv(rc.test_csv, schema);
  if (rc.standardize_features) {
    Dataset st = standardize(train);
    if (test) test->x = apply_standardization(st, test->x);
    train = std::move(st);
  }
  if (rc.gamma <= 0.0 && rc.per_unit_gamma.empty()) rc.gamma = default_gamma(train.x);

  TrainOutputs out;
  out.result = iro_train(train.x, train.y, rc.net_config(), rc.train_config(), rc.kernel_spec(),
                         test ? &test->x : nullptr, test ? &test->y : nullptr);
  out.effective = rc;
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

inline json cmd_train(const RunConfig& rc_in) {
  TrainOutputs out = run_training(rc_in);
  const RunConfig& rc = out.effective;
  ensure_dir(rc.out_dir);

  {
    CsvWriter trace(rc.out_dir + "/trace.csv");
    trace.header({"epoch", "train_metric", "test_metric", "sv_count_mean", "seconds"});
    for (const auto& t : out.result.traces) {
      std::vector<std::string> cells = {std::to_string(t.epoch), format_double(t.train_metric),
                                        std::isnan(t.test_metric) ? "" : format_double(t.test_metric),
                                        format_double(t.sv_count_mean), format_double(t.seconds)};
      trace.raw_row(cells);
    }
  }

  const int keep = rc.save_last_k > 0 ? rc.save_last_k : std::max(1, rc.average_last_k);
  const auto total = out.result.snapshots.size();
  std::vector<Snapshot> tail(
      out.result.snapshots.end() - std::min<std::size_t>(static_cast<std::size_t>(keep), total),
      out.result.snapshots.end());
  save_snapshots(tail, rc.out_dir + "/models.json");

  {
    std::ofstream echo(rc.out_dir + "/effective_config.json");
    if (!echo) throw InputError("cli", "cannot write effective_config.json");
    echo << run_config_to_json(rc).dump(2) << '\n';
  }

  json status;
  status["snapshots_saved"] = tail.size();
  status["epochs"] = rc.epochs;
  status["final_train_metric"] =
      out.result.traces.empty() ? 0.0 : out.result.traces.back().train_metric;
  status["out_dir"] = rc.out_dir;
  return status;
}

struct PredictArgs {
  std::string model_path;
  std::string input_csv;
  std::string label_column = "y";  // dropped from the input when present
  int k = 1;
  std::string out;
};

inline Matrix load_features(const std::string& path, const std::string& label_column,
                            Eigen::Index expected_cols) {
  CsvTable table = read_csv(path);
  Eigen::Index label_idx = -1;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (table.header[j] == label_column) label_idx = static_cast<Eigen::Index>(j);
  const auto p = static_cast<Eigen::Index>(table.header.size()) - (label_idx >= 0 ? 1 : 0);
  require(p == expected_cols, "cli",
          path + ": expected " + std::to_string(expected_cols) + " feature columns, found " +
              std::to_string(p));
  Matrix x(static_cast<Eigen::Index>(table.rows.size()), p);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    Eigen::Index col = 0;
    for (std::size_t j = 0; j < table.rows[i].size(); ++j) {
      if (static_cast<Eigen::Index>(j) == label_idx) continue;
      x(static_cast<Eigen::Index>(i), col++) = parse_double(table.rows[i][j], path, i);
    }
  }
  return x;
}

inline json cmd_predict(const PredictArgs& args) {
  require(!args.out.empty(), "cli", "predict: --out is required");
  auto snapshots = load_snapshots(args.model_path);
  const auto& model = snapshots.back().model;
  Matrix x = load_features(args.input_csv, args.label_column,
                           model.svr_layer.at(0).train_x->cols());
  const int k = std::min<int>(args.k, static_cast<int>(snapshots.size()));
  Matrix mean = predict_mean_batch(snapshots, x, k);

  CsvWriter out(args.out);
  out.header({"point_id", "prediction"});
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double value = mean(i, 0);
    if (model.config.task == Task::kBinaryClassification) value = value > 0.0 ? 1.0 : 0.0;
    out.row({static_cast<double>(i), value});
  }
  json status;
  status["points"] = x.rows();
  status["k"] = k;
  return status;
}

struct IntervalArgs {
  std::string model_path;
  std::string train_csv;
  std::string test_csv;
  std::string label_column = "y";
  double level = 0.95;
  int k = 1;
  std::string out;
};

inline json cmd_interval(const IntervalArgs& args) {
  require(!args.out.empty(), "cli", "interval: --out is required");
  auto snapshots = load_snapshots(args.model_path);
  const auto& model = snapshots.back().model;
  CsvSchema schema;
  schema.label_column = args.label_column;
  schema.task = model.config.task;
  Dataset train = load_csv(args.train_csv, schema);
  Matrix test_x = load_features(args.test_csv, args.label_column,
                                model.svr_layer.at(0).train_x->cols());
  const int k = std::min<int>(args.k, static_cast<int>(snapshots.size()));
  auto intervals = interval_batch(snapshots, train.x, train.y, test_x, args.level, k);

  CsvWriter out(args.out);
  out.header({"point_id", "center", "lower", "upper", "level"});
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto& iv = intervals[i];
    out.row({static_cast<double>(i), iv.center, iv.center - iv.half_width,
             iv.center + iv.half_width, iv.level});
  }
  json status;
  status["points"] = intervals.size();
  status["k"] = k;
  return status;
}

struct ExperimentArgs {
  std::string name;
  std::string config_path;  // optional {"experiment": {...}} document
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

inline json cmd_experiment(const ExperimentArgs& args) {
  json user = json::object();
  std::string name = args.name;
  if (!args.config_path.empty()) {
    json doc = load_config_document(args.config_path);
    detail::reject_unknown_keys(doc, {"experiment"}, "experiment config root");
    if (doc.contains("experiment")) {
      user = doc.at("experiment");
      if (user.contains("name")) {
        if (name.empty()) name = user.at("name").get<std::string>();
        require(name == user.at("name").get<std::string>(), "cli",
                "experiment name conflicts with config");
      }
    }
  }
  require(!name.empty(), "cli", "experiment: --name is required");
  json opts = experiments::effective_experiment_opts(name, user);
  if (args.seed) opts["seed"] = *args.seed;

  ensure_dir(args.out_dir);
  {
    json echo;
    echo["experiment"] = opts;
    echo["experiment"]["name"] = name;
    std::ofstream out(args.out_dir + "/effective_config.json");
    if (!out) throw InputError("cli", "cannot write effective_config.json");
    out << echo.dump(2) << '\n';
  }
  return experiments::run(name, args.out_dir, opts);
}

}  // namespace cli
}  // namespace kstonet
