// Command-line front end: simulate | train | predict | interval | experiment.
// All heavy lifting lives in the library; this file only parses arguments,
// applies flag precedence (flags > config file > defaults) and reports errors
// as a single machine-parsable line on stderr.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "kstonet/cli.hpp"
#include "kstonet/parallel.hpp"

namespace {

int fail(const std::string& stage, const std::string& module, const std::string& message) {
  std::fprintf(stderr, "error stage=%s module=%s message=%s\n", stage.c_str(), module.c_str(),
               message.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace kstonet;

  CLI::App app{"Kernel-expanded stochastic neural network toolkit"};
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads, "worker threads for per-sample and per-unit work");

  // simulate
  cli::SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "write a simulated dataset as CSV");
  simulate->add_option("--generator", sim.generator,
                       "full_rank | knn_sim | measurement_error")->required();
  long long sim_n = 0, sim_p = 0;
  simulate->add_option("--n", sim_n, "sample count")->required();
  simulate->add_option("--p", sim_p, "feature count (generator default when omitted)");
  simulate->add_option("--seed", sim.seed, "RNG seed");
  simulate->add_option("--out", sim.out, "output CSV path")->required();

  // train
  std::string train_config;
  std::string train_out;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false, train_out_set = false;
  auto* train = app.add_subcommand("train", "run IRO training from a config file");
  train->add_option("--config", train_config, "JSON or TOML run configuration")->required();
  train->add_option("--seed", train_seed, "override the config seed")
      ->each([&](const std::string&) { train_seed_set = true; });
  train->add_option("--out", train_out, "override the output directory")
      ->each([&](const std::string&) { train_out_set = true; });

  // predict
  cli::PredictArgs pred;
  auto* predict = app.add_subcommand("predict", "snapshot-averaged predictions for a CSV");
  predict->add_option("--model", pred.model_path, "models.json from train")->required();
  predict->add_option("--input", pred.input_csv, "input CSV (label column ignored)")->required();
  predict->add_option("--label", pred.label_column, "label column name to drop");
  predict->add_option("--k", pred.k, "snapshots to average");
  predict->add_option("--out", pred.out, "output CSV path")->required();

  // interval
  cli::IntervalArgs iv;
  auto* interval = app.add_subcommand("interval", "prediction intervals for a test CSV");
  interval->add_option("--model", iv.model_path, "models.json from train")->required();
  interval->add_option("--train", iv.train_csv, "training CSV (for residuals)")->required();
  interval->add_option("--test", iv.test_csv, "test CSV")->required();
  interval->add_option("--label", iv.label_column, "label column name");
  interval->add_option("--level", iv.level, "confidence level in [0,1)");
  interval->add_option("--k", iv.k, "snapshots to average");
  interval->add_option("--out", iv.out, "output CSV path")->required();

  // experiment
  cli::ExperimentArgs exp;
  std::uint64_t exp_seed = 0;
  bool exp_seed_set = false;
  auto* experiment = app.add_subcommand("experiment", "run a named study end to end");
  experiment->add_option("--name", exp.name,
                         "full_rank | knn_sim | measurement_error | sparsity_sweep | "
                         "qsar_cv | coverage");
  experiment->add_option("--config", exp.config_path, "optional overrides document");
  experiment->add_option("--seed", exp_seed, "override the experiment seed")
      ->each([&](const std::string&) { exp_seed_set = true; });
  experiment->add_option("--out", exp.out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);
  set_max_threads(threads);

  std::string stage = "startup";
  try {
    if (*simulate) {
      stage = "simulate";
      sim.n = static_cast<Eigen::Index>(sim_n);
      sim.p = static_cast<Eigen::Index>(sim_p);
      cli::cmd_simulate(sim);
    } else if (*train) {
      stage = "train";
      RunConfig rc = load_run_config(train_config);
      if (train_seed_set) rc.seed = train_seed;
      if (train_out_set) rc.out_dir = train_out;
      json status = cli::cmd_train(rc);
      std::printf("%s\n", status.dump().c_str());
    } else if (*predict) {
      stage = "predict";
      json status = cli::cmd_predict(pred);
      std::printf("%s\n", status.dump().c_str());
    } else if (*interval) {
      stage = "interval";
      json status = cli::cmd_interval(iv);
      std::printf("%s\n", status.dump().c_str());
    } else if (*experiment) {
      stage = "experiment";
      if (exp_seed_set) exp.seed = exp_seed;
      json status = cli::cmd_experiment(exp);
      std::printf("%s\n", status.dump().c_str());
    }
  } catch (const Error& e) {
    return fail(stage, e.module(), e.what());
  } catch (const std::exception& e) {
    return fail(stage, "internal", e.what());
  }
  return 0;
}
