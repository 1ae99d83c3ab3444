#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kstonet/common.hpp"
#include "kstonet/model.hpp"
#include "kstonet/serialize.hpp"
#include "kstonet/toml.hpp"
#include "kstonet/trainer.hpp"

namespace kstonet {

// Fully resolved training run description. Defaults are the "paper-default"
// preset: one hidden layer of five units, C = solver cost = 10, eps = 0.01,
// 25 HMC sweeps at alpha = 0.1, sigma^2_2 = 0.01, learning rate 5e-4.
struct RunConfig {
  Task task = Task::kRegression;

  std::string train_csv;
  std::string test_csv;
  std::string label_column = "y";
  bool standardize_features = false;

  std::vector<int> hidden_widths = {5};
  Activation activation = Activation::kTanh;
  double c_noise = 10.0;
  double eps_noise = 0.01;
  std::vector<double> sigma_sq = {0.01};
  bool temper_classification = true;
  double gamma = 0.0;  // 0 means the pooled-variance default
  std::vector<double> per_unit_gamma;

  int epochs = 40;
  int hmc_steps = 25;
  std::vector<double> hmc_lr = {5e-4};
  double hmc_alpha = 0.1;
  double svr_cost = 10.0;
  double svr_epsilon = 0.01;
  double svr_kkt_tol = 1e-3;
  long svr_max_iter = 10'000'000;
  CostScaling svr_cost_scaling = CostScaling::kTotal;
  std::string glm = "lasso";  // lasso | ols
  double lasso_lambda = 1e-4;
  double lasso_tol = 1e-7;
  int lasso_max_sweeps = 1000000;
  int average_last_k = 1;
  std::uint64_t seed = 1;

  std::string out_dir = "out";
  int save_last_k = 0;  // 0 saves average_last_k snapshots

  NetConfig net_config() const {
    NetConfig net;
    net.hidden_widths = hidden_widths;
    net.output_dim = 1;
    net.activation = activation;
    net.task = task;
    net.c_noise = c_noise;
    net.eps_noise = eps_noise;
    net.sigma_sq = sigma_sq;
    net.temper_classification = temper_classification;
    return net;
  }

  TrainConfig train_config() const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.hmc.steps = hmc_steps;
    cfg.hmc.lr = hmc_lr;
    cfg.hmc.alpha = hmc_alpha;
    cfg.svr.cost = svr_cost;
    cfg.svr.epsilon = svr_epsilon;
    cfg.svr.kkt_tol = svr_kkt_tol;
    cfg.svr.max_iter = svr_max_iter;
    cfg.svr.cost_scaling = svr_cost_scaling;
    cfg.lasso.lambda = lasso_lambda;
    cfg.lasso.tol = lasso_tol;
    cfg.lasso.max_sweeps = lasso_max_sweeps;
    cfg.glm_kind = glm == "ols" ? GlmKind::kOls : GlmKind::kLasso;
    cfg.average_last_k = average_last_k;
    cfg.seed = seed;
    return cfg;
  }

  KernelSpec kernel_spec() const {
    KernelSpec spec;
    spec.gamma = gamma > 0.0 ? gamma : 1.0;  // resolved against data later
    if (!per_unit_gamma.empty()) spec.per_unit_gamma = per_unit_gamma;
    return spec;
  }
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config", "unknown key '" + it.key() + "' in " + where);
}

inline std::vector<double> number_list(const json& j, const std::string& what) {
  std::vector<double> out;
  if (j.is_number()) {
    out.push_back(j.get<double>());
    return out;
  }
  if (!j.is_array()) throw ConfigError("config", what + " must be a number or array");
  for (const auto& v : j) out.push_back(v.get<double>());
  return out;
}

}  // namespace detail

inline json run_config_to_json(const RunConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  j["data"] = {{"train_csv", c.train_csv},
               {"test_csv", c.test_csv},
               {"label", c.label_column},
               {"standardize", c.standardize_features}};
  json net;
  net["hidden_widths"] = c.hidden_widths;
  net["activation"] = to_string(c.activation);
  net["c_noise"] = c.c_noise;
  net["eps_noise"] = c.eps_noise;
  net["sigma_sq"] = c.sigma_sq;
  net["temper_classification"] = c.temper_classification;
  net["gamma"] = c.gamma;
  net["per_unit_gamma"] = c.per_unit_gamma;
  j["net"] = std::move(net);
  json tr;
  tr["epochs"] = c.epochs;
  tr["seed"] = c.seed;
  tr["average_last_k"] = c.average_last_k;
  tr["hmc"] = {{"steps", c.hmc_steps}, {"lr", c.hmc_lr}, {"alpha", c.hmc_alpha}};
  tr["svr"] = {{"cost", c.svr_cost},
               {"epsilon", c.svr_epsilon},
               {"kkt_tol", c.svr_kkt_tol},
               {"max_iter", c.svr_max_iter},
               {"cost_scaling", c.svr_cost_scaling == CostScaling::kTotal ? "total" : "per_sample"}};
  tr["glm"] = {{"type", c.glm},
               {"lambda", c.lasso_lambda},
               {"tol", c.lasso_tol},
               {"max_sweeps", c.lasso_max_sweeps}};
  j["train"] = std::move(tr);
  j["output"] = {{"dir", c.out_dir}, {"save_last_k", c.save_last_k}};
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::reject_unknown_keys(j, {"task", "data", "net", "train", "output"}, "config root");
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown_keys(d, {"train_csv", "test_csv", "label", "standardize"}, "data");
    c.train_csv = d.value("train_csv", c.train_csv);
    c.test_csv = d.value("test_csv", c.test_csv);
    c.label_column = d.value("label", c.label_column);
    c.standardize_features = d.value("standardize", c.standardize_features);
  }
  if (j.contains("net")) {
    const auto& n = j.at("net");
    detail::reject_unknown_keys(n,
                                {"hidden_widths", "activation", "c_noise", "eps_noise",
                                 "sigma_sq", "temper_classification", "gamma", "per_unit_gamma"},
                                "net");
    if (n.contains("hidden_widths")) c.hidden_widths = n.at("hidden_widths").get<std::vector<int>>();
    if (n.contains("activation"))
      c.activation = activation_from_string(n.at("activation").get<std::string>());
    c.c_noise = n.value("c_noise", c.c_noise);
    c.eps_noise = n.value("eps_noise", c.eps_noise);
    if (n.contains("sigma_sq")) c.sigma_sq = detail::number_list(n.at("sigma_sq"), "sigma_sq");
    c.temper_classification = n.value("temper_classification", c.temper_classification);
    c.gamma = n.value("gamma", c.gamma);
    if (n.contains("per_unit_gamma"))
      c.per_unit_gamma = detail::number_list(n.at("per_unit_gamma"), "per_unit_gamma");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(t, {"epochs", "seed", "average_last_k", "hmc", "svr", "glm"},
                                "train");
    c.epochs = t.value("epochs", c.epochs);
    c.seed = t.value("seed", c.seed);
    c.average_last_k = t.value("average_last_k", c.average_last_k);
    if (t.contains("hmc")) {
      const auto& hm = t.at("hmc");
      detail::reject_unknown_keys(hm, {"steps", "lr", "alpha"}, "train.hmc");
      c.hmc_steps = hm.value("steps", c.hmc_steps);
      if (hm.contains("lr")) c.hmc_lr = detail::number_list(hm.at("lr"), "hmc lr");
      c.hmc_alpha = hm.value("alpha", c.hmc_alpha);
    }
    if (t.contains("svr")) {
      const auto& sv = t.at("svr");
      detail::reject_unknown_keys(sv, {"cost", "epsilon", "kkt_tol", "max_iter", "cost_scaling"},
                                  "train.svr");
      c.svr_cost = sv.value("cost", c.svr_cost);
      c.svr_epsilon = sv.value("epsilon", c.svr_epsilon);
      c.svr_kkt_tol = sv.value("kkt_tol", c.svr_kkt_tol);
      c.svr_max_iter = sv.value("max_iter", c.svr_max_iter);
      if (sv.contains("cost_scaling")) {
        const std::string s = sv.at("cost_scaling").get<std::string>();
        if (s == "total")
          c.svr_cost_scaling = CostScaling::kTotal;
        else if (s == "per_sample")
          c.svr_cost_scaling = CostScaling::kPerSample;
        else
          throw ConfigError("config", "cost_scaling must be 'total' or 'per_sample'");
      }
    }
    if (t.contains("glm")) {
      const auto& g = t.at("glm");
      detail::reject_unknown_keys(g, {"type", "lambda", "tol", "max_sweeps"}, "train.glm");
      c.glm = g.value("type", c.glm);
      if (c.glm != "lasso" && c.glm != "ols")
        throw ConfigError("config", "glm type must be 'lasso' or 'ols'");
      c.lasso_lambda = g.value("lambda", c.lasso_lambda);
      c.lasso_tol = g.value("tol", c.lasso_tol);
      c.lasso_max_sweeps = g.value("max_sweeps", c.lasso_max_sweeps);
    }
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    detail::reject_unknown_keys(o, {"dir", "save_last_k"}, "output");
    c.out_dir = o.value("dir", c.out_dir);
    c.save_last_k = o.value("save_last_k", c.save_last_k);
  }
  if (c.sigma_sq.size() == 1 && c.hidden_widths.size() > 1)
    c.sigma_sq = std::vector<double>(c.hidden_widths.size(), c.sigma_sq[0]);
  return c;
}

// Accepts a JSON document or a TOML document; the format is sniffed from the
// extension first and the leading character as a fallback.
inline json load_config_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const bool looks_toml = path.size() > 5 && path.substr(path.size() - 5) == ".toml";
  if (looks_toml) return toml::parse(text);
  std::size_t i = 0;
  while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  if (i < text.size() && text[i] == '{') {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("config", path + ": " + e.what());
    }
  }
  return toml::parse(text);
}

inline RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(load_config_document(path));
}

}  // namespace kstonet
