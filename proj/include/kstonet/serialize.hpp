#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kstonet/common.hpp"
#include "kstonet/model.hpp"
#include "kstonet/svr.hpp"
#include "kstonet/trainer.hpp"

namespace kstonet {

using json = nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.size();
  const auto cols = rows ? j.at(0).size() : 0;
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    require(j.at(i).size() == cols, "serialize", "ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j.at(i).at(c).get<double>();
  }
  return m;
}

inline json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kSoftplus: return "softplus";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "softplus") return Activation::kSoftplus;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("serialize", "unknown activation '" + s + "'");
}

inline std::string to_string(Task t) {
  return t == Task::kRegression ? "regression" : "binary_classification";
}

inline Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::kRegression;
  if (s == "binary_classification") return Task::kBinaryClassification;
  throw ConfigError("serialize", "unknown task '" + s + "'");
}

inline json net_config_to_json(const NetConfig& net) {
  json j;
  j["hidden_widths"] = net.hidden_widths;
  j["output_dim"] = net.output_dim;
  j["activation"] = to_string(net.activation);
  j["task"] = to_string(net.task);
  j["c_noise"] = net.c_noise;
  j["eps_noise"] = net.eps_noise;
  j["sigma_sq"] = net.sigma_sq;
  j["temper_classification"] = net.temper_classification;
  return j;
}

inline NetConfig net_config_from_json(const json& j) {
  NetConfig net;
  net.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
  net.output_dim = j.at("output_dim").get<int>();
  net.activation = activation_from_string(j.at("activation").get<std::string>());
  net.task = task_from_string(j.at("task").get<std::string>());
  net.c_noise = j.at("c_noise").get<double>();
  net.eps_noise = j.at("eps_noise").get<double>();
  net.sigma_sq = j.at("sigma_sq").get<std::vector<double>>();
  net.temper_classification = j.value("temper_classification", true);
  return net;
}

// Self-describing snapshot bundle: config, the shared training inputs, and
// one entry per retained epoch (SVR duals, dense weights, sampling context).
inline constexpr const char* kModelFormatTag = "kstonet-model-v1";

inline json snapshots_to_json(const std::vector<Snapshot>& snapshots) {
  require(!snapshots.empty(), "serialize", "no snapshots to save");
  const auto& first = snapshots.front().model;
  json doc;
  doc["format"] = kModelFormatTag;
  doc["net"] = net_config_to_json(first.config);
  doc["train_x"] = matrix_to_json(*first.svr_layer.at(0).train_x);
  json snaps = json::array();
  for (const auto& s : snapshots) {
    json js;
    js["epoch"] = s.epoch;
    json units = json::array();
    for (const auto& u : s.model.svr_layer) {
      json ju;
      ju["gamma"] = u.gamma;
      ju["bias"] = u.bias;
      ju["box"] = u.box;
      ju["epsilon"] = u.epsilon;
      ju["dual_coefs"] = vector_to_json(u.dual_coefs);
      units.push_back(std::move(ju));
    }
    js["svr_units"] = std::move(units);
    json dense = json::array();
    for (const auto& lay : s.model.dense_layers) {
      json jl;
      jl["w"] = matrix_to_json(lay.w);
      jl["b"] = vector_to_json(lay.b);
      dense.push_back(std::move(jl));
    }
    js["dense_layers"] = std::move(dense);
    if (!s.uq.psi_gram.empty()) {
      json uq;
      uq["psi_gram"] = json::array();
      uq["sigma_hat_sq"] = json::array();
      for (const auto& g : s.uq.psi_gram) uq["psi_gram"].push_back(matrix_to_json(g));
      for (const auto& v : s.uq.sigma_hat_sq) uq["sigma_hat_sq"].push_back(vector_to_json(v));
      js["uq"] = std::move(uq);
    }
    snaps.push_back(std::move(js));
  }
  doc["snapshots"] = std::move(snaps);
  return doc;
}

inline std::vector<Snapshot> snapshots_from_json(const json& doc) {
  require(doc.value("format", "") == kModelFormatTag, "serialize",
          "unrecognized model format tag");
  NetConfig net = net_config_from_json(doc.at("net"));
  auto train_x = std::make_shared<const Matrix>(matrix_from_json(doc.at("train_x")));

  std::vector<Snapshot> out;
  for (const auto& js : doc.at("snapshots")) {
    Snapshot s;
    s.epoch = js.at("epoch").get<int>();
    s.model.config = net;
    for (const auto& ju : js.at("svr_units")) {
      SvrModel u;
      u.train_x = train_x;
      u.gamma = ju.at("gamma").get<double>();
      u.bias = ju.at("bias").get<double>();
      u.box = ju.at("box").get<double>();
      u.epsilon = ju.at("epsilon").get<double>();
      u.dual_coefs = vector_from_json(ju.at("dual_coefs"));
      const double interior_cap = u.box * (1.0 - detail::kMarginalRel);
      for (Eigen::Index i = 0; i < u.dual_coefs.size(); ++i)
        if (u.dual_coefs[i] != 0.0) {
          u.support_ids.push_back(static_cast<int>(i));
          if (std::abs(u.dual_coefs[i]) < interior_cap)
            u.marginal_ids.push_back(static_cast<int>(i));
        }
      s.model.svr_layer.push_back(std::move(u));
    }
    for (const auto& jl : js.at("dense_layers"))
      s.model.dense_layers.push_back(
          {matrix_from_json(jl.at("w")), vector_from_json(jl.at("b"))});
    if (js.contains("uq")) {
      for (const auto& g : js.at("uq").at("psi_gram"))
        s.uq.psi_gram.push_back(matrix_from_json(g));
      for (const auto& v : js.at("uq").at("sigma_hat_sq"))
        s.uq.sigma_hat_sq.push_back(vector_from_json(v));
    }
    s.model.validate();
    out.push_back(std::move(s));
  }
  require(!out.empty(), "serialize", "document holds no snapshots");
  return out;
}

inline void save_snapshots(const std::vector<Snapshot>& snapshots, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("serialize", "cannot write " + path);
  out << snapshots_to_json(snapshots).dump() << '\n';
}

inline std::vector<Snapshot> load_snapshots(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("serialize", "cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw InputError("serialize", path + ": " + e.what());
  }
  return snapshots_from_json(doc);
}

}  // namespace kstonet
