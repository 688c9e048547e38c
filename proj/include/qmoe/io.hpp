/* Copyright 2026 The qmoe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef QMOE_IO_HPP_
#define QMOE_IO_HPP_

// JSON and CSV (de)serialization. Matrices are arrays of rows.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmoe/dataset.hpp"
#include "qmoe/errors.hpp"
#include "qmoe/fit.hpp"
#include "qmoe/gradients.hpp"
#include "qmoe/ident.hpp"
#include "qmoe/model.hpp"
#include "qmoe/polysys.hpp"
#include "qmoe/ratelab.hpp"
#include "qmoe/synth.hpp"
#include "qmoe/voronoi.hpp"

namespace qmoe {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// %.17g; NaN and infinities spelled nan/inf/-inf.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

template <class F>
auto parse_guard(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string(what) + ": " + e.what());
  }
}

inline json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat mat_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j.at(static_cast<std::size_t>(r));
    require(static_cast<Eigen::Index>(row.size()) == cols, "matrix rows must have equal length");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

inline Vec vec_from_json(const json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = j.at(static_cast<std::size_t>(k)).get<double>();
  return v;
}

// NaN has no JSON spelling; null stands in.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Model records
// ---------------------------------------------------------------------------

inline json expert_to_json(const ExpertParams& eta) {
  if (const auto* lin = std::get_if<LinearExpert>(&eta))
    return {{"beta1", detail::vec_to_json(lin->beta1)}, {"beta0", lin->beta0}};
  const auto& net = std::get<TwoLayerExpert>(eta);
  return {{"W", detail::mat_to_json(net.W)}, {"v", detail::vec_to_json(net.v)},
          {"a", detail::vec_to_json(net.a)}, {"a0", net.a0},
          {"activation", std::string(to_string(net.activation))}};
}

inline ExpertParams expert_from_json(const json& j, ExpertFamily family) {
  return detail::parse_guard("expert", [&]() -> ExpertParams {
    if (family == ExpertFamily::Linear)
      return LinearExpert{detail::vec_from_json(j.at("beta1")), j.at("beta0").get<double>()};
    TwoLayerExpert net;
    net.W = detail::mat_from_json(j.at("W"));
    net.v = detail::vec_from_json(j.at("v"));
    net.a = detail::vec_from_json(j.at("a"));
    net.a0 = j.at("a0").get<double>();
    net.activation = parse_activation(j.value("activation", std::string("relu")));
    return net;
  });
}

inline json measure_to_json(const MixingMeasure& G) {
  json atoms = json::array();
  for (const auto& at : G.atoms)
    atoms.push_back({{"A", detail::mat_to_json(at.A)},
                     {"b", detail::vec_to_json(at.b)},
                     {"c", at.c},
                     {"eta", expert_to_json(at.eta)}});
  json j = {{"gate", std::string(to_string(G.gate.tag))},
            {"d", G.d},
            {"expert_family", std::string(to_string(G.family))},
            {"atoms", atoms}};
  j["top_k"] = G.gate.top_k ? json(*G.gate.top_k) : json(nullptr);
  return j;
}

inline MixingMeasure measure_from_json(const json& j) {
  MixingMeasure G = detail::parse_guard("mixing measure", [&] {
    MixingMeasure G;
    G.gate.tag = parse_gate_tag(j.at("gate").get<std::string>());
    if (j.contains("top_k") && !j.at("top_k").is_null())
      G.gate.top_k = j.at("top_k").get<std::size_t>();
    G.d = j.at("d").get<std::size_t>();
    G.family = parse_expert_family(j.at("expert_family").get<std::string>());
    for (const auto& a : j.at("atoms")) {
      Atom at;
      at.A = detail::mat_from_json(a.at("A"));
      at.b = detail::vec_from_json(a.at("b"));
      at.c = a.at("c").get<double>();
      at.eta = expert_from_json(a.at("eta"), G.family);
      G.atoms.push_back(std::move(at));
    }
    return G;
  });
  G.validate();
  return G;
}

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

inline json synth_to_json(const SynthConfig& s) {
  json j = {{"d", s.d},
            {"n_star", s.n_star},
            {"gate", std::string(to_string(s.gate.tag))},
            {"expert_family", std::string(to_string(s.family))},
            {"hidden", s.hidden},
            {"activation", std::string(to_string(s.activation))},
            {"sigma2", s.sigma2},
            {"sigma_r2", s.gating_variance()},
            {"sigma_e2", s.expert_variance()},
            {"input_dist", std::string(to_string(s.input_dist))},
            {"bound", s.bound}};
  j["top_k"] = s.gate.top_k ? json(*s.gate.top_k) : json(nullptr);
  return j;
}

// Missing keys keep their defaults.
inline SynthConfig synth_from_json(const json& j) {
  return detail::parse_guard("synth config", [&] {
    SynthConfig s;
    s.d = j.value("d", s.d);
    s.n_star = j.value("n_star", s.n_star);
    if (j.contains("gate")) s.gate.tag = parse_gate_tag(j.at("gate").get<std::string>());
    if (j.contains("top_k") && !j.at("top_k").is_null())
      s.gate.top_k = j.at("top_k").get<std::size_t>();
    if (j.contains("expert_family"))
      s.family = parse_expert_family(j.at("expert_family").get<std::string>());
    s.hidden = j.value("hidden", s.hidden);
    if (j.contains("activation"))
      s.activation = parse_activation(j.at("activation").get<std::string>());
    s.sigma2 = j.value("sigma2", s.sigma2);
    if (j.contains("sigma_r2") && !j.at("sigma_r2").is_null())
      s.sigma_r2 = j.at("sigma_r2").get<double>();
    if (j.contains("sigma_e2") && !j.at("sigma_e2").is_null())
      s.sigma_e2 = j.at("sigma_e2").get<double>();
    if (j.contains("input_dist"))
      s.input_dist = parse_input_dist(j.at("input_dist").get<std::string>());
    s.bound = j.value("bound", s.bound);
    s.validate();
    return s;
  });
}

inline json fit_to_json(const FitConfig& f) {
  return {{"lr", f.lr},         {"steps", f.steps},
          {"perturb_scale", f.perturb_scale}, {"n_fit", f.n_fit},
          {"clamp", f.clamp},   {"clamp_bound", f.clamp_bound}};
}

inline FitConfig fit_from_json(const json& j) {
  return detail::parse_guard("fit config", [&] {
    FitConfig f;
    f.lr = j.value("lr", f.lr);
    f.steps = j.value("steps", f.steps);
    f.perturb_scale = j.value("perturb_scale", f.perturb_scale);
    f.n_fit = j.value("n_fit", f.n_fit);
    f.clamp = j.value("clamp", f.clamp);
    f.clamp_bound = j.value("clamp_bound", f.clamp_bound);
    f.validate();
    return f;
  });
}

inline json experiment_to_json(const ExperimentConfig& c) {
  json j = {{"schema_version", kSchemaVersion},
            {"synth", synth_to_json(c.synth)},
            {"fit", fit_to_json(c.fit)},
            {"expert", std::string(to_string(c.expert))},
            {"n_grid", c.n_grid},
            {"reps", c.reps},
            {"master_seed", c.master_seed},
            {"loss", std::string(to_string(c.loss))},
            {"loss_r", c.loss_r},
            {"mc_points", c.mc_points},
            {"aggregate", std::string(to_string(c.aggregate))}};
  j["gauge_anchor"] = c.gauge_anchor ? json(*c.gauge_anchor) : json(nullptr);
  return j;
}

inline ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c = detail::parse_guard("experiment config", [&] {
    require(j.value("schema_version", 0) == kSchemaVersion,
            "experiment config: schema_version must be 1");
    ExperimentConfig c;
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"));
    if (j.contains("fit")) c.fit = fit_from_json(j.at("fit"));
    if (j.contains("expert")) c.expert = parse_expert_kind(j.at("expert").get<std::string>());
    if (j.contains("n_grid")) c.n_grid = j.at("n_grid").get<std::vector<std::size_t>>();
    c.reps = j.value("reps", c.reps);
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
    c.loss_r = j.value("loss_r", c.loss_r);
    c.mc_points = j.value("mc_points", c.mc_points);
    if (j.contains("aggregate"))
      c.aggregate = parse_aggregate(j.at("aggregate").get<std::string>());
    if (j.contains("gauge_anchor") && !j.at("gauge_anchor").is_null())
      c.gauge_anchor = j.at("gauge_anchor").get<std::size_t>();
    return c;
  });
  c.validate();
  return c;
}

inline ArchSpec arch_from_json(const json& j) {
  ArchSpec a = detail::parse_guard("architecture", [&] {
    ArchSpec a;
    a.name = j.value("name", std::string());
    a.d = j.at("d").get<std::uint64_t>();
    a.d_ff = j.at("d_ff").get<std::uint64_t>();
    a.n_experts = j.at("n_experts").get<std::uint64_t>();
    a.n_layers = j.at("n_layers").get<std::uint64_t>();
    auto opt_u = [&](const char* k) -> std::optional<std::uint64_t> {
      if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
      return j.at(k).get<std::uint64_t>();
    };
    auto opt_d = [&](const char* k) -> std::optional<double> {
      if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
      return j.at(k).get<double>();
    };
    a.rank = opt_u("rank");
    a.total_params = opt_d("total_params");
    a.active_params = opt_d("active_params");
    a.reference_lowrank_total = opt_d("reference_lowrank_total");
    a.reference_full_total = opt_d("reference_full_total");
    return a;
  });
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json grad_check_to_json(const GradCheckReport& r) {
  return {{"max_rel_err", r.max_rel_err},
          {"worst_coordinate", r.worst_coordinate},
          {"worst_name", r.worst_name},
          {"checked", r.checked},
          {"skipped", r.skipped},
          {"pass", r.pass}};
}

inline json loss_to_json(const LossBreakdown& L) {
  json cells = json::array();
  for (const auto& c : L.cells)
    cells.push_back({{"cell", c.cell},
                     {"size", c.size},
                     {"parameter_term", c.parameter_term},
                     {"weight_term", c.weight_term}});
  return {{"total", L.total},
          {"weight_term", L.weight_term},
          {"exact_cells_term", L.exact_cells_term},
          {"over_cells_term", L.over_cells_term},
          {"cells", cells}};
}

inline json ident_to_json(const IdentReport& r) {
  json j = {{"min_singular_value", r.min_singular_value},
            {"rank", r.rank},
            {"columns", r.columns},
            {"verdict", verdict(r)},
            {"zero_column", r.zero_column}};
  if (r.witness)
    j["witness"] = {r.witness->first.name, r.witness->second.name};
  else
    j["witness"] = nullptr;
  j["witness_correlation"] = r.witness_correlation;
  return j;
}

inline json polysys_to_json(const PolysysResult& r, int m, int rr) {
  return {{"m", m},
          {"r", rr},
          {"best_residual_norm", r.best_residual_norm},
          {"p", detail::vec_to_json(r.p)},
          {"g1", detail::vec_to_json(r.g1)},
          {"g2", detail::vec_to_json(r.g2)},
          {"best_restart", r.best_restart},
          {"constrained", r.constrained}};
}

inline json overhead_to_json(const ArchSpec& a, const OverheadReport& r) {
  auto opt = [](const auto& o) { return o ? json(*o) : json(nullptr); };
  return {{"name", a.name},
          {"full_quad_gate_params", r.full_quad_gate_params},
          {"full_quad_total", r.full_quad_total},
          {"lowrank_gate_params", opt(r.lowrank_gate_params)},
          {"lowrank_total", opt(r.lowrank_total)},
          {"moe_layer_ratio", r.moe_layer_ratio},
          {"ratio_basis", r.ratio_basis},
          {"flop_ratio", opt(r.flop_ratio)},
          {"memory_ratio", opt(r.memory_ratio)},
          {"reference_lowrank_total", opt(r.reference_lowrank_total)},
          {"reference_full_total", opt(r.reference_full_total)},
          {"discrepancy", r.discrepancy}};
}

inline json rate_report_to_json(const RateReport& rep, const ExperimentConfig& cfg) {
  json slopes = json::object();
  for (const auto& [col, s] : rep.slopes) {
    if (!s) {
      slopes[col] = nullptr;
      continue;
    }
    slopes[col] = {{"slope", s->slope}, {"intercept", s->intercept},
                   {"stderr", s->stderr_}, {"points", s->points}};
  }
  json agg = json::object();
  for (const auto& [col, pts] : rep.aggregated) {
    json a = json::array();
    for (auto [n, v] : pts) a.push_back({{"n", n}, {"value", detail::num(v)}});
    agg[col] = a;
  }
  json notes = json::array();
  for (const auto& r : rep.rows)
    if (r.divergent) notes.push_back({{"n", r.n}, {"rep", r.rep}, {"reason", r.note}});
  return {{"schema_version", kSchemaVersion},
          {"config_hash", rep.config_hash},
          {"config", experiment_to_json(cfg)},
          {"rows", rep.rows.size()},
          {"divergent", rep.divergent},
          {"divergent_rows", notes},
          {"aggregate", std::string(to_string(cfg.aggregate))},
          {"per_n", agg},
          {"slopes", slopes}};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline void write_rows_csv(std::ostream& os, const std::vector<RateRow>& rows) {
  os << "n,rep,divergent,loss,errA,errB,errEta,errW,fn_dist\n";
  for (const auto& r : rows) {
    os << r.n << ',' << r.rep << ',' << (r.divergent ? 1 : 0) << ',' << format_g17(r.loss) << ','
       << format_g17(r.errA) << ',' << format_g17(r.errB) << ',' << format_g17(r.errEta) << ','
       << format_g17(r.errW) << ',' << format_g17(r.fn_dist) << '\n';
  }
}

inline void write_history_csv(std::ostream& os, const std::vector<double>& history) {
  os << "step,loss\n";
  for (std::size_t t = 0; t < history.size(); ++t) os << t << ',' << format_g17(history[t]) << '\n';
}

inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
  const auto d = data.dim();
  for (std::size_t u = 0; u < d; ++u) os << "x_" << u << ',';
  os << "y\n";
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    for (Eigen::Index u = 0; u < data.X.cols(); ++u) os << format_g17(data.X(i, u)) << ',';
    os << format_g17(data.Y[i]) << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "dataset csv: missing header");
  std::size_t cols = 1;
  for (char ch : line) cols += ch == ',' ? 1 : 0;
  require(cols >= 2, "dataset csv: need at least one x column and y");
  std::vector<double> vals;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InvalidArgument("dataset csv: bad number '" + cell + "' on row " + std::to_string(n));
      }
      ++k;
    }
    require(k == cols, "dataset csv: row " + std::to_string(n) + " has the wrong column count");
    ++n;
  }
  Dataset data;
  data.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols - 1));
  data.Y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t u = 0; u + 1 < cols; ++u)
      data.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) = vals[i * cols + u];
    data.Y[static_cast<Eigen::Index>(i)] = vals[i * cols + cols - 1];
  }
  data.validate();
  return data;
}

inline json dataset_to_json(const Dataset& data) {
  json X = json::array();
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index u = 0; u < data.X.cols(); ++u) row.push_back(data.X(i, u));
    X.push_back(std::move(row));
  }
  return {{"X", X},
          {"Y", detail::vec_to_json(data.Y)},
          {"provenance", {{"seed", data.provenance.seed},
                          {"config_hash", data.provenance.config_hash}}}};
}

inline Dataset dataset_from_json(const json& j) {
  Dataset data = detail::parse_guard("dataset", [&] {
    Dataset data;
    const Mat X = detail::mat_from_json(j.at("X"));
    data.X = X;
    data.Y = detail::vec_from_json(j.at("Y"));
    if (j.contains("provenance")) {
      data.provenance.seed = j.at("provenance").value("seed", std::uint64_t{0});
      data.provenance.config_hash = j.at("provenance").value("config_hash", std::string());
    }
    return data;
  });
  data.validate();
  return data;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("'" + path + "': " + e.what());
  }
}

}  // namespace qmoe

#endif  // QMOE_IO_HPP_
