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

// qmoe_lab: command-line front end for the quadratic-gate MoE laboratory.
//
// Exit codes: 0 ok, 1 bad input or usage, 2 numerical failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qmoe/qmoe.hpp"

namespace fs = std::filesystem;
using namespace qmoe;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string format = "json";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--out", c.out, "output path (file or directory)");
  sub->add_option("--seed", c.seed, "master seed (overrides the config)");
  sub->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  sub->add_option("--format", c.format, "output format")->check(CLI::IsMember({"csv", "json"}));
}

json load_or_empty(const std::string& path) {
  return path.empty() ? json::object() : read_json_file(path);
}

// Writes to --out when given, otherwise stdout.
void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  std::ofstream f(c.out, std::ios::binary);
  if (!f) throw InvalidArgument("cannot write '" + c.out + "'");
  f << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

InstanceSpec instance_from_json(const json& j) {
  InstanceSpec s;
  s.d = j.value("d", s.d);
  s.n_atoms = j.value("n_atoms", s.n_atoms);
  if (j.contains("gate")) s.gate = parse_gate_tag(j.at("gate").get<std::string>());
  const auto expert = parse_expert_kind(j.value("expert", std::string("tanh")));
  s.family = expert == ExpertKind::Linear ? ExpertFamily::Linear : ExpertFamily::TwoLayer;
  s.activation = expert == ExpertKind::Relu ? Activation::Relu : Activation::Tanh;
  s.hidden = j.value("hidden", s.hidden);
  s.scale = j.value("scale", s.scale);
  return s;
}

// --------------------------------------------------------------------------

int cmd_rates(const Common& c) {
  require(!c.config.empty(), "rates: --config is required");
  ExperimentConfig cfg = experiment_from_json(read_json_file(c.config));
  if (c.seed) cfg.master_seed = *c.seed;
  const RateReport rep = run_rate_experiment(cfg, c.threads);
  std::ostringstream rows;
  write_rows_csv(rows, rep.rows);
  const json report = rate_report_to_json(rep, cfg);
  if (c.out.empty()) {
    std::cout << (c.format == "csv" ? rows.str() : dump(report));
    return 0;
  }
  fs::create_directories(c.out);
  std::ofstream(fs::path(c.out) / "rows.csv", std::ios::binary) << rows.str();
  std::ofstream(fs::path(c.out) / "report.json", std::ios::binary) << dump(report);
  for (const auto& [col, s] : rep.slopes) {
    if (s)
      std::printf("%-8s slope %+.4f +- %.4f\n", col.c_str(), s->slope, s->stderr_);
    else
      std::printf("%-8s slope absent\n", col.c_str());
  }
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const json j = load_or_empty(c.config);
  const InstanceSpec spec = instance_from_json(j);
  const std::uint64_t seed = c.seed.value_or(j.value("seed", std::uint64_t{1}));
  const std::size_t n = j.value("n", std::size_t{16});
  const double tol = j.value("tol", 1e-6);
  const MixingMeasure G = random_measure(spec, seed);
  const Dataset data = random_dataset(G, n, seed + 1);
  // Evaluate away from the data-generating point so residuals are not tiny.
  const MixingMeasure G_eval = random_measure(spec, seed + 2);
  const GradCheckReport r = grad_check(G_eval, data, tol);
  emit(c, dump(grad_check_to_json(r)));
  return r.pass ? 0 : 2;
}

int cmd_ident(const Common& c) {
  const json j = load_or_empty(c.config);
  InstanceSpec spec = instance_from_json(j);
  spec.n_atoms = j.value("n_experts", std::size_t{2});
  const std::uint64_t seed = c.seed.value_or(j.value("seed", std::uint64_t{1}));
  const std::size_t M = j.value("M", std::size_t{500});
  const double tau = j.value("tau", 1e-8);
  const std::string mode = j.value("mode", std::string("poly"));
  const FeatureMode fm = mode == "mono" ? FeatureMode::mono()
                                        : FeatureMode::poly(j.value("order", 1));
  require(mode == "mono" || mode == "poly", "ident: mode must be poly or mono");
  const MixingMeasure G = random_measure(spec, seed);
  std::vector<ExpertParams> params;
  for (const auto& at : G.atoms) params.push_back(at.eta);
  const RowMat X = ident_sample_points(params, spec.d, M, seed + 1);
  const FeatureMatrix F = derivative_features(params, X, fm);
  emit(c, dump(ident_to_json(strong_ident_report(F, tau))));
  return 0;
}

int cmd_polysys(const Common& c, int m, int r, std::size_t budget) {
  const std::uint64_t seed = c.seed.value_or(0);
  const PolysysResult res = polysys_search(m, r, budget, seed);
  json j = polysys_to_json(res, m, r);
  const RbarValue rb = rbar(m);
  j["rbar"] = rb.value ? json(*rb.value) : json(nullptr);
  j["rbar_lower_bound"] = rb.lower_bound;
  emit(c, dump(j));
  return 0;
}

int cmd_pathology(const Common& c) {
  const json j = load_or_empty(c.config);
  SynthConfig s;
  s.d = j.value("d", std::size_t{2});
  s.n_star = j.value("n_star", std::size_t{3});
  s.family = ExpertFamily::Linear;
  s.gate.tag = parse_gate_tag(j.value("gate", std::string("QuadPoly")));
  const std::uint64_t seed = c.seed.value_or(j.value("seed", std::uint64_t{7}));
  const auto ns = j.value("n", std::vector<double>{10, 100, 1000});
  const auto rs = j.value("r", std::vector<double>{1, 2});
  const std::size_t M = j.value("M", std::size_t{50000});
  const MixingMeasure G_star = sample_true_measure(s, seed);
  json rows = json::array();
  std::ostringstream csv;
  csv << "n,r,loss_closed_form,loss_computed,fn_dist,ratio\n";
  for (double r : rs)
    for (double n : ns) {
      const SlowSequenceResult res = slow_sequence(G_star, n, r, M, seed + 1, s.input_dist, s.bound);
      const double ratio = res.fn_dist / res.loss_computed;
      rows.push_back({{"n", n}, {"r", r}, {"loss_closed_form", res.loss_closed_form},
                      {"loss_computed", res.loss_computed}, {"fn_dist", res.fn_dist},
                      {"ratio", ratio}});
      csv << format_g17(n) << ',' << format_g17(r) << ',' << format_g17(res.loss_closed_form)
          << ',' << format_g17(res.loss_computed) << ',' << format_g17(res.fn_dist) << ','
          << format_g17(ratio) << '\n';
    }
  emit(c, c.format == "csv" ? csv.str() : dump(json{{"rows", rows}}));
  return 0;
}

std::vector<ArchSpec> builtin_archs() {
  ArchSpec mixtral;
  mixtral.name = "mixtral-8x7b";
  mixtral.d = 4096;
  mixtral.d_ff = 14336;
  mixtral.n_experts = 8;
  mixtral.n_layers = 32;
  mixtral.rank = 128;
  mixtral.total_params = 47e9;
  mixtral.active_params = 13e9;
  mixtral.reference_full_total = 2.1e9;
  mixtral.reference_lowrank_total = 150e6;
  ArchSpec gpt2;
  gpt2.name = "gpt2-small-moe";
  gpt2.d = 768;
  gpt2.d_ff = 3072;
  gpt2.n_experts = 8;
  gpt2.n_layers = 12;
  gpt2.rank = 32;
  gpt2.reference_lowrank_total = 2.3e6;
  return {mixtral, gpt2};
}

int cmd_overhead(const Common& c) {
  std::vector<ArchSpec> archs;
  if (c.config.empty()) {
    archs = builtin_archs();
  } else {
    const json j = read_json_file(c.config);
    if (j.is_array())
      for (const auto& a : j) archs.push_back(arch_from_json(a));
    else
      archs.push_back(arch_from_json(j));
  }
  json out = json::array();
  std::ostringstream csv;
  csv << "name,full_quad_gate_params,full_quad_total,lowrank_total,moe_layer_ratio,discrepancy\n";
  for (const auto& a : archs) {
    const OverheadReport r = overhead_report(a);
    out.push_back(overhead_to_json(a, r));
    csv << a.name << ',' << r.full_quad_gate_params << ',' << r.full_quad_total << ','
        << (r.lowrank_total ? std::to_string(*r.lowrank_total) : "") << ','
        << format_g17(r.moe_layer_ratio) << ',' << (r.discrepancy ? 1 : 0) << '\n';
  }
  emit(c, c.format == "csv" ? csv.str() : dump(out));
  return 0;
}

int cmd_attn_demo(const Common& c) {
  const json j = load_or_empty(c.config);
  const std::size_t d = j.value("d", std::size_t{4});
  const std::size_t N = j.value("N", std::size_t{5});
  const std::uint64_t seed = c.seed.value_or(j.value("seed", std::uint64_t{3}));
  const double scale = j.value("scale", 1.0);
  StreamCursor rng(CounterStream(seed, "attn-demo"));
  Vec q(static_cast<Eigen::Index>(d));
  Mat K(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
  Mat V(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
  for (auto& v : q) v = rng.normal(0.0, scale);
  for (Eigen::Index i = 0; i < K.size(); ++i) K.data()[i] = rng.normal(0.0, scale);
  for (Eigen::Index i = 0; i < V.size(); ++i) V.data()[i] = rng.normal(0.0, scale);
  json out = {{"weights", detail::vec_to_json(attention_weights(q, K))},
              {"attention", detail::vec_to_json(attention(q, K, V))}};
  for (auto nl : {Nonlinearity::Identity, Nonlinearity::Relu, Nonlinearity::Gelu,
                  Nonlinearity::Tanh, Nonlinearity::Sigmoid, Nonlinearity::Silu})
    out["active_attention"][std::string(to_string(nl))] =
        detail::vec_to_json(active_attention(q, K, V, nl));
  emit(c, dump(out));
  return 0;
}

int cmd_gen(const Common& c, std::size_t n, const std::string& measure_out) {
  const json j = load_or_empty(c.config);
  const SynthConfig s = synth_from_json(j.contains("synth") ? j.at("synth") : j);
  const std::uint64_t seed = c.seed.value_or(j.value("seed", std::uint64_t{0}));
  const MixingMeasure G_star = sample_true_measure(s, seed);
  const Dataset data = generate_dataset(G_star, s, n, seed);
  if (c.format == "csv") {
    std::ostringstream os;
    write_dataset_csv(os, data);
    emit(c, os.str());
  } else {
    emit(c, dump(dataset_to_json(data)));
  }
  if (!measure_out.empty()) std::ofstream(measure_out) << dump(measure_to_json(G_star));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qmoe_lab - quadratic-gate mixture-of-experts laboratory"};
  app.require_subcommand(1);
  Common common;

  auto* rates = app.add_subcommand("rates", "run a convergence-rate experiment");
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  auto* ident = app.add_subcommand("ident", "strong-identifiability rank test");
  auto* polysys = app.add_subcommand("polysys", "search the moment polynomial system");
  auto* pathology = app.add_subcommand("pathology", "slow linear-expert sequence sweep");
  auto* overhead = app.add_subcommand("overhead", "quadratic-gate parameter overhead");
  auto* attn = app.add_subcommand("attn-demo", "attention vs active-attention outputs");
  auto* gen = app.add_subcommand("gen", "export a synthetic dataset");
  for (auto* sub : {rates, gradcheck, ident, polysys, pathology, overhead, attn, gen})
    add_common(sub, common);

  int m = 2, r = 3;
  std::size_t budget = 100;
  polysys->add_option("--m", m, "number of atoms in the cell");
  polysys->add_option("--r", r, "number of equations");
  polysys->add_option("--budget", budget, "restarts");
  std::size_t n = 1000;
  std::string measure_out;
  gen->add_option("--n", n, "sample size");
  gen->add_option("--measure-out", measure_out, "also write the true measure as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*rates) return cmd_rates(common);
    if (*gradcheck) return cmd_gradcheck(common);
    if (*ident) return cmd_ident(common);
    if (*polysys) return cmd_polysys(common, m, r, budget);
    if (*pathology) return cmd_pathology(common);
    if (*overhead) return cmd_overhead(common);
    if (*attn) return cmd_attn_demo(common);
    if (*gen) return cmd_gen(common, n, measure_out);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
