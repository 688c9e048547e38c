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

// End-to-end checks, one PASS/FAIL line each. Exit status is the number of
// failing checks (capped at 1).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "qmoe/qmoe.hpp"

#ifndef QMOE_CONFIG_DIR
#error "QMOE_CONFIG_DIR must point at tools/configs"
#endif
#ifndef QMOE_LAB_PATH
#error "QMOE_LAB_PATH must point at the qmoe_lab binary"
#endif

namespace fs = std::filesystem;
using namespace qmoe;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string config_path(const std::string& name) { return std::string(QMOE_CONFIG_DIR) + "/" + name; }

ExperimentConfig load_experiment(const std::string& name) {
  return experiment_from_json(read_json_file(config_path(name)));
}

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

// --- 1 -------------------------------------------------------------------

Outcome gradient_correctness() {
  const GateTag gates[] = {GateTag::Linear, GateTag::QuadPoly, GateTag::QuadMono};
  const ExpertKind experts[] = {ExpertKind::Linear, ExpertKind::Relu, ExpertKind::Tanh};
  double worst = 0.0;
  std::size_t skipped = 0, failed = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    InstanceSpec s;
    s.gate = gates[k % 3];
    const ExpertKind e = experts[(k / 3) % 3];
    s.family = e == ExpertKind::Linear ? ExpertFamily::Linear : ExpertFamily::TwoLayer;
    s.activation = e == ExpertKind::Relu ? Activation::Relu : Activation::Tanh;
    s.d = 1 + k % 3;
    s.n_atoms = 1 + (k / 2) % 4;
    const MixingMeasure G = random_measure(s, 1000 + k);
    const Dataset data = random_dataset(random_measure(s, 2000 + k), 16, 3000 + k);
    const GradCheckReport r = grad_check(G, data, 1e-6);
    worst = std::max(worst, r.max_rel_err);
    skipped += r.skipped;
    failed += r.pass ? 0 : 1;
  }
  return {failed == 0, "20 instances, worst rel err " + fmt("%.2e", worst) + ", " +
                           std::to_string(skipped) + " kink coords skipped"};
}

// --- 2 -------------------------------------------------------------------

Outcome pde_identities() {
  StreamCursor rng(CounterStream(2, "acceptance-pde"));
  double worst_gate = 0.0, worst_lin = 0.0;  // residual / (1 + |F|)
  double coarse_gate = 0.0, fine_gate = 0.0, coarse_lin = 0.0, fine_lin = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index d = 1 + t % 3;
    Mat A(d, d);
    Vec b(d), x(d), beta1(d);
    for (Eigen::Index u = 0; u < d; ++u) {
      for (Eigen::Index v = 0; v < d; ++v) A(u, v) = rng.normal(0.0, 0.5);
      b[u] = rng.normal(0.0, 0.5);
      x[u] = rng.uniform(-1.0, 1.0);
      beta1[u] = rng.normal(0.0, 1.0);
    }
    const double beta0 = rng.normal(0.0, 1.0);
    InstanceSpec s;
    s.d = static_cast<std::size_t>(d);
    s.activation = Activation::Tanh;
    const ExpertParams net = random_expert(s, rng);
    const double F_gate = std::abs(gated_expert(A, b, net, x));
    const double F_lin = std::abs(gated_expert(A, b, LinearExpert{beta1, beta0}, x));
    worst_gate = std::max(worst_gate, pde_residual_gating(A, b, net, x).cwiseAbs().maxCoeff() / (1 + F_gate));
    worst_lin = std::max(worst_lin,
                       pde_residual_linear(A, b, beta1, beta0, x).cwiseAbs().maxCoeff() / (1 + F_lin));
    coarse_gate = std::max(coarse_gate, pde_residual_gating(A, b, net, x, 1e-2).cwiseAbs().maxCoeff());
    fine_gate = std::max(fine_gate, pde_residual_gating(A, b, net, x, 5e-3).cwiseAbs().maxCoeff());
    coarse_lin = std::max(coarse_lin, pde_residual_linear(A, b, beta1, beta0, x, 1e-2).cwiseAbs().maxCoeff());
    fine_lin = std::max(fine_lin, pde_residual_linear(A, b, beta1, beta0, x, 5e-3).cwiseAbs().maxCoeff());
  }
  const double ratio_gate = coarse_gate / fine_gate, ratio_lin = coarse_lin / fine_lin;
  const bool decay = ratio_gate > 3.0 && ratio_gate < 5.0 && ratio_lin > 3.0 && ratio_lin < 5.0;
  return {worst_gate <= 1e-4 && worst_lin <= 1e-4 && decay,
          "max scaled residual gating " + fmt("%.2e", worst_gate) + ", linear " +
              fmt("%.2e", worst_lin) + "; halving h shrinks them " + fmt("%.2fx", ratio_gate) + " / " +
              fmt("%.2fx", ratio_lin)};
}

// --- 3 -------------------------------------------------------------------

Outcome attention_equivalence() {
  double worst = 0.0;
  std::size_t low_rank = 0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const std::size_t d = 2 + k % 3, r = 1 + k % (d + 1), N = 2 + k % 4;
    low_rank += r < d ? 1 : 0;
    const AttnGateParams attn = random_attention(d, r, N, k % 2 == 1, 500 + k);
    const std::vector<ExpertParams> experts(N, LinearExpert{Vec::Zero(static_cast<Eigen::Index>(d)), 0.0});
    const MixingMeasure G = measure_from_attention(attn, experts);
    StreamCursor rng(CounterStream(k, "acceptance-attn-x"));
    for (int p = 0; p < 10; ++p) {
      Vec x(static_cast<Eigen::Index>(d));
      for (auto& v : x) v = rng.uniform(-2.0, 2.0);
      const Vec direct = gate_probs(attn_gate_scores(x, attn));
      const Vec induced = gate_probs(gate_scores(x, G));
      worst = std::max(worst, (direct - induced).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-12 && low_rank > 0, "50 instances (" + std::to_string(low_rank) +
                                              " with r < d), max prob gap " + fmt("%.2e", worst)};
}

// --- 4 -------------------------------------------------------------------

std::vector<ExpertParams> ident_experts(ExpertFamily fam) {
  SynthConfig c;
  c.d = 2;
  c.n_star = 2;
  c.family = fam;
  c.hidden = 2;
  c.activation = Activation::Tanh;
  const MixingMeasure G = sample_true_measure(c, 41);
  std::vector<ExpertParams> out;
  for (const auto& a : G.atoms) out.push_back(a.eta);
  return out;
}

// x_u * dh/dbeta0 against dh/dbeta1_u, same expert.
bool predicted_witness(const IdentReport& r, std::size_t d) {
  if (!r.witness) return false;
  auto is_shift = [&](const FeatureLabel& l) {
    return l.gamma == std::vector<std::size_t>{d} && l.nu_degree() == 1;
  };
  auto is_slope = [&](const FeatureLabel& l) {
    return l.gamma.size() == 1 && l.gamma[0] < d && l.nu_degree() == 0;
  };
  const auto& [a, b] = *r.witness;
  if (a.j != b.j) return false;
  const FeatureLabel* shift = is_shift(a) ? &a : is_shift(b) ? &b : nullptr;
  const FeatureLabel* slope = is_slope(a) ? &a : is_slope(b) ? &b : nullptr;
  return shift && slope && shift->nu[slope->gamma[0]] == 1;
}

Outcome identifiability() {
  const auto lin = ident_experts(ExpertFamily::Linear);
  const auto net = ident_experts(ExpertFamily::TwoLayer);
  int lin_ok = 0, net_ok = 0;
  double lin_smin = 0.0, net_smin = 1e300;
  std::string lin_witness, net_witness;
  for (std::uint64_t k = 0; k < 10; ++k) {
    const IdentReport a = strong_ident_report(
        derivative_features(lin, ident_sample_points(lin, 2, 500, 70 + k), FeatureMode::poly(1)));
    lin_smin = std::max(lin_smin, a.min_singular_value);
    if (!a.independent && a.min_singular_value < 1e-8 && predicted_witness(a, 2)) ++lin_ok;
    if (a.witness) lin_witness = a.witness->first.name + " ~ " + a.witness->second.name;

    const IdentReport b = strong_ident_report(
        derivative_features(net, ident_sample_points(net, 2, 500, 90 + k), FeatureMode::mono()));
    net_smin = std::min(net_smin, b.min_singular_value);
    if (b.independent && b.min_singular_value > 1e-6) ++net_ok;
    if (b.witness) net_witness = b.witness->first.name + (b.zero_column ? " (zero column)" : " ~ " + b.witness->second.name);
  }
  std::string detail = "linear: " + std::to_string(lin_ok) + "/10 dependent with predicted witness, max sigma_min " +
                       fmt("%.1e", lin_smin);
  if (!lin_witness.empty()) detail += ", witness [" + lin_witness + "]";
  detail += "; tanh two-layer: " + std::to_string(net_ok) + "/10 independent, min sigma_min " +
            fmt("%.1e", net_smin);
  if (!net_witness.empty()) detail += ", witness [" + net_witness + "]";
  return {lin_ok == 10 && net_ok == 10, detail};
}

// --- 5 -------------------------------------------------------------------

Outcome polynomial_system() {
  const PolysysResult a = polysys_search(2, 3, 100, 5);
  const PolysysResult b = polysys_search(3, 5, 100, 5);
  const PolysysResult c = polysys_search(1, 1, 100, 5);
  const PolysysResult e = polysys_search(2, 4, 100, 5);
  const bool pass = a.best_residual_norm < 1e-8 && b.best_residual_norm < 1e-8 &&
                    c.best_residual_norm >= 1e-3 && e.best_residual_norm >= 1e-3;
  return {pass, "(2,3) " + fmt("%.1e", a.best_residual_norm) + ", (3,5) " +
                    fmt("%.1e", b.best_residual_norm) + ", (1,1) " +
                    fmt("%.1e", c.best_residual_norm) + ", (2,4) " +
                    fmt("%.1e", e.best_residual_norm) + " after 100 restarts"};
}

// --- 6 / 7 ---------------------------------------------------------------

struct RateRuns {
  RateReport mono_relu, poly_relu, poly_linear;
  double seconds = 0.0;
  std::size_t threads = 1;
};

const RateRuns& rate_runs() {
  static const RateRuns runs = [] {
    RateRuns r;
    r.threads = worker_count();
    const auto t0 = std::chrono::steady_clock::now();
    r.mono_relu = run_rate_experiment(load_experiment("rates_mono_relu.json"), r.threads);
    r.poly_relu = run_rate_experiment(load_experiment("rates_poly_relu.json"), r.threads);
    r.poly_linear = run_rate_experiment(load_experiment("rates_poly_linear.json"), r.threads);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }();
  return runs;
}

double slope_of(const RateReport& r, const std::string& col) {
  const auto& s = r.slopes.at(col);
  return s ? s->slope : std::numeric_limits<double>::quiet_NaN();
}

Outcome rate_ordering() {
  const RateRuns& r = rate_runs();
  const double a = slope_of(r.mono_relu, "loss");
  const double b = slope_of(r.poly_relu, "loss");
  const double c = slope_of(r.poly_linear, "loss");
  const bool pa = a >= -0.8 && a <= -0.3, pb = b >= -0.8 && b <= -0.3, pc = c >= b + 0.15;
  return {pa && pb && pc,
          std::string("(a) mono+relu L3 slope ") + fmt("%.3f", a) + (pa ? " ok" : " out of range") +
              "; (b) poly+relu L1 slope " + fmt("%.3f", b) + (pb ? " ok" : " out of range") +
              "; (c) linear L2,1 slope " + fmt("%.3f", c) + (pc ? " ok" : " not 0.15 flatter") +
              "; 3 runs in " + fmt("%.0f s", r.seconds) + " on " + std::to_string(r.threads) +
              " workers"};
}

Outcome function_rate() {
  const double s = slope_of(rate_runs().mono_relu, "fn_dist");
  return {s >= -0.7 && s <= -0.3, "mono+relu fn_dist slope " + fmt("%.3f", s)};
}

// --- 8 -------------------------------------------------------------------

Outcome slow_sequence_check() {
  SynthConfig c;
  c.d = 2;
  c.n_star = 3;
  c.family = ExpertFamily::Linear;
  const MixingMeasure G_star = sample_true_measure(c, 8);
  double worst_rel = 0.0;
  std::string worst_case;
  bool monotone = true;
  std::string ratios;
  for (double r : {1.0, 2.0}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double n : {10.0, 100.0, 1000.0}) {
      const SlowSequenceResult S = slow_sequence(G_star, n, r, 50000, 3);
      const double rel = std::abs(S.loss_computed / S.loss_closed_form - 1.0);
      if (rel >= worst_rel) {
        worst_rel = rel;
        worst_case = "n=" + fmt("%.0f", n) + " r=" + fmt("%.0f", r);
      }
      const double ratio = S.fn_dist / S.loss_computed;
      monotone = monotone && ratio < prev;
      prev = ratio;
      ratios += (ratios.empty() ? "" : " ") + fmt("%.2e", ratio);
    }
  }
  return {worst_rel <= 1e-12 && monotone,
          "closed form rel err " + fmt("%.1e", worst_rel) + " (worst at " + worst_case +
              "), fn/loss ratios " + ratios};
}

// --- 9 -------------------------------------------------------------------

Outcome overhead_check() {
  ArchSpec ratio_arch;
  ratio_arch.d = 4096;
  ratio_arch.d_ff = 14336;  // 3.5 d
  ratio_arch.n_experts = 8;
  ratio_arch.n_layers = 1;
  const double ratio = overhead_report(ratio_arch).moe_layer_ratio;

  const OverheadReport mix = overhead_report(arch_from_json(read_json_file(config_path("mixtral.json"))));
  const OverheadReport gpt = overhead_report(arch_from_json(read_json_file(config_path("gpt2.json"))));
  const double full = static_cast<double>(mix.full_quad_total);
  const double low = static_cast<double>(*mix.lowrank_total);
  const bool pass = std::abs(ratio - 1.0 / 14.0) < 1e-15 && std::abs(full / 2.1e9 - 1) <= 0.05 &&
                    std::abs(low / 150e6 - 1) <= 0.05 && gpt.lowrank_total &&
                    *gpt.lowrank_total == 2654208u && gpt.discrepancy;
  return {pass, "ratio " + fmt("%.6f", ratio) + ", mixtral full " + std::to_string(mix.full_quad_total) +
                    ", low-rank " + std::to_string(*mix.lowrank_total) + ", gpt2 low-rank " +
                    std::to_string(gpt.lowrank_total.value_or(0)) + " vs 2.3M reference" +
                    (gpt.discrepancy ? " (discrepancy flagged)" : "")};
}

// --- 10 ------------------------------------------------------------------

Outcome softmax_invariants() {
  const GateTag gates[] = {GateTag::Linear, GateTag::QuadPoly, GateTag::QuadMono};
  const Nonlinearity nls[] = {Nonlinearity::Relu, Nonlinearity::Gelu, Nonlinearity::Tanh,
                              Nonlinearity::Sigmoid, Nonlinearity::Silu};
  double simplex = 0.0, shift = 0.0, identity = 0.0;
  bool negative = false;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    InstanceSpec s;
    s.gate = gates[k % 3];
    s.d = 1 + k % 4;
    s.n_atoms = 1 + k % 6;
    s.scale = 2.0;
    MixingMeasure G = random_measure(s, 7000 + k);
    if (k % 4 == 3) G.gate.top_k = 1 + k % G.size();
    StreamCursor rng(CounterStream(k, "acceptance-softmax"));
    Vec x(static_cast<Eigen::Index>(s.d));
    for (auto& v : x) v = rng.uniform(-3.0, 3.0);
    const Vec scores = gate_scores(x, G);
    const Vec p = gate_probs(scores, G.gate.top_k);
    simplex = std::max(simplex, std::abs(p.sum() - 1.0));
    negative = negative || p.minCoeff() < 0.0;
    const double t = rng.uniform(-50.0, 50.0);
    shift = std::max(shift, (gate_probs((scores.array() + t).matrix(), G.gate.top_k) - p)
                                .cwiseAbs()
                                .maxCoeff());

    const Eigen::Index dq = 1 + static_cast<Eigen::Index>(k % 5), nk = 1 + static_cast<Eigen::Index>(k % 7);
    Vec q(dq);
    Mat K(nk, dq), V(nk, 3);
    for (auto& v : q) v = rng.normal(0.0, 1.0);
    for (Eigen::Index a = 0; a < nk; ++a) {
      for (Eigen::Index b = 0; b < dq; ++b) K(a, b) = rng.normal(0.0, 1.0);
      for (Eigen::Index b = 0; b < 3; ++b) V(a, b) = rng.normal(0.0, 1.0);
    }
    identity = std::max(identity, (active_attention(q, K, V, Nonlinearity::Identity) -
                                   attention(q, K, V)).cwiseAbs().maxCoeff());
    const Vec act = active_attention(q, K, V, nls[k % 5]);
    const Vec w = attention_weights(q, K);
    simplex = std::max(simplex, std::abs(w.sum() - 1.0));
    negative = negative || w.minCoeff() < 0.0 || !act.allFinite();
  }
  return {simplex <= 1e-12 && shift <= 1e-12 && identity <= 1e-14 && !negative,
          "1000 instances: simplex gap " + fmt("%.1e", simplex) + ", shift gap " +
              fmt("%.1e", shift) + ", identity gap " + fmt("%.1e", identity)};
}

// --- 11 ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_lab(const fs::path& out, int threads) {
  const std::string cmd = std::string("\"") + QMOE_LAB_PATH + "\" rates --config \"" +
                          config_path("determinism.json") + "\" --out \"" + out.string() +
                          "\" --threads " + std::to_string(threads) + " > /dev/null";
  return std::system(cmd.c_str());
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("qmoe-accept-" + std::to_string(::getpid()));
  fs::remove_all(root);
  const int s1 = run_lab(root / "t1", 1);
  const int s8 = run_lab(root / "t8", 8);
  const int s1b = run_lab(root / "t1b", 1);
  if (s1 || s8 || s1b) {
    fs::remove_all(root);
    return {false, "qmoe_lab rates exited non-zero"};
  }
  const std::string a = slurp(root / "t1" / "rows.csv");
  const bool threads_same = !a.empty() && a == slurp(root / "t8" / "rows.csv");
  const bool rerun_same = a == slurp(root / "t1b" / "rows.csv");
  const bool report_same = slurp(root / "t1" / "report.json") == slurp(root / "t8" / "report.json");
  fs::remove_all(root);
  return {threads_same && rerun_same && report_same,
          std::string("rows.csv ") + std::to_string(a.size()) + " bytes; threads 1 vs 8 " +
              (threads_same ? "identical" : "differ") + ", rerun " +
              (rerun_same ? "identical" : "differs") + ", report.json " +
              (report_same ? "identical" : "differs")};
}

}  // namespace

int main() {
  struct Check {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Check> checks = {
      {1, "gradient correctness", gradient_correctness},
      {2, "PDE identities", pde_identities},
      {3, "attention-form equivalence", attention_equivalence},
      {4, "identifiability Gram tests", identifiability},
      {5, "polynomial system", polynomial_system},
      {6, "rate ordering", rate_ordering},
      {7, "function-space rate", function_rate},
      {8, "slow-sequence pathology", slow_sequence_check},
      {9, "overhead calculator", overhead_check},
      {10, "softmax/attention invariants", softmax_invariants},
      {11, "determinism", determinism},
  };
  int failures = 0;
  for (const auto& c : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria failed\n", failures, checks.size());
  return failures ? 1 : 0;
}
