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

#ifndef QMOE_RATELAB_HPP_
#define QMOE_RATELAB_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "qmoe/errors.hpp"
#include "qmoe/fit.hpp"
#include "qmoe/model.hpp"
#include "qmoe/rng.hpp"
#include "qmoe/synth.hpp"
#include "qmoe/voronoi.hpp"

namespace qmoe {

// ---------------------------------------------------------------------------
// Slopes
// ---------------------------------------------------------------------------

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_ = 0.0;
  std::size_t points = 0;
};

// OLS of log10(value) on log10(n).
inline SlopeFit loglog_slope(const std::vector<std::pair<double, double>>& points) {
  require(points.size() >= 2, "loglog_slope: need at least two points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [n, v] = points[i];
    if (!(n > 0.0) || !(v > 0.0) || !std::isfinite(v))
      throw InvalidArgument("loglog_slope: point " + std::to_string(i) +
                            " needs positive n and value");
    lx.push_back(std::log10(n));
    ly.push_back(std::log10(v));
  }
  const auto k = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  require(sxx > 0.0, "loglog_slope: need at least two distinct n");
  SlopeFit f;
  f.points = lx.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (lx.size() > 2) {
    double sse = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      const double r = ly[i] - (f.intercept + f.slope * lx[i]);
      sse += r * r;
    }
    f.stderr_ = std::sqrt(sse / (k - 2.0) / sxx);
  }
  return f;
}

// k log-spaced integers from lo to hi inclusive.
inline std::vector<std::size_t> log_grid(double lo, double hi, std::size_t k) {
  require(lo > 0.0 && hi > lo && k >= 2, "log_grid: need 0 < lo < hi and k >= 2");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) {
    const double e = std::log10(lo) + (std::log10(hi) - std::log10(lo)) * static_cast<double>(i) /
                                          static_cast<double>(k - 1);
    out.push_back(static_cast<std::size_t>(std::llround(std::pow(10.0, e))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class ExpertKind { Linear, Relu, Tanh };
enum class LossKind { L1, L3, L2r };
enum class Aggregate { Mean, Median };

inline std::string_view to_string(ExpertKind e) {
  return e == ExpertKind::Linear ? "linear" : e == ExpertKind::Relu ? "relu" : "tanh";
}
inline ExpertKind parse_expert_kind(std::string_view s) {
  if (s == "linear") return ExpertKind::Linear;
  if (s == "relu") return ExpertKind::Relu;
  if (s == "tanh") return ExpertKind::Tanh;
  throw InvalidArgument("unknown expert '" + std::string(s) + "'");
}
inline std::string_view to_string(LossKind l) {
  return l == LossKind::L1 ? "L1" : l == LossKind::L3 ? "L3" : "L2r";
}
inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "L1") return LossKind::L1;
  if (s == "L3") return LossKind::L3;
  if (s == "L2r") return LossKind::L2r;
  throw InvalidArgument("unknown loss '" + std::string(s) + "'");
}
inline std::string_view to_string(Aggregate a) { return a == Aggregate::Mean ? "mean" : "median"; }
inline Aggregate parse_aggregate(std::string_view s) {
  if (s == "mean") return Aggregate::Mean;
  if (s == "median") return Aggregate::Median;
  throw InvalidArgument("unknown aggregate '" + std::string(s) + "'");
}

struct ExperimentConfig {
  SynthConfig synth;  // gate, d, N*, noise, input law
  FitConfig fit;
  ExpertKind expert = ExpertKind::Relu;
  std::vector<std::size_t> n_grid = log_grid(1e3, 1e5, 7);
  std::size_t reps = 20;
  std::uint64_t master_seed = 0;
  LossKind loss = LossKind::L1;
  double loss_r = 1.0;  // exponent for L2r
  std::size_t mc_points = 20000;
  Aggregate aggregate = Aggregate::Mean;
  // Translate every fitted atom's gating so the cell of this true atom
  // carries the true gating; absent = evaluate raw parameters.
  std::optional<std::size_t> gauge_anchor;

  // Synth config with the expert kind applied.
  SynthConfig resolved_synth() const {
    SynthConfig s = synth;
    if (expert == ExpertKind::Linear) {
      s.family = ExpertFamily::Linear;
    } else {
      s.family = ExpertFamily::TwoLayer;
      s.activation = expert == ExpertKind::Relu ? Activation::Relu : Activation::Tanh;
    }
    return s;
  }

  std::size_t n_fit() const { return fit.n_fit == 0 ? synth.n_star : fit.n_fit; }

  void validate() const {
    const SynthConfig s = resolved_synth();
    s.validate();
    fit.validate();
    require(s.gate.tag == GateTag::QuadPoly || s.gate.tag == GateTag::QuadMono,
            "experiment: gate must be QuadPoly or QuadMono");
    require(n_fit() >= s.n_star, "experiment: N_fit must be >= N_star");
    require(!n_grid.empty(), "experiment: n_grid is empty");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
      require(n_grid[i] >= 10, "experiment: every n must be >= 10");
      if (i) require(n_grid[i] > n_grid[i - 1], "experiment: n_grid must be strictly increasing");
    }
    require(reps >= 1, "experiment: reps must be >= 1");
    require(mc_points >= 1, "experiment: mc_points must be >= 1");
    switch (loss) {
      case LossKind::L1:
        require(s.gate.tag == GateTag::QuadPoly && expert != ExpertKind::Linear,
                "experiment: L1 needs QuadPoly gates and nonlinear experts");
        break;
      case LossKind::L3:
        require(s.gate.tag == GateTag::QuadMono && expert != ExpertKind::Linear,
                "experiment: L3 needs QuadMono gates and nonlinear experts");
        break;
      case LossKind::L2r:
        require(expert == ExpertKind::Linear, "experiment: L2r needs linear experts");
        require(loss_r >= 1.0, "experiment: L2r exponent must be >= 1");
        break;
    }
    if (gauge_anchor) require(*gauge_anchor < s.n_star, "experiment: gauge anchor out of range");
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os << std::setprecision(17) << resolved_synth().fingerprint() << ";lr=" << fit.lr
       << ";steps=" << fit.steps << ";perturb=" << fit.perturb_scale << ";n_fit=" << n_fit()
       << ";clamp=" << fit.clamp << ":" << fit.clamp_bound << ";expert=" << to_string(expert)
       << ";grid=";
    for (auto n : n_grid) os << n << ",";
    os << ";reps=" << reps << ";seed=" << master_seed << ";loss=" << to_string(loss) << ":"
       << loss_r << ";M=" << mc_points << ";agg=" << to_string(aggregate)
       << ";anchor=" << (gauge_anchor ? std::to_string(*gauge_anchor) : "none");
    return os.str();
  }

  std::string hash() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(fingerprint());
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RateRow {
  std::size_t n = 0;
  std::size_t rep = 0;
  bool divergent = false;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double errA = std::numeric_limits<double>::quiet_NaN();
  double errB = std::numeric_limits<double>::quiet_NaN();
  double errEta = std::numeric_limits<double>::quiet_NaN();
  double errW = std::numeric_limits<double>::quiet_NaN();
  double fn_dist = std::numeric_limits<double>::quiet_NaN();
  std::string note;  // why a row diverged
};

inline constexpr std::string_view kRateColumns[] = {"loss", "errA", "errB",
                                                    "errEta", "errW", "fn_dist"};

inline double row_value(const RateRow& r, std::string_view col) {
  if (col == "loss") return r.loss;
  if (col == "errA") return r.errA;
  if (col == "errB") return r.errB;
  if (col == "errEta") return r.errEta;
  if (col == "errW") return r.errW;
  if (col == "fn_dist") return r.fn_dist;
  throw InvalidArgument("unknown rate column '" + std::string(col) + "'");
}

struct RateReport {
  std::vector<RateRow> rows;  // n-major, then rep
  std::map<std::string, std::optional<SlopeFit>> slopes;
  std::map<std::string, std::vector<std::pair<double, double>>> aggregated;  // (n, value)
  std::string config_hash;
  std::size_t divergent = 0;
};

// Seeds are pure functions of (master seed, role, n index, rep).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view role, std::size_t n_index,
                                 std::size_t rep) {
  return CounterStream(master, role).child(n_index).child(rep).key();
}

inline double evaluate_loss(const ExperimentConfig& cfg, const MixingMeasure& G,
                            const MixingMeasure& G_star) {
  switch (cfg.loss) {
    case LossKind::L1: return loss_L1(G, G_star).total;
    case LossKind::L3: return loss_L3(G, G_star).total;
    case LossKind::L2r: return loss_L2r(G, G_star, cfg.loss_r).total;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline RateRow divergent_row(std::size_t n, std::size_t rep, std::string why) {
  RateRow r;
  r.n = n;
  r.rep = rep;
  r.divergent = true;
  r.note = std::move(why);
  return r;
}

// One (n, rep) cell: fresh data, over-specified start, fit, diagnostics.
inline RateRow run_rate_cell(const ExperimentConfig& cfg, const MixingMeasure& G_star,
                             std::size_t n_index, std::size_t rep) {
  const SynthConfig s = cfg.resolved_synth();
  RateRow row;
  row.n = cfg.n_grid[n_index];
  row.rep = rep;
  try {
    const Dataset data = generate_dataset(G_star, s, row.n,
                                          derive_seed(cfg.master_seed, "dataset", n_index, rep));
    const MixingMeasure G0 = init_overspecified(
        G_star, cfg.n_fit(), cfg.fit.perturb_scale,
        derive_seed(cfg.master_seed, "init", n_index, rep));
    const FitResult fit = gd_fit(G0, data, cfg.fit);
    const MixingMeasure G =
        cfg.gauge_anchor ? anchor_gauge(fit.G_hat, G_star, *cfg.gauge_anchor) : fit.G_hat;
    row.loss = evaluate_loss(cfg, G, G_star);
    row.errA = row.errB = row.errEta = row.errW = 0.0;
    for (const auto& e : per_param_errors(G, G_star)) {
      row.errA = std::max(row.errA, e.errA);
      row.errB = std::max(row.errB, e.errB);
      row.errEta = std::max(row.errEta, e.errEta);
      row.errW = std::max(row.errW, e.errW);
    }
    // Same evaluation points for every row so rows differ only by the fit.
    row.fn_dist = fn_l2_distance(fit.G_hat, G_star, s.input_dist, s.bound, cfg.mc_points,
                                 derive_seed(cfg.master_seed, "fn-eval", 0, 0));
    if (!std::isfinite(row.loss) || !std::isfinite(row.fn_dist))
      throw NumericalFailure("non-finite diagnostics");
  } catch (const UnsupportedCellSize& e) {
    return divergent_row(row.n, row.rep, e.what());
  } catch (const NumericalFailure& e) {
    return divergent_row(row.n, row.rep, e.what());
  }
  return row;
}

inline double aggregate_values(std::vector<double> v, Aggregate how) {
  if (how == Aggregate::Mean) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

// Per-n aggregates and log-log slopes over the non-divergent rows. A column
// with fewer than two usable n values, or a nonpositive aggregate, has no slope.
inline void fit_report_slopes(RateReport& rep, const std::vector<std::size_t>& n_grid,
                              std::size_t reps, Aggregate how) {
  rep.slopes.clear();
  rep.aggregated.clear();
  for (auto col : kRateColumns) {
    std::vector<std::pair<double, double>> pts;
    bool positive = true;
    for (std::size_t ni = 0; ni < n_grid.size(); ++ni) {
      std::vector<double> vals;
      for (std::size_t r = 0; r < reps; ++r) {
        const RateRow& row = rep.rows[ni * reps + r];
        if (!row.divergent) vals.push_back(row_value(row, col));
      }
      if (vals.empty()) continue;
      const double a = aggregate_values(std::move(vals), how);
      if (!(a > 0.0)) positive = false;
      pts.emplace_back(static_cast<double>(n_grid[ni]), a);
    }
    rep.aggregated[std::string(col)] = pts;
    std::optional<SlopeFit> s;
    if (positive && pts.size() >= 2) s = loglog_slope(pts);
    rep.slopes[std::string(col)] = s;
  }
}

// threads == 0 uses the hardware concurrency.
inline RateReport run_rate_experiment(const ExperimentConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  const SynthConfig s = cfg.resolved_synth();
  const MixingMeasure G_star = sample_true_measure(s, cfg.master_seed);
  const std::size_t jobs = cfg.n_grid.size() * cfg.reps;

  RateReport rep;
  rep.config_hash = cfg.hash();
  rep.rows.resize(jobs);

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs);
  // Largest n first keeps workers balanced; slots are fixed by (n, rep).
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs) return;
      const std::size_t slot = jobs - 1 - k;
      try {
        rep.rows[slot] = run_rate_cell(cfg, G_star, slot / cfg.reps, slot % cfg.reps);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (const auto& row : rep.rows) rep.divergent += row.divergent ? 1 : 0;
  if (5 * rep.divergent > jobs)
    throw NumericalFailure("rate experiment: " + std::to_string(rep.divergent) + " of " +
                           std::to_string(jobs) + " fits diverged");
  fit_report_slopes(rep, cfg.n_grid, cfg.reps, cfg.aggregate);
  return rep;
}

// ---------------------------------------------------------------------------
// Gating overhead arithmetic
// ---------------------------------------------------------------------------

struct ArchSpec {
  std::string name;
  std::uint64_t d = 0;
  std::uint64_t d_ff = 0;
  std::uint64_t n_experts = 0;
  std::uint64_t n_layers = 0;
  std::optional<std::uint64_t> rank;
  std::optional<double> total_params;   // dense parameter count, for memory
  std::optional<double> active_params;  // per-token active count, for FLOPs
  std::optional<double> reference_lowrank_total;  // a published figure to compare against
  std::optional<double> reference_full_total;

  void validate() const {
    require(d > 0 && d_ff > 0 && n_experts > 0 && n_layers > 0,
            "overhead: d, d_ff, N and n_layers must be positive");
    if (rank) require(*rank > 0, "overhead: rank must be positive");
    if (total_params) require(*total_params > 0.0, "overhead: total_params must be positive");
    if (active_params) require(*active_params > 0.0, "overhead: active_params must be positive");
  }
};

struct OverheadReport {
  std::uint64_t full_quad_gate_params = 0;  // per expert
  std::uint64_t full_quad_total = 0;        // all experts, all layers
  std::optional<std::uint64_t> lowrank_gate_params;  // per layer
  std::optional<std::uint64_t> lowrank_total;
  double moe_layer_ratio = 0.0;
  std::string ratio_basis;  // which total the ratios below use
  std::optional<double> flop_ratio;
  std::optional<double> memory_ratio;
  std::optional<double> reference_lowrank_total;
  std::optional<double> reference_full_total;
  bool discrepancy = false;  // a reference figure is off by more than 5%
};

inline OverheadReport overhead_report(const ArchSpec& a) {
  a.validate();
  OverheadReport r;
  r.full_quad_gate_params = a.d + a.d * (a.d + 1) / 2;
  r.full_quad_total = r.full_quad_gate_params * a.n_experts * a.n_layers;
  r.moe_layer_ratio = static_cast<double>(a.d) / (4.0 * static_cast<double>(a.d_ff));
  double added = static_cast<double>(r.full_quad_total);
  r.ratio_basis = "full";
  if (a.rank) {
    r.lowrank_gate_params = (a.n_experts + 1) * *a.rank * a.d;
    r.lowrank_total = *r.lowrank_gate_params * a.n_layers;
    added = static_cast<double>(*r.lowrank_total);
    r.ratio_basis = "lowrank";
  }
  if (a.active_params) r.flop_ratio = added / *a.active_params;
  if (a.total_params) r.memory_ratio = added / *a.total_params;
  r.reference_lowrank_total = a.reference_lowrank_total;
  r.reference_full_total = a.reference_full_total;
  auto off = [](double got, double ref) { return std::abs(got / ref - 1.0) > 0.05; };
  if (a.reference_lowrank_total && r.lowrank_total)
    r.discrepancy |= off(static_cast<double>(*r.lowrank_total), *a.reference_lowrank_total);
  if (a.reference_full_total)
    r.discrepancy |= off(static_cast<double>(r.full_quad_total), *a.reference_full_total);
  return r;
}

}  // namespace qmoe

#endif  // QMOE_RATELAB_HPP_
