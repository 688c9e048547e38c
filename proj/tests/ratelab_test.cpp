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

#include <cmath>

#include <gtest/gtest.h>

#include "qmoe/ratelab.hpp"

namespace qmoe {
namespace {

TEST(LoglogSlope, ExactPowerLaws) {
  std::vector<std::pair<double, double>> pts;
  for (double n : {1e3, 1e4, 1e5}) pts.emplace_back(n, 3.0 / std::sqrt(n));
  const SlopeFit f = loglog_slope(pts);
  EXPECT_NEAR(f.slope, -0.5, 1e-12);
  EXPECT_NEAR(f.intercept, std::log10(3.0), 1e-12);
  EXPECT_NEAR(f.stderr_, 0.0, 1e-12);
  EXPECT_EQ(f.points, 3u);
  EXPECT_NEAR(loglog_slope({{10.0, 1.0}, {100.0, 0.01}}).slope, -2.0, 1e-14);
}

TEST(LoglogSlope, RejectsBadPoints) {
  EXPECT_THROW(loglog_slope({{10.0, 1.0}}), InvalidArgument);
  EXPECT_THROW(loglog_slope({{10.0, 1.0}, {100.0, 0.0}}), InvalidArgument);
  EXPECT_THROW(loglog_slope({{10.0, 1.0}, {10.0, 2.0}}), InvalidArgument);
  try {
    loglog_slope({{10.0, 1.0}, {100.0, -1.0}});
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("point 1"), std::string::npos);
  }
}

TEST(LogGrid, DefaultGrid) {
  const std::vector<std::size_t> want = {1000, 2154, 4642, 10000, 21544, 46416, 100000};
  EXPECT_EQ(log_grid(1e3, 1e5, 7), want);
  EXPECT_THROW(log_grid(10, 5, 3), InvalidArgument);
}

TEST(Aggregate, MeanAndMedian) {
  EXPECT_DOUBLE_EQ(aggregate_values({1.0, 2.0, 6.0}, Aggregate::Mean), 3.0);
  EXPECT_DOUBLE_EQ(aggregate_values({6.0, 1.0, 2.0}, Aggregate::Median), 2.0);
  EXPECT_DOUBLE_EQ(aggregate_values({4.0, 1.0, 2.0, 6.0}, Aggregate::Median), 3.0);
}

TEST(Enums, RoundTrip) {
  for (auto e : {ExpertKind::Linear, ExpertKind::Relu, ExpertKind::Tanh})
    EXPECT_EQ(parse_expert_kind(to_string(e)), e);
  for (auto l : {LossKind::L1, LossKind::L3, LossKind::L2r})
    EXPECT_EQ(parse_loss_kind(to_string(l)), l);
  EXPECT_THROW(parse_loss_kind("L4"), InvalidArgument);
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.synth.d = 2;
  c.synth.n_star = 2;
  c.synth.hidden = 2;
  c.synth.sigma2 = 0.01;
  c.fit.steps = 3;
  c.fit.perturb_scale = 1e-3;
  c.fit.n_fit = 3;
  c.n_grid = {50, 100, 200};
  c.reps = 3;
  c.mc_points = 200;
  c.gauge_anchor = 1;
  return c;
}

TEST(ExperimentConfig, Validation) {
  ExperimentConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.loss = LossKind::L3;  // needs QuadMono
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config();
  c.expert = ExpertKind::Linear;  // L1 with linear experts
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.loss = LossKind::L2r;
  EXPECT_NO_THROW(c.validate());
  c = small_config();
  c.n_grid = {100, 50};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config();
  c.fit.n_fit = 1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config();
  c.gauge_anchor = 2;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(ExperimentConfig, HashTracksEveryField) {
  const ExperimentConfig a = small_config();
  ExperimentConfig b = a;
  EXPECT_EQ(a.hash(), b.hash());
  b.fit.lr = 0.2;
  EXPECT_NE(a.hash(), b.hash());
  b = a;
  b.aggregate = Aggregate::Median;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(DeriveSeed, DistinctPerRole) {
  EXPECT_EQ(derive_seed(1, "dataset", 2, 3), derive_seed(1, "dataset", 2, 3));
  EXPECT_NE(derive_seed(1, "dataset", 2, 3), derive_seed(1, "init", 2, 3));
  EXPECT_NE(derive_seed(1, "dataset", 2, 3), derive_seed(1, "dataset", 3, 2));
}

bool same_rows(const RateReport& a, const RateReport& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const RateRow &x = a.rows[i], &y = b.rows[i];
    if (x.n != y.n || x.rep != y.rep || x.divergent != y.divergent) return false;
    for (auto col : kRateColumns) {
      const double u = row_value(x, col), v = row_value(y, col);
      if (!(u == v) && !(std::isnan(u) && std::isnan(v))) return false;
    }
  }
  return true;
}

TEST(RunRateExperiment, ThreadCountDoesNotChangeRows) {
  const ExperimentConfig c = small_config();
  const RateReport one = run_rate_experiment(c, 1);
  const RateReport four = run_rate_experiment(c, 4);
  EXPECT_TRUE(same_rows(one, four));
  ASSERT_EQ(one.rows.size(), 9u);
  EXPECT_EQ(one.rows[4].n, 100u);
  EXPECT_EQ(one.rows[4].rep, 1u);
  EXPECT_EQ(one.config_hash, c.hash());
  EXPECT_TRUE(one.slopes.at("loss").has_value());
}

TEST(RunRateExperiment, NoiselessExactStartHasZeroLoss) {
  ExperimentConfig c = small_config();
  c.synth.sigma2 = 1e-300;
  c.fit.perturb_scale = 0.0;
  c.fit.n_fit = 2;
  c.fit.steps = 1;
  const RateReport r = run_rate_experiment(c);
  for (const auto& row : r.rows) {
    EXPECT_FALSE(row.divergent);
    EXPECT_LT(row.loss, 1e-12);
  }
  EXPECT_EQ(r.divergent, 0u);
}

TEST(FitReportSlopes, DegenerateGridHasNoSlope) {
  RateReport r;
  RateRow row;
  row.n = 100;
  row.loss = row.errA = row.errB = row.errEta = row.errW = row.fn_dist = 1.0;
  r.rows = {row, row};
  fit_report_slopes(r, {100}, 2, Aggregate::Mean);
  EXPECT_FALSE(r.slopes.at("loss").has_value());
  EXPECT_EQ(r.aggregated.at("loss").size(), 1u);
}

TEST(FitReportSlopes, DivergentRowsSkipped) {
  RateReport r;
  for (std::size_t n : {100u, 1000u}) {
    RateRow good;
    good.n = n;
    good.loss = good.errA = good.errB = good.errEta = good.errW = good.fn_dist = 1.0 / n;
    r.rows.push_back(good);
    r.rows.push_back(divergent_row(n, 1, "test"));
  }
  fit_report_slopes(r, {100, 1000}, 2, Aggregate::Mean);
  ASSERT_TRUE(r.slopes.at("loss").has_value());
  EXPECT_NEAR(r.slopes.at("loss")->slope, -1.0, 1e-12);
}

ArchSpec mixtral() {
  ArchSpec a;
  a.name = "mixtral";
  a.d = 4096;
  a.d_ff = 14336;
  a.n_experts = 8;
  a.n_layers = 32;
  a.rank = 128;
  a.total_params = 47e9;
  a.active_params = 13e9;
  a.reference_full_total = 2.1e9;
  a.reference_lowrank_total = 150e6;
  return a;
}

TEST(Overhead, MixtralNumbers) {
  const OverheadReport r = overhead_report(mixtral());
  EXPECT_EQ(r.full_quad_gate_params, 4096u + 4096u * 4097u / 2u);
  EXPECT_EQ(r.full_quad_total, 2149056512u);
  EXPECT_EQ(*r.lowrank_total, 150994944u);
  EXPECT_NEAR(r.moe_layer_ratio, 4096.0 / (4.0 * 14336.0), 1e-15);
  EXPECT_EQ(r.ratio_basis, "lowrank");
  EXPECT_NEAR(*r.memory_ratio, 150994944.0 / 47e9, 1e-15);
  EXPECT_FALSE(r.discrepancy);
}

TEST(Overhead, Gpt2DiscrepancyFlagged) {
  ArchSpec a;
  a.d = 768;
  a.d_ff = 3072;
  a.n_experts = 8;
  a.n_layers = 12;
  a.rank = 32;
  a.reference_lowrank_total = 2.3e6;
  const OverheadReport r = overhead_report(a);
  EXPECT_EQ(*r.lowrank_total, 2654208u);
  EXPECT_TRUE(r.discrepancy);
  EXPECT_FALSE(r.flop_ratio.has_value());
}

TEST(Overhead, ScalingHomogeneity) {
  ArchSpec a = mixtral();
  const OverheadReport base = overhead_report(a);
  a.n_layers *= 2;
  const OverheadReport twice = overhead_report(a);
  EXPECT_EQ(twice.full_quad_total, 2 * base.full_quad_total);
  EXPECT_EQ(*twice.lowrank_total, 2 * *base.lowrank_total);
  a = mixtral();
  a.d *= 2;
  a.d_ff *= 2;
  EXPECT_DOUBLE_EQ(overhead_report(a).moe_layer_ratio, base.moe_layer_ratio);
  a = mixtral();
  a.d = 0;
  EXPECT_THROW(overhead_report(a), InvalidArgument);
}

}  // namespace
}  // namespace qmoe
