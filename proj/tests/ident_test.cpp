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
#include <string>

#include <gtest/gtest.h>

#include "qmoe/ident.hpp"
#include "qmoe/synth.hpp"

namespace qmoe {
namespace {

std::vector<ExpertParams> experts_of(ExpertFamily fam, Activation act, std::uint64_t seed = 11) {
  SynthConfig c;
  c.d = 2;
  c.n_star = 2;
  c.family = fam;
  c.hidden = 1;
  c.activation = act;
  const MixingMeasure G = sample_true_measure(c, seed);
  std::vector<ExpertParams> out;
  for (const auto& a : G.atoms) out.push_back(a.eta);
  return out;
}

std::size_t column_of(const FeatureMatrix& F, const std::string& name) {
  for (std::size_t c = 0; c < F.labels.size(); ++c)
    if (F.labels[c].name == name) return c;
  ADD_FAILURE() << "no column " << name;
  return 0;
}

TEST(FeatureLabels, Counts) {
  const LinearExpert lin{Vec::Zero(2), 0.0};
  // gamma=0: 1 + 2 + 3 monomials; gamma=1: 3 parameters.
  EXPECT_EQ(feature_labels(lin, 0, 2, FeatureMode::poly(1)).size(), 9u);
  // gamma=0 up to degree 4: 15; gamma=1 up to degree 2: 18; gamma=2: 6.
  EXPECT_EQ(feature_labels(lin, 0, 2, FeatureMode::poly(2)).size(), 39u);
  // nu in {0,2,4} with |gamma| <= 2, 1, 0 respectively: 10 + 3*4 + 5.
  EXPECT_EQ(feature_labels(lin, 0, 2, FeatureMode::mono()).size(), 27u);
  EXPECT_EQ(feature_labels(lin, 1, 2, FeatureMode::poly(1)).back().name, "j=1 nu=(0,0) d/d{beta0}");
}

TEST(DerivativeFeatures, OutputWeightColumnIsHiddenActivation) {
  const auto P = experts_of(ExpertFamily::TwoLayer, Activation::Tanh);
  const RowMat X = ident_sample_points(P, 2, 40, 5);
  const FeatureMatrix F = derivative_features(P, X, FeatureMode::poly(1));
  const auto col = column_of(F, "j=1 nu=(0,0) d/d{a[0]}");
  const auto& net = std::get<TwoLayerExpert>(P[1]);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vec x = X.row(i).transpose();
    EXPECT_NEAR(F.values(i, static_cast<Eigen::Index>(col)),
                std::tanh(net.W.row(0).dot(x) + net.v[0]), 1e-15);
  }
}

TEST(DerivativeFeatures, TwoLayerOrderThreeRejected) {
  const auto P = experts_of(ExpertFamily::TwoLayer, Activation::Relu);
  const RowMat X = ident_sample_points(P, 2, 10, 5);
  EXPECT_THROW(derivative_features(P, X, FeatureMode::poly(3)), InvalidArgument);
}

TEST(SamplePoints, AvoidReluKinks) {
  const auto P = experts_of(ExpertFamily::TwoLayer, Activation::Relu);
  const RowMat X = ident_sample_points(P, 2, 500, 9, 1.0, 1e-3);
  for (const auto& eta : P) {
    const auto& net = std::get<TwoLayerExpert>(eta);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      EXPECT_GE((net.W * X.row(i).transpose() + net.v).cwiseAbs().minCoeff(), 1e-3);
  }
}

TEST(StrongIdent, IndependentColumns) {
  FeatureMatrix F;
  F.values.resize(50, 2);
  for (int i = 0; i < 50; ++i) {
    const double t = -1.0 + i / 25.0;
    F.values(i, 0) = 1.0;
    F.values(i, 1) = t;
  }
  F.labels = {FeatureLabel{0, {}, {0}, "one"}, FeatureLabel{0, {}, {1}, "x"}};
  const IdentReport R = strong_ident_report(F);
  EXPECT_TRUE(R.independent);
  EXPECT_EQ(R.rank, 2);
  EXPECT_EQ(verdict(R), "independent");
}

TEST(StrongIdent, WitnessIsMostCollinearPair) {
  FeatureMatrix F;
  F.values.resize(40, 3);
  for (int i = 0; i < 40; ++i) {
    const double t = std::sin(0.3 * i);
    F.values(i, 0) = std::cos(0.7 * i);
    F.values(i, 1) = t;
    F.values(i, 2) = -3.0 * t;
  }
  F.labels = {FeatureLabel{0, {}, {}, "a"}, FeatureLabel{0, {}, {}, "b"},
              FeatureLabel{0, {}, {}, "c"}};
  const IdentReport R = strong_ident_report(F);
  EXPECT_FALSE(R.independent);
  ASSERT_TRUE(R.witness);
  EXPECT_EQ(R.witness->first.name, "b");
  EXPECT_EQ(R.witness->second.name, "c");
  EXPECT_NEAR(R.witness_correlation, 1.0, 1e-12);
  EXPECT_FALSE(R.zero_column);
}

TEST(StrongIdent, ZeroColumnIsWitness) {
  FeatureMatrix F;
  F.values = Mat::Zero(10, 2);
  F.values.col(0).setOnes();
  F.labels = {FeatureLabel{0, {}, {}, "one"}, FeatureLabel{0, {}, {}, "zero"}};
  const IdentReport R = strong_ident_report(F);
  EXPECT_TRUE(R.zero_column);
  EXPECT_EQ(R.witness->first.name, "zero");
}

// With the literal label sets the linear family is dependent already at
// order one: beta1 derivatives of expert 0 and expert 1 are both x_u.
TEST(StrongIdent, LinearExpertsDependentAtOrderOne) {
  const auto P = experts_of(ExpertFamily::Linear, Activation::Relu);
  const RowMat X = ident_sample_points(P, 2, 500, 3);
  const IdentReport R = strong_ident_report(derivative_features(P, X, FeatureMode::poly(1)));
  EXPECT_FALSE(R.independent);
  EXPECT_LT(R.min_singular_value, 1e-10);
}

TEST(Pde, ExactlyZeroAtOrigin) {
  Mat A(2, 2);
  A << 0.3, 0.1, 0.1, -0.2;
  const Vec b = Vec::Constant(2, 0.4), x = Vec::Zero(2);
  TwoLayerExpert net{Mat::Constant(1, 2, 0.5), Vec::Constant(1, 0.1), Vec::Constant(1, 1.2), 0.3,
                     Activation::Tanh};
  EXPECT_EQ(pde_residual_gating(A, b, net, x).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(pde_residual_linear(A, b, Vec::Constant(2, 0.7), 0.2, x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pde, OneDimensionalHandCase) {
  // F = exp(a x^2 + b x) (beta1 x + beta0): dF/dA = x^2 F = d2F/db2.
  Mat A(1, 1);
  A << 0.25;
  const Vec b = Vec::Constant(1, -0.5), x = Vec::Constant(1, 0.8);
  const LinearExpert lin{Vec::Constant(1, 1.5), -0.3};
  EXPECT_LT(std::abs(pde_residual_gating(A, b, lin, x, 1e-3)(0, 0)), 1e-6);
  EXPECT_LT(std::abs(pde_residual_linear(A, b, lin.beta1, lin.beta0, x, 1e-3)[0]), 1e-6);
}

TEST(Pde, RandomPointsBoundedAndSecondOrder) {
  StreamCursor rng(CounterStream(21, "pde-test"));
  for (int trial = 0; trial < 10; ++trial) {
    Mat A(2, 2);
    Vec b(2), x(2), beta1(2);
    for (int k = 0; k < 4; ++k) A(k / 2, k % 2) = rng.uniform(-0.5, 0.5);
    for (int k = 0; k < 2; ++k) {
      b[k] = rng.uniform(-0.5, 0.5);
      x[k] = rng.uniform(-1.0, 1.0);
      beta1[k] = rng.uniform(-1.0, 1.0);
    }
    TwoLayerExpert net{Mat::Constant(2, 2, 0.4), Vec::Constant(2, -0.1), Vec::Constant(2, 0.9),
                       0.2, Activation::Tanh};
    net.W(1, 0) = rng.uniform(-1.0, 1.0);
    const double beta0 = rng.uniform(-1.0, 1.0);
    EXPECT_LT(pde_residual_gating(A, b, net, x).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(pde_residual_linear(A, b, beta1, beta0, x).cwiseAbs().maxCoeff(), 1e-6);

    const double r1 = pde_residual_gating(A, b, net, x, 1e-2).cwiseAbs().maxCoeff();
    const double r2 = pde_residual_gating(A, b, net, x, 5e-3).cwiseAbs().maxCoeff();
    EXPECT_GT(r1 / r2, 3.5);
    EXPECT_LT(r1 / r2, 4.5);
  }
}

TEST(Rbar, KnownValues) {
  EXPECT_EQ(rbar_exact(1), 1);
  EXPECT_EQ(rbar_exact(2), 4);
  EXPECT_EQ(rbar_exact(3), 6);
  EXPECT_THROW(rbar_exact(4), UnsupportedCellSize);
  EXPECT_FALSE(rbar(5).exact());
  EXPECT_EQ(rbar(5).lower_bound, 7);
}

TEST(Polysys, ResidualOracleAndEvenness) {
  Eigen::VectorXd p(1), g1(1), g2(1);
  p << 1.0;
  g1 << 1.0;
  g2 << 0.0;
  const Eigen::VectorXd R = polysys_residual(p, g1, g2, 2);
  EXPECT_DOUBLE_EQ(R[0], 1.0);
  EXPECT_DOUBLE_EQ(R[1], 0.5);

  Eigen::VectorXd q(2), h1(2), h2(2);
  q << 0.4, -1.3;
  h1 << 0.2, -0.7;
  h2 << 1.1, 0.5;
  EXPECT_EQ(polysys_residual(q, h1, h2, 5), polysys_residual(-q, h1, h2, 5));
  EXPECT_THROW(polysys_residual(q, h1, Eigen::VectorXd(1), 2), InvalidArgument);
}

TEST(Polysys, SearchFindsSolutionBelowThreshold) {
  const PolysysResult R = polysys_search(2, 3, 40, 1);
  EXPECT_LT(R.best_residual_norm, 1e-8);
  EXPECT_TRUE(R.constrained);
}

TEST(Polysys, SearchFloorWhenNoSolution) {
  // p^2 g1 = 0 with |p| >= 0.1 and |g1| >= 0.1.
  const PolysysResult R = polysys_search(1, 1, 10, 1);
  EXPECT_GE(R.best_residual_norm, 1e-3);
}

TEST(Polysys, SearchIsDeterministic) {
  const PolysysResult a = polysys_search(2, 2, 5, 4), b = polysys_search(2, 2, 5, 4);
  EXPECT_EQ(a.best_residual_norm, b.best_residual_norm);
  EXPECT_EQ(a.best_restart, b.best_restart);
}

MixingMeasure linear_truth() {
  SynthConfig c;
  c.d = 2;
  c.n_star = 2;
  c.family = ExpertFamily::Linear;
  c.sigma_r2 = 1.0;
  return sample_true_measure(c, 5);
}

TEST(SlowSequence, ClosedFormMatches) {
  const MixingMeasure G_star = linear_truth();
  for (double n : {10.0, 100.0, 1000.0}) {
    const SlowSequenceResult S = slow_sequence(G_star, n, 1.0, 2000, 1);
    EXPECT_NEAR(S.loss_computed, S.loss_closed_form, 1e-12);
  }
}

TEST(SlowSequence, FunctionDistanceOutpacesLoss) {
  const MixingMeasure G_star = linear_truth();
  double prev = std::numeric_limits<double>::infinity();
  for (double n : {10.0, 100.0, 1000.0}) {
    const SlowSequenceResult S = slow_sequence(G_star, n, 1.0, 5000, 1);
    const double ratio = S.fn_dist / S.loss_computed;
    EXPECT_LT(ratio, prev);
    prev = ratio;
  }
}

TEST(SlowSequence, SplitSpacing) {
  const MixingMeasure G = slow_sequence_measure(linear_truth(), 1e6, 1.0);
  ASSERT_EQ(G.size(), 3u);
  const double gap = std::get<LinearExpert>(G.atoms[0].eta).beta0 -
                     std::get<LinearExpert>(G.atoms[1].eta).beta0;
  EXPECT_NEAR(gap, 2e-6, 1e-15);
  EXPECT_THROW(slow_sequence_measure(linear_truth(), 1.0, 1.0), InvalidArgument);
}

}  // namespace
}  // namespace qmoe
