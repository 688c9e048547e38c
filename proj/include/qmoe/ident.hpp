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

#ifndef QMOE_IDENT_HPP_
#define QMOE_IDENT_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "qmoe/dataset.hpp"
#include "qmoe/errors.hpp"
#include "qmoe/fit.hpp"
#include "qmoe/model.hpp"
#include "qmoe/polysys.hpp"
#include "qmoe/rng.hpp"
#include "qmoe/voronoi.hpp"

namespace qmoe {

// ---------------------------------------------------------------------------
// Derivative feature families
// ---------------------------------------------------------------------------

struct FeatureMode {
  enum class Kind { Poly, Mono };
  Kind kind = Kind::Poly;
  int order = 1;  // r_j for Poly; ignored for Mono

  static FeatureMode poly(int r) { return {Kind::Poly, r}; }
  static FeatureMode mono() { return {Kind::Mono, 2}; }
};

// Column x^nu * d^|gamma| h / d eta^gamma at eta_j. gamma is kept as a sorted
// list of flat parameter indices (repeats allowed), nu as exponents per input.
struct FeatureLabel {
  std::size_t j = 0;
  std::vector<std::size_t> gamma;
  std::vector<int> nu;
  std::string name;

  int nu_degree() const {
    int s = 0;
    for (int e : nu) s += e;
    return s;
  }
  bool operator==(const FeatureLabel& o) const {
    return j == o.j && gamma == o.gamma && nu == o.nu;
  }
};

struct FeatureMatrix {
  Mat values;  // rows = sample points, cols = labels
  std::vector<FeatureLabel> labels;
};

// Parameter name at flat index k of eta (flatten order).
inline std::string eta_param_name(const ExpertParams& eta, std::size_t k) {
  if (const auto* lin = std::get_if<LinearExpert>(&eta)) {
    const auto d = static_cast<std::size_t>(lin->beta1.size());
    return k < d ? "beta1[" + std::to_string(k) + "]" : "beta0";
  }
  const auto& net = std::get<TwoLayerExpert>(eta);
  const auto m = static_cast<std::size_t>(net.W.rows());
  const auto d = static_cast<std::size_t>(net.W.cols());
  if (k < m * d) return "W[" + std::to_string(k / d) + "," + std::to_string(k % d) + "]";
  k -= m * d;
  if (k < m) return "v[" + std::to_string(k) + "]";
  k -= m;
  if (k < m) return "a[" + std::to_string(k) + "]";
  return "a0";
}

namespace detail {

// All multisets of size `size` drawn from [0, q), in lexicographic order.
inline void multisets(std::size_t q, std::size_t size, std::vector<std::size_t>& cur,
                      std::size_t start, std::vector<std::vector<std::size_t>>& out) {
  if (cur.size() == size) {
    out.push_back(cur);
    return;
  }
  for (std::size_t k = start; k < q; ++k) {
    cur.push_back(k);
    multisets(q, size, cur, k, out);
    cur.pop_back();
  }
}

// Exponent vectors of total degree `deg` in d variables, graded-lex.
inline void monomials(std::size_t d, int deg, std::vector<int>& cur, std::size_t pos,
                      std::vector<std::vector<int>>& out) {
  if (pos + 1 == d) {
    cur[pos] = deg;
    out.push_back(cur);
    return;
  }
  for (int e = deg; e >= 0; --e) {
    cur[pos] = e;
    monomials(d, deg - e, cur, pos + 1, out);
  }
}

inline std::vector<std::vector<int>> monomials_of_degree(std::size_t d, int deg) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(d, 0);
  monomials(d, deg, cur, 0, out);
  return out;
}

// Role of a flat TwoLayer parameter: which hidden unit, and what kind.
struct NetParam {
  enum Kind { W, V, A, A0 } kind;
  std::size_t unit = 0;
  std::size_t input = 0;
};

inline NetParam net_param(const TwoLayerExpert& net, std::size_t k) {
  const auto m = static_cast<std::size_t>(net.W.rows());
  const auto d = static_cast<std::size_t>(net.W.cols());
  if (k < m * d) return {NetParam::W, k / d, k % d};
  k -= m * d;
  if (k < m) return {NetParam::V, k, 0};
  k -= m;
  if (k < m) return {NetParam::A, k, 0};
  return {NetParam::A0, 0, 0};
}

// d^|gamma| h / d eta^gamma at one input, |gamma| <= 2.
inline double expert_derivative(const ExpertParams& eta, const std::vector<std::size_t>& gamma,
                                const double* x) {
  if (const auto* lin = std::get_if<LinearExpert>(&eta)) {
    const auto d = static_cast<std::size_t>(lin->beta1.size());
    if (gamma.empty()) {
      double s = lin->beta0;
      for (std::size_t u = 0; u < d; ++u) s += lin->beta1[static_cast<Eigen::Index>(u)] * x[u];
      return s;
    }
    if (gamma.size() == 1) return gamma[0] < d ? x[gamma[0]] : 1.0;
    return 0.0;  // affine in its parameters
  }
  const auto& net = std::get<TwoLayerExpert>(eta);
  const auto m = static_cast<std::size_t>(net.W.rows());
  const auto d = static_cast<std::size_t>(net.W.cols());
  auto z = [&](std::size_t k) {
    double s = net.v[static_cast<Eigen::Index>(k)];
    for (std::size_t u = 0; u < d; ++u) s += net.W(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(u)) * x[u];
    return s;
  };
  auto inner = [&](const NetParam& p) { return p.kind == NetParam::W ? x[p.input] : 1.0; };
  const Activation act = net.activation;
  if (gamma.empty()) {
    double s = net.a0;
    for (std::size_t k = 0; k < m; ++k) s += net.a[static_cast<Eigen::Index>(k)] * activate(act, z(k));
    return s;
  }
  if (gamma.size() == 1) {
    const NetParam p = net_param(net, gamma[0]);
    switch (p.kind) {
      case NetParam::W:
      case NetParam::V:
        return net.a[static_cast<Eigen::Index>(p.unit)] * activate_d1(act, z(p.unit)) * inner(p);
      case NetParam::A: return activate(act, z(p.unit));
      case NetParam::A0: return 1.0;
    }
  }
  require(gamma.size() == 2, "expert_derivative: only orders up to 2 are implemented");
  NetParam p = net_param(net, gamma[0]);
  NetParam q = net_param(net, gamma[1]);
  if (p.kind == NetParam::A0 || q.kind == NetParam::A0) return 0.0;
  if (p.unit != q.unit) return 0.0;
  const bool p_in = p.kind == NetParam::W || p.kind == NetParam::V;
  const bool q_in = q.kind == NetParam::W || q.kind == NetParam::V;
  if (!p_in && !q_in) return 0.0;  // d2/da2
  const double zk = z(p.unit);
  if (p_in && q_in)
    return net.a[static_cast<Eigen::Index>(p.unit)] * activate_d2(act, zk) * inner(p) * inner(q);
  return activate_d1(act, zk) * (p_in ? inner(p) : inner(q));
}

}  // namespace detail

// Enumerate the label set for one expert (index j) under `mode`.
inline std::vector<FeatureLabel> feature_labels(const ExpertParams& eta, std::size_t j,
                                                std::size_t d, const FeatureMode& mode) {
  const std::size_t q = param_count(eta);
  std::vector<std::pair<int, int>> blocks;  // (|gamma|, |nu|) pairs in order
  if (mode.kind == FeatureMode::Kind::Poly) {
    require(mode.order >= 0, "derivative_features: poly order must be >= 0");
    for (int g = 0; g <= mode.order; ++g)
      for (int n = 0; n <= 2 * (mode.order - g); ++n) blocks.emplace_back(g, n);
  } else {
    for (int n : {0, 2, 4})
      for (int g = 0; g <= 2 - n / 2; ++g) blocks.emplace_back(g, n);
  }
  std::vector<FeatureLabel> out;
  for (auto [g, n] : blocks) {
    std::vector<std::vector<std::size_t>> gammas;
    std::vector<std::size_t> cur;
    detail::multisets(q, static_cast<std::size_t>(g), cur, 0, gammas);
    for (const auto& nu : detail::monomials_of_degree(d, n)) {
      for (const auto& gamma : gammas) {
        FeatureLabel lab{j, gamma, nu, {}};
        std::string s = "j=" + std::to_string(j) + " nu=(";
        for (std::size_t u = 0; u < d; ++u) s += (u ? "," : "") + std::to_string(nu[u]);
        s += ") d/d{";
        for (std::size_t k = 0; k < gamma.size(); ++k)
          s += (k ? "," : "") + eta_param_name(eta, gamma[k]);
        s += "}";
        lab.name = std::move(s);
        out.push_back(std::move(lab));
      }
    }
  }
  return out;
}

// Columns x^nu * d^|gamma|h/d eta^gamma (x; eta_j) evaluated at the rows of X.
inline FeatureMatrix derivative_features(const std::vector<ExpertParams>& params, const RowMat& X,
                                         const FeatureMode& mode) {
  require(!params.empty(), "derivative_features: need at least one expert");
  require(X.rows() >= 1, "derivative_features: need sample points");
  const auto d = static_cast<std::size_t>(X.cols());
  for (const auto& eta : params) {
    validate(eta, d);
    require(same_architecture(eta, params.front()),
            "derivative_features: experts must share an architecture");
  }
  const int max_gamma = mode.kind == FeatureMode::Kind::Mono ? 2 : mode.order;
  if (family_of(params.front()) == ExpertFamily::TwoLayer && max_gamma > 2)
    throw InvalidArgument("derivative_features: order > 2 unsupported for two-layer experts");

  FeatureMatrix F;
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto labs = feature_labels(params[j], j, d, mode);
    F.labels.insert(F.labels.end(), labs.begin(), labs.end());
  }
  F.values.resize(X.rows(), static_cast<Eigen::Index>(F.labels.size()));
  for (Eigen::Index row = 0; row < X.rows(); ++row) {
    const double* x = X.row(row).data();
    for (std::size_t c = 0; c < F.labels.size(); ++c) {
      const auto& lab = F.labels[c];
      double mono = 1.0;
      for (std::size_t u = 0; u < d; ++u) mono *= std::pow(x[u], lab.nu[u]);
      F.values(row, static_cast<Eigen::Index>(c)) =
          mono * detail::expert_derivative(params[lab.j], lab.gamma, x);
    }
  }
  return F;
}

// Uniform points on [-bound, bound]^d; for ReLU experts any row within
// `kink_margin` of a hidden unit's kink is redrawn.
inline RowMat ident_sample_points(const std::vector<ExpertParams>& params, std::size_t d,
                                  std::size_t M, std::uint64_t seed, double bound = 1.0,
                                  double kink_margin = 1e-6) {
  require(M >= 1 && d >= 1, "ident_sample_points: need M, d >= 1");
  const CounterStream root(seed, "ident-points");
  RowMat X(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < M; ++i) {
    StreamCursor cur(root.child(i));
    for (int attempt = 0;; ++attempt) {
      for (std::size_t u = 0; u < d; ++u)
        X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) = cur.uniform(-bound, bound);
      bool near_kink = false;
      for (const auto& eta : params) {
        const auto* net = std::get_if<TwoLayerExpert>(&eta);
        if (!net || net->activation != Activation::Relu) continue;
        const Vec z = net->W * X.row(static_cast<Eigen::Index>(i)).transpose() + net->v;
        if (z.cwiseAbs().minCoeff() < kink_margin) near_kink = true;
      }
      if (!near_kink) break;
      if (attempt > 1000) throw NumericalFailure("ident_sample_points: cannot avoid ReLU kinks");
    }
  }
  return X;
}

// ---------------------------------------------------------------------------
// Independence report
// ---------------------------------------------------------------------------

struct IdentReport {
  double min_singular_value = 0.0;
  int rank = 0;
  bool independent = false;
  std::optional<std::pair<FeatureLabel, FeatureLabel>> witness;
  double witness_correlation = 0.0;
  bool zero_column = false;
  std::size_t columns = 0;
};

inline std::string verdict(const IdentReport& r) {
  return r.independent ? "independent" : "dependent";
}

// Columns scaled to unit RMS; verdict from the smallest singular value.
inline IdentReport strong_ident_report(const FeatureMatrix& F, double tau = 1e-8) {
  const Eigen::Index M = F.values.rows(), p = F.values.cols();
  require(p >= 1, "strong_ident_report: empty feature matrix");
  require(M >= 2 * p, "strong_ident_report: need at least two rows per column");
  IdentReport rep;
  rep.columns = static_cast<std::size_t>(p);
  Mat Z = F.values;
  std::optional<Eigen::Index> zero;
  for (Eigen::Index c = 0; c < p; ++c) {
    const double rms = std::sqrt(Z.col(c).squaredNorm() / static_cast<double>(M));
    if (!(rms > 1e-300)) {
      if (!zero) zero = c;
      continue;
    }
    Z.col(c) /= rms;
  }
  const Eigen::JacobiSVD<Mat> svd(Z);
  const Vec& s = svd.singularValues();
  rep.min_singular_value = s[s.size() - 1];
  rep.rank = static_cast<int>((s.array() > tau).count());
  rep.independent = !zero && rep.min_singular_value >= tau;
  if (rep.independent) return rep;

  if (zero) {
    rep.zero_column = true;
    rep.witness = std::make_pair(F.labels[static_cast<std::size_t>(*zero)],
                                 F.labels[static_cast<std::size_t>(*zero)]);
    return rep;
  }
  // Most collinear pair (uncentered cosine); first pair wins ties.
  const Mat C = Z.transpose() * Z;
  double best = -1.0;
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = a + 1; b < p; ++b) {
      const double cs = std::abs(C(a, b)) / std::sqrt(C(a, a) * C(b, b));
      if (cs > best) {
        best = cs;
        rep.witness = std::make_pair(F.labels[static_cast<std::size_t>(a)],
                                     F.labels[static_cast<std::size_t>(b)]);
      }
    }
  rep.witness_correlation = best;
  return rep;
}

// ---------------------------------------------------------------------------
// Gating/expert interaction identities
// ---------------------------------------------------------------------------

// F(x; A, b, eta) = exp(x'Ax + b'x) h(x, eta).
inline double gated_expert(const Mat& A, const Vec& b, const ExpertParams& eta, const Vec& x) {
  const double e = std::exp(x.dot(A * x) + b.dot(x));
  if (!std::isfinite(e)) throw NumericalFailure("gated_expert: exp overflow");
  return e * expert_eval(x, eta);
}

// dF/dA_uv (analytic, x_u x_v F) minus d2F/db_u db_v (central differences).
inline Mat pde_residual_gating(const Mat& A, const Vec& b, const ExpertParams& eta, const Vec& x,
                               double h = 1e-4) {
  const auto d = x.size();
  require(A.rows() == d && A.cols() == d && b.size() == d, "pde residual: shape mismatch");
  require(h > 0.0, "pde residual: step must be > 0");
  const double F0 = gated_expert(A, b, eta, x);
  auto Fb = [&](Eigen::Index u, double su, Eigen::Index v, double sv) {
    Vec bb = b;
    bb[u] += su;
    bb[v] += sv;
    return gated_expert(A, bb, eta, x);
  };
  Mat R(d, d);
  for (Eigen::Index u = 0; u < d; ++u)
    for (Eigen::Index v = 0; v < d; ++v) {
      double second;
      if (u == v) {
        Vec bp = b, bm = b;
        bp[u] += h;
        bm[u] -= h;
        second = (gated_expert(A, bp, eta, x) - 2.0 * F0 + gated_expert(A, bm, eta, x)) / (h * h);
      } else {
        second = (Fb(u, h, v, h) - Fb(u, h, v, -h) - Fb(u, -h, v, h) + Fb(u, -h, v, -h)) /
                 (4.0 * h * h);
      }
      R(u, v) = x[u] * x[v] * F0 - second;
    }
  return R;
}

// d2F/db_u d beta0 (central differences) minus dF/d beta1_u (analytic) for a
// linear expert.
inline Vec pde_residual_linear(const Mat& A, const Vec& b, const Vec& beta1, double beta0,
                               const Vec& x, double h = 1e-4) {
  const auto d = x.size();
  require(A.rows() == d && A.cols() == d && b.size() == d && beta1.size() == d,
          "pde residual: shape mismatch");
  require(h > 0.0, "pde residual: step must be > 0");
  const double q = x.dot(A * x);
  auto F = [&](const Vec& bb, double b0) {
    const double e = std::exp(q + bb.dot(x));
    if (!std::isfinite(e)) throw NumericalFailure("pde residual: exp overflow");
    return e * (beta1.dot(x) + b0);
  };
  const double gate = std::exp(q + b.dot(x));
  if (!std::isfinite(gate)) throw NumericalFailure("pde residual: exp overflow");
  Vec R(d);
  for (Eigen::Index u = 0; u < d; ++u) {
    Vec bp = b, bm = b;
    bp[u] += h;
    bm[u] -= h;
    const double mixed =
        (F(bp, beta0 + h) - F(bp, beta0 - h) - F(bm, beta0 + h) + F(bm, beta0 - h)) / (4.0 * h * h);
    R[u] = mixed - x[u] * gate;
  }
  return R;
}

// ---------------------------------------------------------------------------
// Slow sequence for linear experts
// ---------------------------------------------------------------------------

struct SlowSequenceResult {
  MixingMeasure G_n;
  double loss_closed_form = 0.0;
  double loss_computed = 0.0;
  double fn_dist = 0.0;
};

// Atom 0 split in two with beta0 = beta0* +- 1/n and weights
// exp(c*_0)/2 + 1/(2 n^{r+1}) each; every other true atom copied unchanged.
inline MixingMeasure slow_sequence_measure(const MixingMeasure& G_star, double n, double r) {
  G_star.validate();
  require(G_star.family == ExpertFamily::Linear, "slow_sequence: needs linear experts");
  require(n >= 2.0, "slow_sequence: n must be >= 2");
  const double tail = 1.0 / std::pow(n, r + 1.0);
  MixingMeasure G = G_star;
  G.atoms.clear();
  const Atom& first = G_star.atoms.front();
  Atom lo = first, hi = first;
  const double c = std::log(0.5 * std::exp(first.c) + 0.5 * tail);
  lo.c = hi.c = c;
  std::get<LinearExpert>(hi.eta).beta0 += 1.0 / n;
  std::get<LinearExpert>(lo.eta).beta0 -= 1.0 / n;
  G.atoms.push_back(hi);
  G.atoms.push_back(lo);
  for (std::size_t i = 1; i < G_star.size(); ++i) G.atoms.push_back(G_star.atoms[i]);
  return G;
}

inline SlowSequenceResult slow_sequence(const MixingMeasure& G_star, double n, double r,
                                        std::size_t M = 50000, std::uint64_t seed = 0,
                                        InputDist dist = InputDist::UniformCube,
                                        double bound = 1.0) {
  SlowSequenceResult out;
  out.G_n = slow_sequence_measure(G_star, n, r);
  const double tail = 1.0 / std::pow(n, r + 1.0);
  out.loss_closed_form = tail + (std::exp(G_star.atoms.front().c) + tail) / std::pow(n, r);
  out.loss_computed = loss_L2r(out.G_n, G_star, r).total;
  out.fn_dist = fn_l2_distance(out.G_n, G_star, dist, bound, M, seed);
  return out;
}

}  // namespace qmoe

#endif  // QMOE_IDENT_HPP_
