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

#ifndef QMOE_MODEL_HPP_
#define QMOE_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "qmoe/errors.hpp"

namespace qmoe {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Parameter records
// ---------------------------------------------------------------------------

enum class GateTag { Linear, QuadPoly, QuadMono, AttnForm };

struct GateKind {
  GateTag tag = GateTag::QuadPoly;
  std::optional<std::size_t> top_k;
};

enum class Activation { Relu, Tanh };

enum class Nonlinearity { Identity, Relu, Gelu, Tanh, Sigmoid, Silu };

enum class ExpertFamily { Linear, TwoLayer };

struct LinearExpert {
  Vec beta1;
  double beta0 = 0.0;
};

// h(x) = a' act(W x + v) + a0
struct TwoLayerExpert {
  Mat W;
  Vec v;
  Vec a;
  double a0 = 0.0;
  Activation activation = Activation::Relu;
};

using ExpertParams = std::variant<LinearExpert, TwoLayerExpert>;

// One gated expert: score x'Ax + b'x + c, mixing weight exp(c).
struct Atom {
  Mat A;
  Vec b;
  double c = 0.0;
  ExpertParams eta;
};

struct MixingMeasure {
  std::vector<Atom> atoms;
  GateKind gate;
  std::size_t d = 0;
  ExpertFamily family = ExpertFamily::Linear;

  std::size_t size() const noexcept { return atoms.size(); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

inline std::string_view to_string(GateTag t) {
  switch (t) {
    case GateTag::Linear: return "Linear";
    case GateTag::QuadPoly: return "QuadPoly";
    case GateTag::QuadMono: return "QuadMono";
    case GateTag::AttnForm: return "AttnForm";
  }
  return "?";
}

inline GateTag parse_gate_tag(std::string_view s) {
  if (s == "Linear") return GateTag::Linear;
  if (s == "QuadPoly") return GateTag::QuadPoly;
  if (s == "QuadMono") return GateTag::QuadMono;
  if (s == "AttnForm") return GateTag::AttnForm;
  throw InvalidArgument("unknown gate kind '" + std::string(s) + "'");
}

inline std::string_view to_string(Activation a) {
  return a == Activation::Relu ? "relu" : "tanh";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

inline std::string_view to_string(ExpertFamily f) {
  return f == ExpertFamily::Linear ? "linear" : "two_layer";
}

inline ExpertFamily parse_expert_family(std::string_view s) {
  if (s == "linear") return ExpertFamily::Linear;
  if (s == "two_layer") return ExpertFamily::TwoLayer;
  throw InvalidArgument("unknown expert family '" + std::string(s) + "'");
}

inline std::string_view to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::Identity: return "identity";
    case Nonlinearity::Relu: return "relu";
    case Nonlinearity::Gelu: return "gelu";
    case Nonlinearity::Tanh: return "tanh";
    case Nonlinearity::Sigmoid: return "sigmoid";
    case Nonlinearity::Silu: return "silu";
  }
  return "?";
}

inline Nonlinearity parse_nonlinearity(std::string_view s) {
  for (auto n : {Nonlinearity::Identity, Nonlinearity::Relu, Nonlinearity::Gelu,
                 Nonlinearity::Tanh, Nonlinearity::Sigmoid, Nonlinearity::Silu}) {
    if (to_string(n) == s) return n;
  }
  throw InvalidArgument("unknown nonlinearity '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Scalar functions
// ---------------------------------------------------------------------------

// ReLU at the kink: value 0, derivative 0.
inline double activate(Activation act, double z) noexcept {
  return act == Activation::Relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

inline double activate_d1(Activation act, double z) noexcept {
  if (act == Activation::Relu) return z > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

inline double activate_d2(Activation act, double z) noexcept {
  if (act == Activation::Relu) return 0.0;
  const double t = std::tanh(z);
  return -2.0 * t * (1.0 - t * t);
}

inline double apply(Nonlinearity nl, double z) noexcept {
  switch (nl) {
    case Nonlinearity::Identity: return z;
    case Nonlinearity::Relu: return z > 0.0 ? z : 0.0;
    case Nonlinearity::Gelu: return 0.5 * z * std::erfc(-z / std::numbers::sqrt2);
    case Nonlinearity::Tanh: return std::tanh(z);
    case Nonlinearity::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Nonlinearity::Silu: return z / (1.0 + std::exp(-z));
  }
  return z;
}

// ---------------------------------------------------------------------------
// Expert helpers
// ---------------------------------------------------------------------------

inline ExpertFamily family_of(const ExpertParams& eta) noexcept {
  return std::holds_alternative<LinearExpert>(eta) ? ExpertFamily::Linear
                                                   : ExpertFamily::TwoLayer;
}

inline std::size_t input_dim(const ExpertParams& eta) noexcept {
  if (const auto* lin = std::get_if<LinearExpert>(&eta)) return lin->beta1.size();
  return static_cast<std::size_t>(std::get<TwoLayerExpert>(eta).W.cols());
}

inline std::size_t hidden_dim(const ExpertParams& eta) noexcept {
  if (const auto* net = std::get_if<TwoLayerExpert>(&eta)) return net->W.rows();
  return 0;
}

// Number of scalar parameters in eta.
inline std::size_t param_count(const ExpertParams& eta) noexcept {
  if (const auto* lin = std::get_if<LinearExpert>(&eta)) return lin->beta1.size() + 1;
  const auto& net = std::get<TwoLayerExpert>(eta);
  return net.W.size() + net.v.size() + net.a.size() + 1;
}

// Flattened eta in declared field order (beta1, beta0) or (W row-major, v, a, a0).
inline Vec flatten(const ExpertParams& eta) {
  Vec out(param_count(eta));
  Eigen::Index k = 0;
  if (const auto* lin = std::get_if<LinearExpert>(&eta)) {
    for (Eigen::Index u = 0; u < lin->beta1.size(); ++u) out[k++] = lin->beta1[u];
    out[k++] = lin->beta0;
    return out;
  }
  const auto& net = std::get<TwoLayerExpert>(eta);
  for (Eigen::Index r = 0; r < net.W.rows(); ++r)
    for (Eigen::Index c = 0; c < net.W.cols(); ++c) out[k++] = net.W(r, c);
  for (Eigen::Index r = 0; r < net.v.size(); ++r) out[k++] = net.v[r];
  for (Eigen::Index r = 0; r < net.a.size(); ++r) out[k++] = net.a[r];
  out[k++] = net.a0;
  return out;
}

// Inverse of flatten, using `shape` for the architecture.
inline ExpertParams unflatten_like(const ExpertParams& shape, const double* p) {
  if (const auto* lin = std::get_if<LinearExpert>(&shape)) {
    LinearExpert out;
    out.beta1.resize(lin->beta1.size());
    for (Eigen::Index u = 0; u < out.beta1.size(); ++u) out.beta1[u] = *p++;
    out.beta0 = *p;
    return out;
  }
  const auto& s = std::get<TwoLayerExpert>(shape);
  TwoLayerExpert out;
  out.activation = s.activation;
  out.W.resize(s.W.rows(), s.W.cols());
  out.v.resize(s.v.size());
  out.a.resize(s.a.size());
  for (Eigen::Index r = 0; r < out.W.rows(); ++r)
    for (Eigen::Index c = 0; c < out.W.cols(); ++c) out.W(r, c) = *p++;
  for (Eigen::Index r = 0; r < out.v.size(); ++r) out.v[r] = *p++;
  for (Eigen::Index r = 0; r < out.a.size(); ++r) out.a[r] = *p++;
  out.a0 = *p;
  return out;
}

inline bool same_architecture(const ExpertParams& x, const ExpertParams& y) noexcept {
  if (x.index() != y.index()) return false;
  if (const auto* lx = std::get_if<LinearExpert>(&x))
    return lx->beta1.size() == std::get<LinearExpert>(y).beta1.size();
  const auto& nx = std::get<TwoLayerExpert>(x);
  const auto& ny = std::get<TwoLayerExpert>(y);
  return nx.W.rows() == ny.W.rows() && nx.W.cols() == ny.W.cols() &&
         nx.activation == ny.activation;
}

inline void validate(const ExpertParams& eta, std::size_t d) {
  if (const auto* lin = std::get_if<LinearExpert>(&eta)) {
    require(static_cast<std::size_t>(lin->beta1.size()) == d,
            "linear expert: beta1 has wrong dimension");
    require(lin->beta1.allFinite() && std::isfinite(lin->beta0),
            "linear expert: non-finite parameter");
    return;
  }
  const auto& net = std::get<TwoLayerExpert>(eta);
  require(net.W.rows() >= 1, "two-layer expert: need at least one hidden unit");
  require(static_cast<std::size_t>(net.W.cols()) == d,
          "two-layer expert: W has wrong input dimension");
  require(net.v.size() == net.W.rows() && net.a.size() == net.W.rows(),
          "two-layer expert: v/a length must equal hidden size");
  require(net.W.allFinite() && net.v.allFinite() && net.a.allFinite() &&
              std::isfinite(net.a0),
          "two-layer expert: non-finite parameter");
}

inline void MixingMeasure::validate() const {
  require(!atoms.empty(), "mixing measure needs at least one atom");
  require(d >= 1, "mixing measure: d must be >= 1");
  if (gate.top_k) {
    require(*gate.top_k >= 1 && *gate.top_k <= atoms.size(),
            "top_k must satisfy 1 <= top_k <= N");
  }
  const auto& shape = atoms.front().eta;
  require(family_of(shape) == family, "expert family tag does not match atoms");
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const auto& at = atoms[i];
    const std::string where = "atom " + std::to_string(i) + ": ";
    require(static_cast<std::size_t>(at.A.rows()) == d &&
                static_cast<std::size_t>(at.A.cols()) == d,
            where + "A must be d x d");
    require(static_cast<std::size_t>(at.b.size()) == d, where + "b must have length d");
    require(at.A.allFinite() && at.b.allFinite(), where + "non-finite gating parameter");
    const double w = std::exp(at.c);
    require(std::isfinite(w) && w > 0.0, where + "exp(c) must be finite and positive");
    require(same_architecture(at.eta, shape), where + "expert architecture differs");
    qmoe::validate(at.eta, d);
    if (gate.tag == GateTag::Linear)
      require(at.A.isZero(0.0), where + "Linear gate requires A = 0");
    if (gate.tag == GateTag::QuadMono)
      require(at.b.isZero(0.0), where + "QuadMono gate requires b = 0");
  }
}

// ---------------------------------------------------------------------------
// Forward evaluation
// ---------------------------------------------------------------------------

inline Vec gate_scores(const Vec& x, const MixingMeasure& G) {
  require(G.gate.tag != GateTag::AttnForm,
          "gate_scores: AttnForm scores go through attn_gate_scores");
  require(static_cast<std::size_t>(x.size()) == G.d, "gate_scores: input dimension mismatch");
  Vec s(G.size());
  for (std::size_t i = 0; i < G.size(); ++i) {
    const auto& at = G.atoms[i];
    require(at.A.rows() == x.size() && at.b.size() == x.size(),
            "gate_scores: atom dimension mismatch");
    double v = at.c;
    if (G.gate.tag != GateTag::Linear) v += x.dot(at.A * x);
    if (G.gate.tag != GateTag::QuadMono) v += at.b.dot(x);
    s[i] = v;
  }
  return s;
}

// Indices of the k largest scores; ties keep the lower index.
inline std::vector<std::size_t> top_k_indices(const Vec& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t l, std::size_t r) { return scores[l] > scores[r]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Max-subtracted softmax. With top_k, the dropped entries get probability 0
// and the kept ones are renormalized among themselves.
inline Vec gate_probs(const Vec& scores, std::optional<std::size_t> top_k = std::nullopt) {
  require(scores.size() >= 1, "gate_probs: empty score vector");
  require(scores.allFinite(), "gate_probs: non-finite score");
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<char> keep(n, 1);
  if (top_k) require(*top_k >= 1 && *top_k <= n, "gate_probs: top_k must lie in [1, N]");
  if (top_k && *top_k < n) {
    std::fill(keep.begin(), keep.end(), 0);
    for (auto i : top_k_indices(scores, *top_k)) keep[i] = 1;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) mx = std::max(mx, scores[i]);
  Vec p = Vec::Zero(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    p[i] = std::exp(scores[i] - mx);
    z += p[i];
  }
  return p / z;
}

inline double expert_eval(const Vec& x, const ExpertParams& eta) {
  require(static_cast<std::size_t>(x.size()) == input_dim(eta),
          "expert_eval: input dimension mismatch");
  if (const auto* lin = std::get_if<LinearExpert>(&eta)) return lin->beta1.dot(x) + lin->beta0;
  const auto& net = std::get<TwoLayerExpert>(eta);
  const Vec z = net.W * x + net.v;
  double out = net.a0;
  for (Eigen::Index k = 0; k < z.size(); ++k) out += net.a[k] * activate(net.activation, z[k]);
  return out;
}

inline double moe_forward(const Vec& x, const MixingMeasure& G) {
  const Vec g = gate_probs(gate_scores(x, G), G.gate.top_k);
  double out = 0.0;
  for (std::size_t i = 0; i < G.size(); ++i) {
    if (g[i] == 0.0) continue;
    out += g[i] * expert_eval(x, G.atoms[i].eta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention form
// ---------------------------------------------------------------------------

// Query embedding Wq x + bq shared by all experts, key embedding Wk_i x + bk_i
// per expert. In monomial mode the biases are absent (empty vectors).
struct AttnGateParams {
  Mat Wq;
  Vec bq;
  std::vector<Mat> Wk;
  std::vector<Vec> bk;

  bool monomial() const noexcept { return bq.size() == 0; }
  std::size_t rank() const noexcept { return static_cast<std::size_t>(Wq.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(Wq.cols()); }
  std::size_t experts() const noexcept { return Wk.size(); }

  void validate() const {
    require(Wq.rows() >= 1 && Wq.cols() >= 1, "attention gate: empty query embedding");
    require(!Wk.empty(), "attention gate: need at least one key embedding");
    for (const auto& w : Wk) {
      require(w.rows() == Wq.rows() && w.cols() == Wq.cols(),
              "attention gate: key embedding shape differs from query embedding");
    }
    if (monomial()) {
      for (const auto& b : bk)
        require(b.size() == 0, "attention gate: monomial mode has no key bias");
    } else {
      require(bq.size() == Wq.rows(), "attention gate: query bias must have length r");
      require(bk.size() == Wk.size(), "attention gate: one key bias per expert");
      for (const auto& b : bk)
        require(b.size() == Wq.rows(), "attention gate: key bias must have length r");
    }
  }
};

struct GatingTriple {
  Mat A;
  Vec b;
  double c = 0.0;
};

// Expands (Wq x + bq)'(Wk_i x + bk_i) into x'A_i x + b_i'x + c_i.
inline std::vector<GatingTriple> induced_quadratic(const AttnGateParams& attn) {
  attn.validate();
  const auto d = static_cast<Eigen::Index>(attn.dim());
  std::vector<GatingTriple> out;
  out.reserve(attn.experts());
  for (std::size_t i = 0; i < attn.experts(); ++i) {
    GatingTriple t;
    t.A = attn.Wq.transpose() * attn.Wk[i];
    if (attn.monomial()) {
      t.b = Vec::Zero(d);
      t.c = 0.0;
    } else {
      t.b = attn.Wk[i].transpose() * attn.bq + attn.Wq.transpose() * attn.bk[i];
      t.c = attn.bq.dot(attn.bk[i]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Direct query/key scores.
inline Vec attn_gate_scores(const Vec& x, const AttnGateParams& attn) {
  attn.validate();
  require(static_cast<std::size_t>(x.size()) == attn.dim(),
          "attn_gate_scores: input dimension mismatch");
  Vec q = attn.Wq * x;
  if (!attn.monomial()) q += attn.bq;
  Vec s(attn.experts());
  for (std::size_t i = 0; i < attn.experts(); ++i) {
    Vec k = attn.Wk[i] * x;
    if (!attn.monomial()) k += attn.bk[i];
    s[i] = q.dot(k);
  }
  return s;
}

// Measure whose quadratic gate reproduces the attention gate.
inline MixingMeasure measure_from_attention(const AttnGateParams& attn,
                                            const std::vector<ExpertParams>& experts,
                                            std::optional<std::size_t> top_k = std::nullopt) {
  require(experts.size() == attn.experts(), "one expert per key embedding required");
  MixingMeasure G;
  G.d = attn.dim();
  G.gate = GateKind{attn.monomial() ? GateTag::QuadMono : GateTag::QuadPoly, top_k};
  G.family = family_of(experts.front());
  auto triples = induced_quadratic(attn);
  for (std::size_t i = 0; i < experts.size(); ++i)
    G.atoms.push_back(Atom{std::move(triples[i].A), std::move(triples[i].b), triples[i].c,
                           experts[i]});
  return G;
}

inline double att_moe_forward(const Vec& x, const AttnGateParams& attn,
                              const std::vector<ExpertParams>& experts,
                              std::optional<std::size_t> top_k = std::nullopt) {
  require(experts.size() == attn.experts(), "att_moe_forward: one expert per key required");
  const Vec g = gate_probs(attn_gate_scores(x, attn), top_k);
  double out = 0.0;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (g[i] == 0.0) continue;
    out += g[i] * expert_eval(x, experts[i]);
  }
  return out;
}

// Attention weights softmax(q K' / sqrt(d)).
inline Vec attention_weights(const Vec& q, const Mat& K) {
  require(q.size() >= 1, "attention: query must be non-empty");
  require(K.cols() == q.size() && K.rows() >= 1, "attention: K must be N x d");
  return gate_probs((K * q) / std::sqrt(static_cast<double>(q.size())));
}

inline Vec attention(const Vec& q, const Mat& K, const Mat& V) {
  require(V.rows() == K.rows(), "attention: V must have one row per key");
  const Vec w = attention_weights(q, K);
  return V.transpose() * w;
}

// Attention over an elementwise-transformed value matrix.
inline Vec active_attention(const Vec& q, const Mat& K, const Mat& V, Nonlinearity nl) {
  require(V.rows() == K.rows(), "attention: V must have one row per key");
  const Vec w = attention_weights(q, K);
  if (nl == Nonlinearity::Identity) return V.transpose() * w;
  const Mat Vt = V.unaryExpr([nl](double z) { return apply(nl, z); });
  return Vt.transpose() * w;
}

}  // namespace qmoe

#endif  // QMOE_MODEL_HPP_
