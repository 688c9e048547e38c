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

#ifndef QMOE_PARAMS_HPP_
#define QMOE_PARAMS_HPP_

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "qmoe/model.hpp"

namespace qmoe {

// Flat parameter layout of a MixingMeasure. Atoms in sequence order; within an
// atom: A row-major, b, c, then eta in declared field order. This order is
// what grad_check reports index into.
struct ParamLayout {
  std::size_t d = 0;
  std::size_t n_atoms = 0;
  std::size_t hidden = 0;  // 0 for linear experts
  ExpertFamily family = ExpertFamily::Linear;
  Activation activation = Activation::Relu;
  GateKind gate;

  static ParamLayout of(const MixingMeasure& G) {
    G.validate();
    ParamLayout L;
    L.d = G.d;
    L.n_atoms = G.size();
    L.family = G.family;
    L.gate = G.gate;
    const auto& eta = G.atoms.front().eta;
    L.hidden = hidden_dim(eta);
    if (const auto* net = std::get_if<TwoLayerExpert>(&eta)) L.activation = net->activation;
    return L;
  }

  std::size_t a_offset() const noexcept { return 0; }
  std::size_t b_offset() const noexcept { return d * d; }
  std::size_t c_offset() const noexcept { return d * d + d; }
  std::size_t eta_offset() const noexcept { return d * d + d + 1; }
  std::size_t eta_size() const noexcept {
    return family == ExpertFamily::Linear ? d + 1 : hidden * d + 2 * hidden + 1;
  }
  std::size_t stride() const noexcept { return eta_offset() + eta_size(); }
  std::size_t total() const noexcept { return n_atoms * stride(); }

  // Human-readable name of flat coordinate k, e.g. "atom[1].A[0,1]".
  std::string coordinate_name(std::size_t k) const {
    const std::size_t i = k / stride();
    std::size_t r = k % stride();
    std::string head = "atom[" + std::to_string(i) + "].";
    if (r < b_offset())
      return head + "A[" + std::to_string(r / d) + "," + std::to_string(r % d) + "]";
    if (r < c_offset()) return head + "b[" + std::to_string(r - b_offset()) + "]";
    if (r == c_offset()) return head + "c";
    r -= eta_offset();
    if (family == ExpertFamily::Linear)
      return r < d ? head + "beta1[" + std::to_string(r) + "]" : head + "beta0";
    if (r < hidden * d)
      return head + "W[" + std::to_string(r / d) + "," + std::to_string(r % d) + "]";
    r -= hidden * d;
    if (r < hidden) return head + "v[" + std::to_string(r) + "]";
    r -= hidden;
    if (r < hidden) return head + "a[" + std::to_string(r) + "]";
    return head + "a0";
  }

  // 1 where gradient descent may move the coordinate, 0 where the gate kind
  // pins it (A under Linear, b under QuadMono).
  std::vector<char> trainable_mask() const {
    std::vector<char> m(total(), 1);
    for (std::size_t i = 0; i < n_atoms; ++i) {
      const std::size_t base = i * stride();
      if (gate.tag == GateTag::Linear)
        for (std::size_t k = 0; k < d * d; ++k) m[base + a_offset() + k] = 0;
      if (gate.tag == GateTag::QuadMono)
        for (std::size_t k = 0; k < d; ++k) m[base + b_offset() + k] = 0;
    }
    return m;
  }
};

inline Vec flatten(const MixingMeasure& G) {
  const ParamLayout L = ParamLayout::of(G);
  Vec out(L.total());
  std::size_t k = 0;
  for (const auto& at : G.atoms) {
    for (Eigen::Index r = 0; r < at.A.rows(); ++r)
      for (Eigen::Index c = 0; c < at.A.cols(); ++c) out[k++] = at.A(r, c);
    for (Eigen::Index u = 0; u < at.b.size(); ++u) out[k++] = at.b[u];
    out[k++] = at.c;
    const Vec e = flatten(at.eta);
    for (Eigen::Index u = 0; u < e.size(); ++u) out[k++] = e[u];
  }
  return out;
}

inline MixingMeasure unflatten(const ParamLayout& L, std::span<const double> theta) {
  require(theta.size() == L.total(), "unflatten: parameter vector has wrong length");
  MixingMeasure G;
  G.d = L.d;
  G.gate = L.gate;
  G.family = L.family;
  ExpertParams shape;
  if (L.family == ExpertFamily::Linear) {
    shape = LinearExpert{Vec::Zero(L.d), 0.0};
  } else {
    shape = TwoLayerExpert{Mat::Zero(L.hidden, L.d), Vec::Zero(L.hidden), Vec::Zero(L.hidden),
                           0.0, L.activation};
  }
  const auto dd = static_cast<Eigen::Index>(L.d);
  for (std::size_t i = 0; i < L.n_atoms; ++i) {
    const double* p = theta.data() + i * L.stride();
    Atom at;
    at.A.resize(dd, dd);
    for (Eigen::Index r = 0; r < dd; ++r)
      for (Eigen::Index c = 0; c < dd; ++c) at.A(r, c) = *p++;
    at.b.resize(dd);
    for (Eigen::Index u = 0; u < dd; ++u) at.b[u] = *p++;
    at.c = *p++;
    at.eta = unflatten_like(shape, p);
    G.atoms.push_back(std::move(at));
  }
  return G;
}

inline MixingMeasure unflatten(const ParamLayout& L, const Vec& theta) {
  return unflatten(L, std::span<const double>(theta.data(), static_cast<std::size_t>(theta.size())));
}

namespace detail {

// Allocation-free evaluator over a flat parameter vector. Holds per-sample
// scratch, so one instance per thread.
class PackedModel {
 public:
  explicit PackedModel(const ParamLayout& L)
      : L_(L),
        score_(L.n_atoms),
        prob_(L.n_atoms),
        h_(L.n_atoms),
        z_(L.n_atoms * L.hidden),
        keep_(L.n_atoms, 1) {}

  const ParamLayout& layout() const noexcept { return L_; }

  // f(x). Leaves gate probabilities, expert outputs and hidden
  // pre-activations in scratch for accumulate_grad.
  double forward(const double* theta, const double* x) {
    const std::size_t d = L_.d, N = L_.n_atoms, S = L_.stride();
    const bool use_a = L_.gate.tag != GateTag::Linear;
    const bool use_b = L_.gate.tag != GateTag::QuadMono;
    for (std::size_t i = 0; i < N; ++i) {
      const double* p = theta + i * S;
      double s = p[L_.c_offset()];
      if (use_a) {
        const double* A = p + L_.a_offset();
        for (std::size_t u = 0; u < d; ++u) {
          double row = 0.0;
          for (std::size_t v = 0; v < d; ++v) row += A[u * d + v] * x[v];
          s += x[u] * row;
        }
      }
      if (use_b) {
        const double* b = p + L_.b_offset();
        for (std::size_t u = 0; u < d; ++u) s += b[u] * x[u];
      }
      score_[i] = s;
      h_[i] = expert(p + L_.eta_offset(), x, &z_[i * L_.hidden]);
    }
    softmax();
    double f = 0.0;
    for (std::size_t i = 0; i < N; ++i) f += prob_[i] * h_[i];
    f_ = f;
    return f;
  }

  // grad += scale * df/dtheta at the last forward() input.
  void accumulate_grad(const double* theta, const double* x, double scale, double* grad) const {
    const std::size_t d = L_.d, N = L_.n_atoms, S = L_.stride(), m = L_.hidden;
    const bool use_a = L_.gate.tag != GateTag::Linear;
    const bool use_b = L_.gate.tag != GateTag::QuadMono;
    for (std::size_t i = 0; i < N; ++i) {
      if (prob_[i] == 0.0) continue;
      double* g = grad + i * S;
      const double gate = scale * prob_[i] * (h_[i] - f_);
      if (use_a) {
        double* gA = g + L_.a_offset();
        for (std::size_t u = 0; u < d; ++u) {
          const double t = gate * x[u];
          for (std::size_t v = 0; v < d; ++v) gA[u * d + v] += t * x[v];
        }
      }
      if (use_b) {
        double* gb = g + L_.b_offset();
        for (std::size_t u = 0; u < d; ++u) gb[u] += gate * x[u];
      }
      g[L_.c_offset()] += gate;
      const double w = scale * prob_[i];
      double* ge = g + L_.eta_offset();
      if (L_.family == ExpertFamily::Linear) {
        for (std::size_t u = 0; u < d; ++u) ge[u] += w * x[u];
        ge[d] += w;
        continue;
      }
      const double* pe = theta + i * S + L_.eta_offset();
      const double* a = pe + m * d + m;
      const double* z = &z_[i * m];
      double* gW = ge;
      double* gv = ge + m * d;
      double* ga = gv + m;
      for (std::size_t k = 0; k < m; ++k) {
        const double back = w * a[k] * activate_d1(L_.activation, z[k]);
        for (std::size_t u = 0; u < d; ++u) gW[k * d + u] += back * x[u];
        gv[k] += back;
        ga[k] += w * activate(L_.activation, z[k]);
      }
      ge[m * d + 2 * m] += w;
    }
  }

  // Hidden pre-activation from the last forward().
  double hidden_preactivation(std::size_t atom, std::size_t unit) const noexcept {
    return z_[atom * L_.hidden + unit];
  }

 private:
  double expert(const double* pe, const double* x, double* z) const {
    const std::size_t d = L_.d;
    if (L_.family == ExpertFamily::Linear) {
      double out = pe[d];
      for (std::size_t u = 0; u < d; ++u) out += pe[u] * x[u];
      return out;
    }
    const std::size_t m = L_.hidden;
    const double* W = pe;
    const double* v = pe + m * d;
    const double* a = v + m;
    double out = a[m];
    for (std::size_t k = 0; k < m; ++k) {
      double zk = v[k];
      for (std::size_t u = 0; u < d; ++u) zk += W[k * d + u] * x[u];
      z[k] = zk;
      out += a[k] * activate(L_.activation, zk);
    }
    return out;
  }

  void softmax() {
    const std::size_t N = L_.n_atoms;
    if (L_.gate.top_k && *L_.gate.top_k < N) {
      // Keep the top_k largest; ties to the lower index.
      std::fill(keep_.begin(), keep_.end(), 0);
      for (std::size_t r = 0; r < *L_.gate.top_k; ++r) {
        std::size_t best = N;
        for (std::size_t i = 0; i < N; ++i) {
          if (keep_[i]) continue;
          if (best == N || score_[i] > score_[best]) best = i;
        }
        keep_[best] = 1;
      }
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < N; ++i)
      if (keep_[i] && score_[i] > mx) mx = score_[i];
    double z = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      prob_[i] = keep_[i] ? std::exp(score_[i] - mx) : 0.0;
      z += prob_[i];
    }
    const double inv = 1.0 / z;
    for (std::size_t i = 0; i < N; ++i) prob_[i] *= inv;
  }

  ParamLayout L_;
  std::vector<double> score_, prob_, h_, z_;
  std::vector<char> keep_;
  double f_ = 0.0;
};

}  // namespace detail
}  // namespace qmoe

#endif  // QMOE_PARAMS_HPP_
