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

#ifndef QMOE_FIT_HPP_
#define QMOE_FIT_HPP_

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <vector>

#include "qmoe/gradients.hpp"
#include "qmoe/synth.hpp"

namespace qmoe {

struct FitConfig {
  double lr = 0.1;
  std::size_t steps = 10;  // full-batch gradient steps
  double perturb_scale = 0.01;
  std::size_t n_fit = 0;  // 0 means "same as N*"
  bool clamp = false;     // clip every entry to [-clamp_bound, clamp_bound] after each step
  double clamp_bound = 10.0;

  void validate() const {
    require(lr > 0.0, "fit: lr must be > 0");
    require(steps >= 1, "fit: steps must be >= 1");
    require(perturb_scale >= 0.0, "fit: perturb_scale must be >= 0");
    require(clamp_bound > 0.0, "fit: clamp bound must be > 0");
  }
};

// Over-specified start: atom i < N* copies true atom i, atom N*+k copies
// true atom sources[k]. Every trainable entry then gets N(0, perturb_scale^2)
// noise (A perturbed symmetrically), and the c of every copy of a true atom
// with k copies is shifted by -log k so each cell starts at the true weight.
inline MixingMeasure init_overspecified_from(const MixingMeasure& G_star,
                                             const std::vector<std::size_t>& sources,
                                             double perturb_scale, std::uint64_t seed) {
  G_star.validate();
  require(perturb_scale >= 0.0, "init_overspecified: perturb_scale must be >= 0");
  const std::size_t n_star = G_star.size();
  std::vector<std::size_t> origin(n_star);
  for (std::size_t i = 0; i < n_star; ++i) origin[i] = i;
  for (auto s : sources) {
    require(s < n_star, "init_overspecified: duplicate source out of range");
    origin.push_back(s);
  }
  MixingMeasure G = G_star;
  G.atoms.clear();
  for (auto s : origin) G.atoms.push_back(G_star.atoms[s]);
  if (G.gate.top_k) G.gate.top_k = std::min(*G.gate.top_k, G.size());

  if (perturb_scale > 0.0) {
    StreamCursor rng(CounterStream(seed, "init-perturb"));
    const auto d = static_cast<Eigen::Index>(G.d);
    for (auto& at : G.atoms) {
      if (G.gate.tag != GateTag::Linear) {
        for (Eigen::Index u = 0; u < d; ++u)
          for (Eigen::Index v = u; v < d; ++v) {
            const double e = rng.normal(0.0, perturb_scale);
            at.A(u, v) += e;
            if (v != u) at.A(v, u) += e;
          }
      }
      if (G.gate.tag != GateTag::QuadMono)
        for (Eigen::Index u = 0; u < d; ++u) at.b[u] += rng.normal(0.0, perturb_scale);
      at.c += rng.normal(0.0, perturb_scale);
      Vec e = flatten(at.eta);
      for (Eigen::Index k = 0; k < e.size(); ++k) e[k] += rng.normal(0.0, perturb_scale);
      at.eta = unflatten_like(at.eta, e.data());
    }
  }

  std::vector<std::size_t> copies(n_star, 0);
  for (auto s : origin) ++copies[s];
  for (std::size_t i = 0; i < G.size(); ++i) {
    const std::size_t k = copies[origin[i]];
    if (k > 1) G.atoms[i].c -= std::log(static_cast<double>(k));
  }
  G.validate();
  return G;
}

// Same, with the extra atoms' sources drawn uniformly from the true atoms.
inline MixingMeasure init_overspecified(const MixingMeasure& G_star, std::size_t n_fit,
                                        double perturb_scale, std::uint64_t seed) {
  require(n_fit >= G_star.size(), "init_overspecified: N_fit must be >= N*");
  StreamCursor rng(CounterStream(seed, "init-duplicates"));
  std::vector<std::size_t> sources;
  for (std::size_t k = G_star.size(); k < n_fit; ++k) sources.push_back(rng.below(G_star.size()));
  return init_overspecified_from(G_star, sources, perturb_scale, seed);
}

struct FitResult {
  MixingMeasure G_hat;
  std::vector<double> history;  // steps + 1 losses, starting at the initial one
};

// Full-batch gradient descent on the mean squared residual. Coordinates
// pinned by the gate kind are never touched.
inline FitResult gd_fit(const MixingMeasure& G0, const Dataset& data, const FitConfig& cfg) {
  cfg.validate();
  const ParamLayout L = ParamLayout::of(G0);
  const auto mask = L.trainable_mask();
  Vec theta = flatten(G0);
  Vec grad(L.total());
  FitResult out;
  out.history.reserve(cfg.steps + 1);
  for (std::size_t t = 0; t <= cfg.steps; ++t) {
    const bool last = t == cfg.steps;
    const double loss = detail::loss_and_grad(L, theta.data(), data, last ? nullptr : grad.data());
    if (!std::isfinite(loss)) throw DivergenceError(t, "non-finite loss");
    out.history.push_back(loss);
    if (last) break;
    for (std::size_t k = 0; k < L.total(); ++k) {
      if (!mask[k]) continue;
      double v = theta[static_cast<Eigen::Index>(k)] - cfg.lr * grad[static_cast<Eigen::Index>(k)];
      if (cfg.clamp) v = std::clamp(v, -cfg.clamp_bound, cfg.clamp_bound);
      theta[static_cast<Eigen::Index>(k)] = v;
    }
    if (!theta.allFinite()) throw DivergenceError(t + 1, "non-finite parameters");
  }
  out.G_hat = unflatten(L, theta);
  return out;
}

// Monte-Carlo L2(mu) distance between two regression functions.
inline double fn_l2_distance(const MixingMeasure& G1, const MixingMeasure& G2, InputDist dist,
                             double bound, std::size_t M, std::uint64_t seed) {
  require(M >= 1, "fn_l2_distance: M must be >= 1");
  require(G1.d == G2.d, "fn_l2_distance: measures disagree on d");
  SynthConfig in;
  in.d = G1.d;
  in.input_dist = dist;
  in.bound = bound;
  const RowMat X = sample_inputs(in, M, seed);
  const ParamLayout L1 = ParamLayout::of(G1), L2 = ParamLayout::of(G2);
  const Vec t1 = flatten(G1), t2 = flatten(G2);
  detail::PackedModel m1(L1), m2(L2);
  double acc = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    const double* x = X.row(static_cast<Eigen::Index>(j)).data();
    const double diff = m1.forward(t1.data(), x) - m2.forward(t2.data(), x);
    acc += diff * diff;
  }
  return std::sqrt(acc / static_cast<double>(M));
}

}  // namespace qmoe

#endif  // QMOE_FIT_HPP_
