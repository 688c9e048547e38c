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

#ifndef QMOE_INSTANCES_HPP_
#define QMOE_INSTANCES_HPP_

// Seeded random problem instances for checks, demos and tests.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "qmoe/dataset.hpp"
#include "qmoe/model.hpp"
#include "qmoe/rng.hpp"

namespace qmoe {

struct InstanceSpec {
  std::size_t d = 2;
  std::size_t n_atoms = 3;
  GateTag gate = GateTag::QuadPoly;
  ExpertFamily family = ExpertFamily::TwoLayer;
  Activation activation = Activation::Tanh;
  std::size_t hidden = 2;
  double scale = 0.5;  // sd of every drawn entry
};

inline ExpertParams random_expert(const InstanceSpec& s, StreamCursor& rng) {
  if (s.family == ExpertFamily::Linear) {
    LinearExpert e;
    e.beta1.resize(static_cast<Eigen::Index>(s.d));
    for (auto& v : e.beta1) v = rng.normal(0.0, s.scale);
    e.beta0 = rng.normal(0.0, s.scale);
    return e;
  }
  TwoLayerExpert e;
  e.activation = s.activation;
  const auto m = static_cast<Eigen::Index>(s.hidden), d = static_cast<Eigen::Index>(s.d);
  e.W.resize(m, d);
  e.v.resize(m);
  e.a.resize(m);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < d; ++c) e.W(r, c) = rng.normal(0.0, s.scale);
  for (auto& v : e.v) v = rng.normal(0.0, s.scale);
  for (auto& v : e.a) v = rng.normal(0.0, s.scale);
  e.a0 = rng.normal(0.0, s.scale);
  return e;
}

// Gate-kind masks respected (Linear: A = 0, QuadMono: b = 0).
inline MixingMeasure random_measure(const InstanceSpec& s, std::uint64_t seed) {
  StreamCursor rng(CounterStream(seed, "instance"));
  MixingMeasure G;
  G.d = s.d;
  G.gate.tag = s.gate;
  G.family = s.family;
  const auto d = static_cast<Eigen::Index>(s.d);
  for (std::size_t i = 0; i < s.n_atoms; ++i) {
    Atom at;
    at.A = Mat::Zero(d, d);
    at.b = Vec::Zero(d);
    if (s.gate != GateTag::Linear)
      for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) at.A(r, c) = rng.normal(0.0, s.scale);
    if (s.gate != GateTag::QuadMono)
      for (auto& v : at.b) v = rng.normal(0.0, s.scale);
    at.c = rng.normal(0.0, s.scale);
    at.eta = random_expert(s, rng);
    G.atoms.push_back(std::move(at));
  }
  G.validate();
  return G;
}

// Inputs uniform on [-1, 1]^d, responses f_G(x) + N(0, noise_sd^2).
inline Dataset random_dataset(const MixingMeasure& G, std::size_t n, std::uint64_t seed,
                              double noise_sd = 0.1) {
  StreamCursor rng(CounterStream(seed, "instance-data"));
  Dataset data;
  const auto d = static_cast<Eigen::Index>(G.d);
  data.X.resize(static_cast<Eigen::Index>(n), d);
  data.Y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    for (Eigen::Index u = 0; u < d; ++u) data.X(i, u) = rng.uniform(-1.0, 1.0);
    data.Y[i] = moe_forward(data.X.row(i).transpose(), G) + rng.normal(0.0, noise_sd);
  }
  data.provenance.seed = seed;
  return data;
}

inline AttnGateParams random_attention(std::size_t d, std::size_t r, std::size_t n_experts,
                                       bool monomial, std::uint64_t seed, double scale = 0.5) {
  StreamCursor rng(CounterStream(seed, "instance-attn"));
  auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
    Mat M(rows, cols);
    for (Eigen::Index a = 0; a < rows; ++a)
      for (Eigen::Index b = 0; b < cols; ++b) M(a, b) = rng.normal(0.0, scale);
    return M;
  };
  const auto rr = static_cast<Eigen::Index>(r), dd = static_cast<Eigen::Index>(d);
  AttnGateParams p;
  p.Wq = draw(rr, dd);
  if (!monomial) p.bq = draw(rr, 1).col(0);
  for (std::size_t i = 0; i < n_experts; ++i) {
    p.Wk.push_back(draw(rr, dd));
    if (!monomial) p.bk.push_back(draw(rr, 1).col(0));
  }
  p.validate();
  return p;
}

}  // namespace qmoe

#endif  // QMOE_INSTANCES_HPP_
