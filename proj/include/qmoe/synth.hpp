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

#ifndef QMOE_SYNTH_HPP_
#define QMOE_SYNTH_HPP_

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

#include "qmoe/dataset.hpp"
#include "qmoe/model.hpp"
#include "qmoe/params.hpp"
#include "qmoe/rng.hpp"

namespace qmoe {

enum class InputDist { UniformCube, Gaussian };

inline std::string_view to_string(InputDist d) {
  return d == InputDist::UniformCube ? "uniform_cube" : "gaussian";
}

inline InputDist parse_input_dist(std::string_view s) {
  if (s == "uniform_cube") return InputDist::UniformCube;
  if (s == "gaussian") return InputDist::Gaussian;
  throw InvalidArgument("unknown input distribution '" + std::string(s) + "'");
}

struct SynthConfig {
  std::size_t d = 2;
  std::size_t n_star = 8;
  GateKind gate{GateTag::QuadPoly, std::nullopt};
  ExpertFamily family = ExpertFamily::TwoLayer;
  std::size_t hidden = 2;
  Activation activation = Activation::Relu;
  double sigma2 = 0.049;
  std::optional<double> sigma_r2;  // default 0.01 / d
  std::optional<double> sigma_e2;  // default 1 / d
  InputDist input_dist = InputDist::UniformCube;
  double bound = 1.0;

  double gating_variance() const { return sigma_r2.value_or(0.01 / static_cast<double>(d)); }
  double expert_variance() const { return sigma_e2.value_or(1.0 / static_cast<double>(d)); }

  void validate() const {
    require(d >= 1, "synth: d must be >= 1");
    require(n_star >= 1, "synth: N_star must be >= 1");
    require(gate.tag != GateTag::AttnForm, "synth: AttnForm measures are not sampled");
    require(sigma2 > 0.0, "synth: sigma2 must be > 0");
    require(gating_variance() > 0.0 && expert_variance() > 0.0,
            "synth: parameter variances must be > 0");
    require(bound > 0.0, "synth: input bound must be > 0");
    if (family == ExpertFamily::TwoLayer) require(hidden >= 1, "synth: hidden size must be >= 1");
  }

  // Stable text fingerprint of every field, used for provenance hashes.
  std::string fingerprint() const {
    std::ostringstream os;
    os << std::setprecision(17) << "d=" << d << ";n_star=" << n_star
       << ";gate=" << to_string(gate.tag) << ";top_k=" << (gate.top_k ? *gate.top_k : 0)
       << ";family=" << to_string(family) << ";hidden=" << hidden
       << ";act=" << to_string(activation) << ";sigma2=" << sigma2
       << ";sigma_r2=" << gating_variance() << ";sigma_e2=" << expert_variance()
       << ";input=" << to_string(input_dist) << ";B=" << bound;
    return os.str();
  }

  std::string hash() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(fingerprint());
    return os.str();
  }
};

// Gating entries ~ N(0, sigma_r2) for atoms 0..N*-2; the last atom has zero
// gating (translation anchor). A is drawn symmetric: the quadratic form only
// sees its symmetric part. Expert entries ~ N(0, sigma_e2) for every atom.
inline MixingMeasure sample_true_measure(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  StreamCursor rng(CounterStream(seed, "measure"));
  const double sr = std::sqrt(cfg.gating_variance());
  const double se = std::sqrt(cfg.expert_variance());
  const auto d = static_cast<Eigen::Index>(cfg.d);

  MixingMeasure G;
  G.d = cfg.d;
  G.gate = cfg.gate;
  G.family = cfg.family;
  for (std::size_t i = 0; i < cfg.n_star; ++i) {
    Atom at;
    at.A = Mat::Zero(d, d);
    at.b = Vec::Zero(d);
    at.c = 0.0;
    if (i + 1 < cfg.n_star) {
      for (Eigen::Index u = 0; u < d; ++u)
        for (Eigen::Index v = u; v < d; ++v) at.A(u, v) = at.A(v, u) = rng.normal(0.0, sr);
      for (Eigen::Index u = 0; u < d; ++u) at.b[u] = rng.normal(0.0, sr);
      at.c = rng.normal(0.0, sr);
      if (cfg.gate.tag == GateTag::Linear) at.A.setZero();
      if (cfg.gate.tag == GateTag::QuadMono) at.b.setZero();
    }
    if (cfg.family == ExpertFamily::Linear) {
      LinearExpert e{Vec(d), 0.0};
      for (Eigen::Index u = 0; u < d; ++u) e.beta1[u] = rng.normal(0.0, se);
      e.beta0 = rng.normal(0.0, se);
      at.eta = std::move(e);
    } else {
      const auto m = static_cast<Eigen::Index>(cfg.hidden);
      TwoLayerExpert e{Mat(m, d), Vec(m), Vec(m), 0.0, cfg.activation};
      for (Eigen::Index k = 0; k < m; ++k)
        for (Eigen::Index u = 0; u < d; ++u) e.W(k, u) = rng.normal(0.0, se);
      for (Eigen::Index k = 0; k < m; ++k) e.v[k] = rng.normal(0.0, se);
      for (Eigen::Index k = 0; k < m; ++k) e.a[k] = rng.normal(0.0, se);
      e.a0 = rng.normal(0.0, se);
      at.eta = std::move(e);
    }
    G.atoms.push_back(std::move(at));
  }
  G.validate();
  return G;
}

// Row i, column u reads draw i*d + u of the "inputs" stream.
inline RowMat sample_inputs(const SynthConfig& cfg, std::size_t n, std::uint64_t seed) {
  require(n >= 1, "sample_inputs: n must be >= 1");
  require(cfg.bound > 0.0, "sample_inputs: bound must be > 0");
  const CounterStream s(seed, "inputs");
  RowMat X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t u = 0; u < cfg.d; ++u) {
      const std::uint64_t k = i * cfg.d + u;
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) =
          cfg.input_dist == InputDist::UniformCube ? s.uniform(k, -cfg.bound, cfg.bound)
                                                   : s.normal(k);
    }
  }
  return X;
}

// Noise draw i is draw i of the "noise" stream, independent of the inputs.
inline double noise_draw(std::uint64_t seed, std::size_t i, double sigma2) {
  return std::sqrt(sigma2) * CounterStream(seed, "noise").normal(i);
}

// Y_i = f_{G*}(X_i) + eps_i, eps_i ~ N(0, sigma2).
inline Dataset generate_dataset(const MixingMeasure& G_star, const SynthConfig& cfg,
                                std::size_t n, std::uint64_t seed) {
  cfg.validate();
  require(G_star.d == cfg.d, "generate_dataset: measure and config disagree on d");
  const ParamLayout L = ParamLayout::of(G_star);
  const Vec theta = flatten(G_star);
  detail::PackedModel model(L);
  Dataset data;
  data.X = sample_inputs(cfg, n, seed);
  data.Y.resize(static_cast<Eigen::Index>(n));
  const CounterStream noise(seed, "noise");
  const double sd = std::sqrt(cfg.sigma2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    data.Y[r] = model.forward(theta.data(), data.X.row(r).data()) + sd * noise.normal(i);
  }
  data.provenance = Provenance{seed, cfg.hash()};
  return data;
}

}  // namespace qmoe

#endif  // QMOE_SYNTH_HPP_
