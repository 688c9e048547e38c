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

#ifndef QMOE_GRADIENTS_HPP_
#define QMOE_GRADIENTS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "qmoe/dataset.hpp"
#include "qmoe/model.hpp"
#include "qmoe/params.hpp"

namespace qmoe {

// Per-sample gradient contributions are summed in chunks of this many rows,
// then the chunk sums are added in index order.
inline constexpr std::size_t kReductionChunk = 1024;

struct AtomGradient {
  Mat dA;
  Vec db;
  double dc = 0.0;
  ExpertParams dEta;  // same shape as the atom's eta
};

struct GradientRecord {
  std::vector<AtomGradient> atoms;
  // Same ordering as flatten(MixingMeasure).
  Vec flatten() const {
    std::vector<double> out;
    for (const auto& g : atoms) {
      for (Eigen::Index r = 0; r < g.dA.rows(); ++r)
        for (Eigen::Index c = 0; c < g.dA.cols(); ++c) out.push_back(g.dA(r, c));
      for (Eigen::Index u = 0; u < g.db.size(); ++u) out.push_back(g.db[u]);
      out.push_back(g.dc);
      const Vec e = qmoe::flatten(g.dEta);
      out.insert(out.end(), e.data(), e.data() + e.size());
    }
    return Eigen::Map<Vec>(out.data(), static_cast<Eigen::Index>(out.size()));
  }
};

namespace detail {

inline void check_data(const ParamLayout& L, const Dataset& data) {
  data.validate();
  require(data.dim() == L.d, "dataset dimension does not match the measure");
}

// Mean squared residual over `data` at flat parameters `theta`; if `grad` is
// non-null it receives the gradient (overwritten).
inline double loss_and_grad(const ParamLayout& L, const double* theta, const Dataset& data,
                            double* grad) {
  check_data(L, data);
  PackedModel model(L);
  const std::size_t n = data.size(), P = L.total();
  std::vector<double> chunk;
  if (grad) {
    std::fill(grad, grad + P, 0.0);
    chunk.assign(P, 0.0);
  }
  double sse = 0.0;
  for (std::size_t start = 0; start < n; start += kReductionChunk) {
    const std::size_t stop = std::min(n, start + kReductionChunk);
    double chunk_sse = 0.0;
    if (grad) std::fill(chunk.begin(), chunk.end(), 0.0);
    for (std::size_t s = start; s < stop; ++s) {
      const double* x = data.X.row(static_cast<Eigen::Index>(s)).data();
      const double e = data.Y[static_cast<Eigen::Index>(s)] - model.forward(theta, x);
      chunk_sse += e * e;
      if (grad) model.accumulate_grad(theta, x, e, chunk.data());
    }
    sse += chunk_sse;
    if (grad)
      for (std::size_t k = 0; k < P; ++k) grad[k] += chunk[k];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad)
    for (std::size_t k = 0; k < P; ++k) grad[k] *= -2.0 * inv_n;
  return sse * inv_n;
}

}  // namespace detail

inline double sq_loss(const MixingMeasure& G, const Dataset& data) {
  const ParamLayout L = ParamLayout::of(G);
  const Vec theta = flatten(G);
  return detail::loss_and_grad(L, theta.data(), data, nullptr);
}

// Flat gradient of sq_loss, in flatten() order.
inline Vec sq_loss_grad_flat(const MixingMeasure& G, const Dataset& data) {
  const ParamLayout L = ParamLayout::of(G);
  const Vec theta = flatten(G);
  Vec grad(L.total());
  detail::loss_and_grad(L, theta.data(), data, grad.data());
  return grad;
}

inline GradientRecord sq_loss_grad(const MixingMeasure& G, const Dataset& data) {
  const ParamLayout L = ParamLayout::of(G);
  const Vec flat = sq_loss_grad_flat(G, data);
  // Reuse unflatten to get the right shapes, then relabel.
  const MixingMeasure shaped = unflatten(L, flat);
  GradientRecord rec;
  for (const auto& at : shaped.atoms) rec.atoms.push_back(AtomGradient{at.A, at.b, at.c, at.eta});
  return rec;
}

// Central differences (f(p + h e_k) - f(p - h e_k)) / 2h per coordinate.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& objective, const Vec& point,
                            double h) {
  require(h > 0.0, "finite_diff_grad: step must be positive");
  Vec g(point.size());
  Vec p = point;
  for (Eigen::Index k = 0; k < point.size(); ++k) {
    const double orig = p[k];
    p[k] = orig + h;
    const double up = objective(p);
    p[k] = orig - h;
    const double dn = objective(p);
    p[k] = orig;
    if (!std::isfinite(up) || !std::isfinite(dn))
      throw NumericalFailure("finite_diff_grad: non-finite objective at coordinate " +
                             std::to_string(k));
    g[k] = (up - dn) / (2.0 * h);
  }
  return g;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_coordinate = 0;
  std::string worst_name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool pass = true;
};

struct GradCheckOptions {
  double h = 1e-5;
  // ReLU units with |pre-activation| below this at any sample have their
  // incoming-weight coordinates skipped.
  double kink_margin = 1e-4;
};

namespace detail {

// Coordinates whose central difference could straddle a ReLU kink.
inline std::vector<char> kink_adjacent(const ParamLayout& L, const Vec& theta,
                                       const Dataset& data, double margin) {
  std::vector<char> skip(L.total(), 0);
  if (L.family != ExpertFamily::TwoLayer || L.activation != Activation::Relu) return skip;
  PackedModel model(L);
  for (std::size_t s = 0; s < data.size(); ++s) {
    model.forward(theta.data(), data.X.row(static_cast<Eigen::Index>(s)).data());
    for (std::size_t i = 0; i < L.n_atoms; ++i) {
      for (std::size_t k = 0; k < L.hidden; ++k) {
        if (std::abs(model.hidden_preactivation(i, k)) >= margin) continue;
        const std::size_t base = i * L.stride() + L.eta_offset();
        for (std::size_t u = 0; u < L.d; ++u) skip[base + k * L.d + u] = 1;
        skip[base + L.hidden * L.d + k] = 1;
      }
    }
  }
  return skip;
}

}  // namespace detail

// Compares a supplied flat gradient against central differences of sq_loss.
// Relative error is |a - b| / max(1, |a|, |b|).
inline GradCheckReport grad_check_against(const MixingMeasure& G, const Dataset& data,
                                          const Vec& analytic, double tol,
                                          const GradCheckOptions& opt = {}) {
  require(tol > 0.0, "grad_check: tolerance must be positive");
  const ParamLayout L = ParamLayout::of(G);
  require(static_cast<std::size_t>(analytic.size()) == L.total(),
          "grad_check: gradient has wrong length");
  const Vec theta = flatten(G);
  const auto objective = [&](const Vec& p) {
    return detail::loss_and_grad(L, p.data(), data, nullptr);
  };
  const Vec numeric = finite_diff_grad(objective, theta, opt.h);
  const auto skip = detail::kink_adjacent(L, theta, data, opt.kink_margin);

  GradCheckReport rep;
  for (std::size_t k = 0; k < L.total(); ++k) {
    if (skip[k]) {
      ++rep.skipped;
      continue;
    }
    ++rep.checked;
    const double a = analytic[static_cast<Eigen::Index>(k)];
    const double b = numeric[static_cast<Eigen::Index>(k)];
    const double err = std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
    if (rep.worst_name.empty() || err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_coordinate = k;
      rep.worst_name = L.coordinate_name(k);
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

inline GradCheckReport grad_check(const MixingMeasure& G, const Dataset& data, double tol,
                                  const GradCheckOptions& opt = {}) {
  return grad_check_against(G, data, sq_loss_grad_flat(G, data), tol, opt);
}

}  // namespace qmoe

#endif  // QMOE_GRADIENTS_HPP_
