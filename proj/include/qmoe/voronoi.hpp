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

#ifndef QMOE_VORONOI_HPP_
#define QMOE_VORONOI_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "qmoe/model.hpp"
#include "qmoe/polysys.hpp"

namespace qmoe {

// cells[j] lists the fitted atoms closest to true atom j; owner[i] is the
// cell of fitted atom i.
struct VoronoiAssignment {
  std::vector<std::vector<std::size_t>> cells;
  std::vector<std::size_t> owner;
};

// Component-wise differences between a fitted atom and a true atom. Matrix
// norms are Frobenius.
struct AtomDelta {
  double A = 0.0;
  double b = 0.0;
  double eta = 0.0;
  double beta1 = 0.0;  // linear experts only
  double beta0 = 0.0;  // linear experts only

  // Distance used for cell assignment; c is not part of it.
  double assignment_distance() const noexcept { return std::sqrt(A * A + b * b + eta * eta); }
};

inline AtomDelta atom_delta(const Atom& fitted, const Atom& truth) {
  AtomDelta d;
  d.A = (fitted.A - truth.A).norm();
  d.b = (fitted.b - truth.b).norm();
  d.eta = (flatten(fitted.eta) - flatten(truth.eta)).norm();
  if (const auto* lf = std::get_if<LinearExpert>(&fitted.eta)) {
    const auto& lt = std::get<LinearExpert>(truth.eta);
    d.beta1 = (lf->beta1 - lt.beta1).norm();
    d.beta0 = std::abs(lf->beta0 - lt.beta0);
  }
  return d;
}

inline void check_comparable(const MixingMeasure& G, const MixingMeasure& G_star) {
  G.validate();
  G_star.validate();
  require(G.d == G_star.d, "voronoi: measures disagree on d");
  require(same_architecture(G.atoms.front().eta, G_star.atoms.front().eta),
          "voronoi: expert architectures differ");
}

// Nearest true atom per fitted atom; ties go to the smaller true index.
inline VoronoiAssignment assign_cells(const MixingMeasure& G, const MixingMeasure& G_star) {
  check_comparable(G, G_star);
  VoronoiAssignment out;
  out.cells.resize(G_star.size());
  out.owner.resize(G.size());
  for (std::size_t i = 0; i < G.size(); ++i) {
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < G_star.size(); ++j) {
      const double dist = atom_delta(G.atoms[i], G_star.atoms[j]).assignment_distance();
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    out.owner[i] = best;
    out.cells[best].push_back(i);
  }
  return out;
}

struct CellLoss {
  std::size_t cell = 0;
  std::size_t size = 0;
  double parameter_term = 0.0;  // sum over members of exp(c_i) * (...)
  double weight_term = 0.0;     // |sum exp(c_i) - exp(c*_j)|
};

struct LossBreakdown {
  double total = 0.0;
  double weight_term = 0.0;
  double exact_cells_term = 0.0;  // singleton cells
  double over_cells_term = 0.0;   // cells with more than one member
  std::vector<CellLoss> cells;
};

namespace detail {

// Shared skeleton of the three losses. `term(delta, cell_size)` is the
// bracketed per-atom expression before the exp(c_i) factor.
inline LossBreakdown voronoi_loss(const MixingMeasure& G, const MixingMeasure& G_star,
                                  const std::function<double(const AtomDelta&, std::size_t)>& term) {
  const VoronoiAssignment V = assign_cells(G, G_star);
  LossBreakdown out;
  for (std::size_t j = 0; j < G_star.size(); ++j) {
    CellLoss cl;
    cl.cell = j;
    cl.size = V.cells[j].size();
    double mass = 0.0;
    for (auto i : V.cells[j]) {
      const double w = std::exp(G.atoms[i].c);
      mass += w;
      cl.parameter_term += w * term(atom_delta(G.atoms[i], G_star.atoms[j]), cl.size);
    }
    cl.weight_term = std::abs(mass - std::exp(G_star.atoms[j].c));
    if (cl.size > 1)
      out.over_cells_term += cl.parameter_term;
    else
      out.exact_cells_term += cl.parameter_term;
    out.weight_term += cl.weight_term;
    out.cells.push_back(cl);
  }
  out.total = out.exact_cells_term + out.over_cells_term + out.weight_term;
  return out;
}

}  // namespace detail

using RbarLookup = std::function<int(std::size_t)>;

// Polynomial-gate loss. Over-fitted cells of size m use exponents
// (rbar(m)/2, rbar(m), 2) on (A, b, eta); singleton cells use (1, 1, 1).
inline LossBreakdown loss_L1(const MixingMeasure& G, const MixingMeasure& G_star,
                             const RbarLookup& rbar_lookup = rbar_exact) {
  require(G.gate.tag == GateTag::QuadPoly && G_star.gate.tag == GateTag::QuadPoly,
          "loss_L1 needs QuadPoly measures");
  return detail::voronoi_loss(G, G_star, [&](const AtomDelta& d, std::size_t m) {
    if (m <= 1) return d.A + d.b + d.eta;
    const double r = static_cast<double>(rbar_lookup(m));
    return std::pow(d.A, r / 2.0) + std::pow(d.b, r) + d.eta * d.eta;
  });
}

// Monomial-gate loss: squared (A, eta) errors in over-fitted cells, plain
// norms in singleton cells.
inline LossBreakdown loss_L3(const MixingMeasure& G, const MixingMeasure& G_star) {
  require(G.gate.tag == GateTag::QuadMono && G_star.gate.tag == GateTag::QuadMono,
          "loss_L3 needs QuadMono measures");
  return detail::voronoi_loss(G, G_star, [](const AtomDelta& d, std::size_t m) {
    return m > 1 ? d.A * d.A + d.eta * d.eta : d.A + d.eta;
  });
}

// Linear-expert loss with a single exponent r on every component.
inline LossBreakdown loss_L2r(const MixingMeasure& G, const MixingMeasure& G_star, double r) {
  require(r >= 1.0, "loss_L2r: r must be >= 1");
  require(G.family == ExpertFamily::Linear && G_star.family == ExpertFamily::Linear,
          "loss_L2r needs linear experts");
  return detail::voronoi_loss(G, G_star, [r](const AtomDelta& d, std::size_t) {
    return std::pow(d.A, r) + std::pow(d.b, r) + std::pow(d.beta1, r) + std::pow(d.beta0, r);
  });
}

struct ParamError {
  double errA = 0.0;
  double errB = 0.0;
  double errEta = 0.0;
  double errW = 0.0;
  bool empty_cell = false;
};

// Worst member error per true atom, plus the cell weight error. An empty
// cell reports the nearest fitted atom's distances and the full true weight.
inline std::vector<ParamError> per_param_errors(const MixingMeasure& G,
                                                const MixingMeasure& G_star) {
  const VoronoiAssignment V = assign_cells(G, G_star);
  std::vector<ParamError> out(G_star.size());
  for (std::size_t j = 0; j < G_star.size(); ++j) {
    ParamError& e = out[j];
    const auto& truth = G_star.atoms[j];
    if (V.cells[j].empty()) {
      e.empty_cell = true;
      AtomDelta nearest;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& at : G.atoms) {
        const AtomDelta d = atom_delta(at, truth);
        if (d.assignment_distance() < best) {
          best = d.assignment_distance();
          nearest = d;
        }
      }
      e.errA = nearest.A;
      e.errB = nearest.b;
      e.errEta = nearest.eta;
      e.errW = std::exp(truth.c);
      continue;
    }
    double mass = 0.0;
    for (auto i : V.cells[j]) {
      const AtomDelta d = atom_delta(G.atoms[i], truth);
      e.errA = std::max(e.errA, d.A);
      e.errB = std::max(e.errB, d.b);
      e.errEta = std::max(e.errEta, d.eta);
      mass += std::exp(G.atoms[i].c);
    }
    e.errW = std::abs(mass - std::exp(truth.c));
  }
  return out;
}

// Softmax gating is unchanged by adding one (T, t, t0) to every atom's
// (A, b, c). This picks the representative in which the cell of the true
// atom `anchor` has weight exp(c*_anchor) and weight-averaged A, b equal to
// the true ones. Cells are recomputed after each shift until stable.
inline MixingMeasure anchor_gauge(const MixingMeasure& G, const MixingMeasure& G_star,
                                  std::size_t anchor) {
  require(anchor < G_star.size(), "anchor_gauge: anchor index out of range");
  MixingMeasure out = G;
  std::vector<std::size_t> previous;
  for (int round = 0; round < 4; ++round) {
    const VoronoiAssignment V = assign_cells(out, G_star);
    const auto& members = V.cells[anchor];
    if (members.empty() || members == previous) break;
    previous = members;
    const auto& truth = G_star.atoms[anchor];
    double mass = 0.0;
    Mat A = Mat::Zero(truth.A.rows(), truth.A.cols());
    Vec b = Vec::Zero(truth.b.size());
    for (auto i : members) {
      const double w = std::exp(out.atoms[i].c);
      mass += w;
      A += w * out.atoms[i].A;
      b += w * out.atoms[i].b;
    }
    const Mat T = A / mass - truth.A;
    const Vec t = b / mass - truth.b;
    const double t0 = std::log(mass) - truth.c;
    for (auto& at : out.atoms) {
      if (out.gate.tag != GateTag::Linear) at.A -= T;
      if (out.gate.tag != GateTag::QuadMono) at.b -= t;
      at.c -= t0;
    }
  }
  return out;
}

}  // namespace qmoe

#endif  // QMOE_VORONOI_HPP_
