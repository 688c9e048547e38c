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

#ifndef QMOE_POLYSYS_HPP_
#define QMOE_POLYSYS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include "qmoe/errors.hpp"
#include "qmoe/rng.hpp"

namespace qmoe {

// Smallest r for which the system
//   sum_l sum_{n1 + 2 n2 = alpha} p_l^2 g1_l^n1 g2_l^n2 / (n1! n2!) = 0,  alpha = 1..r
// has no non-trivial solution. Known exactly for m <= 3; only bounded below
// for m >= 4.
struct RbarValue {
  std::optional<int> value;
  int lower_bound = 0;
  bool exact() const noexcept { return value.has_value(); }
};

inline RbarValue rbar(int m) {
  require(m >= 1, "rbar: m must be >= 1");
  switch (m) {
    case 1: return {1, 1};
    case 2: return {4, 4};
    case 3: return {6, 6};
    default: return {std::nullopt, 7};
  }
}

// Exact value or UnsupportedCellSize.
inline int rbar_exact(std::size_t m) {
  const RbarValue r = rbar(static_cast<int>(m));
  if (!r.exact()) throw UnsupportedCellSize(m);
  return *r.value;
}

inline Eigen::VectorXd polysys_residual(const Eigen::VectorXd& p, const Eigen::VectorXd& g1,
                                        const Eigen::VectorXd& g2, int r) {
  require(r >= 1, "polysys_residual: r must be >= 1");
  require(p.size() == g1.size() && p.size() == g2.size(),
          "polysys_residual: p, g1, g2 must have equal length");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(r);
  std::vector<double> fact(static_cast<std::size_t>(r) + 1, 1.0);
  for (int k = 1; k <= r; ++k) fact[k] = fact[k - 1] * k;
  for (Eigen::Index l = 0; l < p.size(); ++l) {
    const double w = p[l] * p[l];
    for (int alpha = 1; alpha <= r; ++alpha) {
      double acc = 0.0;
      for (int n2 = 0; 2 * n2 <= alpha; ++n2) {
        const int n1 = alpha - 2 * n2;
        acc += std::pow(g1[l], n1) * std::pow(g2[l], n2) / (fact[n1] * fact[n2]);
      }
      out[alpha - 1] += w * acc;
    }
  }
  return out;
}

struct PolysysResult {
  double best_residual_norm = 0.0;
  Eigen::VectorXd p, g1, g2;
  std::size_t best_restart = 0;
  // True when the best point satisfies |p_l| >= 0.1 for all l and
  // max_l |g1_l| >= 0.1.
  bool constrained = false;
};

namespace detail {

// Unknowns: s (m), t, free g1 (m-1), g2 (m). p_l^2 = 0.01 + s_l^2 and the
// pinned g1 coordinate is sign * (0.1 + t^2), so every point is feasible.
struct PolysysFunctor {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  int m, r;
  int pinned;
  double sign;

  int inputs() const { return 3 * m; }
  int values() const { return std::max(r, 3 * m); }

  void decode(const Eigen::VectorXd& z, Eigen::VectorXd& p, Eigen::VectorXd& g1,
              Eigen::VectorXd& g2) const {
    p.resize(m);
    g1.resize(m);
    g2.resize(m);
    for (int l = 0; l < m; ++l) p[l] = std::sqrt(0.01 + z[l] * z[l]);
    g1[pinned] = sign * (0.1 + z[m] * z[m]);
    int k = m + 1;
    for (int l = 0; l < m; ++l)
      if (l != pinned) g1[l] = z[k++];
    for (int l = 0; l < m; ++l) g2[l] = z[k++];
  }

  // LM wants at least as many residuals as unknowns; extra rows are zero.
  int operator()(const Eigen::VectorXd& z, Eigen::VectorXd& fvec) const {
    Eigen::VectorXd p, g1, g2;
    decode(z, p, g1, g2);
    fvec.setZero(values());
    fvec.head(r) = polysys_residual(p, g1, g2, r);
    return 0;
  }
};

}  // namespace detail

// Multi-start Levenberg-Marquardt on ||residual||^2 over the feasible region
// |p_l| >= 0.1, max |g1_l| >= 0.1. Restart k draws its start uniformly from
// [-3, 3] with its own stream and pins g1 at coordinate k mod m with sign
// alternating every m restarts. A residual below 1e-8 certifies a non-trivial
// solution; a floor after the budget is evidence only.
inline PolysysResult polysys_search(int m, int r, std::size_t budget, std::uint64_t seed) {
  require(m >= 1, "polysys_search: m must be >= 1");
  require(r >= 1, "polysys_search: r must be >= 1");
  require(budget >= 1, "polysys_search: budget must be >= 1");
  PolysysResult best;
  best.best_residual_norm = std::numeric_limits<double>::infinity();
  const CounterStream root(seed, "polysys");
  for (std::size_t restart = 0; restart < budget; ++restart) {
    detail::PolysysFunctor fn;
    fn.m = m;
    fn.r = r;
    fn.pinned = static_cast<int>(restart % static_cast<std::size_t>(m));
    fn.sign = (restart / static_cast<std::size_t>(m)) % 2 == 0 ? 1.0 : -1.0;
    StreamCursor rng(root.child(restart));
    Eigen::VectorXd z(fn.inputs());
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.uniform(-3.0, 3.0);

    Eigen::NumericalDiff<detail::PolysysFunctor> numdiff(fn);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::PolysysFunctor>> lm(numdiff);
    lm.parameters.maxfev = 4000;
    lm.parameters.xtol = 1e-15;
    lm.parameters.ftol = 1e-18;
    lm.minimize(z);

    Eigen::VectorXd p, g1, g2;
    fn.decode(z, p, g1, g2);
    const double norm = polysys_residual(p, g1, g2, r).norm();
    if (std::isfinite(norm) && norm < best.best_residual_norm) {
      best.best_residual_norm = norm;
      best.p = p;
      best.g1 = g1;
      best.g2 = g2;
      best.best_restart = restart;
    }
  }
  if (best.p.size() > 0) {
    best.constrained = best.p.cwiseAbs().minCoeff() >= 0.1 && best.g1.cwiseAbs().maxCoeff() >= 0.1;
  }
  return best;
}

}  // namespace qmoe

#endif  // QMOE_POLYSYS_HPP_
