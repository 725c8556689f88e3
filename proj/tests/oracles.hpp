#pragma once

// Test-only oracles, kept independent of the library code paths they check:
// central finite differences, LP vertex enumeration for the CVaR sup, and a
// KKT-enumeration QP solver for the projections.

#include "reweight/common.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracles {

using reweight::Mat;
using reweight::Vec;

// Central finite differences of a scalar function of a vector.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                       double step = 1e-5) {
  Vec g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

inline double rel_error(const Vec& a, const Vec& b) {
  double denom = std::max({1e-12, a.norm(), b.norm()});
  return (a - b).norm() / denom;
}

// Maximize sum w_i * l_i over {w >= 0, ||w||_inf <= cap, ||w||_1 = 1} by
// enumerating the vertices of the polytope: all but at most one coordinate
// sit at a bound.
inline double cvar_lp_vertex_max(const Vec& losses, double alpha) {
  int n = static_cast<int>(losses.size());
  double cap = 1.0 / (alpha * n);
  double best = -std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    double at_cap = cap * static_cast<double>(__builtin_popcount(mask));
    double value = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) value += cap * losses[i];
    double slack = 1.0 - at_cap;
    if (std::abs(slack) <= 1e-12) {
      best = std::max(best, value);
      continue;
    }
    if (slack < 0.0 || slack > cap + 1e-12) continue;
    for (int j = 0; j < n; ++j) {
      if (mask & (1u << j)) continue;
      best = std::max(best, value + slack * losses[j]);
    }
  }
  return best;
}

// Exact Euclidean projection onto {0 <= s <= 1, sum s <= K}. Enumerates all
// support patterns (each coordinate at 0, at 1, or interior s_i - tau) with
// tau = 0 or tau chosen so the budget binds; the pattern of the true
// projection is among them, so the closest feasible candidate is exact.
inline Vec qp_project_capped_box_simplex(const Vec& s, double K) {
  int n = static_cast<int>(s.size());
  Vec best;
  double best_dist = std::numeric_limits<double>::infinity();
  std::vector<int> pattern(n, 0);
  long total = 1;
  for (int i = 0; i < n; ++i) total *= 3;
  for (long code = 0; code < total; ++code) {
    long c = code;
    for (int i = 0; i < n; ++i) {
      pattern[i] = static_cast<int>(c % 3);
      c /= 3;
    }
    for (int use_tau : {0, 1}) {
      double tau = 0.0;
      if (use_tau) {
        double fixed = 0.0, free_sum = 0.0;
        int free_count = 0;
        for (int i = 0; i < n; ++i) {
          if (pattern[i] == 1) fixed += 1.0;
          if (pattern[i] == 2) {
            free_sum += s[i];
            ++free_count;
          }
        }
        if (free_count == 0) continue;
        tau = (free_sum + fixed - K) / free_count;
      }
      Vec cand(n);
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        double v = pattern[i] == 0 ? 0.0 : (pattern[i] == 1 ? 1.0 : s[i] - tau);
        v = std::min(1.0, std::max(0.0, v));
        cand[i] = v;
        sum += v;
      }
      if (sum > K + 1e-9) continue;
      double dist = (cand - s).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = cand;
      }
    }
  }
  return best;
}

}  // namespace oracles
