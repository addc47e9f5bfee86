#pragma once

#include <algorithm>
#include <functional>
#include <utility>
#include <vector>

#include "ehz/common.hpp"

namespace ehz {

// Root of f on [lo,hi]; f(lo) and f(hi) must have opposite signs.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
  double flo = f(lo);
  for (int i = 0; i < iters && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((flo < 0.0) != (fm < 0.0)) {
      hi = mid;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return 0.5 * (lo + hi);
}

inline double golden_min(const std::function<double(double)>& f, double lo, double hi, int iters = 120) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < iters; ++i) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
    }
  }
  return f1 < f2 ? x1 : x2;
}

struct NelderMeadResult {
  Vec x;
  double value = 0.0;
  int evals = 0;
};

inline NelderMeadResult nelder_mead(const std::function<double(const Vec&)>& f, const Vec& x0, double scale,
                                    int max_evals = 2000, double ftol = 1e-12) {
  const int d = int(x0.size());
  std::vector<std::pair<double, Vec>> simplex;
  simplex.reserve(d + 1);
  int evals = 0;
  auto eval = [&](const Vec& x) {
    ++evals;
    return f(x);
  };
  simplex.emplace_back(eval(x0), x0);
  for (int i = 0; i < d; ++i) {
    Vec xi = x0;
    xi[i] += scale;
    simplex.emplace_back(eval(xi), xi);
  }
  auto by_value = [](const auto& a, const auto& b) { return a.first < b.first; };
  while (evals < max_evals) {
    std::sort(simplex.begin(), simplex.end(), by_value);
    if (simplex.back().first - simplex.front().first < ftol * (1.0 + std::abs(simplex.front().first))) break;
    Vec centroid = Vec::Zero(d);
    for (int i = 0; i < d; ++i) centroid += simplex[i].second;
    centroid /= double(d);
    const Vec& worst = simplex.back().second;
    Vec xr = centroid + (centroid - worst);
    double fr = eval(xr);
    if (fr < simplex.front().first) {
      Vec xe = centroid + 2.0 * (centroid - worst);
      double fe = eval(xe);
      simplex.back() = fe < fr ? std::make_pair(fe, xe) : std::make_pair(fr, xr);
    } else if (fr < simplex[d - 1].first) {
      simplex.back() = {fr, xr};
    } else {
      Vec xc = centroid + 0.5 * (worst - centroid);
      double fc = eval(xc);
      if (fc < simplex.back().first) {
        simplex.back() = {fc, xc};
      } else {
        for (int i = 1; i <= d; ++i) {
          simplex[i].second = simplex[0].second + 0.5 * (simplex[i].second - simplex[0].second);
          simplex[i].first = eval(simplex[i].second);
        }
      }
    }
  }
  std::sort(simplex.begin(), simplex.end(), by_value);
  return {simplex.front().second, simplex.front().first, evals};
}

struct ConeLpResult {
  bool feasible = false;
  double value = 0.0;  // sum of weights at the optimum
  Vec lambda;          // conic weights per column
  Vec dual;            // y with <y, col_j> <= 1 for all j and <y, z> = value
  Vec farkas;          // infeasible case: <y, col_j> <= 0 for all j, <y, z> > 0
};

// min sum(lambda) s.t. X lambda = z, lambda >= 0, by two-phase simplex with
// Bland's rule. Basis systems are d x d, so columns may be added freely.
inline ConeLpResult lp_min_cone(const Mat& X, const Vec& z) {
  const int d = int(X.rows()), m = int(X.cols());
  Mat A(d, m + d);
  A.leftCols(m) = X;
  A.rightCols(d).setZero();
  Vec b = z;
  Vec flip = Vec::Ones(d);
  std::vector<int> basis(d);
  for (int i = 0; i < d; ++i) {
    if (b[i] < 0.0) {
      b[i] = -b[i];
      A.row(i).head(m) *= -1.0;
      flip[i] = -1.0;
    }
    A(i, m + i) = 1.0;
    basis[i] = m + i;
  }
  const double scale = 1.0 + z.cwiseAbs().maxCoeff();

  Vec xB, y;
  Mat Binv;
  auto refresh = [&]() {
    Mat B(d, d);
    for (int i = 0; i < d; ++i) B.col(i) = A.col(basis[i]);
    Binv = Eigen::FullPivLU<Mat>(B).inverse();
    xB = Binv * b;
  };
  // allow_artificial: whether artificial columns may enter (phase 1 only).
  auto run = [&](const Vec& cost, bool allow_artificial) {
    refresh();
    for (int iter = 0; iter < 4000; ++iter) {
      Vec cB(d);
      for (int i = 0; i < d; ++i) cB[i] = cost[basis[i]];
      y = Binv.transpose() * cB;
      int enter = -1;
      const int ncols = allow_artificial ? m + d : m;
      for (int j = 0; j < ncols && enter < 0; ++j) {
        bool basic = false;
        for (int i = 0; i < d; ++i) basic |= basis[i] == j;
        if (!basic && cost[j] - y.dot(A.col(j)) < -1e-10 * scale) enter = j;  // Bland: smallest index
      }
      if (enter < 0) return;
      Vec dir = Binv * A.col(enter);
      int leave = -1;
      double best_ratio = 0.0;
      for (int i = 0; i < d; ++i) {
        if (dir[i] > 1e-11) {
          const double ratio = std::max(xB[i], 0.0) / dir[i];
          if (leave < 0 || ratio < best_ratio - 1e-14 ||
              (ratio <= best_ratio + 1e-14 && basis[i] < basis[leave])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) return;  // unbounded; impossible with nonnegative costs
      basis[leave] = enter;
      refresh();
    }
  };

  ConeLpResult res;
  Vec cost1 = Vec::Zero(m + d);
  cost1.tail(d).setOnes();
  run(cost1, true);
  double art = 0.0;
  for (int i = 0; i < d; ++i)
    if (basis[i] >= m) art += std::max(xB[i], 0.0);
  if (art > 1e-9 * scale) {
    res.feasible = false;
    res.farkas = flip.asDiagonal() * y;
    return res;
  }

  Vec cost2 = Vec::Zero(m + d);  // artificials stay barred from entering
  cost2.head(m).setOnes();
  run(cost2, false);

  res.feasible = true;
  res.lambda = Vec::Zero(m);
  for (int i = 0; i < d; ++i)
    if (basis[i] < m) res.lambda[basis[i]] = std::max(xB[i], 0.0);
  res.value = res.lambda.sum();
  res.dual = flip.asDiagonal() * y;
  return res;
}

}  // namespace ehz
