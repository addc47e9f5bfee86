#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ehz/body.hpp"
#include "ehz/optimize.hpp"

namespace ehz {

inline double gauge(const Body& body, const Vec& z) { return body.gauge(z).value; }

inline SupportEval support(const Body& body, const Vec& w) {
  if (w.norm() < 1e-300) throw ZeroDirection("support direction is zero");
  return body.support(w);
}

// Legendre transform of H_D = j_D^2: H*_D(w) = h_D(w)^2 / 4.
inline double legendre_h_star(const Body& body, const Vec& w) {
  const double h = body.support(w).value;
  return 0.25 * h * h;
}

// Legendre transform of j_D^p / p: (1/q) h_D(w)^q with 1/p + 1/q = 1.
inline double legendre_gauge_power(const Body& body, const Vec& w, double p) {
  if (!(p > 1.0) || !std::isfinite(p)) throw InvalidExponent("legendre_gauge_power needs p > 1");
  const double q = p / (p - 1.0);
  return std::pow(body.support(w).value, q) / q;
}

struct WidthResult {
  double value = 0.0;
  Vec direction;
};

namespace detail {

// Minimize (sign=+1) or maximize (sign=-1) u -> h(u) + h(-u) over the sphere.
inline WidthResult slab_extremum(const Body& body, double sign) {
  const int d = body.dim();
  auto f = [&](const Vec& u) { return sign * (body.support(u).value + body.support(-u).value); };
  if (d == 1) {
    Vec u = Vec::Constant(1, 1.0);
    return {sign * f(u), u};
  }
  double best = 1e300;
  Vec bu;
  for (const Vec& u : sphere_grid(d, 1024 * d)) {
    const double v = f(u);
    if (v < best) {
      best = v;
      bu = u;
    }
  }
  double eta = 0.2;
  for (int it = 0; it < 120 && eta > 1e-13; ++it) {
    Vec g = sign * (body.support(bu).point - body.support(-bu).point);
    g -= g.dot(bu) * bu;
    Vec u2 = bu - eta * g;
    const double n2 = u2.norm();
    if (n2 < 1e-300) {
      eta *= 0.5;
      continue;
    }
    u2 /= n2;
    const double v2 = f(u2);
    if (v2 < best) {
      best = v2;
      bu = u2;
      eta *= 1.2;
    } else {
      eta *= 0.5;
    }
  }
  return {sign * best, bu};
}

}  // namespace detail

// Minimal slab thickness min_u h(u) + h(-u); exact edge-normal sweep for
// planar polytopes, grid plus refinement otherwise.
inline WidthResult width(const Body& body) {
  if (auto* b = dynamic_cast<const BallBody*>(&body)) {
    Vec u = Vec::Unit(b->dim(), 0);
    return {2.0 * b->radius(), u};
  }
  if (auto* e = dynamic_cast<const EllipsoidBody*>(&body)) {
    Eigen::SelfAdjointEigenSolver<Mat> es(e->Q());
    const int last = e->dim() - 1;
    return {2.0 * e->axis_min(), es.eigenvectors().col(last)};
  }
  if (auto* p = dynamic_cast<const PolytopeBody*>(&body)) {
    if (p->dim() == 1) {
      return {p->vertices()(1, 0) - p->vertices()(0, 0), Vec::Constant(1, 1.0)};
    }
    if (p->dim() == 2 && p->edge_normals().rows() > 0) {
      double best = 1e300;
      Vec bu;
      for (int i = 0; i < p->edge_normals().rows(); ++i) {
        Vec u = p->edge_normals().row(i).transpose();
        const double v = p->support(u).value + p->support(-u).value;
        if (v < best) {
          best = v;
          bu = u;
        }
      }
      return {best, bu};
    }
  }
  return detail::slab_extremum(body, +1.0);
}

inline double diameter(const Body& body) {
  if (auto* b = dynamic_cast<const BallBody*>(&body)) return 2.0 * b->radius();
  if (auto* e = dynamic_cast<const EllipsoidBody*>(&body)) return 2.0 * e->axis_max();
  if (auto* p = dynamic_cast<const PolytopeBody*>(&body); p && p->dim() <= 3) {
    const Mat& v = p->vertices();
    double best = 0.0;
    for (int i = 0; i < v.rows(); ++i)
      for (int j = i + 1; j < v.rows(); ++j) best = std::max(best, (v.row(i) - v.row(j)).norm());
    return best;
  }
  return detail::slab_extremum(body, -1.0).value;
}

struct InradiusResult {
  double value = 0.0;
  Vec center;
};

namespace detail {

// Largest inscribed ball with center restricted to {origin + span(basis)}.
// f(x) = min_u h(u) - <x,u> is concave in x; subgradient ascent over the
// restricted center, sphere grid plus local refinement for the inner min.
inline InradiusResult inscribed_ball(const Body& body, const Mat& basis) {
  const int d = body.dim();
  const auto dirs = sphere_grid(d, 1024 * d);
  auto depth = [&](const Vec& x, Vec* worst_u) {
    double best = 1e300;
    Vec bu;
    for (const Vec& u : dirs) {
      const double v = body.support(u).value - x.dot(u);
      if (v < best) {
        best = v;
        bu = u;
      }
    }
    double eta = 0.1;
    for (int it = 0; it < 80 && eta > 1e-13; ++it) {
      Vec g = body.support(bu).point - x;
      g -= g.dot(bu) * bu;
      Vec u2 = bu - eta * g;
      const double n2 = u2.norm();
      if (n2 < 1e-300) {
        eta *= 0.5;
        continue;
      }
      u2 /= n2;
      const double v2 = body.support(u2).value - x.dot(u2);
      if (v2 < best) {
        best = v2;
        bu = u2;
        eta *= 1.2;
      } else {
        eta *= 0.5;
      }
    }
    if (worst_u) *worst_u = bu;
    return best;
  };

  const int k = int(basis.cols());
  Vec alpha = Vec::Zero(k);
  if (k > 0) alpha = basis.transpose() * body.interior_point();
  Vec x = k > 0 ? Vec(basis * alpha) : Vec(Vec::Zero(d));
  Vec wu;
  double fx = depth(x, &wu);
  double step = 0.25 * body.circumradius();
  for (int it = 0; it < 200 && k > 0 && step > 1e-13; ++it) {
    Vec galpha = -basis.transpose() * wu;  // ascent direction of the active constraint
    Vec a2 = alpha - step * galpha;
    Vec x2 = basis * a2;
    Vec wu2;
    const double f2 = depth(x2, &wu2);
    if (f2 > fx) {
      alpha = a2;
      x = x2;
      fx = f2;
      wu = wu2;
      step *= 1.15;
    } else {
      step *= 0.6;
    }
  }
  return {fx, x};
}

}  // namespace detail

// Largest inscribed ball. Planar polytopes solve the Chebyshev-center
// program exactly by enumerating active constraint triples.
inline InradiusResult inradius(const Body& body) {
  if (auto* b = dynamic_cast<const BallBody*>(&body)) return {b->radius(), b->center()};
  if (auto* e = dynamic_cast<const EllipsoidBody*>(&body)) return {e->axis_min(), e->center()};
  if (auto* p = dynamic_cast<const PolytopeBody*>(&body)) {
    if (p->dim() == 1) {
      Vec c(1);
      c[0] = 0.5 * (p->vertices()(0, 0) + p->vertices()(1, 0));
      return {0.5 * (p->vertices()(1, 0) - p->vertices()(0, 0)), c};
    }
    if (p->dim() == 2 && p->edge_normals().rows() >= 3) {
      const int m = int(p->edge_normals().rows());
      const Mat& N = p->edge_normals();
      const Vec& o = p->edge_offsets();
      double best = 0.0;
      Vec bc = Vec::Zero(2);
      for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
          for (int l = j + 1; l < m; ++l) {
            Mat M(3, 3);
            M << N(i, 0), N(i, 1), 1.0, N(j, 0), N(j, 1), 1.0, N(l, 0), N(l, 1), 1.0;
            Vec rhs(3);
            rhs << o[i], o[j], o[l];
            Eigen::FullPivLU<Mat> lu(M);
            if (!lu.isInvertible()) continue;
            Vec sol = lu.solve(rhs);
            const double r = sol[2];
            if (r <= best) continue;
            bool feasible = true;
            for (int q = 0; q < m && feasible; ++q) feasible = N.row(q).dot(sol.head(2)) + r <= o[q] + 1e-9;
            if (feasible) {
              best = r;
              bc = sol.head(2);
            }
          }
        }
      }
      if (best > 0.0) return {best, bc};
    }
  }
  return detail::inscribed_ball(body, Mat::Identity(body.dim(), body.dim()));
}

// Largest ball inscribed with center in the given subspace (columns form an
// orthonormal basis; zero columns means the center is pinned at the origin).
inline InradiusResult inradius_in_subspace(const Body& body, const Mat& basis) {
  if (int(basis.cols()) == body.dim()) return inradius(body);
  return detail::inscribed_ball(body, basis);
}

struct Hyperplane {
  Vec normal;     // unit
  double offset;  // plane is <x, normal> = offset
};

// Mid-slab hyperplane orthogonal to u: <x,u> = (h(u) - h(-u)) / 2.
inline Hyperplane midplane(const Body& body, const Vec& u) {
  const double n = u.norm();
  if (n < 1e-12) throw ZeroDirection("midplane direction is zero");
  Vec uh = u / n;
  return {uh, 0.5 * (body.support(uh).value - body.support(-uh).value)};
}

// polar(body) lives in body.hpp as make_polar; re-exported under the op name.
inline BodyPtr polar(const BodyPtr& body) { return make_polar(body); }

}  // namespace ehz
