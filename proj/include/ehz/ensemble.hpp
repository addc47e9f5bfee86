#pragma once

#include <cmath>

#include "ehz/body.hpp"
#include "ehz/common.hpp"

namespace ehz {

inline Mat random_orthogonal(RngStream& rng, int n) {
  Mat G(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) G(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ();
  Mat R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < n; ++i)
    if (R(i, i) < 0.0) Q.col(i) *= -1.0;
  return Q;
}

inline Mat random_invertible(RngStream& rng, int n, double min_cond_ratio = 0.05) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
    Eigen::JacobiSVD<Mat> svd(A);
    const auto& sv = svd.singularValues();
    if (sv(n - 1) > min_cond_ratio * sv(0)) return A;
  }
  throw BadInput("random_invertible: could not draw a well-conditioned matrix");
}

// Convex polygon with origin in its interior: hull of random annulus points,
// recentered at the vertex centroid.
inline BodyPtr random_polygon(RngStream& rng, int points = 9) {
  Mat pts(points, 2);
  for (int i = 0; i < points; ++i) {
    const double ang = rng.uniform(0.0, 2.0 * kPi);
    const double rad = rng.uniform(0.5, 1.5);
    pts(i, 0) = rad * std::cos(ang);
    pts(i, 1) = rad * std::sin(ang);
  }
  Mat ring = detail::convex_hull_2d(pts);
  const Vec centroid = ring.colwise().mean();
  ring.rowwise() -= centroid.transpose();
  return make_polytope(ring);
}

inline BodyPtr random_ellipsoid(RngStream& rng, int dim) {
  const Mat R = random_orthogonal(rng, dim);
  Mat D = Mat::Zero(dim, dim);
  for (int i = 0; i < dim; ++i) {
    const double axis = rng.uniform(0.6, 1.8);
    D(i, i) = 1.0 / (axis * axis);
  }
  return make_ellipsoid(Vec::Zero(dim), Mat(R * D * R.transpose()));
}

// Shell points plus a cross-polytope core, so the origin is interior by construction.
inline BodyPtr random_shell_polytope(RngStream& rng, int dim, int shell_points = 16, double core = 0.6) {
  Mat pts(shell_points + 2 * dim, dim);
  for (int i = 0; i < shell_points; ++i) {
    Vec u = rng.normal_vec(dim);
    u.normalize();
    pts.row(i) = (rng.uniform(0.9, 1.3) * u).transpose();
  }
  for (int i = 0; i < dim; ++i) {
    pts.row(shell_points + 2 * i).setZero();
    pts.row(shell_points + 2 * i + 1).setZero();
    pts(shell_points + 2 * i, i) = core;
    pts(shell_points + 2 * i + 1, i) = -core;
  }
  return make_polytope(pts);
}

inline BodyPtr random_body_2d(RngStream& rng) {
  return rng.uniform(0.0, 1.0) < 0.5 ? random_polygon(rng, rng.uniform_int(4, 11)) : random_ellipsoid(rng, 2);
}

}  // namespace ehz
