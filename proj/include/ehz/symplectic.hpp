#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ehz/common.hpp"
#include "ehz/optimize.hpp"

namespace ehz {

// Orthonormal kernel basis of M via SVD, singular values below tol.
inline Mat kernel_basis(const Mat& M, double tol) {
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  int k = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] <= tol) ++k;
  return svd.matrixV().rightCols(k);
}

class SymplecticMap {
 public:
  explicit SymplecticMap(Mat m) : M_(std::move(m)) {
    if (M_.rows() != M_.cols() || M_.rows() % 2 != 0 || M_.rows() == 0)
      throw NotSymplectic("matrix must be square of even dimension");
    n_ = int(M_.rows()) / 2;
    const Mat J = standard_J(2 * n_);
    const double viol = (M_.transpose() * J * M_ - J).cwiseAbs().maxCoeff();
    if (viol > 1e-9) throw NotSymplectic("violation " + std::to_string(viol));
    Eigen::JacobiSVD<Mat> svdM(M_);
    norm_ = svdM.singularValues()(0);
    Eigen::JacobiSVD<Mat> svd(Mat(M_ - Mat::Identity(2 * n_, 2 * n_)), Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    int k = 0;
    for (int i = 0; i < sv.size(); ++i)
      if (sv[i] <= 1e-8 * norm_) ++k;
    e1_ = svd.matrixV().rightCols(k);
    e1_perp_ = svd.matrixV().leftCols(2 * n_ - k);
  }

  int n() const { return n_; }
  int dim() const { return 2 * n_; }
  const Mat& matrix() const { return M_; }
  double op_norm() const { return norm_; }
  const Mat& e1_basis() const { return e1_; }
  const Mat& e1_perp_basis() const { return e1_perp_; }

  Vec apply(const Vec& z) const { return M_ * z; }
  Vec project_e1(const Vec& z) const { return e1_.cols() ? Vec(e1_ * (e1_.transpose() * z)) : Vec(Vec::Zero(z.size())); }
  Vec project_e1_perp(const Vec& z) const { return z - project_e1(z); }
  bool is_identity() const { return (M_ - Mat::Identity(2 * n_, 2 * n_)).cwiseAbs().maxCoeff() < 1e-14; }

 private:
  Mat M_;
  Mat e1_, e1_perp_;
  int n_ = 0;
  double norm_ = 0.0;
};

inline SymplecticMap make_symplectic(const Mat& m) { return SymplecticMap(m); }

// (q, v) -> (A q, (A^T)^{-1} v)
inline SymplecticMap psi_from_A(const Mat& A) {
  if (A.rows() != A.cols() || A.rows() == 0) throw BadInput("psi_from_A needs a square matrix");
  Eigen::FullPivLU<Mat> lu(A.transpose());
  if (!lu.isInvertible()) throw SingularMatrix("psi_from_A: matrix is singular");
  const int n = int(A.rows());
  Mat M = Mat::Zero(2 * n, 2 * n);
  M.topLeftCorner(n, n) = A;
  M.bottomRightCorner(n, n) = lu.inverse();
  return SymplecticMap(M);
}

inline double g_psi(const SymplecticMap& psi, double s) { return (psi.matrix() - exp_sJ(psi.dim(), s)).determinant(); }

struct ZeroCandidate {
  std::string kind;  // sign_change | tangential | endpoint
  double bracket_lo = 0.0, bracket_hi = 0.0;
  double s = 0.0;
  double g_abs = 0.0;
  bool accepted = false;
};

struct SmallestZeroResult {
  double t = 0.0;
  bool found = false;
  double threshold = 0.0;
  std::vector<ZeroCandidate> candidates;
};

namespace detail {

// Smallest zero of f on (0, 2pi]: 4096-point grid, sign changes by bisection,
// even-multiplicity touching zeros by bisection on a central-difference
// derivative inside near-zero local minima of |f|.
inline SmallestZeroResult smallest_zero(const std::function<double(double)>& f, double abs_threshold) {
  constexpr int kGrid = 4096;
  const double step = 2.0 * kPi / kGrid;
  std::vector<double> s(kGrid + 1), g(kGrid + 1);
  double gmax = 0.0;
  for (int k = 0; k <= kGrid; ++k) {
    s[k] = step * k;
    g[k] = f(s[k]);
    gmax = std::max(gmax, std::abs(g[k]));
  }

  SmallestZeroResult res;
  res.threshold = abs_threshold;

  for (int k = 1; k < kGrid; ++k) {
    // Sign change strictly inside (0, 2pi].
    if (g[k] == 0.0 || (g[k] < 0.0) != (g[k + 1] < 0.0)) {
      ZeroCandidate c;
      c.kind = "sign_change";
      c.bracket_lo = s[k];
      c.bracket_hi = s[k + 1];
      c.s = g[k] == 0.0 ? s[k] : bisect(f, s[k], s[k + 1], 200);
      c.g_abs = std::abs(f(c.s));
      c.accepted = true;
      res.candidates.push_back(c);
      continue;
    }
    // Interior near-zero local minimum of |g|: touching zero candidate.
    if (k >= 2 && std::abs(g[k]) <= std::abs(g[k - 1]) && std::abs(g[k]) <= std::abs(g[k + 1]) &&
        std::abs(g[k]) < 1e-6 * (gmax + 1e-300) && (g[k - 1] < 0.0) == (g[k + 1] < 0.0)) {
      ZeroCandidate c;
      c.kind = "tangential";
      c.bracket_lo = s[k - 1];
      c.bracket_hi = s[k + 1];
      const double h = step / 1024.0;
      auto df = [&](double x) { return f(x + h) - f(x - h); };
      const double sgn = g[k + 1] < 0.0 ? -1.0 : 1.0;  // orient so the dip looks like a minimum
      double root;
      if (sgn * df(c.bracket_lo) < 0.0 && sgn * df(c.bracket_hi) > 0.0) {
        root = bisect(df, c.bracket_lo, c.bracket_hi, 200);
      } else {
        root = golden_min([&](double x) { return std::abs(f(x)); }, c.bracket_lo, c.bracket_hi, 160);
      }
      c.s = root;
      c.g_abs = std::abs(f(root));
      c.accepted = c.g_abs <= abs_threshold;
      res.candidates.push_back(c);
    }
  }

  {  // Endpoint 2pi, where a touching zero sits on the grid boundary.
    ZeroCandidate c;
    c.kind = "endpoint";
    c.bracket_lo = c.bracket_hi = 2.0 * kPi;
    c.s = 2.0 * kPi;
    c.g_abs = std::abs(g[kGrid]);
    c.accepted = c.g_abs <= abs_threshold;
    res.candidates.push_back(c);
  }

  for (const auto& c : res.candidates) {
    if (c.accepted && c.s > 1e-12 && (!res.found || c.s < res.t)) {
      res.found = true;
      res.t = c.s;
    }
  }
  return res;
}

}  // namespace detail

inline SmallestZeroResult t_psi_traced(const SymplecticMap& psi) {
  const double thr = 1e-10 * (1.0 + std::pow(psi.op_norm(), 2 * psi.n()));
  return detail::smallest_zero([&](double s) { return g_psi(psi, s); }, thr);
}

// Smallest s in (0, 2pi] with det(Psi - e^{sJ}) = 0.
inline double t_psi(const SymplecticMap& psi) {
  SmallestZeroResult r = t_psi_traced(psi);
  if (!r.found) throw NoZeroFound("no zero of the twist determinant in (0, 2pi]");
  return r.t;
}

// Same zero through the reduced n x n determinant
// det(I + (A^T)^{-1} A - cos(s) (A + (A^T)^{-1})).
inline SmallestZeroResult t_psi_A_det_traced(const Mat& A) {
  if (A.rows() != A.cols() || A.rows() == 0) throw BadInput("t_psi_A_det needs a square matrix");
  Eigen::FullPivLU<Mat> lu(A.transpose());
  if (!lu.isInvertible()) throw SingularMatrix("t_psi_A_det: matrix is singular");
  const Mat Ait = lu.inverse();
  const int n = int(A.rows());
  const Mat C0 = Mat::Identity(n, n) + Ait * A;
  const Mat C1 = A + Ait;
  auto f = [&](double s) { return Mat(C0 - std::cos(s) * C1).determinant(); };
  double fmax = 0.0;
  for (int k = 0; k <= 64; ++k) fmax = std::max(fmax, std::abs(f(2.0 * kPi * k / 64.0)));
  return detail::smallest_zero(f, 1e-10 * (1.0 + fmax));
}

inline double t_psi_A_det(const Mat& A) {
  SmallestZeroResult r = t_psi_A_det_traced(A);
  if (!r.found) throw NoZeroFound("no zero of the reduced determinant in (0, 2pi]");
  return r.t;
}

// Random symplectic matrix as a product of shear and block generators.
inline Mat random_symplectic(RngStream& rng, int n) {
  Mat A = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal() * 0.5 + (i == j ? 1.0 : 0.0);
  Eigen::FullPivLU<Mat> lu(A.transpose());
  if (!lu.isInvertible()) return random_symplectic(rng, n);
  Mat B = Mat::Zero(n, n), C = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      B(i, j) = B(j, i) = 0.4 * rng.normal();
      C(i, j) = C(j, i) = 0.4 * rng.normal();
    }
  const Mat I = Mat::Identity(n, n);
  Mat D = Mat::Zero(2 * n, 2 * n), S1 = Mat::Zero(2 * n, 2 * n), S2 = Mat::Zero(2 * n, 2 * n);
  D.topLeftCorner(n, n) = A;
  D.bottomRightCorner(n, n) = lu.inverse();
  S1.setIdentity();
  S1.topRightCorner(n, n) = B;
  S2.setIdentity();
  S2.bottomLeftCorner(n, n) = C;
  return D * S1 * S2;
}

inline Mat rotation2(double theta) {
  Mat R(2, 2);
  R << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return R;
}

}  // namespace ehz
