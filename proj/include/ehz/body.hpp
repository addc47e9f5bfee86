#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ehz/common.hpp"
#include "ehz/optimize.hpp"

namespace ehz {

struct SupportEval {
  double value = 0.0;
  Vec point;  // boundary point attaining the support value; subgradient of h
};

struct GaugeEval {
  double value = 0.0;
  Vec grad;  // 0-homogeneous (sub)gradient; <grad, z> = value
};

// Smoothing knobs for solver-facing support evaluations. power softens
// polytope vertex maxima, eps adds a small ball at the root of the body tree.
struct Soft {
  double power = 0.0;  // vertex softmax exponent, 0 = exact
  double eps = 0.0;    // radius of the additive smoothing ball
  double weps = 0.0;   // argument scale rounding the kink at w = 0
  bool exact() const { return power == 0.0 && eps == 0.0; }
};

class Body;
using BodyPtr = std::shared_ptr<const Body>;

class Body {
 public:
  virtual ~Body() = default;

  int dim() const { return dim_; }

  virtual SupportEval support(const Vec& w) const = 0;
  virtual GaugeEval gauge(const Vec& z) const = 0;

  // Power smoothing applied recursively through composite bodies.
  virtual SupportEval support_smoothed(const Vec& w, const Soft& soft) const {
    (void)soft;
    return support(w);
  }

  // Smoothed support as seen by the solver: recursive power smoothing plus
  // one additive eps-ball term at the root.
  SupportEval support_soft(const Vec& w, const Soft& soft) const {
    SupportEval e = support_smoothed(w, soft);
    if (soft.eps > 0.0) {
      const double s = std::sqrt(w.squaredNorm() + soft.weps * soft.weps);
      e.value += soft.eps * s;
      if (s > 0.0) e.point += (soft.eps / s) * w;
    }
    return e;
  }

  // Unit outward normals of the faces active at a boundary point z.
  virtual std::vector<Vec> boundary_normals(const Vec& z, double tol) const {
    (void)tol;
    Vec g = gauge(z).grad;
    const double n = g.norm();
    if (n < 1e-300) return {};
    return {Vec(g / n)};
  }

  // Support evaluations are differentiable in the direction (away from 0);
  // solvers anneal when this is false.
  virtual bool smooth() const = 0;
  virtual bool origin_interior() const = 0;
  virtual Vec interior_point() const = 0;
  virtual double circumradius() const = 0;
  virtual std::string describe() const = 0;

 protected:
  explicit Body(int d) : dim_(d) {
    if (d <= 0) throw BadInput("body dimension must be positive");
  }
  void check_dim(const Vec& v) const {
    if (int(v.size()) != dim_)
      throw BadInput("vector of size " + std::to_string(v.size()) + " passed to " + std::to_string(dim_) +
                     "-dimensional body");
  }
  int dim_;
};

namespace detail {

// j_K(z) through conic decompositions z = sum lambda_i x_i over support points
// of K, refined by cutting planes: the LP dual y is feasible for K's polar iff
// h_K(y) <= 1, otherwise the support point at y is the next column. The LP
// value is an upper bound and <z,y>/h_K(y) a lower bound, so the result is
// certified to the requested relative gap.
inline GaugeEval gauge_via_cuts(const Body& K, const Vec& z) {
  const int d = K.dim();
  if (z.norm() < 1e-300) return {0.0, Vec::Zero(d)};
  std::vector<Vec> pts;
  pts.reserve(2 * d + 160);
  for (int j = 0; j < d; ++j) {
    pts.push_back(K.support(Vec::Unit(d, j)).point);
    pts.push_back(K.support(Vec(-Vec::Unit(d, j))).point);
  }
  pts.push_back(K.support(z).point);
  double value = 0.0;
  Vec grad = Vec::Zero(d);
  for (int it = 0; it < 160; ++it) {
    Mat X(d, int(pts.size()));
    for (int i = 0; i < int(pts.size()); ++i) X.col(i) = pts[i];
    ConeLpResult lp = lp_min_cone(X, z);
    if (!lp.feasible) {
      if (lp.farkas.norm() < 1e-300) break;
      pts.push_back(K.support(lp.farkas).point);
      continue;
    }
    const double hy = K.support(lp.dual).value;
    value = lp.value;
    grad = hy > 0.0 ? Vec(lp.dual / hy) : lp.dual;
    if (hy <= 1.0 + 1e-10 || (hy > 0.0 && 1.0 - 1.0 / hy <= 1e-9)) return {value, Vec(lp.dual / std::max(hy, 1.0))};
    pts.push_back(K.support(lp.dual).point);
  }
  return {value, grad};
}

// Counterclockwise convex hull ring (Andrew chain); rows are points.
inline Mat convex_hull_2d(const Mat& pts) {
  std::vector<Eigen::Vector2d> p;
  p.reserve(pts.rows());
  for (int i = 0; i < pts.rows(); ++i) p.emplace_back(pts(i, 0), pts(i, 1));
  std::sort(p.begin(), p.end(), [](const auto& a, const auto& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
  p.erase(std::unique(p.begin(), p.end(), [](const auto& a, const auto& b) { return (a - b).norm() < 1e-12; }), p.end());
  const int m = int(p.size());
  if (m <= 2) {
    Mat ring(m, 2);
    for (int i = 0; i < m; ++i) ring.row(i) = p[i];
    return ring;
  }
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * m);
  int k = 0;
  for (int i = 0; i < m; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  for (int i = m - 2, lower = k + 1; i >= 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  Mat ring(int(hull.size()), 2);
  for (int i = 0; i < int(hull.size()); ++i) ring.row(i) = hull[i];
  double area2 = 0.0;
  for (int i = 0; i < ring.rows(); ++i) {
    const int j = (i + 1) % ring.rows();
    area2 += ring(i, 0) * ring(j, 1) - ring(j, 0) * ring(i, 1);
  }
  if (area2 < 0.0) ring = ring.colwise().reverse().eval();
  return ring;
}

}  // namespace detail

class BallBody final : public Body {
 public:
  BallBody(Vec c, double r) : Body(int(c.size())), c_(std::move(c)), r_(r) {
    if (!(r > 0.0) || !std::isfinite(r)) throw BadInput("ball radius must be positive and finite");
  }

  SupportEval support(const Vec& w) const override {
    check_dim(w);
    const double n = w.norm();
    if (n < 1e-300) return {0.0, c_};
    return {c_.dot(w) + r_ * n, Vec(c_ + (r_ / n) * w)};
  }

  GaugeEval gauge(const Vec& z) const override {
    check_dim(z);
    const double a = r_ * r_ - c_.squaredNorm();
    if (a <= 0.0) throw BodyWithoutInteriorOrigin("gauge of a ball whose interior misses the origin");
    if (z.norm() < 1e-300) return {0.0, Vec::Zero(dim_)};
    const double b = z.dot(c_);
    const double lam = (std::sqrt(b * b + a * z.squaredNorm()) - b) / a;
    Vec zc = z - lam * c_;
    return {lam, Vec(zc / (c_.dot(zc) + lam * r_ * r_))};
  }

  bool smooth() const override { return true; }
  bool origin_interior() const override { return c_.norm() < r_; }
  Vec interior_point() const override { return c_; }
  double circumradius() const override { return c_.norm() + r_; }
  std::string describe() const override { return "ball(d=" + std::to_string(dim_) + ")"; }

  const Vec& center() const { return c_; }
  double radius() const { return r_; }

 private:
  Vec c_;
  double r_;
};

// { x : (x-c)^T Q (x-c) <= 1 } with Q positive definite.
class EllipsoidBody final : public Body {
 public:
  EllipsoidBody(Vec c, Mat Q) : Body(int(c.size())), c_(std::move(c)), Q_(std::move(Q)) {
    if (Q_.rows() != dim_ || Q_.cols() != dim_) throw BadInput("ellipsoid matrix shape mismatch");
    if ((Q_ - Q_.transpose()).norm() > 1e-9 * (1.0 + Q_.norm())) throw BadInput("ellipsoid matrix must be symmetric");
    Eigen::LLT<Mat> llt(Q_);
    if (llt.info() != Eigen::Success) throw BadInput("ellipsoid matrix must be positive definite");
    Qinv_ = llt.solve(Mat::Identity(dim_, dim_));
    Eigen::SelfAdjointEigenSolver<Mat> es(Q_);
    axis_max_ = 1.0 / std::sqrt(es.eigenvalues().minCoeff());
    axis_min_ = 1.0 / std::sqrt(es.eigenvalues().maxCoeff());
  }

  SupportEval support(const Vec& w) const override {
    check_dim(w);
    Vec qw = Qinv_ * w;
    const double s = std::sqrt(w.dot(qw));
    if (s < 1e-300) return {0.0, c_};
    return {c_.dot(w) + s, Vec(c_ + qw / s)};
  }

  GaugeEval gauge(const Vec& z) const override {
    check_dim(z);
    const double a = 1.0 - c_.dot(Q_ * c_);
    if (a <= 0.0) throw BodyWithoutInteriorOrigin("gauge of an ellipsoid whose interior misses the origin");
    if (z.norm() < 1e-300) return {0.0, Vec::Zero(dim_)};
    Vec Qz = Q_ * z;
    const double b = Qz.dot(c_);
    const double m = Qz.dot(z);
    const double lam = (std::sqrt(b * b + a * m) - b) / a;
    Vec zc = z - lam * c_;
    Vec Qzc = Q_ * zc;
    return {lam, Vec(Qzc / (c_.dot(Qzc) + lam))};
  }

  bool smooth() const override { return true; }
  bool origin_interior() const override { return c_.dot(Q_ * c_) < 1.0; }
  Vec interior_point() const override { return c_; }
  double circumradius() const override { return c_.norm() + axis_max_; }
  std::string describe() const override { return "ellipsoid(d=" + std::to_string(dim_) + ")"; }

  const Vec& center() const { return c_; }
  const Mat& Q() const { return Q_; }
  const Mat& Qinv() const { return Qinv_; }
  double axis_min() const { return axis_min_; }
  double axis_max() const { return axis_max_; }

 private:
  Vec c_;
  Mat Q_, Qinv_;
  double axis_max_ = 0.0, axis_min_ = 0.0;
};

class PolytopeBody final : public Body {
 public:
  explicit PolytopeBody(const Mat& verts) : Body(int(verts.cols())) {
    if (verts.rows() < 1) throw BadInput("polytope needs at least one vertex");
    if (dim_ == 1) {
      const double a = verts.col(0).minCoeff(), b = verts.col(0).maxCoeff();
      ring_.resize(2, 1);
      ring_(0, 0) = a;
      ring_(1, 0) = b;
      origin_int_ = a < 0.0 && b > 0.0;
    } else if (dim_ == 2) {
      ring_ = detail::convex_hull_2d(verts);
      build_edges();
    } else {
      ring_ = verts;
      origin_int_ = conic_origin_interior();
    }
    radius_ = ring_.rowwise().norm().maxCoeff();
  }

  SupportEval support(const Vec& w) const override {
    check_dim(w);
    double m = -1e300;
    for (int i = 0; i < ring_.rows(); ++i) m = std::max(m, ring_.row(i).dot(w));
    const double thr = m - 1e-11 * (radius_ * w.norm() + 1e-300);
    Vec pt = Vec::Zero(dim_);
    int ties = 0;
    for (int i = 0; i < ring_.rows(); ++i) {
      if (ring_.row(i).dot(w) >= thr) {
        pt += ring_.row(i).transpose();
        ++ties;
      }
    }
    return {m, Vec(pt / double(ties))};
  }

  SupportEval support_smoothed(const Vec& w, const Soft& soft) const override {
    if (soft.power <= 0.0) return support(w);
    check_dim(w);
    const double P = soft.power;
    double amax = 0.0;
    std::vector<double> a(ring_.rows());
    for (int i = 0; i < ring_.rows(); ++i) {
      a[i] = std::max(0.0, ring_.row(i).dot(w));
      amax = std::max(amax, a[i]);
    }
    if (amax <= 0.0) return {0.0, Vec::Zero(dim_)};
    double s = 0.0;
    for (double ai : a) s += std::pow(ai / amax, P);
    const double m = amax * std::pow(s, 1.0 / P);
    Vec g = Vec::Zero(dim_);
    for (int i = 0; i < ring_.rows(); ++i)
      if (a[i] > 0.0) g += std::pow(a[i] / m, P - 1.0) * ring_.row(i).transpose();
    return {m, g};
  }

  GaugeEval gauge(const Vec& z) const override {
    check_dim(z);
    if (!origin_int_) throw BodyWithoutInteriorOrigin("gauge of a polytope whose interior misses the origin");
    if (z.norm() < 1e-300) return {0.0, Vec::Zero(dim_)};
    if (dim_ == 1) {
      const double a = ring_(0, 0), b = ring_(1, 0);
      Vec g(1);
      if (z[0] >= 0.0) {
        g[0] = 1.0 / b;
        return {z[0] / b, g};
      }
      g[0] = 1.0 / a;
      return {z[0] / a, g};
    }
    if (dim_ == 2) {
      double m = -1e300;
      for (int i = 0; i < normals_.rows(); ++i) m = std::max(m, normals_.row(i).dot(z) / offsets_[i]);
      const double thr = m - 1e-11 * (z.norm() / inoffset_ + 1e-300);
      Vec g = Vec::Zero(2);
      int ties = 0;
      for (int i = 0; i < normals_.rows(); ++i) {
        if (normals_.row(i).dot(z) / offsets_[i] >= thr) {
          g += normals_.row(i).transpose() / offsets_[i];
          ++ties;
        }
      }
      return {m, Vec(g / double(ties))};
    }
    // Exact conic LP over the vertex columns; the dual is a polar point
    // certifying the value, hence also a gauge subgradient.
    ConeLpResult lp = lp_min_cone(ring_.transpose(), z);
    if (!lp.feasible) throw BadInput("polytope gauge: point outside the vertex cone");
    return {lp.value, lp.dual};
  }

  std::vector<Vec> boundary_normals(const Vec& z, double tol) const override {
    if (dim_ != 2) return Body::boundary_normals(z, tol);
    std::vector<Vec> out;
    for (int i = 0; i < normals_.rows(); ++i)
      if (std::abs(normals_.row(i).dot(z) - offsets_[i]) <= tol) out.push_back(Vec(normals_.row(i).transpose()));
    return out;
  }

  bool smooth() const override { return false; }
  bool origin_interior() const override { return origin_int_; }
  Vec interior_point() const override { return ring_.colwise().mean(); }
  double circumradius() const override { return radius_; }
  std::string describe() const override {
    return "polytope(d=" + std::to_string(dim_) + ", " + std::to_string(ring_.rows()) + " vertices)";
  }

  const Mat& vertices() const { return ring_; }
  // 2-D only: unit outward edge normals and offsets, <x, n_i> <= o_i on the body.
  const Mat& edge_normals() const { return normals_; }
  const Vec& edge_offsets() const { return offsets_; }

 private:
  void build_edges() {
    const int m = int(ring_.rows());
    if (m < 3) {
      origin_int_ = false;
      normals_.resize(0, 2);
      offsets_.resize(0);
      return;
    }
    normals_.resize(m, 2);
    offsets_.resize(m);
    origin_int_ = true;
    inoffset_ = 1e300;
    for (int i = 0; i < m; ++i) {
      const int j = (i + 1) % m;
      const double ex = ring_(j, 0) - ring_(i, 0), ey = ring_(j, 1) - ring_(i, 1);
      const double el = std::hypot(ex, ey);
      normals_(i, 0) = ey / el;
      normals_(i, 1) = -ex / el;
      offsets_[i] = normals_.row(i).dot(ring_.row(i));
      if (offsets_[i] <= 0.0) origin_int_ = false;
      if (origin_int_) inoffset_ = std::min(inoffset_, offsets_[i]);
    }
    if (!origin_int_) inoffset_ = 1.0;
  }

  // 0 interior to the hull iff the vertices positively span, i.e. every
  // signed axis direction lies in their conic hull.
  bool conic_origin_interior() const {
    for (int j = 0; j < dim_; ++j)
      for (double s : {1.0, -1.0})
        if (!lp_min_cone(ring_.transpose(), Vec(s * Vec::Unit(dim_, j))).feasible) return false;
    return true;
  }

  Mat ring_;      // hull ring (CCW) in 2-D, sorted pair in 1-D, raw rows otherwise
  Mat normals_;   // 2-D unit outward edge normals
  Vec offsets_;   // matching signed offsets about the origin
  double inoffset_ = 1.0;
  double radius_ = 0.0;
  bool origin_int_ = false;
};

// Support-level p-sum: h = (h_L^p + h_R^p)^{1/p}. Children must contain the
// origin in their interiors so the powers are well-defined.
class PSumBody final : public Body {
 public:
  PSumBody(double p, BodyPtr L, BodyPtr R) : Body(L ? L->dim() : 1), p_(p), L_(std::move(L)), R_(std::move(R)) {
    if (!(p_ >= 1.0) || !std::isfinite(p_)) throw InvalidExponent("p-sum exponent must satisfy p >= 1");
    if (L_->dim() != R_->dim()) throw BadInput("p-sum of bodies of different dimensions");
    if (!L_->origin_interior() || !R_->origin_interior())
      throw BodyWithoutInteriorOrigin("p-sum requires both summands to contain the origin");
  }

  SupportEval support(const Vec& w) const override { return combine(L_->support(w), R_->support(w)); }

  SupportEval support_smoothed(const Vec& w, const Soft& soft) const override {
    return combine(L_->support_smoothed(w, soft), R_->support_smoothed(w, soft));
  }

  GaugeEval gauge(const Vec& z) const override {
    check_dim(z);
    return detail::gauge_via_cuts(*this, z);
  }

  // A smooth summand rounds the boundary, but the support gradient still
  // jumps wherever a polytope summand switches vertices.
  bool smooth() const override { return L_->smooth() && R_->smooth(); }
  bool origin_interior() const override { return true; }
  Vec interior_point() const override { return Vec::Zero(dim_); }
  double circumradius() const override {
    return std::pow(std::pow(L_->circumradius(), p_) + std::pow(R_->circumradius(), p_), 1.0 / p_);
  }
  std::string describe() const override { return "psum(p=" + std::to_string(p_) + ")"; }

  double p() const { return p_; }
  const BodyPtr& left() const { return L_; }
  const BodyPtr& right() const { return R_; }

 private:
  SupportEval combine(const SupportEval& a, const SupportEval& b) const {
    if (p_ == 1.0) return {a.value + b.value, Vec(a.point + b.point)};
    const double v = std::pow(std::pow(a.value, p_) + std::pow(b.value, p_), 1.0 / p_);
    if (v < 1e-300) return {0.0, Vec::Zero(dim_)};
    Vec g = std::pow(a.value / v, p_ - 1.0) * a.point + std::pow(b.value / v, p_ - 1.0) * b.point;
    return {v, g};
  }

  double p_;
  BodyPtr L_, R_;
};

class ProductBody final : public Body {
 public:
  ProductBody(BodyPtr L, BodyPtr R) : Body(L->dim() + R->dim()), L_(std::move(L)), R_(std::move(R)) {}

  SupportEval support(const Vec& w) const override {
    check_dim(w);
    SupportEval a = L_->support(w.head(L_->dim()));
    SupportEval b = R_->support(w.tail(R_->dim()));
    Vec pt(dim_);
    pt << a.point, b.point;
    return {a.value + b.value, pt};
  }

  SupportEval support_smoothed(const Vec& w, const Soft& soft) const override {
    check_dim(w);
    SupportEval a = L_->support_smoothed(w.head(L_->dim()), soft);
    SupportEval b = R_->support_smoothed(w.tail(R_->dim()), soft);
    Vec pt(dim_);
    pt << a.point, b.point;
    return {a.value + b.value, pt};
  }

  GaugeEval gauge(const Vec& z) const override {
    check_dim(z);
    GaugeEval a = L_->gauge(z.head(L_->dim()));
    GaugeEval b = R_->gauge(z.tail(R_->dim()));
    Vec ga = Vec::Zero(dim_), gb = Vec::Zero(dim_);
    ga.head(L_->dim()) = a.grad;
    gb.tail(R_->dim()) = b.grad;
    const double tol = 1e-12 * (1.0 + std::max(std::abs(a.value), std::abs(b.value)));
    if (std::abs(a.value - b.value) <= tol) return {std::max(a.value, b.value), Vec(0.5 * (ga + gb))};
    return a.value > b.value ? GaugeEval{a.value, ga} : GaugeEval{b.value, gb};
  }

  std::vector<Vec> boundary_normals(const Vec& z, double tol) const override {
    std::vector<Vec> out;
    const GaugeEval a = L_->gauge(z.head(L_->dim()));
    const GaugeEval b = R_->gauge(z.tail(R_->dim()));
    if (a.value >= 1.0 - tol) {
      for (const Vec& n : L_->boundary_normals(z.head(L_->dim()) / a.value, tol)) {
        Vec e = Vec::Zero(dim_);
        e.head(L_->dim()) = n;
        out.push_back(e);
      }
    }
    if (b.value >= 1.0 - tol) {
      for (const Vec& n : R_->boundary_normals(z.tail(R_->dim()) / b.value, tol)) {
        Vec e = Vec::Zero(dim_);
        e.tail(R_->dim()) = n;
        out.push_back(e);
      }
    }
    return out;
  }

  bool smooth() const override { return false; }
  bool origin_interior() const override { return L_->origin_interior() && R_->origin_interior(); }
  Vec interior_point() const override {
    Vec p(dim_);
    p << L_->interior_point(), R_->interior_point();
    return p;
  }
  double circumradius() const override { return std::hypot(L_->circumradius(), R_->circumradius()); }
  std::string describe() const override { return "product(" + L_->describe() + " x " + R_->describe() + ")"; }

  const BodyPtr& left() const { return L_; }
  const BodyPtr& right() const { return R_; }

 private:
  BodyPtr L_, R_;
};

class TranslateBody final : public Body {
 public:
  TranslateBody(BodyPtr base, Vec t) : Body(base->dim()), base_(std::move(base)), t_(std::move(t)) {
    if (int(t_.size()) != dim_) throw BadInput("translation vector dimension mismatch");
  }

  SupportEval support(const Vec& w) const override {
    SupportEval e = base_->support(w);
    return {e.value + t_.dot(w), Vec(e.point + t_)};
  }

  SupportEval support_smoothed(const Vec& w, const Soft& soft) const override {
    SupportEval e = base_->support_smoothed(w, soft);
    return {e.value + t_.dot(w), Vec(e.point + t_)};
  }

  GaugeEval gauge(const Vec& z) const override {
    check_dim(z);
    if (base_->gauge(-t_).value >= 1.0) throw BodyWithoutInteriorOrigin("gauge of a translate missing the origin");
    if (z.norm() < 1e-300) return {0.0, Vec::Zero(dim_)};
    auto phi = [&](double lam) { return base_->gauge(Vec(z - lam * t_)).value - lam; };
    double hi = std::max(1.0, 2.0 * base_->gauge(z).value);
    int grow = 0;
    while (phi(hi) > 0.0) {
      hi *= 2.0;
      if (++grow > 60) throw Error("translate gauge: failed to bracket the boundary crossing");
    }
    const double lam = bisect(phi, 0.0, hi, 120);
    Vec g0 = base_->gauge(Vec(z - lam * t_)).grad;
    const double den = std::max(1e-12, 1.0 + g0.dot(t_));
    return {lam, Vec(g0 / den)};
  }

  std::vector<Vec> boundary_normals(const Vec& z, double tol) const override {
    return base_->boundary_normals(Vec(z - t_), tol);
  }

  bool smooth() const override { return base_->smooth(); }
  bool origin_interior() const override { return base_->gauge(-t_).value < 1.0; }
  Vec interior_point() const override { return base_->interior_point() + t_; }
  double circumradius() const override { return base_->circumradius() + t_.norm(); }
  std::string describe() const override { return "translate(" + base_->describe() + ")"; }

  const BodyPtr& base() const { return base_; }
  const Vec& shift() const { return t_; }

 private:
  BodyPtr base_;
  Vec t_;
};

// Image M K of a body under an invertible matrix.
class LinearBody final : public Body {
 public:
  LinearBody(BodyPtr base, Mat M, Mat Minv)
      : Body(base->dim()), base_(std::move(base)), M_(std::move(M)), Minv_(std::move(Minv)) {}

  SupportEval support(const Vec& w) const override {
    SupportEval e = base_->support(M_.transpose() * w);
    return {e.value, Vec(M_ * e.point)};
  }

  SupportEval support_smoothed(const Vec& w, const Soft& soft) const override {
    SupportEval e = base_->support_smoothed(M_.transpose() * w, soft);
    return {e.value, Vec(M_ * e.point)};
  }

  GaugeEval gauge(const Vec& z) const override {
    check_dim(z);
    GaugeEval g = base_->gauge(Minv_ * z);
    return {g.value, Vec(Minv_.transpose() * g.grad)};
  }

  std::vector<Vec> boundary_normals(const Vec& z, double tol) const override {
    std::vector<Vec> out;
    for (const Vec& n : base_->boundary_normals(Minv_ * z, tol)) {
      Vec m = Minv_.transpose() * n;
      const double nn = m.norm();
      if (nn > 1e-300) out.push_back(Vec(m / nn));
    }
    return out;
  }

  bool smooth() const override { return base_->smooth(); }
  bool origin_interior() const override { return base_->origin_interior(); }
  Vec interior_point() const override { return M_ * base_->interior_point(); }
  double circumradius() const override { return M_.norm() * base_->circumradius(); }
  std::string describe() const override { return "linear(" + base_->describe() + ")"; }

  const BodyPtr& base() const { return base_; }
  const Mat& matrix() const { return M_; }

 private:
  BodyPtr base_;
  Mat M_, Minv_;
};

// Polar dual; support and gauge swap roles with the base body.
class PolarBody final : public Body {
 public:
  explicit PolarBody(BodyPtr base) : Body(base->dim()), base_(std::move(base)) {
    if (!base_->origin_interior()) throw BodyWithoutInteriorOrigin("polar of a body whose interior misses the origin");
    double r0 = 1e300;
    for (const Vec& u : sphere_grid(dim_, dim_ <= 2 ? 256 : 512)) r0 = std::min(r0, base_->support(u).value);
    radius_ = 1.25 / std::max(r0, 1e-12);
  }

  SupportEval support(const Vec& w) const override {
    GaugeEval g = base_->gauge(w);
    return {g.value, g.grad};
  }

  GaugeEval gauge(const Vec& z) const override {
    SupportEval e = base_->support(z);
    return {e.value, e.point};
  }

  bool smooth() const override { return false; }
  bool origin_interior() const override { return true; }
  Vec interior_point() const override { return Vec::Zero(dim_); }
  double circumradius() const override { return radius_; }
  std::string describe() const override { return "polar(" + base_->describe() + ")"; }

  const BodyPtr& base() const { return base_; }

 private:
  BodyPtr base_;
  double radius_ = 0.0;
};

// Fallback intersection: exact gauge (max), support by inf-convolution descent.
class IntersectionBody final : public Body {
 public:
  IntersectionBody(BodyPtr L, BodyPtr R) : Body(L->dim()), L_(std::move(L)), R_(std::move(R)) {
    if (L_->dim() != R_->dim()) throw BadInput("intersection of bodies of different dimensions");
    if (!L_->origin_interior() || !R_->origin_interior())
      throw BodyWithoutInteriorOrigin("generic intersection requires both bodies to contain the origin");
  }

  SupportEval support(const Vec& w) const override {
    check_dim(w);
    if (w.norm() < 1e-300) return {0.0, Vec::Zero(dim_)};
    Vec w1 = 0.5 * w;
    double best = 1e300;
    Vec best_w1 = w1;
    for (int it = 0; it < 200; ++it) {
      SupportEval a = L_->support(w1);
      SupportEval b = R_->support(Vec(w - w1));
      const double v = a.value + b.value;
      if (v < best) {
        best = v;
        best_w1 = w1;
      }
      Vec g = a.point - b.point;
      const double gn = g.norm();
      if (gn < 1e-14) break;
      w1 -= (0.25 * w.norm() / ((it + 1.0) * gn)) * g;
    }
    SupportEval a = L_->support(best_w1);
    SupportEval b = R_->support(Vec(w - best_w1));
    return {a.value + b.value, Vec(0.5 * (a.point + b.point))};
  }

  GaugeEval gauge(const Vec& z) const override {
    GaugeEval a = L_->gauge(z);
    GaugeEval b = R_->gauge(z);
    const double tol = 1e-12 * (1.0 + std::max(std::abs(a.value), std::abs(b.value)));
    if (std::abs(a.value - b.value) <= tol) return {std::max(a.value, b.value), Vec(0.5 * (a.grad + b.grad))};
    return a.value > b.value ? a : b;
  }

  bool smooth() const override { return false; }
  bool origin_interior() const override { return true; }
  Vec interior_point() const override { return Vec::Zero(dim_); }
  double circumradius() const override { return std::min(L_->circumradius(), R_->circumradius()); }
  std::string describe() const override { return "intersection(" + L_->describe() + ", " + R_->describe() + ")"; }

  const BodyPtr& left() const { return L_; }
  const BodyPtr& right() const { return R_; }

 private:
  BodyPtr L_, R_;
};

inline BodyPtr make_ball(Vec center, double radius) { return std::make_shared<BallBody>(std::move(center), radius); }

inline BodyPtr make_ellipsoid(Vec center, Mat Q) {
  return std::make_shared<EllipsoidBody>(std::move(center), std::move(Q));
}

inline BodyPtr make_polytope(const Mat& vertices) { return std::make_shared<PolytopeBody>(vertices); }

inline BodyPtr make_psum(double p, BodyPtr left, BodyPtr right) {
  return std::make_shared<PSumBody>(p, std::move(left), std::move(right));
}

inline BodyPtr make_product(BodyPtr left, BodyPtr right) {
  return std::make_shared<ProductBody>(std::move(left), std::move(right));
}

inline BodyPtr make_translate(BodyPtr body, const Vec& t) {
  if (int(t.size()) != body->dim()) throw BadInput("translation vector dimension mismatch");
  if (t.norm() == 0.0) return body;
  if (auto* b = dynamic_cast<const BallBody*>(body.get())) return make_ball(b->center() + t, b->radius());
  if (auto* e = dynamic_cast<const EllipsoidBody*>(body.get())) return make_ellipsoid(e->center() + t, e->Q());
  if (auto* p = dynamic_cast<const PolytopeBody*>(body.get())) {
    Mat v = p->vertices();
    v.rowwise() += t.transpose();
    return make_polytope(v);
  }
  if (auto* pr = dynamic_cast<const ProductBody*>(body.get())) {
    return make_product(make_translate(pr->left(), t.head(pr->left()->dim())),
                        make_translate(pr->right(), t.tail(pr->right()->dim())));
  }
  if (auto* tr = dynamic_cast<const TranslateBody*>(body.get())) return make_translate(tr->base(), Vec(tr->shift() + t));
  return std::make_shared<TranslateBody>(std::move(body), t);
}

inline BodyPtr make_linear(const Mat& M, BodyPtr body) {
  if (M.rows() != M.cols() || int(M.cols()) != body->dim()) throw BadInput("linear image needs a square matrix matching the body dimension");
  Eigen::FullPivLU<Mat> lu(M);
  if (!lu.isInvertible()) throw SingularMatrix("linear image matrix is singular");
  const Mat Minv = lu.inverse();
  if (auto* b = dynamic_cast<const BallBody*>(body.get())) {
    const double r2 = b->radius() * b->radius();
    return make_ellipsoid(M * b->center(), Mat((Minv.transpose() * Minv) / r2));
  }
  if (auto* e = dynamic_cast<const EllipsoidBody*>(body.get())) {
    return make_ellipsoid(M * e->center(), Mat(Minv.transpose() * e->Q() * Minv));
  }
  if (auto* p = dynamic_cast<const PolytopeBody*>(body.get())) return make_polytope(Mat(p->vertices() * M.transpose()));
  if (auto* pr = dynamic_cast<const ProductBody*>(body.get())) {
    const int dl = pr->left()->dim(), dr = pr->right()->dim();
    if (M.topRightCorner(dl, dr).norm() == 0.0 && M.bottomLeftCorner(dr, dl).norm() == 0.0) {
      return make_product(make_linear(M.topLeftCorner(dl, dl), pr->left()),
                          make_linear(M.bottomRightCorner(dr, dr), pr->right()));
    }
  }
  return std::make_shared<LinearBody>(std::move(body), M, Minv);
}

inline BodyPtr make_polar(BodyPtr body) {
  if (!body->origin_interior()) throw BodyWithoutInteriorOrigin("polar of a body whose interior misses the origin");
  auto ellipsoid_polar = [](const Vec& c, const Mat& Q, int d) {
    Eigen::LLT<Mat> llt(Q);
    Mat A = llt.solve(Mat::Identity(d, d)) - c * c.transpose();
    Eigen::LLT<Mat> lltA((A + A.transpose()) / 2.0);
    Vec y0 = -lltA.solve(c);
    const double beta = 1.0 - c.dot(y0);  // 1 + c^T A^{-1} c
    return make_ellipsoid(y0, Mat(((A + A.transpose()) / 2.0) / beta));
  };
  if (auto* b = dynamic_cast<const BallBody*>(body.get())) {
    if (b->center().norm() == 0.0) return make_ball(Vec::Zero(b->dim()), 1.0 / b->radius());
    return ellipsoid_polar(b->center(), Mat(Mat::Identity(b->dim(), b->dim()) / (b->radius() * b->radius())), b->dim());
  }
  if (auto* e = dynamic_cast<const EllipsoidBody*>(body.get())) return ellipsoid_polar(e->center(), e->Q(), e->dim());
  if (auto* p = dynamic_cast<const PolytopeBody*>(body.get())) {
    if (p->dim() == 1) {
      Mat v(2, 1);
      v(0, 0) = 1.0 / p->vertices()(0, 0);
      v(1, 0) = 1.0 / p->vertices()(1, 0);
      return make_polytope(v);
    }
    if (p->dim() == 2) {
      const Mat& N = p->edge_normals();
      const Vec& o = p->edge_offsets();
      Mat dual(N.rows(), 2);
      for (int i = 0; i < N.rows(); ++i) dual.row(i) = N.row(i) / o[i];
      return make_polytope(dual);
    }
  }
  if (auto* pp = dynamic_cast<const PolarBody*>(body.get())) return pp->base();
  return std::make_shared<PolarBody>(std::move(body));
}

// Exact 2-D ring when the body reduces to a planar polygon.
inline std::optional<Mat> try_as_polygon(const BodyPtr& body) {
  if (auto* p = dynamic_cast<const PolytopeBody*>(body.get()); p && p->dim() == 2 && p->vertices().rows() >= 3)
    return p->vertices();
  return std::nullopt;
}

inline BodyPtr make_intersection(BodyPtr left, BodyPtr right) {
  if (left->dim() != right->dim()) throw BadInput("intersection of bodies of different dimensions");
  auto lp = try_as_polygon(left);
  auto rp = try_as_polygon(right);
  if (lp && rp) {
    // Sutherland-Hodgman clip of the left ring by the right ring's halfplanes.
    std::vector<Eigen::Vector2d> poly;
    for (int i = 0; i < lp->rows(); ++i) poly.emplace_back((*lp)(i, 0), (*lp)(i, 1));
    const Mat rr = *rp;
    const int m = int(rr.rows());
    for (int e = 0; e < m && !poly.empty(); ++e) {
      const Eigen::Vector2d a = rr.row(e), b = rr.row((e + 1) % m);
      const Eigen::Vector2d n(b.y() - a.y(), a.x() - b.x());  // outward for CCW ring
      const double off = n.dot(a);
      std::vector<Eigen::Vector2d> next;
      const int k = int(poly.size());
      for (int i = 0; i < k; ++i) {
        const Eigen::Vector2d P = poly[i], Q = poly[(i + 1) % k];
        const double dp = n.dot(P) - off, dq = n.dot(Q) - off;
        const bool inP = dp <= 1e-12, inQ = dq <= 1e-12;
        if (inP) next.push_back(P);
        if (inP != inQ) next.push_back(P + (dp / (dp - dq)) * (Q - P));
      }
      poly = std::move(next);
    }
    Mat out(int(poly.size()), 2);
    for (int i = 0; i < int(poly.size()); ++i) out.row(i) = poly[i];
    if (out.rows() == 0) throw BadInput("intersection of the two polygons is empty");
    return make_polytope(out);
  }
  return std::make_shared<IntersectionBody>(std::move(left), std::move(right));
}

}  // namespace ehz
