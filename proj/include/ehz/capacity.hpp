#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ehz/body.hpp"
#include "ehz/common.hpp"
#include "ehz/geometry.hpp"
#include "ehz/symplectic.hpp"

namespace ehz {

// Twisted discrete loop: rows are x_0..x_{N-1}, the closing node is
// x_N := Psi x_0. Base-point and normalization constraints are the
// solver's business, not the type's; a carrier violates them on purpose.
struct DiscretePath {
  Mat nodes;
  SymplecticMap psi;

  DiscretePath(Mat nodes_, SymplecticMap psi_) : nodes(std::move(nodes_)), psi(std::move(psi_)) {
    if (nodes.rows() < 16) throw BadInput("discrete path needs at least 16 nodes");
    if (int(nodes.cols()) != psi.dim())
      throw BadInput("path nodes have dimension " + std::to_string(nodes.cols()) + ", map expects " +
                     std::to_string(psi.dim()));
  }

  int n_nodes() const { return int(nodes.rows()); }
  int dim() const { return int(nodes.cols()); }

  // node(N) is the implied closing node Psi x_0.
  Vec node(int k) const {
    if (k == n_nodes()) return psi.apply(nodes.row(0).transpose());
    return nodes.row(k).transpose();
  }
};

// 1/2 sum <-J(x_{k+1}-x_k), (x_k+x_{k+1})/2>, which telescopes to the
// discrete shoelace 1/2 sum x_{k+1}^T J x_k. Exact for polygonal loops.
inline double action(const DiscretePath& path) {
  const int N = path.n_nodes();
  double a = 0.0;
  Vec xk = path.node(0);
  for (int k = 0; k < N; ++k) {
    Vec xn = path.node(k + 1);
    a += 0.5 * xn.dot(applyJ(xk));
    xk = std::move(xn);
  }
  return a;
}

// sum_k dt (H^*(-J xdot_k))^{p/2} = (1/2^p) N^{p-1} sum_k h(-J dx_k)^p
// with forward differences. Degree-p homogeneous in the path.
inline double i_p_functional(const DiscretePath& path, const Body& body, double p) {
  if (p < 1.0) throw InvalidExponent("i_p functional needs p >= 1");
  if (body.dim() != path.dim()) throw BadInput("body and path dimensions differ");
  if (!body.origin_interior()) throw BodyWithoutInteriorOrigin("i_p functional needs the origin inside the body");
  const int N = path.n_nodes();
  double s = 0.0;
  Vec xk = path.node(0);
  for (int k = 0; k < N; ++k) {
    Vec xn = path.node(k + 1);
    s += std::pow(body.support(apply_negJ(Vec(xn - xk))).value, p);
    xk = std::move(xn);
  }
  return s * std::pow(0.5, p) * std::pow(double(N), p - 1.0);
}

struct CapacityConfig {
  double p = 2.0;
  int n_nodes = 256;
  int restarts = 16;
  int max_iter = 400;
  std::uint64_t seed = 0;
  bool refine_error_estimate = false;
};

struct CapacityResult {
  double value = 0.0;
  DiscretePath carrier;    // on the boundary of the input body, original coordinates
  DiscretePath minimizer;  // A(u)=1 representative over the recentered body
  double multiplier = 0.0;
  Vec a0;
  Vec fix_shift;  // fixed interior point used as the working origin
  bool converged = false;
  int restarts_used = 0;
  long iterations = 0;
  double rel_error = 3e-3;
  std::map<std::string, double> residuals;

  CapacityResult(DiscretePath carrier_, DiscretePath minimizer_)
      : carrier(std::move(carrier_)), minimizer(std::move(minimizer_)) {}
};

namespace detail {

// I2/A machinery on the node matrix. All evaluations share one pass over
// the edges; gradients follow the forward-difference/trapezoid pairing.
class QuotientEngine {
 public:
  QuotientEngine(const Body& body, const SymplecticMap& psi) : D_(body), psi_(psi), N_(0), d_(psi.dim()) {
    PsiTJ_ = psi_.matrix().transpose() * standard_J(d_);
  }

  void set_nodes_count(int N) { N_ = N; }
  void set_soft(const Soft& s) { soft_ = s; }
  const Soft& soft() const { return soft_; }

  double act(const Mat& X) const {
    double a = 0.0;
    Vec xk = X.row(0).transpose();
    for (int k = 0; k < N_; ++k) {
      Vec xn = k + 1 == N_ ? psi_.apply(X.row(0).transpose()) : Vec(X.row(k + 1).transpose());
      a += 0.5 * xn.dot(applyJ(xk));
      xk = std::move(xn);
    }
    return a;
  }

  // Smoothed I2 at the current soft stage.
  double ip2(const Mat& X) const {
    double s = 0.0;
    Vec xk = X.row(0).transpose();
    for (int k = 0; k < N_; ++k) {
      Vec xn = k + 1 == N_ ? psi_.apply(X.row(0).transpose()) : Vec(X.row(k + 1).transpose());
      const double h = D_.support_soft(apply_negJ(Vec(xn - xk)), soft_).value;
      s += h * h;
      xk = std::move(xn);
    }
    return 0.25 * double(N_) * s;
  }

  double quotient(const Mat& X, double* a_out) const {
    const double a = act(X);
    if (a_out) *a_out = a;
    if (a <= 0.0) return std::numeric_limits<double>::infinity();
    return ip2(X) / a;
  }

  // Q, A and the quotient gradient in one pass.
  double grad(const Mat& X, Mat& G, double& A) const {
    Mat gi = Mat::Zero(N_, d_);
    Mat ga = Mat::Zero(N_, d_);
    double I = 0.0;
    A = 0.0;
    std::vector<Vec> st(N_);
    for (int k = 0; k < N_; ++k) {
      Vec xk = X.row(k).transpose();
      Vec xn = k + 1 == N_ ? psi_.apply(X.row(0).transpose()) : Vec(X.row(k + 1).transpose());
      A += 0.5 * xn.dot(applyJ(xk));
      SupportEval e = D_.support_soft(apply_negJ(Vec(xn - xk)), soft_);
      I += e.value * e.value;
      st[k] = e.value * e.point;
    }
    I *= 0.25 * double(N_);
    const double half_n = 0.5 * double(N_);
    for (int m = 0; m < N_; ++m) {
      Vec gim, gam;
      if (m == 0) {
        gim = half_n * (PsiTJ_ * st[N_ - 1] - applyJ(st[0]));
        gam = 0.5 * (PsiTJ_ * X.row(N_ - 1).transpose() - applyJ(Vec(X.row(1).transpose())));
      } else {
        gim = half_n * (applyJ(st[m - 1]) - applyJ(st[m]));
        Vec xnext = m + 1 == N_ ? psi_.apply(X.row(0).transpose()) : Vec(X.row(m + 1).transpose());
        gam = 0.5 * applyJ(Vec(X.row(m - 1).transpose() - xnext));
      }
      gi.row(m) = gim.transpose();
      ga.row(m) = gam.transpose();
    }
    const double Q = I / A;
    G = (gi - Q * ga) / A;
    // Keep the step tangent to the base-point constraint plane.
    G.row(0) = psi_.project_e1_perp(G.row(0).transpose()).transpose();
    return Q;
  }

 private:
  const Body& D_;
  const SymplecticMap& psi_;
  int N_, d_;
  Mat PsiTJ_;
  Soft soft_;
};

struct StageOutcome {
  double value = std::numeric_limits<double>::infinity();
  long iterations = 0;
  bool settled = false;  // stopped by stationarity, not by the iteration cap
};

inline double dotm(const Mat& a, const Mat& b) { return (a.array() * b.array()).sum(); }

// Limited-memory quasi-Newton descent of the smoothed quotient with a
// nonmonotone acceptance rule; iterates stay A(x)=1-normalized and based
// in E1-perp. Curvature pairs live on the normalized slice.
inline StageOutcome run_stage(QuotientEngine& eng, const SymplecticMap& psi, Mat& X, int max_iter) {
  StageOutcome out;
  double A = eng.act(X);
  if (!(A > 1e-300)) return out;
  X /= std::sqrt(A);

  constexpr int kMem = 10;
  std::vector<std::pair<Mat, Mat>> mem;  // (step, gradient change), newest last
  Mat G, Xprev, Gprev;
  bool have_prev = false;
  double recent[kMem];
  int accepts = 0;
  double best_q = std::numeric_limits<double>::infinity();
  Mat best_X = X;
  int flat = 0;

  for (int it = 0; it < max_iter; ++it) {
    const double Q = eng.grad(X, G, A);
    if (Q < best_q) {
      best_q = Q;
      best_X = X;
    }
    const double gn = G.norm();
    const double xn = X.norm();
    if (!(gn * xn > 1e-9 * std::abs(Q))) {
      out.settled = true;
      break;
    }
    if (have_prev) {
      Mat s = X - Xprev, y = G - Gprev;
      const double sy = dotm(s, y);
      if (sy > 1e-12 * s.norm() * y.norm()) {
        mem.emplace_back(std::move(s), std::move(y));
        if (int(mem.size()) > kMem) mem.erase(mem.begin());
      }
    }

    Mat d = -G;
    if (!mem.empty()) {
      std::vector<double> alpha(mem.size());
      for (int i = int(mem.size()) - 1; i >= 0; --i) {
        alpha[i] = dotm(mem[i].first, d) / dotm(mem[i].first, mem[i].second);
        d -= alpha[i] * mem[i].second;
      }
      const auto& last = mem.back();
      d *= dotm(last.first, last.second) / dotm(last.second, last.second);
      for (std::size_t i = 0; i < mem.size(); ++i) {
        const double beta = dotm(mem[i].second, d) / dotm(mem[i].first, mem[i].second);
        d += (alpha[i] - beta) * mem[i].first;
      }
    }
    double dg = dotm(d, G);
    if (!(dg < -1e-12 * d.norm() * gn)) {
      mem.clear();
      d = -G;
      dg = -gn * gn;
    }
    double t = mem.empty() ? 0.05 * xn / std::max(d.norm(), 1e-300) : 1.0;

    double qref = Q;
    for (int i = 0; i < std::min(accepts, kMem); ++i) qref = std::max(qref, recent[i]);
    bool accepted = false;
    for (int bt = 0; bt < 45; ++bt) {
      Mat X2 = X + t * d;
      X2.row(0) = psi.project_e1_perp(X2.row(0).transpose()).transpose();
      const double A2 = eng.act(X2);
      if (A2 > 1e-12) {
        const double Q2 = eng.ip2(X2) / A2;
        if (Q2 <= qref + 1e-4 * t * dg) {
          Xprev = X;
          Gprev = G;
          have_prev = true;
          X = X2 / std::sqrt(A2);
          recent[accepts % kMem] = Q2;
          ++accepts;
          flat = std::abs(Q - Q2) <= 1e-12 * (1.0 + std::abs(Q2)) ? flat + 1 : 0;
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!mem.empty()) {
        // quasi-Newton model went stale; retry from plain gradient
        mem.clear();
        have_prev = false;
        continue;
      }
      out.settled = true;
      break;
    }
    if (flat >= 8) {
      out.settled = true;
      break;
    }
    ++out.iterations;
  }
  // the nonmonotone rule may leave the last iterate above the best one
  const double q_last = eng.quotient(X, nullptr);
  if (best_q < q_last) X = best_X;
  out.value = std::min(best_q, q_last);
  return out;
}

// Redistribute the loop nodes to equal support mass h(-J dx) per chord,
// the spacing that minimizes the I2 quotient over reparametrizations of a
// fixed loop. Mass grows linearly in the chord fraction inside a straight
// segment, so linear interpolation inverts it exactly. The anchor node
// stays put, so the base-point constraint survives.
inline void resample_support_mass(const Body& body, const SymplecticMap& psi, Mat& X) {
  const int N = int(X.rows());
  Mat P(N + 1, X.cols());
  P.topRows(N) = X;
  P.row(N) = psi.apply(X.row(0).transpose()).transpose();
  std::vector<double> cum(N + 1, 0.0);
  for (int k = 0; k < N; ++k) {
    const Vec d = (P.row(k + 1) - P.row(k)).transpose();
    cum[k + 1] = cum[k] + (d.norm() > 1e-300 ? body.support(apply_negJ(d)).value : 0.0);
  }
  if (!(cum[N] > 1e-300)) return;
  Mat Y(N, X.cols());
  Y.row(0) = X.row(0);
  int j = 0;
  for (int m = 1; m < N; ++m) {
    const double target = cum[N] * double(m) / double(N);
    while (j + 1 < N && cum[j + 1] < target) ++j;
    const double seg = cum[j + 1] - cum[j];
    const double f = seg > 1e-300 ? (target - cum[j]) / seg : 0.0;
    Y.row(m) = (1.0 - f) * P.row(j) + f * P.row(j + 1);
  }
  X = std::move(Y);
}

// Whole-loop translation into the base-constraint slice, then A=1.
inline bool normalize_start(const SymplecticMap& psi, Mat& X) {
  const Vec a = psi.project_e1(X.row(0).transpose());
  X.rowwise() -= a.transpose();
  X.row(0) = psi.project_e1_perp(X.row(0).transpose()).transpose();
  double A = 0.0;
  for (int k = 0; k < X.rows(); ++k) {
    Vec xn = k + 1 == X.rows() ? psi.apply(X.row(0).transpose()) : Vec(X.row(k + 1).transpose());
    A += 0.5 * xn.dot(applyJ(Vec(X.row(k).transpose())));
  }
  if (!(A > 1e-10)) return false;
  X /= std::sqrt(A);
  return true;
}

// Ball-characteristic seed e^{t s J} v with v spanning ker(Psi - e^{tJ}).
inline bool characteristic_start(const SymplecticMap& psi, int N, double scale, Mat& X) {
  double t;
  try {
    t = t_psi(psi);
  } catch (const Error&) {
    return false;
  }
  const int d = psi.dim();
  Eigen::JacobiSVD<Mat> svd(Mat(psi.matrix() - exp_sJ(d, t)), Eigen::ComputeFullV);
  Vec v = svd.matrixV().col(d - 1) * scale;
  X.resize(N, d);
  for (int k = 0; k < N; ++k) X.row(k) = (exp_sJ(d, t * double(k) / double(N)) * v).transpose();
  return normalize_start(psi, X);
}

// Two-bounce seed for product bodies under the identity twist: straight
// q-legs at the supporting momenta, zero-action momentum arcs in between.
inline bool bounce_start(const Body& body, const SymplecticMap& psi, int N, Mat& X) {
  if (!psi.is_identity()) return false;
  auto* prod = dynamic_cast<const ProductBody*>(&body);
  if (!prod) return false;
  const Body& L = *prod->left();
  const Body& R = *prod->right();
  const int n = L.dim();
  if (R.dim() != n || 2 * n != psi.dim()) return false;
  Vec u = width(L).direction;
  Vec qa = L.support(Vec(-u)).point, qb = L.support(u).point;
  Vec dir = qb - qa;
  const double dn = dir.norm();
  if (dn < 1e-12) return false;
  Vec p1 = R.support(Vec(-dir / dn)).point, p2 = R.support(Vec(dir / dn)).point;
  X.resize(N, 2 * n);
  const int m = N / 4;
  for (int k = 0; k < N; ++k) {
    const int phase = std::min(k / m, 3);
    const double f = double(k - phase * m) / double(m);
    Vec q(n), p(n);
    switch (phase) {
      case 0: q = qa + f * (qb - qa); p = p1; break;
      case 1: q = qb; p = p1 + f * (p2 - p1); break;
      case 2: q = qb + f * (qa - qb); p = p2; break;
      default: q = qa; p = p2 + f * (p1 - p2); break;
    }
    X(k, Eigen::seqN(0, n)) = q.transpose();
    X(k, Eigen::seqN(n, n)) = p.transpose();
  }
  return normalize_start(psi, X);
}

// Twist-compatible segment plus a 3-harmonic loop vanishing at t=0.
inline bool random_start(const SymplecticMap& psi, int N, double scale, RngStream& rng, Mat& X) {
  const int d = psi.dim();
  for (int attempt = 0; attempt < 24; ++attempt) {
    Vec z0 = scale * rng.normal_vec(d);
    Mat coef_c(3, d), coef_s(3, d);
    for (int h = 0; h < 3; ++h) {
      coef_c.row(h) = (scale / double(h + 1) * rng.normal_vec(d)).transpose();
      coef_s.row(h) = (scale / double(h + 1) * rng.normal_vec(d)).transpose();
    }
    X.resize(N, d);
    const Vec z1 = psi.apply(z0);
    for (int k = 0; k < N; ++k) {
      const double t = double(k) / double(N);
      Vec x = (1.0 - t) * z0 + t * z1;
      for (int h = 0; h < 3; ++h) {
        const double ph = 2.0 * kPi * double(h + 1) * t;
        x += (std::cos(ph) - 1.0) * coef_c.row(h).transpose() + std::sin(ph) * coef_s.row(h).transpose();
      }
      X.row(k) = x.transpose();
    }
    if (normalize_start(psi, X)) return true;
  }
  return false;
}

// rho_k + lambda_p u(mid_k) sampled along the minimizer; the common value
// is a0 up to discretization, the spread diagnoses stationarity.
inline Vec recover_a0(const DiscretePath& u, const Body& D, double c, double p, double* spread) {
  const int N = u.n_nodes();
  const double lambda = -0.5 * p * std::pow(c, 0.5 * p);
  Vec mean = Vec::Zero(u.dim());
  std::vector<Vec> samples;
  samples.reserve(N);
  Vec xk = u.node(0);
  for (int k = 0; k < N; ++k) {
    Vec xn = u.node(k + 1);
    Vec w = apply_negJ(Vec(double(N) * (xn - xk)));
    if (w.norm() > 1e-12) {
      SupportEval e = D.support(w);
      Vec rho = (p * std::pow(0.5, p) * std::pow(e.value, p - 1.0)) * e.point;
      samples.push_back(rho + lambda * Vec(0.5 * (xk + xn)));
      mean += samples.back();
    }
    xk = std::move(xn);
  }
  if (samples.empty()) {
    if (spread) *spread = 0.0;
    return Vec::Zero(u.dim());
  }
  mean /= double(samples.size());
  const Vec a0 = u.psi.project_e1(mean);
  double dev = (mean - a0).norm();
  for (const Vec& s : samples) dev = std::max(dev, (s - mean).norm());
  if (spread) *spread = dev / (std::abs(lambda) + mean.norm() + 1e-12);
  return a0;
}

struct CarrierBuild {
  Mat nodes;  // original coordinates
  Vec a0;
  double a0_spread = 0.0;
  double max_gauge_residual = 0.0;
  double action_mismatch = 0.0;
};

// x*(t) = c^{1/2} u(t) + (2/p) c^{(1-p)/2} a0, shifted back to the original
// coordinates; gauge residuals are measured against the recentered body.
inline CarrierBuild build_carrier(const DiscretePath& u, const Body& D, const SymplecticMap& psi, double c, double p,
                                  const Vec& shift) {
  CarrierBuild out;
  out.a0 = recover_a0(u, D, c, p, &out.a0_spread);
  const Vec offset = (2.0 / p) * std::pow(c, 0.5 * (1.0 - p)) * out.a0;
  const double root_c = std::sqrt(c);
  out.nodes.resize(u.n_nodes(), u.dim());
  for (int k = 0; k < u.n_nodes(); ++k) {
    const Vec y = root_c * u.node(k) + offset;
    out.max_gauge_residual = std::max(out.max_gauge_residual, std::abs(D.gauge(y).value - 1.0));
    out.nodes.row(k) = (y + shift).transpose();
  }
  DiscretePath carrier(out.nodes, psi);
  out.action_mismatch = std::abs(action(carrier) - c) / c;
  return out;
}

}  // namespace detail

// Fixed interior point of Psi inside the body: deepest point of the body
// over Fix(Psi), the working origin for the whole solve.
inline Vec fixed_interior_point(const BodyPtr& body, const SymplecticMap& psi) {
  if (body->dim() != psi.dim()) throw BadInput("body and map dimensions differ");
  const InradiusResult r = inradius_in_subspace(*body, psi.e1_basis());
  if (!(r.value > 1e-7 * (1.0 + body->circumradius())))
    throw NoFixedInteriorPoint("no fixed point of the map lies inside the body (depth " + std::to_string(r.value) +
                               ")");
  return r.center;
}

inline CapacityResult minimize_capacity(const BodyPtr& body, const SymplecticMap& psi,
                                        const CapacityConfig& cfg = {}) {
  if (cfg.n_nodes < 16) throw BadInput("capacity solve needs at least 16 nodes");
  if (cfg.restarts < 1 || cfg.max_iter < 1) throw BadInput("capacity solve needs restarts >= 1 and max_iter >= 1");
  if (cfg.p < 1.0) throw InvalidExponent("capacity config needs p >= 1");
  const Vec shift = fixed_interior_point(body, psi);
  const BodyPtr D = make_translate(body, Vec(-shift));
  const int N = cfg.n_nodes;
  const double R = D->circumradius();

  detail::QuotientEngine eng(*D, psi);
  eng.set_nodes_count(N);

  std::vector<Soft> stages;
  if (D->smooth()) {
    stages.push_back({});
  } else {
    stages.push_back({16.0, 0.05 * R, 0.0});
    stages.push_back({64.0, 0.01 * R, 0.0});
    stages.push_back({256.0, 0.002 * R, 0.0});
    stages.push_back({1024.0, 4e-4 * R, 0.0});
    stages.push_back({});
  }

  RngStream root(cfg.seed ^ fnv1a("capacity"));
  double best = std::numeric_limits<double>::infinity();
  Mat best_X;
  bool best_settled = false;
  long total_iters = 0;
  std::vector<double> finals;

  for (int r = 0; r < cfg.restarts; ++r) {
    Mat X;
    bool ok = false;
    if (r == 0) {
      ok = detail::characteristic_start(psi, N, R, X);
    } else if (r == 1) {
      ok = detail::bounce_start(*D, psi, N, X);
    }
    if (!ok) {
      RngStream rng = root.child(std::uint64_t(r));
      ok = detail::random_start(psi, N, R, rng, X);
    }
    if (!ok) continue;

    bool settled = false;
    for (std::size_t si = 0; si < stages.size(); ++si) {
      if (si > 0) detail::resample_support_mass(*D, psi, X);
      Soft s = stages[si];
      if (!s.exact()) {
        double wbar = 0.0;
        for (int k = 0; k < N; ++k) wbar += (X.row((k + 1) % N) - X.row(k)).norm();
        s.weps = 1e-3 * wbar / double(N);
      }
      eng.set_soft(s);
      detail::StageOutcome so = detail::run_stage(eng, psi, X, cfg.max_iter);
      total_iters += so.iterations;
      settled = so.settled;
    }
    // Alternate exact polish with optimal respacing: respacing never raises
    // the quotient of the loop it is given, and the descent only has to
    // move geometry once the spacing is right.
    eng.set_soft({});
    double v = eng.quotient(X, nullptr);
    for (int cycle = 0; cycle < 3; ++cycle) {
      Mat X2 = X;
      detail::resample_support_mass(*D, psi, X2);
      const double A2 = eng.act(X2);
      if (A2 > 1e-12) {
        X2 /= std::sqrt(A2);
        if (eng.quotient(X2, nullptr) < v) X = std::move(X2);
      }
      detail::StageOutcome so = detail::run_stage(eng, psi, X, cfg.max_iter);
      total_iters += so.iterations;
      const double v2 = std::min(so.value, eng.quotient(X, nullptr));
      const bool progress = v2 < v * (1.0 - 1e-6);
      v = std::min(v, v2);
      settled = so.settled;
      if (settled && !progress) break;
    }
    finals.push_back(v);
    if (v < best) {
      best = v;
      best_X = X;
      best_settled = settled;
    }
  }

  if (!(best < std::numeric_limits<double>::infinity()))
    throw BadInput("capacity solve found no admissible start with positive action");

  DiscretePath minimizer(best_X, psi);
  detail::CarrierBuild cb = detail::build_carrier(minimizer, *D, psi, best, cfg.p, shift);

  CapacityResult res(DiscretePath(cb.nodes, psi), std::move(minimizer));
  res.value = best;
  res.multiplier = -0.5 * cfg.p * std::pow(best, 0.5 * cfg.p);
  res.a0 = cb.a0;
  res.fix_shift = shift;
  res.restarts_used = cfg.restarts;
  res.iterations = total_iters;

  std::sort(finals.begin(), finals.end());
  double spread = 0.0;
  if (finals.size() >= 2 && finals[0] > 0.0) spread = (finals[1] - finals[0]) / finals[0];
  res.rel_error = std::max(3e-3, spread);
  res.residuals["restart_spread"] = spread;
  res.residuals["a0_spread"] = cb.a0_spread;
  res.residuals["carrier_gauge"] = cb.max_gauge_residual;
  res.residuals["carrier_action"] = cb.action_mismatch;
  res.converged = best_settled && cb.max_gauge_residual <= 2e-3 && cb.action_mismatch <= 1e-2;

  if (cfg.refine_error_estimate) {
    // Warm-started doubling of the grid bounds the discretization bias.
    Mat X2(2 * N, psi.dim());
    for (int k = 0; k < N; ++k) {
      const Vec a = best_X.row(k).transpose();
      const Vec b = k + 1 == N ? psi.apply(best_X.row(0).transpose()) : Vec(best_X.row(k + 1).transpose());
      X2.row(2 * k) = a.transpose();
      X2.row(2 * k + 1) = 0.5 * (a + b).transpose();
    }
    detail::QuotientEngine eng2(*D, psi);
    eng2.set_nodes_count(2 * N);
    eng2.set_soft({});
    detail::StageOutcome so = detail::run_stage(eng2, psi, X2, cfg.max_iter);
    total_iters += so.iterations;
    res.iterations = total_iters;
    const double delta = std::abs(so.value - best) / best;
    res.residuals["refine_delta"] = delta;
    res.rel_error = std::max(res.rel_error, delta);
  }
  return res;
}

// Remark-style carrier extraction from a stored result; throws unless the
// scaled path genuinely lands on the boundary.
inline DiscretePath carrier_from_minimizer(const CapacityResult& result, const BodyPtr& body,
                                           const SymplecticMap& psi, double p) {
  if (!result.converged) throw CarrierValidationFailed("minimizer is not converged");
  if (p < 1.0) throw InvalidExponent("carrier extraction needs p >= 1");
  const BodyPtr D = make_translate(body, Vec(-result.fix_shift));
  detail::CarrierBuild cb = detail::build_carrier(result.minimizer, *D, psi, result.value, p, result.fix_shift);
  if (cb.max_gauge_residual > 2e-3)
    throw CarrierValidationFailed("worst node gauge residual " + std::to_string(cb.max_gauge_residual));
  if (cb.action_mismatch > 1e-2)
    throw CarrierValidationFailed("carrier action off by relative " + std::to_string(cb.action_mismatch));
  return DiscretePath(cb.nodes, psi);
}

struct CarrierReport {
  double max_gauge_residual = 0.0;
  int worst_gauge_node = -1;
  bool on_boundary_ok = false;
  double max_cone_gap = 0.0;
  int worst_cone_node = -1;
  bool cone_ok = false;
  double twist_residual = 0.0;
  bool twist_ok = false;
  bool pass = false;
};

// Boundary membership, velocity-cone membership (support-gap form of the
// angular test, gap ~ angle * reach), and the twist condition.
inline CarrierReport verify_carrier(const DiscretePath& path, const BodyPtr& body, const SymplecticMap& psi,
                                    double gauge_tol = 2e-3, double cone_tol = 1e-2) {
  CarrierReport rep;
  const Vec p0 = body->interior_point();
  const BodyPtr D = make_translate(body, Vec(-p0));
  const double R = D->circumradius();
  const int N = path.n_nodes();

  for (int k = 0; k < N; ++k) {
    const double res = std::abs(D->gauge(Vec(path.node(k) - p0)).value - 1.0);
    if (res > rep.max_gauge_residual) {
      rep.max_gauge_residual = res;
      rep.worst_gauge_node = k;
    }
  }
  rep.on_boundary_ok = rep.max_gauge_residual <= gauge_tol;

  const Mat psi_inv = path.psi.matrix().inverse();
  for (int k = 0; k < N; ++k) {
    const Vec prev = k == 0 ? Vec(psi_inv * path.node(N - 1)) : path.node(k - 1);
    Vec nu = apply_negJ(Vec(0.5 * (path.node(k + 1) - prev)));
    const double nn = nu.norm();
    if (nn < 1e-14 * (1.0 + R)) continue;
    nu /= nn;
    const double gap = (D->support(nu).value - nu.dot(path.node(k) - p0)) / R;
    if (gap > rep.max_cone_gap) {
      rep.max_cone_gap = gap;
      rep.worst_cone_node = k;
    }
  }
  rep.cone_ok = rep.max_cone_gap <= cone_tol;

  rep.twist_residual = (psi.apply(path.node(0)) - path.psi.apply(path.node(0))).norm() / (1.0 + R);
  rep.twist_ok = rep.twist_residual <= 1e-9;
  rep.pass = rep.on_boundary_ok && rep.cone_ok && rep.twist_ok;
  return rep;
}

}  // namespace ehz
