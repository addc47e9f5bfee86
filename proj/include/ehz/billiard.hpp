#pragma once

// Billiard trajectories under an orthogonal endpoint twist: straight flight
// inside a convex table, mirror reflection at the boundary, and endpoints
// identified by q -> Aq. Includes the generalized corner-sequence verifier,
// the lift of a trajectory to a phase-space characteristic on the product
// with a momentum ball, and the length bound reports.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "body.hpp"
#include "capacity.hpp"
#include "common.hpp"
#include "geometry.hpp"
#include "optimize.hpp"
#include "symplectic.hpp"

namespace ehz {

// Which endpoint velocity rule a trajectory satisfies. Boundary endpoints may
// swap the actual one-sided velocity for its mirror image at the wall.
enum class EndpointRule { direct, start_mirrored, end_mirrored, both_mirrored };

inline const char* endpoint_rule_name(EndpointRule r) {
  switch (r) {
    case EndpointRule::direct: return "direct";
    case EndpointRule::start_mirrored: return "start-mirrored";
    case EndpointRule::end_mirrored: return "end-mirrored";
    default: return "both-mirrored";
  }
}

struct ConeDistance {
  double dist = 0.0;
  Vec weights;  // conic coefficients per generator at the nearest point
};

// Distance from w to the cone spanned by the columns of G. The optimum's
// active set is some column subset with nonnegative least-squares weights,
// so enumerating subsets is exact; generator counts here are tiny.
inline ConeDistance dist_to_cone(const Mat& G, const Vec& w) {
  const int k = int(G.cols());
  if (k > 16) throw BadInput("cone distance: too many generators");
  ConeDistance best{w.norm(), Vec::Zero(k)};
  for (unsigned mask = 1; mask < (1u << k); ++mask) {
    std::vector<int> idx;
    for (int j = 0; j < k; ++j)
      if (mask & (1u << j)) idx.push_back(j);
    Mat S(G.rows(), int(idx.size()));
    for (int j = 0; j < int(idx.size()); ++j) S.col(j) = G.col(idx[j]);
    Vec lam = S.colPivHouseholderQr().solve(w);
    if ((lam.array() < -1e-12).any()) continue;
    const double d = (S * lam - w).norm();
    if (d < best.dist - 1e-15) {
      best.dist = d;
      best.weights.setZero(k);
      for (int j = 0; j < int(idx.size()); ++j) best.weights[idx[j]] = std::max(0.0, lam[j]);
    }
  }
  return best;
}

namespace detail {

// Gauge queries are anchored at the origin, so pin a frame with a deep
// interior point at 0 once and translate world coordinates through it.
struct TableFrame {
  BodyPtr local;
  Vec shift;

  explicit TableFrame(const BodyPtr& body) {
    if (!body) throw BadInput("null table");
    if (body->origin_interior()) {
      local = body;
      shift = Vec::Zero(body->dim());
      return;
    }
    shift = body->interior_point();
    if (const auto* poly = dynamic_cast<const PolytopeBody*>(body.get())) {
      Mat v = poly->vertices();
      v.rowwise() -= shift.transpose();
      local = make_polytope(v);  // keeps the 2-D edge fast path alive
    } else {
      local = make_translate(body, -shift);
    }
  }

  Vec to_local(const Vec& q) const { return q - shift; }
  Vec to_world(const Vec& z) const { return z + shift; }
  double gauge(const Vec& q_world) const { return local->gauge(q_world - shift).value; }

  std::vector<Vec> normals(const Vec& q_world, double tol) const {
    std::vector<Vec> out = local->boundary_normals(q_world - shift, tol);
    for (Vec& n : out) {
      const double len = n.norm();
      if (len > 1e-300) n /= len;
    }
    if (out.empty()) {
      Vec g = local->gauge(q_world - shift).grad;
      if (g.norm() > 1e-300) out.push_back(Vec(g / g.norm()));
    }
    return out;
  }
};

}  // namespace detail

struct RayHit {
  Vec point;                 // boundary point, world coordinates
  std::vector<Vec> normals;  // unit outward normals active at the hit
  double t = 0.0;            // exit distance along the unit direction
};

// First boundary crossing of q + t v, t > 0. The gauge is convex along the
// ray, so from an interior point the crossing is unique; from a boundary
// point an inward ray dips below 1 and recrosses exactly once.
inline RayHit ray_exit(const BodyPtr& table, const Vec& q, const Vec& v, double normal_tol = 1e-7) {
  const detail::TableFrame frame(table);
  const double vn = v.norm();
  if (vn < 1e-14) throw ZeroDirection("ray direction is zero");
  const Vec u = v / vn;
  const Vec z0 = frame.to_local(q);
  const double scale = frame.local->circumradius() + 1.0;

  // Exact 2-D polytope path: exit at the first edge plane ahead of the ray.
  if (const auto* poly = dynamic_cast<const PolytopeBody*>(frame.local.get());
      poly != nullptr && poly->dim() == 2 && poly->edge_normals().rows() >= 3) {
    const Mat& N = poly->edge_normals();
    const Vec& o = poly->edge_offsets();
    double t_exit = std::numeric_limits<double>::infinity();
    for (int i = 0; i < N.rows(); ++i) {
      const double dv = N.row(i).dot(u);
      if (dv <= 1e-14) continue;
      const double ti = (o[i] - N.row(i).dot(z0)) / dv;
      if (ti > 1e-12 * scale) t_exit = std::min(t_exit, ti);
    }
    if (!std::isfinite(t_exit)) throw DegenerateRay("ray leaves the table immediately");
    const Vec zh = z0 + t_exit * u;
    RayHit hit;
    hit.t = t_exit;
    hit.point = frame.to_world(zh);
    hit.normals = frame.normals(hit.point, normal_tol * scale);
    return hit;
  }

  auto g = [&](double t) { return frame.local->gauge(Vec(z0 + t * u)).value; };
  const double g0 = g(0.0);
  if (g0 > 1.0 + 1e-9) throw BadInput("ray start lies outside the table");

  // Inner bracket end. A boundary start must first dip inside.
  double lo = 0.0;
  if (g0 >= 1.0 - 1e-9) {
    bool inside = false;
    for (double t = 1e-8 * scale; t <= 4.0 * scale; t *= 2.0) {
      if (g(t) < 1.0 - 1e-12) {
        lo = t;
        inside = true;
        break;
      }
    }
    if (!inside) throw DegenerateRay("ray is tangent or leaves the table immediately");
  }

  double hi = std::max(2.0 * lo, 1e-3 * scale);
  double ghi = g(hi);
  for (int i = 0; i < 200 && ghi < 1.0; ++i) {
    hi *= 2.0;
    ghi = g(hi);
  }
  if (ghi < 1.0) throw DegenerateRay("ray never exits, table unbounded along it");

  // Secant steps alternated with bisection so the bracket always contracts.
  double glo = g(lo);
  for (int i = 0; i < 140 && hi - lo > 1e-15 * (1.0 + hi); ++i) {
    double mid = 0.5 * (lo + hi);
    if (i % 2 == 0 && ghi > glo + 1e-300) {
      const double sec = lo + (1.0 - glo) * (hi - lo) / (ghi - glo);
      if (sec > lo + 1e-18 && sec < hi - 1e-18) mid = sec;
    }
    const double gm = g(mid);
    if (gm < 1.0) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
      ghi = gm;
    }
  }

  RayHit hit;
  hit.t = 0.5 * (lo + hi);
  hit.point = frame.to_world(Vec(z0 + hit.t * u));
  hit.normals = frame.normals(hit.point, normal_tol * scale);
  return hit;
}

// Mirror reflection; v comes in with a positive outward component.
inline Vec reflect(const Vec& v_in, const Vec& normal, double graze_tol = 1e-10) {
  const double nn = normal.norm();
  if (nn < 1e-300) throw BadInput("reflect: zero normal");
  const Vec n = normal / nn;
  const double c = v_in.dot(n);
  if (c <= graze_tol * (v_in.norm() + 1e-300)) throw TangentialImpact("grazing impact");
  return v_in - 2.0 * c * n;
}

struct BilliardTrajectory {
  BodyPtr table;
  Mat points;                 // rows q0..qm
  Mat velocities;             // unit direction of each segment, one row fewer
  std::vector<double> times;  // wall-bounce instants, strictly inside (0, T)
  double speed = 1.0;
  double length = 0.0;
  Mat A;                      // endpoint twist, identity unless a search set it
  double position_residual = std::numeric_limits<double>::infinity();
  double velocity_residual = std::numeric_limits<double>::infinity();
  EndpointRule endpoint_rule = EndpointRule::direct;
  bool start_interior = true;
  bool end_interior = true;
  bool accepted = false;

  int segments() const { return int(points.rows()) - 1; }
  int bounces() const { return int(times.size()); }
  double duration() const { return speed > 0.0 ? length / speed : 0.0; }
};

// Fills the derived fields of a point chain: unit segment directions, length,
// interior flags, and bounce times for intermediate rows on the wall.
inline BilliardTrajectory trajectory_from_points(const BodyPtr& table, const Mat& pts) {
  if (pts.rows() < 2) throw BadInput("trajectory needs at least two points");
  if (!table || pts.cols() != table->dim()) throw BadInput("trajectory dimension mismatch");
  const detail::TableFrame frame(table);
  BilliardTrajectory traj;
  traj.table = table;
  traj.points = pts;
  const int m = int(pts.rows()) - 1;
  traj.velocities.resize(m, pts.cols());
  double acc = 0.0;
  for (int j = 0; j < m; ++j) {
    Vec d = (pts.row(j + 1) - pts.row(j)).transpose();
    const double len = d.norm();
    if (len < 1e-14) throw BadInput("trajectory has a zero-length segment");
    traj.velocities.row(j) = d.transpose() / len;
    acc += len;
    if (j + 1 < m && std::abs(frame.gauge(pts.row(j + 1).transpose()) - 1.0) <= 1e-6) traj.times.push_back(acc);
  }
  traj.length = acc;
  traj.start_interior = frame.gauge(pts.row(0).transpose()) < 1.0 - 1e-7;
  traj.end_interior = frame.gauge(pts.row(m).transpose()) < 1.0 - 1e-7;
  traj.A = Mat::Identity(pts.cols(), pts.cols());
  return traj;
}

// Shoot from q0 along v0 through `bounces` wall reflections. With a positive
// final_fraction the path continues past the last recorded bounce by that
// fraction of the next chord, so the last bounce stays strictly inside (0, T).
inline BilliardTrajectory flow(const BodyPtr& table, const Vec& q0, const Vec& v0, int bounces,
                               double final_fraction = 0.0) {
  if (bounces < 1) throw BadInput("flow needs at least one bounce");
  if (!table || int(q0.size()) != table->dim()) throw BadInput("flow dimension mismatch");
  const detail::TableFrame frame(table);
  if (frame.gauge(q0) > 1.0 + 1e-9) throw BadInput("flow start lies outside the table");
  const double vn = v0.norm();
  if (vn < 1e-14) throw ZeroDirection("flow direction is zero");

  const bool partial = final_fraction > 0.0;
  const bool lands_on_wall = partial && final_fraction >= 1.0 - 1e-12;
  const int hits = bounces + (partial ? 1 : 0);

  std::vector<Vec> pts{q0};
  Vec q = q0;
  Vec u = v0 / vn;
  for (int i = 1; i <= hits; ++i) {
    RayHit hit = ray_exit(table, q, u);
    const bool last = i == hits;
    if (partial && last && !lands_on_wall) {
      pts.push_back(q + final_fraction * hit.t * u);
      break;
    }
    pts.push_back(hit.point);
    if (!last) {
      // Corner hits carry several active normals; the reflected direction is
      // then ambiguous, which the shooting layer treats as grazing.
      if (hit.normals.size() != 1) throw TangentialImpact("bounce at a corner");
      u = reflect(u, hit.normals[0]);
      q = hit.point;
    }
  }

  Mat P(int(pts.size()), q0.size());
  for (int i = 0; i < P.rows(); ++i) P.row(i) = pts[i].transpose();
  BilliardTrajectory traj = trajectory_from_points(table, P);
  traj.speed = 1.0;
  return traj;
}

struct TwistResidual {
  double position = std::numeric_limits<double>::infinity();
  double velocity = std::numeric_limits<double>::infinity();
  double total = std::numeric_limits<double>::infinity();
  EndpointRule rule = EndpointRule::direct;
};

// Endpoint mismatch of the twist conditions: position error plus the best
// velocity rule. Boundary endpoints unlock the mirrored alternatives.
inline TwistResidual twist_residual(const BilliardTrajectory& traj, const Mat& A) {
  if (!traj.table) throw BadInput("trajectory has no table");
  if (traj.segments() < 1) throw BadInput("trajectory has no segments");
  const int n = int(traj.points.cols());
  if (A.rows() != n || A.cols() != n) throw BadInput("twist matrix shape mismatch");
  const detail::TableFrame frame(traj.table);
  const double scale = traj.table->circumradius() + 1.0;

  const Vec q0 = traj.points.row(0).transpose();
  const Vec qT = traj.points.row(traj.points.rows() - 1).transpose();
  const Vec vin = traj.velocities.row(0).transpose();
  const Vec vout = traj.velocities.row(traj.velocities.rows() - 1).transpose();

  TwistResidual r;
  r.position = (qT - A * q0).norm();
  r.velocity = (A * vin - vout).norm();
  r.rule = EndpointRule::direct;

  auto mirrors = [&](const Vec& q, const Vec& v) {
    std::vector<Vec> out;
    for (const Vec& nrm : frame.normals(q, 1e-7 * scale)) out.push_back(Vec(v - 2.0 * v.dot(nrm) * nrm));
    return out;
  };
  std::vector<Vec> start_ghosts, end_ghosts;
  if (!traj.start_interior) start_ghosts = mirrors(q0, vin);
  if (!traj.end_interior) end_ghosts = mirrors(qT, vout);

  auto consider = [&](double mis, EndpointRule rule) {
    if (mis < r.velocity - 1e-15) {
      r.velocity = mis;
      r.rule = rule;
    }
  };
  for (const Vec& g0 : start_ghosts) consider((A * g0 - vout).norm(), EndpointRule::start_mirrored);
  for (const Vec& gT : end_ghosts) consider((A * vin - gT).norm(), EndpointRule::end_mirrored);
  for (const Vec& g0 : start_ghosts)
    for (const Vec& gT : end_ghosts) consider((A * g0 - gT).norm(), EndpointRule::both_mirrored);

  r.total = r.position + r.velocity;
  return r;
}

inline double a_billiard_residual(const BilliardTrajectory& traj, const Mat& A) {
  return twist_residual(traj, A).total;
}

struct BilliardSearchConfig {
  std::vector<int> bounce_counts{1, 2, 3, 4};
  int restarts = 12;
  std::uint64_t seed = 0;
  double accept_factor = 1e-6;  // acceptance threshold, times the diameter
  int capacity_nodes = 192;     // product-capacity solve in the bound report
  int capacity_restarts = 8;
  int capacity_max_iter = 320;
};

namespace detail {

inline void require_orthogonal(const Mat& A, int n) {
  if (A.rows() != n || A.cols() != n) throw BadInput("twist matrix shape mismatch");
  if ((A.transpose() * A - Mat::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-8)
    throw BadInput("twist matrix must be orthogonal");
}

// Shooting chart: q0 offset around the table center, a raw direction vector,
// and a squashed fraction of the chord after the last counted bounce.
struct ShotChart {
  Vec center;
  double radius;
  int n;

  Vec q0(const Vec& z) const { return center + radius * z.head(n); }
  static double fraction(double raw) {
    const double f = 1.08 / (1.0 + std::exp(-raw));
    return std::clamp(f, 1e-3, 1.0);
  }
};

}  // namespace detail

// Multi-start shooting search for trajectories closing up under A. Returns
// the best candidate per bounce count, accepted flags set against the
// residual threshold. Deterministic in the seed.
inline std::vector<BilliardTrajectory> search_a_billiards(const BodyPtr& table, const Mat& A,
                                                          const std::vector<int>& bounce_counts, int restarts,
                                                          std::uint64_t seed,
                                                          const BilliardSearchConfig& cfg = {}) {
  if (!table) throw BadInput("null table");
  const int n = table->dim();
  detail::require_orthogonal(A, n);
  if (bounce_counts.empty()) throw BadInput("no bounce counts to search");
  if (restarts < 1) throw BadInput("restarts must be positive");

  const detail::TableFrame frame(table);
  const double diam = diameter(*table);
  const double accept_tol = cfg.accept_factor * diam;
  const detail::ShotChart chart{table->interior_point(), 0.45 * diam, n};
  RngStream root = RngStream(seed).child(fnv1a("billiard-search"));

  std::vector<BilliardTrajectory> out;
  for (int k : bounce_counts) {
    if (k < 1) throw BadInput("bounce counts must be positive");

    auto shoot = [&](const Vec& z) -> BilliardTrajectory {
      Vec q0 = chart.q0(z);
      const double g0 = frame.gauge(q0);
      if (g0 >= 0.985) q0 = frame.to_world(Vec(frame.to_local(q0) * (0.97 / g0)));
      Vec v = z.segment(n, n);
      if (v.norm() < 1e-8) v = Vec::Unit(n, 0);
      const double f = detail::ShotChart::fraction(z[2 * n]);
      for (int attempt = 0;; ++attempt) {
        try {
          return flow(table, q0, v, k, f);
        } catch (const Error&) {
          if (attempt >= 8) throw;
          q0 += (diam * 1e-6 * (attempt + 1)) * Vec::Unit(n, attempt % n) * (attempt % 2 ? -1.0 : 1.0);
        }
      }
    };
    auto objective = [&](const Vec& z) -> double {
      double penalty = 0.0;
      const double g0 = frame.gauge(chart.q0(z));
      if (g0 >= 0.985) penalty += (g0 - 0.985) * 10.0 * diam;
      if (z.segment(n, n).norm() < 1e-8) penalty += 10.0 * diam;
      try {
        return twist_residual(shoot(z), A).total + penalty;
      } catch (const Error&) {
        return 50.0 * diam + penalty;
      }
    };

    Vec best_z;
    double best_val = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
      RngStream rng = root.child(std::uint64_t(k) * 1000003ull + std::uint64_t(r));
      Vec z0 = Vec::Zero(2 * n + 1);
      if (r < n) {
        z0.segment(n, n) = Vec::Unit(n, r);
      } else {
        z0.head(n) = 0.5 * rng.normal_vec(n);
        z0.segment(n, n) = rng.normal_vec(n);
        z0[2 * n] = rng.normal();
      }
      const auto res = nelder_mead(objective, z0, 0.35, 150 * (2 * n + 1));
      if (res.value < best_val) {
        best_val = res.value;
        best_z = res.x;
      }
    }
    const auto polish = nelder_mead(objective, best_z, 0.06, 220 * (2 * n + 1));
    if (polish.value < best_val) {
      best_val = polish.value;
      best_z = polish.x;
    }

    try {
      BilliardTrajectory traj = shoot(best_z);
      const TwistResidual tr = twist_residual(traj, A);
      traj.A = A;
      traj.position_residual = tr.position;
      traj.velocity_residual = tr.velocity;
      traj.endpoint_rule = tr.rule;
      traj.accepted = tr.total <= accept_tol;
      out.push_back(std::move(traj));
    } catch (const Error&) {
      // The best chart point failed to shoot; leave this count out.
    }
  }
  if (out.empty()) throw BadInput("search produced no candidate at any bounce count");
  return out;
}

// Shortest accepted candidate, or the smallest-residual one flagged
// unaccepted. An empty accepted set is a report, not an error.
inline BilliardTrajectory find_a_billiard(const BodyPtr& table, const Mat& A, const std::vector<int>& bounce_counts,
                                          int restarts, std::uint64_t seed) {
  std::vector<BilliardTrajectory> all = search_a_billiards(table, A, bounce_counts, restarts, seed);
  const BilliardTrajectory* best = nullptr;
  for (const auto& t : all)
    if (t.accepted && (!best || t.length < best->length)) best = &t;
  if (!best)
    for (const auto& t : all)
      if (!best || t.position_residual + t.velocity_residual < best->position_residual + best->velocity_residual)
        best = &t;
  return *best;
}

struct ClauseCheck {
  std::string name;
  double violation = 0.0;
  bool pass = true;
};

struct GeneralizedBilliardReport {
  std::vector<ClauseCheck> checks;
  EndpointRule endpoint_rule = EndpointRule::direct;
  double worst_violation = 0.0;
  bool pass = false;
};

namespace detail {

// Smallest combined cone distance over unit vectors b of
// dist(b - u_first, N(q0)) + dist(u_last - A b, N(qm)).
inline double free_ghost_violation(const Mat& N0, const Mat& Nm, const Mat& A, const Vec& u_first,
                                   const Vec& u_last) {
  const int n = int(u_first.size());
  auto measure = [&](const Vec& braw) {
    const double len = braw.norm();
    if (len < 1e-9) return 1e3;
    const Vec b = braw / len;
    return dist_to_cone(N0, Vec(b - u_first)).dist + dist_to_cone(Nm, Vec(u_last - A * b)).dist;
  };
  if (n == 2) {
    double best = std::numeric_limits<double>::infinity();
    double best_th = 0.0;
    for (int i = 0; i < 720; ++i) {
      const double th = 2.0 * kPi * i / 720.0;
      const double v = measure(Vec(Eigen::Vector2d(std::cos(th), std::sin(th))));
      if (v < best) {
        best = v;
        best_th = th;
      }
    }
    const double refined = golden_min([&](double th) { return measure(Vec(Eigen::Vector2d(std::cos(th), std::sin(th)))); },
                                      best_th - kPi / 720.0, best_th + kPi / 720.0);
    return std::min(best, measure(Vec(Eigen::Vector2d(std::cos(refined), std::sin(refined)))));
  }
  std::vector<Vec> starts{u_first, Vec(A.transpose() * u_last), Vec(u_first + A.transpose() * u_last)};
  for (int j = 0; j < n; ++j) starts.push_back(Vec(Vec::Unit(n, j)));
  double best = std::numeric_limits<double>::infinity();
  for (const Vec& s : starts) {
    if (s.norm() < 1e-9) continue;
    const auto res = nelder_mead(measure, s, 0.4, 160 * n);
    best = std::min(best, res.value);
  }
  return best;
}

}  // namespace detail

// Checks a corner sequence q0..qm against the generalized bounce rules:
// intermediate points on the wall, distinct sliding windows, bounce normals
// inside the outward cone, and one of the four endpoint velocity rules.
inline GeneralizedBilliardReport verify_generalized(const Mat& points, const BodyPtr& table, const Mat& A,
                                                    double tol = 1e-7) {
  GeneralizedBilliardReport rep;
  auto add = [&](std::string name, double violation, bool pass) {
    rep.checks.push_back({std::move(name), violation, pass});
    rep.worst_violation = std::max(rep.worst_violation, pass ? 0.0 : violation);
  };

  const int m = int(points.rows()) - 1;
  const bool shape_ok = table && m >= 2 && points.cols() == table->dim();
  add("shape", shape_ok ? 0.0 : 1.0, shape_ok);
  if (!shape_ok) return rep;
  const int n = table->dim();
  detail::require_orthogonal(A, n);

  const detail::TableFrame frame(table);
  const double diam = diameter(*table);
  const double scale = table->circumradius() + 1.0;
  const double wall_tol = 1e-6;

  const Vec q0 = points.row(0).transpose();
  const Vec qm = points.row(m).transpose();
  {
    const double v = (qm - A * q0).norm() / diam;
    add("endpoint-position", v, v <= tol);
  }
  {
    double worst = 0.0;
    for (int i = 0; i <= m; ++i) worst = std::max(worst, frame.gauge(points.row(i).transpose()) - 1.0);
    add("points-inside-table", worst, worst <= wall_tol);
  }
  {
    double worst = 0.0;
    for (int i = 1; i < m; ++i) worst = std::max(worst, std::abs(frame.gauge(points.row(i).transpose()) - 1.0));
    add("intermediate-points-on-wall", worst, worst <= wall_tol);
  }
  {
    double closest = std::numeric_limits<double>::infinity();
    for (int off = 0; off <= 1; ++off)
      for (int i = off; i < m + off; ++i)
        for (int j = i + 1; j < m + off; ++j)
          closest = std::min(closest, (points.row(i) - points.row(j)).norm());
    const bool ok = closest > 1e-9 * diam;
    add("distinct-points", ok ? 0.0 : closest, ok);
  }

  Mat u(m, n);  // unit directions q_j -> q_{j+1}
  bool segments_ok = true;
  for (int j = 0; j < m; ++j) {
    Vec d = (points.row(j + 1) - points.row(j)).transpose();
    const double len = d.norm();
    if (len < 1e-12 * diam) {
      segments_ok = false;
      u.row(j).setZero();
    } else {
      u.row(j) = d.transpose() / len;
    }
  }
  if (!segments_ok) {
    add("bounce-normal-cones", 1.0, false);
    add("endpoint-velocity", 1.0, false);
    rep.pass = false;
    return rep;
  }

  auto cone_at = [&](const Vec& q) {
    const auto nl = frame.normals(q, 1e-6 * scale);
    Mat G(n, int(nl.size()));
    for (int j = 0; j < int(nl.size()); ++j) G.col(j) = nl[j];
    return G;
  };
  {
    double worst = 0.0;
    for (int i = 1; i < m; ++i) {
      const Vec nu = (u.row(i - 1) - u.row(i)).transpose();
      if (nu.norm() < 1e-12) continue;  // straight pass, trivially in the cone
      worst = std::max(worst, dist_to_cone(cone_at(points.row(i).transpose()), nu).dist / nu.norm());
    }
    add("bounce-normal-cones", worst, worst <= tol);
  }

  {
    const Vec u_first = u.row(0).transpose();
    const Vec u_last = u.row(m - 1).transpose();
    const bool start_in = frame.gauge(q0) < 1.0 - wall_tol;
    const bool end_in = frame.gauge(qm) < 1.0 - wall_tol;

    double best = (A * u_first - u_last).norm();
    rep.endpoint_rule = EndpointRule::direct;
    auto consider = [&](double v, EndpointRule rule) {
      if (v < best - 1e-15) {
        best = v;
        rep.endpoint_rule = rule;
      }
    };
    if (!start_in) {
      // The ghost start direction is pinned by the twist, A b0 = u_last.
      const Vec b0 = A.transpose() * u_last;
      consider(dist_to_cone(cone_at(q0), Vec(b0 - u_first)).dist, EndpointRule::start_mirrored);
    }
    if (!end_in) {
      const Vec bm = A * u_first;
      consider(dist_to_cone(cone_at(qm), Vec(u_last - bm)).dist, EndpointRule::end_mirrored);
    }
    if (!start_in && !end_in)
      consider(detail::free_ghost_violation(cone_at(q0), cone_at(qm), A, u_first, u_last),
               EndpointRule::both_mirrored);
    add("endpoint-velocity", best, best <= tol);
  }

  rep.pass = true;
  for (const auto& c : rep.checks) rep.pass = rep.pass && c.pass;
  return rep;
}

struct PhaseArc {
  Vec from, to;               // phase points (q, p), straight chord between
  bool momentum_arc = false;  // position block frozen along the arc
  double action = 0.0;        // -<p, dq> along the chord
};

enum class PhaseKind { proper, gliding, mixed };

struct PhaseTrajectory {
  BodyPtr table_q;  // position factor
  BodyPtr table_p;  // momentum factor
  std::vector<PhaseArc> arcs;
  Mat twist;  // phase twist pairing the chain endpoints
  double kappa = 1.0;
  double tau = 1.0;
  double action = 0.0;
  double loop_action_mismatch = 0.0;
};

namespace detail {

inline double chord_action(const Vec& from, const Vec& to) {
  const int n = int(from.size()) / 2;
  const Vec pm = 0.5 * (from.tail(n) + to.tail(n));
  return -pm.dot(to.head(n) - from.head(n));
}

// Symplectic shoelace of the corner chain with twisted closure; equals the
// -<p, dq> sum when the twist is orthogonal on both blocks.
inline double chain_shoelace(const std::vector<PhaseArc>& arcs, const Mat& twist) {
  const int d = int(arcs.front().from.size());
  const Mat J = standard_J(d);
  double s = 0.0;
  for (const auto& a : arcs) s += 0.5 * a.to.dot(J * a.from);
  const Vec wrap = twist * arcs.front().from;
  s += 0.5 * wrap.dot(J * arcs.back().to);
  return s;
}

}  // namespace detail

// Straight-chord phase path through the given corner rows, twisted closure.
// Rejects constant paths.
inline PhaseTrajectory phase_path(const BodyPtr& table_q, const BodyPtr& table_p, const Mat& corners,
                                  const Mat& twist) {
  if (!table_q || !table_p) throw BadInput("phase path needs both factor bodies");
  const int n = table_q->dim();
  if (table_p->dim() != n) throw BadInput("phase factors must share a dimension");
  if (corners.cols() != 2 * n || corners.rows() < 2) throw BadInput("phase corner shape mismatch");
  if (twist.rows() != 2 * n || twist.cols() != 2 * n) throw BadInput("phase twist shape mismatch");

  PhaseTrajectory traj;
  traj.table_q = table_q;
  traj.table_p = table_p;
  traj.twist = twist;
  double total_len = 0.0;
  for (int i = 0; i + 1 < corners.rows(); ++i) {
    PhaseArc arc;
    arc.from = corners.row(i).transpose();
    arc.to = corners.row(i + 1).transpose();
    arc.momentum_arc = (arc.to - arc.from).head(n).norm() < 1e-12 * (1.0 + arc.from.norm());
    arc.action = detail::chord_action(arc.from, arc.to);
    total_len += (arc.to - arc.from).norm();
    traj.action += arc.action;
    traj.arcs.push_back(std::move(arc));
  }
  if (total_len < 1e-9 * (1.0 + corners.cwiseAbs().maxCoeff())) throw BadInput("constant phase path");
  traj.loop_action_mismatch = std::abs(traj.action - detail::chain_shoelace(traj.arcs, twist));
  return traj;
}

// Lifts a closed-up trajectory to a phase path on table x ball(tau): position
// arcs carry the momentum -tau u frozen, and each bounce inserts a momentum
// chord along the outward normal. Mirrored endpoint rules prepend or append
// the matching half-bounce momentum arc.
inline PhaseTrajectory lift_to_phase(const BilliardTrajectory& traj, double tau = 1.0) {
  if (!traj.table) throw BadInput("trajectory has no table");
  if (!(tau > 0.0)) throw BadInput("momentum radius must be positive");
  const int n = int(traj.points.cols());
  const Mat A = traj.A.size() ? traj.A : Mat::Identity(n, n);
  detail::require_orthogonal(A, n);

  const double diam = diameter(*traj.table);
  const TwistResidual tr = twist_residual(traj, A);
  if (!(traj.accepted || tr.total <= 1e-6 * diam))
    throw LiftValidationFailed("twist residual " + std::to_string(tr.total) + " above the acceptance threshold");

  const detail::TableFrame frame(traj.table);
  const double scale = traj.table->circumradius() + 1.0;
  const int m = traj.segments();

  // Mirror v at the wall normal of q; at a corner pick the active normal
  // whose mirror lands closest to the target the endpoint rule demands.
  auto mirror_at = [&](const Vec& q, const Vec& v, const Vec& target) {
    Vec best = v;
    double best_mis = std::numeric_limits<double>::infinity();
    for (const Vec& nrm : frame.normals(q, 1e-6 * scale)) {
      const Vec cand = v - 2.0 * v.dot(nrm) * nrm;
      const double mis = (cand - target).norm();
      if (mis < best_mis) {
        best_mis = mis;
        best = cand;
      }
    }
    return best;
  };

  std::vector<Vec> corners;
  std::vector<bool> momentum_flag;
  auto push = [&](const Vec& q, const Vec& p, bool momentum) {
    Vec z(2 * n);
    z.head(n) = q;
    z.tail(n) = p;
    if (!corners.empty() && (z - corners.back()).norm() < 1e-14 * (1.0 + z.norm())) return;
    corners.push_back(z);
    momentum_flag.push_back(momentum);
  };

  const Vec u0 = traj.velocities.row(0).transpose();
  const Vec uL = traj.velocities.row(m - 1).transpose();
  const bool mirror_start =
      tr.rule == EndpointRule::start_mirrored || tr.rule == EndpointRule::both_mirrored;
  const bool mirror_end = tr.rule == EndpointRule::end_mirrored || tr.rule == EndpointRule::both_mirrored;

  const Vec q_start = traj.points.row(0).transpose();
  if (mirror_start) push(q_start, Vec(-tau * mirror_at(q_start, u0, Vec(A.transpose() * uL))), false);
  push(q_start, Vec(-tau * u0), mirror_start);

  for (int j = 0; j < m; ++j) {
    const Vec uj = traj.velocities.row(j).transpose();
    const Vec qn = traj.points.row(j + 1).transpose();
    push(qn, Vec(-tau * uj), false);  // position arc lands here
    if (j + 1 < m) {
      const Vec un = traj.velocities.row(j + 1).transpose();
      push(qn, Vec(-tau * un), true);  // bounce momentum chord
    }
  }
  const Vec q_end = traj.points.row(m).transpose();
  if (mirror_end) push(q_end, Vec(-tau * mirror_at(q_end, uL, Vec(A * u0))), true);

  Mat C(int(corners.size()), 2 * n);
  for (int i = 0; i < C.rows(); ++i) C.row(i) = corners[i].transpose();
  Mat twist = Mat::Zero(2 * n, 2 * n);
  twist.topLeftCorner(n, n) = A;
  twist.bottomRightCorner(n, n) = A;  // (A^T)^{-1} for an orthogonal block

  PhaseTrajectory phase = phase_path(traj.table, make_ball(Vec::Zero(n), tau), C, twist);
  phase.kappa = traj.speed;
  phase.tau = tau;

  // Arc-by-arc cone conditions: position arcs ride the momentum sphere with
  // the chord direction opposite the momentum; bounce chords push the
  // momentum along an outward normal of the wall at a wall point.
  for (int i = 0; i < int(phase.arcs.size()); ++i) {
    const PhaseArc& arc = phase.arcs[i];
    const Vec dq = (arc.to - arc.from).head(n);
    const Vec dp = (arc.to - arc.from).tail(n);
    const std::string tag = "arc " + std::to_string(i) + ": ";
    if (!arc.momentum_arc) {
      const Vec p = arc.from.tail(n);
      if (std::abs(p.norm() - tau) > 1e-9 * tau)
        throw LiftValidationFailed(tag + "position arc leaves the momentum sphere");
      if (dq.norm() > 1e-14 && (dq.normalized() + p / tau).norm() > 1e-9)
        throw LiftValidationFailed(tag + "position arc not opposite its momentum");
      if (dp.norm() > 1e-12 * tau) throw LiftValidationFailed(tag + "position arc moves the momentum");
    } else {
      const Vec q = arc.from.head(n);
      if (std::abs(frame.gauge(q) - 1.0) > 1e-5)
        throw LiftValidationFailed(tag + "momentum arc away from the wall");
      if (dp.norm() > 1e-12 * tau) {
        const auto nl = frame.normals(q, 1e-6 * scale);
        Mat G(n, int(nl.size()));
        for (int j = 0; j < int(nl.size()); ++j) G.col(j) = nl[j];
        if (dist_to_cone(G, dp).dist > 1e-6 * dp.norm())
          throw LiftValidationFailed(tag + "momentum chord outside the outward normal cone");
      }
      if (dq.norm() > 1e-12 * (1.0 + q.norm()))
        throw LiftValidationFailed(tag + "momentum arc moves the position");
    }
  }

  const Vec wrap = twist * phase.arcs.front().from;
  const double closure = (phase.arcs.back().to - wrap).norm();
  if (closure > std::max(1e-9, 4.0 * tr.total) * (1.0 + scale))
    throw LiftValidationFailed("phase endpoints do not close under the twist");
  if (phase.loop_action_mismatch > 1e-9 * (1.0 + std::abs(phase.action)))
    throw LiftValidationFailed("chord action disagrees with the loop shoelace");
  return phase;
}

// Support-sum action of a corner chain; the caller supplies the final point,
// already twisted. Equals tau times the chain length for a tau-ball factor.
inline double adl_action(const Mat& points, const BodyPtr& momentum_body) {
  if (points.rows() < 2) throw BadInput("action needs at least two points");
  if (!momentum_body || points.cols() != momentum_body->dim()) throw BadInput("action dimension mismatch");
  double s = 0.0;
  for (int j = 0; j + 1 < points.rows(); ++j)
    s += momentum_body->support(Vec((points.row(j) - points.row(j + 1)).transpose())).value;
  return s;
}

struct PhaseClassification {
  PhaseKind kind = PhaseKind::mixed;
  int junctions = 0;               // isolated instants on both walls
  bool visits_q_interior = false;  // not confined to the position wall
  bool visits_p_interior = false;  // not confined to the momentum wall
  bool interior_junction = false;  // a wall-wall instant away from the chain ends
  bool structure_ok = false;       // proper with both interiors visited
};

// Samples each chord: proper paths touch the wall-wall set only at isolated
// arc junctions, gliding paths never leave it.
inline PhaseClassification classify_phase(const PhaseTrajectory& traj, double wall_tol = 1e-3) {
  if (traj.arcs.empty()) throw BadInput("empty phase path");
  if (!traj.table_q || !traj.table_p) throw BadInput("phase path has no factor bodies");
  const int n = traj.table_q->dim();
  const detail::TableFrame fq(traj.table_q);
  const detail::TableFrame fp(traj.table_p);

  PhaseClassification out;
  bool all_on_both = true;
  bool any_arc_interior_contact = false;
  std::vector<bool> junction_at(traj.arcs.size() + 1, false);

  const int S = 48;
  for (int i = 0; i < int(traj.arcs.size()); ++i) {
    const PhaseArc& arc = traj.arcs[i];
    for (int s = 0; s <= S; ++s) {
      const double t = double(s) / S;
      const Vec z = arc.from + t * (arc.to - arc.from);
      const bool on_q = fq.gauge(z.head(n)) >= 1.0 - wall_tol;
      const bool on_p = fp.gauge(z.tail(n)) >= 1.0 - wall_tol;
      if (!on_q) out.visits_q_interior = true;
      if (!on_p) out.visits_p_interior = true;
      const bool both = on_q && on_p;
      if (!both) all_on_both = false;
      if (both && s == 0) junction_at[i] = true;
      if (both && s == S) junction_at[i + 1] = true;
      if (both && s > 0 && s < S) any_arc_interior_contact = true;
    }
  }

  for (int i = 0; i <= int(traj.arcs.size()); ++i)
    if (junction_at[i]) {
      ++out.junctions;
      if (i > 0 && i < int(traj.arcs.size())) out.interior_junction = true;
    }

  if (all_on_both) {
    out.kind = PhaseKind::gliding;
  } else if (!any_arc_interior_contact) {
    out.kind = PhaseKind::proper;
  } else {
    out.kind = PhaseKind::mixed;
  }
  out.structure_ok = out.kind == PhaseKind::proper && out.visits_q_interior && out.visits_p_interior &&
                     out.interior_junction;
  return out;
}

struct BoundCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
  bool evidence_only = false;
};

struct LengthBoundsReport {
  Vec fixed_point;                  // center of the largest twist-fixed inscribed ball
  double fixed_point_radius = 0.0;  // its radius
  double twist_angle = 0.0;
  double shortest_length = std::numeric_limits<double>::infinity();
  bool any_accepted = false;
  std::vector<double> accepted_lengths;
  BilliardTrajectory best;
  double product_capacity = 0.0;
  double product_capacity_error = 0.0;
  double width_value = 0.0;
  double inradius_value = 0.0;
  bool four_inradius_equality = false;  // shortest accepted length sits at 4 x inradius
  std::vector<BoundCheck> checks;
  bool pass = false;
};

// Runs the shooting search and scores every length bound the twist theory
// provides: the fixed-ball twist bound, the symmetric four-inradius bound,
// the diameter upper evidence, and the product-capacity lower bound.
inline LengthBoundsReport length_bound_suite(const BodyPtr& table, const Mat& A,
                                             const BilliardSearchConfig& cfg = {}) {
  if (!table) throw BadInput("null table");
  const int n = table->dim();
  detail::require_orthogonal(A, n);

  LengthBoundsReport rep;
  const Mat fix_basis = kernel_basis(A - Mat::Identity(n, n), 1e-9);
  const auto inr_fixed = inradius_in_subspace(*table, fix_basis);
  const double body_scale = table->circumradius() + 1.0;
  if (inr_fixed.value <= 1e-7 * body_scale)
    throw NoFixedInteriorPoint("no twist-fixed point interior to the table");
  rep.fixed_point = inr_fixed.center;
  rep.fixed_point_radius = inr_fixed.value;
  rep.twist_angle = t_psi(psi_from_A(A));

  const double diam = diameter(*table);
  const double tol = 1e-4 * diam;
  const auto found = search_a_billiards(table, A, cfg.bounce_counts, cfg.restarts, cfg.seed, cfg);
  const BilliardTrajectory* best = nullptr;
  for (const auto& t : found) {
    if (!t.accepted) continue;
    rep.accepted_lengths.push_back(t.length);
    if (!best || t.length < best->length) best = &t;
  }
  rep.any_accepted = best != nullptr;
  if (!best)
    for (const auto& t : found)
      if (!best || t.position_residual + t.velocity_residual < best->position_residual + best->velocity_residual)
        best = &t;
  rep.best = *best;
  if (rep.any_accepted) rep.shortest_length = rep.best.length;

  const double min_len =
      rep.accepted_lengths.empty()
          ? std::numeric_limits<double>::infinity()
          : *std::min_element(rep.accepted_lengths.begin(), rep.accepted_lengths.end());

  {
    BoundCheck c{"accepted-lengths-above-twist-bound", rep.fixed_point_radius * rep.twist_angle / 2.0, min_len,
                 false, false};
    c.pass = rep.any_accepted && c.rhs >= c.lhs - tol;
    rep.checks.push_back(c);
  }

  const bool identity_twist = (A - Mat::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-12;
  const auto inr_full = inradius_in_subspace(*table, Mat::Identity(n, n));
  rep.inradius_value = inr_full.value;
  rep.width_value = width(*table).value;
  if (identity_twist) {
    bool symmetric = true;
    RngStream rng = RngStream(cfg.seed).child(fnv1a("symmetry-probe"));
    const Vec c0 = inr_full.center;
    for (int i = 0; i < 64 && symmetric; ++i) {
      Vec dir = rng.normal_vec(n);
      if (dir.norm() < 1e-12) continue;
      dir.normalize();
      const double plus = table->support(dir).value - c0.dot(dir);
      const double minus = table->support(Vec(-dir)).value + c0.dot(dir);
      symmetric = std::abs(plus - minus) <= 1e-6 * body_scale;
    }
    if (symmetric) {
      BoundCheck c{"symmetric-lengths-above-four-inradius", 4.0 * rep.inradius_value, min_len, false, false};
      c.pass = rep.any_accepted && c.rhs >= c.lhs - tol;
      rep.checks.push_back(c);
      rep.four_inradius_equality = rep.any_accepted && std::abs(min_len - 4.0 * rep.inradius_value) <= tol;
    }
  }

  {
    BoundCheck c{"search-reached-diameter-upper-bound", min_len, kPi * diam, false, true};
    c.pass = rep.any_accepted && c.lhs <= c.rhs + tol;
    rep.checks.push_back(c);
  }

  {
    CapacityConfig ccfg;
    ccfg.n_nodes = cfg.capacity_nodes;
    ccfg.restarts = cfg.capacity_restarts;
    ccfg.max_iter = cfg.capacity_max_iter;
    ccfg.seed = cfg.seed;
    const BodyPtr product = make_product(table, make_ball(Vec::Zero(n), 1.0));
    const CapacityResult cap = minimize_capacity(product, psi_from_A(A), ccfg);
    rep.product_capacity = cap.value;
    rep.product_capacity_error = cap.rel_error;
    BoundCheck c{"product-capacity-below-shortest-length", cap.value, min_len, false, false};
    c.pass = rep.any_accepted && c.lhs <= c.rhs + 3.0 * cap.rel_error * cap.value + tol;
    rep.checks.push_back(c);
  }

  rep.pass = rep.any_accepted;
  for (const auto& c : rep.checks) rep.pass = rep.pass && (c.evidence_only || c.pass);
  return rep;
}

}  // namespace ehz
