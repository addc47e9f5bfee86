#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ehz/body.hpp"
#include "ehz/capacity.hpp"
#include "ehz/geometry.hpp"
#include "ehz/symplectic.hpp"
#include "oracles.hpp"

using namespace ehz;
using Catch::Approx;

namespace {

SymplecticMap identity_map(int d) { return make_symplectic(Mat::Identity(d, d)); }

Mat circle_nodes(int N, double r = 1.0, double cx = 0.0, double cy = 0.0) {
  Mat X(N, 2);
  for (int k = 0; k < N; ++k) {
    const double t = 2.0 * kPi * double(k) / double(N);
    X(k, 0) = cx + r * std::cos(t);
    X(k, 1) = cy + r * std::sin(t);
  }
  return X;
}

// Counterclockwise square boundary with the corners among the nodes.
Mat square_nodes(int per_edge, double half = 1.0) {
  Mat X(4 * per_edge, 2);
  Mat corner(4, 2);
  corner << half, half, -half, half, -half, -half, half, -half;
  for (int e = 0; e < 4; ++e) {
    const Vec a = corner.row(e).transpose();
    const Vec b = corner.row((e + 1) % 4).transpose();
    for (int i = 0; i < per_edge; ++i)
      X.row(e * per_edge + i) = ((1.0 - double(i) / per_edge) * a + (double(i) / per_edge) * b).transpose();
  }
  return X;
}

Mat square_ring(double half = 1.0) {
  Mat v(4, 2);
  v << -half, -half, half, -half, half, half, -half, half;
  return v;
}

Vec v2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

}  // namespace

TEST_CASE("discrete paths validate their shape", "[capacity]") {
  CHECK_THROWS_AS(DiscretePath(Mat::Zero(8, 2), identity_map(2)), BadInput);
  CHECK_THROWS_AS(DiscretePath(Mat::Zero(32, 4), identity_map(2)), BadInput);
  const auto psi = make_symplectic(rotation2(0.5));
  DiscretePath path(circle_nodes(32), psi);
  CHECK(path.n_nodes() == 32);
  CHECK((path.node(32) - psi.apply(path.node(0))).norm() == Approx(0.0).margin(1e-15));
}

TEST_CASE("loop action matches polygon areas", "[capacity]") {
  const int N = 256;
  DiscretePath circle(circle_nodes(N), identity_map(2));
  // inscribed regular N-gon area
  CHECK(action(circle) == Approx(0.5 * N * std::sin(2.0 * kPi / N)).epsilon(1e-12));
  CHECK(action(circle) == Approx(kPi).epsilon(1e-3));

  Mat rev = circle_nodes(N);
  rev.colwise().reverseInPlace();
  CHECK(action(DiscretePath(rev, identity_map(2))) == Approx(-action(circle)).epsilon(1e-12));

  DiscretePath sq(square_nodes(16), identity_map(2));
  CHECK(action(sq) == Approx(4.0).epsilon(1e-12));

  // Off-center translation leaves the enclosed area unchanged.
  DiscretePath shifted(circle_nodes(N, 1.0, 0.7, -0.4), identity_map(2));
  CHECK(action(shifted) == Approx(action(circle)).epsilon(1e-12));
}

TEST_CASE("path energy closed forms on circles", "[capacity]") {
  const int N = 256;
  auto disk = make_ball(Vec::Zero(2), 1.0);
  // the area-one circle in the unit disk is the normalized minimizer,
  // its quadratic energy is the disk capacity
  DiscretePath unit_action(circle_nodes(N, 1.0 / std::sqrt(kPi)), identity_map(2));
  CHECK(action(unit_action) == Approx(1.0).epsilon(1e-3));
  CHECK(i_p_functional(unit_action, *disk, 2.0) == Approx(kPi).epsilon(5e-3));

  // degree-2 homogeneity, exact at any resolution
  DiscretePath doubled(Mat(2.0 * circle_nodes(N, 1.0 / std::sqrt(kPi))), identity_map(2));
  CHECK(i_p_functional(doubled, *disk, 2.0) == Approx(4.0 * i_p_functional(unit_action, *disk, 2.0)).epsilon(1e-12));

  // p=1 on the unit disk integrates speed: half the loop perimeter
  DiscretePath unit_circle(circle_nodes(N), identity_map(2));
  CHECK(i_p_functional(unit_circle, *disk, 1.0) == Approx(kPi).epsilon(5e-3));

  CHECK_THROWS_AS(i_p_functional(unit_circle, *disk, 0.5), InvalidExponent);
  auto off = make_ball(v2(5, 0), 1.0);
  CHECK_THROWS_AS(i_p_functional(unit_circle, *off, 2.0), BodyWithoutInteriorOrigin);
  auto b4 = make_ball(Vec::Zero(4), 1.0);
  CHECK_THROWS_AS(i_p_functional(unit_circle, *b4, 2.0), BadInput);
}

TEST_CASE("quotient gradient agrees with finite differences", "[capacity]") {
  auto ell = make_ellipsoid(Vec::Zero(2), (Mat(2, 2) << 1.0, 0.3, 0.3, 2.0).finished());
  const auto psi = make_symplectic(rotation2(0.9));
  const int N = 24;
  Mat X = circle_nodes(N, 0.8, 0.1, -0.05);
  for (int k = 0; k < N; ++k) X.row(k) *= 1.0 + 0.05 * std::sin(3.0 * k);

  detail::QuotientEngine eng(*ell, psi);
  eng.set_nodes_count(N);
  Mat G;
  double A = 0.0;
  const double Q = eng.grad(X, G, A);
  CHECK(A > 0.0);
  CHECK(Q == Approx(eng.quotient(X, nullptr)).epsilon(1e-12));

  const double h = 1e-6;
  for (int k : {0, 1, 7, N - 1}) {
    for (int j = 0; j < 2; ++j) {
      Mat Xp = X, Xm = X;
      Xp(k, j) += h;
      Xm(k, j) -= h;
      const double fd = (eng.quotient(Xp, nullptr) - eng.quotient(Xm, nullptr)) / (2.0 * h);
      CHECK(G(k, j) == Approx(fd).epsilon(2e-5).margin(1e-7));
    }
  }
}

TEST_CASE("round disks attain area capacity", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 3;
  cfg.seed = 11;
  auto disk = make_ball(Vec::Zero(2), 1.0);
  const auto psi = identity_map(2);
  auto res = minimize_capacity(disk, psi, cfg);
  CHECK(res.value == Approx(kPi).epsilon(1e-2));
  CHECK(res.converged);
  CHECK(res.multiplier == Approx(-res.value).epsilon(1e-12));
  CHECK(res.restarts_used == 3);
  CHECK(res.iterations > 0);
  CHECK(res.rel_error >= 3e-3);
  CHECK(res.residuals.count("carrier_gauge") == 1);
  CHECK(res.residuals.count("restart_spread") == 1);
  CHECK(res.residuals.count("a0_spread") == 1);
  CHECK(res.residuals.at("a0_spread") < 5e-2);

  auto small = make_ball(v2(0.3, -0.2), 0.8);
  auto res2 = minimize_capacity(small, psi, cfg);
  CHECK(res2.value == Approx(0.64 * kPi).epsilon(1e-2));
  CHECK((res2.fix_shift - v2(0.3, -0.2)).norm() < 1e-9);
}

TEST_CASE("square capacity equals its area", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 3;
  cfg.seed = 5;
  auto sq = make_polytope(square_ring());
  auto res = minimize_capacity(sq, identity_map(2), cfg);
  CHECK(res.value == Approx(4.0).epsilon(2e-2));
}

TEST_CASE("segment products meet the two-bounce value", "[capacity]") {
  Mat seg(2, 1);
  seg << -1.0, 1.0;
  auto sq = make_product(make_polytope(seg), make_polytope(seg));
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 2;
  cfg.seed = 3;
  auto res = minimize_capacity(sq, identity_map(2), cfg);
  CHECK(res.value == Approx(4.0).epsilon(2e-2));

  auto bidisk = make_product(make_ball(Vec::Zero(2), 1.0), make_ball(Vec::Zero(2), 1.0));
  CapacityConfig cfg4;
  cfg4.n_nodes = 128;
  cfg4.restarts = 3;
  cfg4.seed = 9;
  auto res4 = minimize_capacity(bidisk, identity_map(4), cfg4);
  CHECK(res4.value == Approx(4.0).epsilon(2e-2));
}

TEST_CASE("twisted disks follow the rotation angle", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 2;
  cfg.seed = 17;
  auto disk = make_ball(Vec::Zero(2), 1.0);

  auto quarter = minimize_capacity(disk, make_symplectic(rotation2(0.5 * kPi)), cfg);
  CHECK(quarter.value == Approx(0.25 * kPi).epsilon(2e-2));

  auto antipodal = minimize_capacity(disk, make_symplectic(Mat(-Mat::Identity(2, 2))), cfg);
  CHECK(antipodal.value == Approx(0.5 * kPi).epsilon(2e-2));
  CHECK(antipodal.a0.norm() < 1e-12);
  CHECK(antipodal.fix_shift.norm() < 1e-12);

  Mat H(2, 2);
  H << 1.5, 0.0, 0.0, 1.0 / 1.5;
  const auto hyper = make_symplectic(H);
  auto res = minimize_capacity(disk, hyper, cfg);
  CHECK(res.value == Approx(0.5 * t_psi(hyper)).epsilon(2e-2));

  auto b4 = make_ball(Vec::Zero(4), 1.0);
  auto twist4 = psi_from_A(rotation2(0.5 * kPi));
  auto res4 = minimize_capacity(b4, twist4, cfg);
  CHECK(res4.value == Approx(0.25 * kPi).epsilon(2e-2));
}

TEST_CASE("maps without an interior fixed point are rejected", "[capacity]") {
  auto off = make_ball(v2(5, 0), 1.0);
  const auto anti = make_symplectic(Mat(-Mat::Identity(2, 2)));
  CHECK_THROWS_AS(fixed_interior_point(off, anti), NoFixedInteriorPoint);
  CHECK_THROWS_AS(minimize_capacity(off, anti, {}), NoFixedInteriorPoint);

  auto disk = make_ball(Vec::Zero(2), 1.0);
  CapacityConfig bad;
  bad.n_nodes = 8;
  CHECK_THROWS_AS(minimize_capacity(disk, identity_map(2), bad), BadInput);
  bad = {};
  bad.p = 0.5;
  CHECK_THROWS_AS(minimize_capacity(disk, identity_map(2), bad), InvalidExponent);
  bad = {};
  bad.restarts = 0;
  CHECK_THROWS_AS(minimize_capacity(disk, identity_map(2), bad), BadInput);
}

TEST_CASE("capacity scales quadratically and respects inclusion", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 2;
  cfg.seed = 23;
  const auto psi = identity_map(2);
  auto ell = make_ellipsoid(Vec::Zero(2), (Mat(2, 2) << 1.0, 0.0, 0.0, 1.0 / 0.49).finished());
  auto base = minimize_capacity(ell, psi, cfg);
  CHECK(base.value == Approx(0.7 * kPi).epsilon(1.5e-2));
  for (double alpha : {0.5, 2.0}) {
    auto scaled = minimize_capacity(make_linear(Mat(alpha * Mat::Identity(2, 2)), ell), psi, cfg);
    CHECK(scaled.value == Approx(alpha * alpha * base.value).epsilon(2e-2));
  }

  auto sq = minimize_capacity(make_polytope(square_ring()), psi, cfg);
  auto disk = minimize_capacity(make_ball(Vec::Zero(2), std::sqrt(2.0)), psi, cfg);
  CHECK(sq.value <= disk.value * 1.02);
}

TEST_CASE("one minimizer serves every exponent", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 2;
  cfg.seed = 29;
  auto disk = make_ball(Vec::Zero(2), 1.0);
  const auto psi = identity_map(2);
  auto res = minimize_capacity(disk, psi, cfg);
  REQUIRE(res.converged);
  const BodyPtr rec = make_translate(disk, Vec(-res.fix_shift));
  CHECK(i_p_functional(res.minimizer, *rec, 1.0) == Approx(std::sqrt(res.value)).epsilon(2e-2));
  CHECK(i_p_functional(res.minimizer, *rec, 3.0) == Approx(std::pow(res.value, 1.5)).epsilon(3e-2));

  CapacityConfig cfg3 = cfg;
  cfg3.p = 3.0;
  auto res3 = minimize_capacity(disk, psi, cfg3);
  CHECK(res3.value == Approx(res.value).epsilon(1e-12));
  CHECK(res3.multiplier == Approx(-1.5 * std::pow(res3.value, 1.5)).epsilon(1e-12));
  CHECK(res3.residuals.at("carrier_gauge") < 2e-3);
}

TEST_CASE("capacity ignores translations under the identity twist", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 3;
  cfg.seed = 31;
  Mat pent(5, 2);
  for (int k = 0; k < 5; ++k) {
    const double t = 2.0 * kPi * k / 5.0;
    pent(k, 0) = std::cos(t);
    pent(k, 1) = std::sin(t);
  }
  const auto psi = identity_map(2);
  auto body = make_polytope(pent);
  auto moved = make_translate(body, v2(0.3, -0.2));
  auto a = minimize_capacity(body, psi, cfg);
  auto b = minimize_capacity(moved, psi, cfg);
  CHECK(a.value == Approx(oracles::polygon_area(pent)).epsilon(2e-2));
  CHECK(b.value == Approx(a.value).epsilon(1.5e-2));
}

TEST_CASE("rounding a polytope moves capacity by the rounded area", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 160;
  cfg.restarts = 3;
  cfg.seed = 37;
  const double delta = 0.1;
  auto rounded = make_psum(1.0, make_polytope(square_ring()), make_ball(Vec::Zero(2), delta));
  auto res = minimize_capacity(rounded, identity_map(2), cfg);
  const double area = 4.0 + 8.0 * delta + kPi * delta * delta;
  CHECK(res.value == Approx(area).epsilon(2.5e-2));
}

TEST_CASE("grid refinement is consistent", "[capacity]") {
  auto ell = make_ellipsoid(Vec::Zero(2), (Mat(2, 2) << 1.0, 0.0, 0.0, 1.0 / 0.36).finished());
  const auto psi = identity_map(2);
  CapacityConfig coarse;
  coarse.n_nodes = 96;
  coarse.restarts = 2;
  coarse.seed = 41;
  coarse.refine_error_estimate = true;
  auto lo = minimize_capacity(ell, psi, coarse);
  CapacityConfig fine = coarse;
  fine.n_nodes = 192;
  fine.refine_error_estimate = false;
  auto hi = minimize_capacity(ell, psi, fine);
  CHECK(lo.value == Approx(hi.value).epsilon(1e-2));
  CHECK(lo.residuals.count("refine_delta") == 1);
  CHECK(lo.rel_error >= lo.residuals.at("refine_delta"));
}

TEST_CASE("carrier reports separate boundary, cone and twist failures", "[capacity]") {
  auto disk = make_ball(Vec::Zero(2), 1.0);
  const auto psi = identity_map(2);
  DiscretePath circle(circle_nodes(64), psi);
  auto rep = verify_carrier(circle, disk, psi);
  CHECK(rep.pass);
  CHECK(rep.max_gauge_residual < 1e-9);
  CHECK(rep.max_cone_gap < 1e-6);
  CHECK(rep.twist_residual < 1e-12);

  DiscretePath inflated(Mat(1.1 * circle_nodes(64)), psi);
  auto bad = verify_carrier(inflated, disk, psi);
  CHECK_FALSE(bad.on_boundary_ok);
  CHECK_FALSE(bad.pass);
  CHECK(bad.worst_gauge_node >= 0);

  auto sq = make_polytope(square_ring());
  DiscretePath sqloop(square_nodes(16), identity_map(2));
  auto corner = verify_carrier(sqloop, sq, identity_map(2));
  CHECK(corner.max_gauge_residual < 1e-12);
  CHECK(corner.pass);

  const auto rot = make_symplectic(rotation2(0.7));
  auto twist = verify_carrier(circle, disk, rot);
  CHECK_FALSE(twist.twist_ok);
  CHECK_FALSE(twist.pass);
}

TEST_CASE("solver carriers land on the boundary", "[capacity]") {
  CapacityConfig cfg;
  cfg.n_nodes = 128;
  cfg.restarts = 2;
  cfg.seed = 43;
  auto disk = make_ball(Vec::Zero(2), 1.0);
  const auto psi = identity_map(2);
  auto res = minimize_capacity(disk, psi, cfg);
  REQUIRE(res.converged);
  for (int k = 0; k < res.carrier.n_nodes(); ++k) CHECK(std::abs(res.carrier.node(k).norm() - 1.0) <= 2e-3);
  CHECK(action(res.carrier) == Approx(res.value).epsilon(1e-2));
  auto rep = verify_carrier(res.carrier, disk, psi);
  CHECK(rep.pass);

  auto again = carrier_from_minimizer(res, disk, psi, 2.0);
  CHECK((again.nodes - res.carrier.nodes).norm() < 1e-9);

  auto broken = res;
  broken.converged = false;
  CHECK_THROWS_AS(carrier_from_minimizer(broken, disk, psi, 2.0), CarrierValidationFailed);
  auto inflated = res;
  inflated.value *= 1.3;
  CHECK_THROWS_AS(carrier_from_minimizer(inflated, disk, psi, 2.0), CarrierValidationFailed);
  CHECK_THROWS_AS(carrier_from_minimizer(res, disk, psi, 0.5), InvalidExponent);
}
