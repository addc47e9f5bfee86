#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ehz/body.hpp"
#include "ehz/body_json.hpp"
#include "ehz/ensemble.hpp"
#include "oracles.hpp"

using namespace ehz;
using Catch::Approx;

namespace {

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

TEST_CASE("ball gauge and support closed forms", "[body]") {
  auto ball = make_ball(Vec::Zero(2), 1.0);
  CHECK(ball->gauge(v2(3, 4)).value == Approx(5.0));
  CHECK(ball->gauge(v2(3, 4)).grad.isApprox(v2(0.6, 0.8), 1e-12));
  auto s = ball->support(v2(0, 2));
  CHECK(s.value == Approx(2.0));
  CHECK(s.point.isApprox(v2(0, 1), 1e-12));

  auto off = make_ball(v2(1, 0), 2.0);
  CHECK(off->gauge(v2(3, 0)).value == Approx(1.0));
  CHECK(off->support(v2(1, 0)).value == Approx(3.0));
  CHECK(off->support(v2(1, 0)).point.isApprox(v2(3, 0), 1e-12));
  // Gauge gradient of any body: h(grad) should price the boundary point at gauge value.
  auto g = off->gauge(v2(0.5, 1.5));
  const Vec z_on = v2(0.5, 1.5) / g.value;
  CHECK(g.grad.dot(z_on) == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gauge examples on square and disk sum", "[body]") {
  auto sq = make_polytope(square_ring());
  CHECK(sq->gauge(v2(0.5, -2)).value == Approx(2.0));
  auto sum = make_psum(1.0, make_ball(Vec::Zero(2), 1.0), make_ball(Vec::Zero(2), 1.0));
  CHECK(sum->gauge(v2(2, 0)).value == Approx(1.0).epsilon(1e-7));
}

TEST_CASE("support examples", "[body]") {
  auto sq = make_polytope(square_ring());
  auto s = sq->support(v2(1, 1));
  CHECK(s.value == Approx(2.0));
  CHECK(s.point.isApprox(v2(1, 1), 1e-12));
  auto mix = make_psum(2.0, make_ball(Vec::Zero(2), 1.0), sq);
  CHECK(mix->support(v2(1, 0)).value == Approx(std::sqrt(2.0)));
}

TEST_CASE("polytope support matches vertex maximum", "[body]") {
  RngStream rng(101);
  for (int trial = 0; trial < 6; ++trial) {
    auto poly = random_polygon(rng, 9);
    auto* pb = dynamic_cast<const PolytopeBody*>(poly.get());
    REQUIRE(pb != nullptr);
    for (int k = 0; k < 40; ++k) {
      Vec w = rng.normal_vec(2);
      CHECK(poly->support(w).value == Approx(oracles::support_vertex_max(pb->vertices(), w)).margin(1e-12));
    }
  }
  auto p4 = random_shell_polytope(rng, 4);
  auto* pb4 = dynamic_cast<const PolytopeBody*>(p4.get());
  for (int k = 0; k < 40; ++k) {
    Vec w = rng.normal_vec(4);
    CHECK(p4->support(w).value == Approx(oracles::support_vertex_max(pb4->vertices(), w)).margin(1e-12));
  }
}

TEST_CASE("polygon gauge matches ray-crossing oracle", "[body]") {
  RngStream rng(102);
  for (int trial = 0; trial < 6; ++trial) {
    auto poly = random_polygon(rng, 8);
    auto* pb = dynamic_cast<const PolytopeBody*>(poly.get());
    for (int k = 0; k < 40; ++k) {
      Vec z = 2.0 * rng.normal_vec(2);
      CHECK(poly->gauge(z).value == Approx(oracles::polygon_gauge(pb->vertices(), z)).epsilon(1e-9));
    }
  }
}

TEST_CASE("gauge of 4-d polytopes via support ratio", "[body]") {
  Mat cross(8, 4);
  cross.setZero();
  for (int i = 0; i < 4; ++i) {
    cross(2 * i, i) = 1.0;
    cross(2 * i + 1, i) = -1.0;
  }
  auto cp = make_polytope(cross);
  Mat cube(16, 4);
  for (int m = 0; m < 16; ++m)
    for (int i = 0; i < 4; ++i) cube(m, i) = (m >> i) & 1 ? 1.0 : -1.0;
  auto qb = make_polytope(cube);

  RngStream rng(103);
  for (int k = 0; k < 25; ++k) {
    Vec z = rng.normal_vec(4);
    CHECK(cp->gauge(z).value == Approx(z.lpNorm<1>()).epsilon(2e-6));
    CHECK(qb->gauge(z).value == Approx(z.lpNorm<Eigen::Infinity>()).epsilon(2e-6));
  }
}

TEST_CASE("support-gauge duality through the polar", "[body]") {
  RngStream rng(104);
  std::vector<BodyPtr> bodies;
  bodies.push_back(random_polygon(rng, 8));
  bodies.push_back(make_ball(v2(0.3, -0.2), 1.2));
  bodies.push_back(random_ellipsoid(rng, 2));
  bodies.push_back(make_psum(2.0, make_ball(Vec::Zero(2), 1.0), make_polytope(square_ring())));
  for (const auto& body : bodies) {
    auto dual = make_polar(body);
    for (int k = 0; k < 30; ++k) {
      Vec w = 1.5 * rng.normal_vec(2);
      CHECK(std::abs(body->support(w).value - dual->gauge(w).value) <= 1e-9 * (1.0 + w.norm()));
    }
  }
}

TEST_CASE("polar collapses to closed forms", "[body]") {
  auto cross = make_polar(make_polytope(square_ring()));
  auto* pb = dynamic_cast<const PolytopeBody*>(cross.get());
  REQUIRE(pb != nullptr);
  REQUIRE(pb->vertices().rows() == 4);
  for (int i = 0; i < 4; ++i) CHECK(pb->vertices().row(i).lpNorm<1>() == Approx(1.0));

  auto ball = make_polar(make_ball(Vec::Zero(2), 4.0));
  CHECK(ball->gauge(v2(0.25, 0)).value == Approx(1.0));

  auto back = make_polar(make_polar(make_ball(v2(0.2, 0.1), 1.0)));
  RngStream rng(105);
  for (int k = 0; k < 20; ++k) {
    Vec w = rng.normal_vec(2);
    CHECK(back->support(w).value == Approx(make_ball(v2(0.2, 0.1), 1.0)->support(w).value).epsilon(1e-9));
  }
}

TEST_CASE("p-sum support identity is exact", "[body]") {
  RngStream rng(106);
  auto L = random_polygon(rng, 7);
  auto R = random_ellipsoid(rng, 2);
  for (double p : {1.0, 1.5, 2.0, 3.0}) {
    auto sum = make_psum(p, L, R);
    for (int k = 0; k < 25; ++k) {
      Vec w = rng.normal_vec(2);
      const double lhs = std::pow(sum->support(w).value, p);
      const double rhs = std::pow(L->support(w).value, p) + std::pow(R->support(w).value, p);
      CHECK(lhs == Approx(rhs).epsilon(1e-12));
    }
  }
}

TEST_CASE("product gauge is the factor maximum", "[body]") {
  auto prod = make_product(make_polytope(square_ring()), make_ball(Vec::Zero(2), 0.7));
  RngStream rng(107);
  for (int k = 0; k < 30; ++k) {
    Vec z = rng.normal_vec(4);
    const double want = std::max(z.head(2).lpNorm<Eigen::Infinity>(), z.tail(2).norm() / 0.7);
    CHECK(prod->gauge(z).value == Approx(want).margin(1e-12));
  }
  Vec z(4);
  z << 0.2, -0.1, 0.0, 0.35;
  CHECK(prod->support_soft(z, Soft{}).value == prod->support(z).value);
}

TEST_CASE("lazy translate agrees with closed-form center shift", "[body]") {
  auto base = make_ellipsoid(Vec::Zero(2), (Mat(2, 2) << 0.8, 0.2, 0.2, 1.5).finished());
  auto lazy = std::make_shared<TranslateBody>(base, v2(0.3, -0.1));
  auto direct = make_ellipsoid(v2(0.3, -0.1), (Mat(2, 2) << 0.8, 0.2, 0.2, 1.5).finished());
  RngStream rng(108);
  for (int k = 0; k < 25; ++k) {
    Vec z = 1.3 * rng.normal_vec(2);
    CHECK(lazy->gauge(z).value == Approx(direct->gauge(z).value).epsilon(1e-9));
    Vec w = rng.normal_vec(2);
    CHECK(lazy->support(w).value == Approx(direct->support(w).value).epsilon(1e-12));
  }
}

TEST_CASE("linear image collapses", "[body]") {
  Mat M(2, 2);
  M << 1.2, 0.4, -0.3, 0.9;
  auto img = make_linear(M, make_ball(Vec::Zero(2), 2.0));
  const Mat Minv = M.inverse();
  RngStream rng(109);
  for (int k = 0; k < 25; ++k) {
    Vec z = rng.normal_vec(2);
    CHECK(img->gauge(z).value == Approx((Minv * z).norm() / 2.0).epsilon(1e-10));
    Vec w = rng.normal_vec(2);
    CHECK(img->support(w).value == Approx(2.0 * (M.transpose() * w).norm()).epsilon(1e-10));
  }

  auto poly = make_linear(M, make_polytope(square_ring()));
  auto* pb = dynamic_cast<const PolytopeBody*>(poly.get());
  REQUIRE(pb != nullptr);
  for (int k = 0; k < 25; ++k) {
    Vec w = rng.normal_vec(2);
    CHECK(poly->support(w).value == Approx(oracles::support_vertex_max((square_ring() * M.transpose()), w)).margin(1e-12));
  }
}

TEST_CASE("smoothed support brackets the exact one", "[body]") {
  auto sq = make_polytope(square_ring());
  RngStream rng(110);
  for (int k = 0; k < 20; ++k) {
    Vec w = rng.normal_vec(2);
    const double h = sq->support(w).value;
    for (double P : {16.0, 64.0, 256.0}) {
      const double hs = sq->support_smoothed(w, Soft{P, 0.0, 0.0}).value;
      CHECK(hs >= h - 1e-12);
      CHECK(hs <= h * std::pow(4.0, 1.0 / P) + 1e-12);
    }
    Soft soft{64.0, 0.05, 1e-3};
    const double root = sq->support_soft(w, soft).value;
    const double inner = sq->support_smoothed(w, soft).value;
    CHECK(root == Approx(inner + 0.05 * std::sqrt(w.squaredNorm() + 1e-6)).epsilon(1e-12));
  }
}

TEST_CASE("intersection of square with rotated square", "[body]") {
  Mat R(2, 2);
  const double c = std::cos(kPi / 4), s = std::sin(kPi / 4);
  R << c, -s, s, c;
  auto a = make_polytope(square_ring());
  auto b = make_linear(R, make_polytope(square_ring()));
  auto octagon = make_intersection(a, b);
  auto* pb = dynamic_cast<const PolytopeBody*>(octagon.get());
  REQUIRE(pb != nullptr);
  CHECK(pb->vertices().rows() == 8);
  CHECK(oracles::polygon_area(pb->vertices()) == Approx(8.0 * (std::sqrt(2.0) - 1.0)).epsilon(1e-9));
  RngStream rng(111);
  for (int k = 0; k < 20; ++k) {
    Vec z = rng.normal_vec(2);
    CHECK(octagon->gauge(z).value == Approx(std::max(a->gauge(z).value, b->gauge(z).value)).epsilon(1e-9));
  }
}

TEST_CASE("construction and evaluation errors", "[body]") {
  CHECK_THROWS_AS(make_psum(0.5, make_ball(Vec::Zero(2), 1.0), make_ball(Vec::Zero(2), 1.0)), InvalidExponent);
  CHECK_THROWS_AS(make_ball(Vec::Zero(2), -1.0), BadInput);
  CHECK_THROWS_AS(make_linear(Mat::Zero(2, 2), make_ball(Vec::Zero(2), 1.0)), SingularMatrix);
  auto far = make_ball(v2(5, 0), 1.0);
  CHECK_THROWS_AS(far->gauge(v2(1, 0)), BodyWithoutInteriorOrigin);
  CHECK_THROWS_AS(make_polar(far), BodyWithoutInteriorOrigin);
}

TEST_CASE("p-sum requires origin-interior summands", "[body]") {
  auto far = make_ball(v2(5, 0), 1.0);
  CHECK_THROWS_AS(make_psum(2.0, far, make_ball(Vec::Zero(2), 1.0)), BodyWithoutInteriorOrigin);
}

TEST_CASE("gauge and support homogeneity and convexity", "[body]") {
  RngStream rng(112);
  std::vector<BodyPtr> bodies = {random_polygon(rng, 8), random_ellipsoid(rng, 2),
                                 make_psum(2.0, random_polygon(rng, 6), make_ball(Vec::Zero(2), 0.8)),
                                 random_shell_polytope(rng, 4)};
  for (const auto& body : bodies) {
    const int d = body->dim();
    for (int k = 0; k < 20; ++k) {
      Vec z = rng.normal_vec(d);
      const double lam = rng.uniform(0.1, 3.0);
      CHECK(body->gauge(lam * z).value == Approx(lam * body->gauge(z).value).epsilon(1e-8));
      Vec w1 = rng.normal_vec(d), w2 = rng.normal_vec(d);
      CHECK(body->support(lam * w1).value == Approx(lam * body->support(w1).value).epsilon(1e-10));
      const double mid = body->support(Vec(0.5 * (w1 + w2))).value;
      CHECK(mid <= 0.5 * body->support(w1).value + 0.5 * body->support(w2).value + 1e-10);
    }
  }
}

TEST_CASE("body JSON round-trip", "[body]") {
  const char* text = R"({"type":"psum","p":2,
      "left":{"type":"translate","by":[0.1,0],"body":{"type":"ball","center":[0,0],"radius":1}},
      "right":{"type":"linear","matrix":[[1.1,0.2],[0,0.9]],
               "body":{"type":"polytope","vertices":[[-1,-1],[1,-1],[1,1],[-1,1]]}}})";
  auto body = body_from_json(json::parse(text));
  auto round = body_from_json(body_to_json(body));
  RngStream rng(113);
  for (int k = 0; k < 20; ++k) {
    Vec w = rng.normal_vec(2);
    CHECK(body->support(w).value == Approx(round->support(w).value).epsilon(1e-12));
  }
  CHECK_THROWS_AS(body_from_json(json::parse(R"({"type":"moebius"})")), BadInput);
  CHECK_THROWS_AS(load_body_file("/nonexistent/body.json"), BadInput);
}

TEST_CASE("monotone support under inclusion", "[body]") {
  RngStream rng(114);
  auto inner = make_ball(Vec::Zero(2), 0.6);
  auto outer = random_polygon(rng, 9);  // contains 0.5-ball? not guaranteed; use psum to force inclusion
  auto big = make_psum(1.0, outer, inner);
  for (int k = 0; k < 30; ++k) {
    Vec w = rng.normal_vec(2);
    CHECK(outer->support(w).value <= big->support(w).value + 1e-12);
    CHECK(inner->support(w).value <= big->support(w).value + 1e-12);
  }
}
