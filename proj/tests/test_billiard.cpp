#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ehz/billiard.hpp"

using namespace ehz;

namespace {

BodyPtr unit_disk() { return make_ball(Eigen::Vector2d(0.0, 0.0), 1.0); }

BodyPtr unit_square() {
  Mat v(4, 2);
  v << -1, -1, 1, -1, 1, 1, -1, 1;
  return make_polytope(v);
}

Vec v2(double x, double y) { return Eigen::Vector2d(x, y); }

Mat chain(std::initializer_list<std::pair<double, double>> pts) {
  Mat m(int(pts.size()), 2);
  int i = 0;
  for (auto [x, y] : pts) {
    m(i, 0) = x;
    m(i, 1) = y;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("cone distances match hand geometry", "[billiard]") {
  Mat quadrant(2, 2);
  quadrant << 1, 0, 0, 1;  // columns e1, e2
  CHECK(dist_to_cone(quadrant, v2(2.0, 3.0)).dist == Catch::Approx(0.0).margin(1e-12));
  CHECK(dist_to_cone(quadrant, v2(-1.0, 0.0)).dist == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(dist_to_cone(quadrant, v2(-3.0, 4.0)).dist == Catch::Approx(3.0).epsilon(1e-10));

  Mat single(2, 1);
  single << 1, 0;
  CHECK(dist_to_cone(single, v2(1.0, 1.0)).dist == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(dist_to_cone(single, v2(5.0, 0.0)).dist == Catch::Approx(0.0).margin(1e-12));

  Mat none(2, 0);
  CHECK(dist_to_cone(none, v2(3.0, 4.0)).dist == Catch::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("rays exit where the table geometry says", "[billiard]") {
  auto disk = unit_disk();
  RayHit hit = ray_exit(disk, v2(0, 0), v2(1, 0));
  CHECK((hit.point - v2(1, 0)).norm() < 1e-10);
  REQUIRE(hit.normals.size() == 1);
  CHECK((hit.normals[0] - v2(1, 0)).norm() < 1e-9);
  CHECK(hit.t == Catch::Approx(1.0).epsilon(1e-10));

  // Corner of the square: both edge normals are active.
  auto sq = unit_square();
  RayHit corner = ray_exit(sq, v2(0, 0), Vec(v2(1, 1) / std::sqrt(2.0)));
  CHECK((corner.point - v2(1, 1)).norm() < 1e-9);
  CHECK(corner.normals.size() == 2);

  auto ellipse = make_ellipsoid(v2(0, 0), Mat(Eigen::Matrix2d(Eigen::Vector2d(0.25, 1.0).asDiagonal())));
  RayHit far = ray_exit(ellipse, v2(0, 0), v2(1, 0));
  CHECK((far.point - v2(2, 0)).norm() < 1e-9);

  // Boundary start pointing inward dips inside and crosses once more.
  RayHit across = ray_exit(disk, v2(1, 0), v2(-1, 0));
  CHECK((across.point - v2(-1, 0)).norm() < 1e-9);
  CHECK(across.t == Catch::Approx(2.0).epsilon(1e-9));

  CHECK_THROWS_AS(ray_exit(disk, v2(1, 0), v2(0, 1)), DegenerateRay);
  CHECK_THROWS_AS(ray_exit(disk, v2(0, 0), v2(0, 0)), ZeroDirection);
  CHECK_THROWS_AS(ray_exit(disk, v2(3, 0), v2(1, 0)), BadInput);
}

TEST_CASE("mirror reflection obeys the jump law", "[billiard]") {
  CHECK((reflect(v2(1, 0), v2(1, 0)) - v2(-1, 0)).norm() < 1e-14);
  CHECK((reflect(Vec(v2(1, 1) / std::sqrt(2.0)), v2(1, 0)) - Vec(v2(-1, 1) / std::sqrt(2.0))).norm() < 1e-14);

  RngStream rng(41);
  for (int i = 0; i < 24; ++i) {
    Vec n = rng.normal_vec(2).normalized();
    Vec v = rng.normal_vec(2);
    if (v.dot(n) <= 1e-6) v -= 2.0 * v.dot(n) * n;
    if (v.dot(n) <= 1e-6) continue;
    const Vec w = reflect(v, n);
    CHECK(std::abs(w.norm() - v.norm()) < 1e-12);
    const Vec tangent = v2(-n[1], n[0]);
    CHECK(std::abs((w - v).dot(tangent)) < 1e-12);   // jump is purely normal
    CHECK(std::abs((w + v).dot(n)) < 1e-12);         // sum is purely tangent
    CHECK((reflect(Vec(-w), n) + v).norm() < 1e-12); // involution on the ghost
  }

  CHECK_THROWS_AS(reflect(v2(0, 1), v2(1, 0)), TangentialImpact);
}

TEST_CASE("straight flight bounces deterministically", "[billiard]") {
  auto disk = unit_disk();
  BilliardTrajectory traj = flow(disk, v2(-0.5, 0), v2(1, 0), 2);
  REQUIRE(traj.points.rows() == 3);
  CHECK((traj.points.row(1).transpose() - v2(1, 0)).norm() < 1e-9);
  CHECK((traj.points.row(2).transpose() - v2(-1, 0)).norm() < 1e-9);
  CHECK(traj.length == Catch::Approx(3.5).epsilon(1e-9));
  CHECK(traj.start_interior);
  CHECK_FALSE(traj.end_interior);
  REQUIRE(traj.times.size() == 1);  // the final wall point is the endpoint
  CHECK(traj.times[0] == Catch::Approx(1.5).epsilon(1e-9));

  // Square flight closed up by a half chord has total length four.
  auto sq = unit_square();
  BilliardTrajectory closed = flow(sq, v2(0, 0), v2(0, 1), 2, 0.5);
  REQUIRE(closed.points.rows() == 4);
  CHECK((closed.points.row(1).transpose() - v2(0, 1)).norm() < 1e-12);
  CHECK((closed.points.row(2).transpose() - v2(0, -1)).norm() < 1e-12);
  CHECK((closed.points.row(3).transpose() - v2(0, 0)).norm() < 1e-12);
  CHECK(closed.length == Catch::Approx(4.0).epsilon(1e-12));
  CHECK(closed.times.size() == 2);

  for (int j = 0; j < closed.velocities.rows(); ++j)
    CHECK(std::abs(closed.velocities.row(j).norm() - 1.0) < 1e-12);

  // Reflected direction at an ellipse wall matches the analytic mirror law.
  auto ellipse = make_ellipsoid(v2(0, 0), Mat(Eigen::Matrix2d(Eigen::Vector2d(0.25, 1.0).asDiagonal())));
  const Vec dir = v2(2, 1).normalized();
  BilliardTrajectory tr = flow(ellipse, v2(0, 0), dir, 1, 0.25);
  const Vec hit = tr.points.row(1).transpose();
  Vec n_exact = v2(hit[0] / 2.0, 2.0 * hit[1]).normalized();
  const Vec refl_exact = dir - 2.0 * dir.dot(n_exact) * n_exact;
  CHECK((tr.velocities.row(1).transpose() - refl_exact).norm() < 1e-9);

  CHECK_THROWS_AS(flow(disk, v2(0, 0), v2(1, 0), 0), BadInput);
  // A corner may terminate a flight but never reflect one.
  CHECK_NOTHROW(flow(sq, v2(0, 0), v2(1, 1), 1));
  CHECK_THROWS_AS(flow(sq, v2(0, 0), v2(1, 1), 1, 0.5), TangentialImpact);
}

TEST_CASE("twist residuals vanish exactly on closed orbits", "[billiard]") {
  auto disk = unit_disk();
  const Mat I2 = Mat::Identity(2, 2);

  BilliardTrajectory orbit =
      trajectory_from_points(disk, chain({{-0.5, 0}, {1, 0}, {-1, 0}, {-0.5, 0}}));
  TwistResidual closed = twist_residual(orbit, I2);
  CHECK(closed.total < 1e-12);
  CHECK(closed.rule == EndpointRule::direct);
  CHECK(orbit.bounces() == 2);

  // Half of the diameter orbit closes under a half-turn twist.
  BilliardTrajectory half = trajectory_from_points(disk, chain({{0.5, 0}, {1, 0}, {-0.5, 0}}));
  CHECK(twist_residual(half, rotation2(kPi)).total < 1e-12);
  CHECK(a_billiard_residual(half, rotation2(kPi)) < 1e-12);
  CHECK(a_billiard_residual(half, I2) > 0.5);

  // Wall-to-wall diameter run needs the mirrored rule at an endpoint.
  BilliardTrajectory wall = trajectory_from_points(disk, chain({{1, 0}, {-1, 0}, {1, 0}}));
  TwistResidual mirrored = twist_residual(wall, I2);
  CHECK(mirrored.total < 1e-12);
  CHECK(mirrored.rule != EndpointRule::direct);

  RngStream rng(7);
  Mat noise(4, 2);
  for (int i = 0; i < 4; ++i) noise.row(i) = 0.4 * rng.normal_vec(2).transpose();
  CHECK(a_billiard_residual(trajectory_from_points(disk, noise), I2) > 1e-3);
}

TEST_CASE("shooting search recovers the disk diameter orbit", "[billiard]") {
  auto disk = unit_disk();
  const Mat I2 = Mat::Identity(2, 2);
  BilliardTrajectory best = find_a_billiard(disk, I2, {1, 2, 3}, 10, 3);
  REQUIRE(best.accepted);
  CHECK(best.length == Catch::Approx(4.0).epsilon(5e-3));
  CHECK(best.bounces() >= 2);
  CHECK(best.position_residual + best.velocity_residual < 2e-6 * 2.0);

  BilliardTrajectory again = find_a_billiard(disk, I2, {1, 2, 3}, 10, 3);
  CHECK((best.points - again.points).cwiseAbs().maxCoeff() == 0.0);  // seeded determinism
}

TEST_CASE("twisted searches respect the rotation bound", "[billiard]") {
  auto disk = unit_disk();
  const double t_half_turn = kPi;  // smallest s with e^{sJ} = -I

  BilliardTrajectory flip = find_a_billiard(disk, Mat(-Mat::Identity(2, 2)), {1, 2, 3}, 10, 5);
  REQUIRE(flip.accepted);
  CHECK(flip.length >= t_half_turn / 2.0 - 1e-3);

  BilliardTrajectory quarter = find_a_billiard(disk, rotation2(kPi / 2.0), {1, 2, 3}, 10, 5);
  REQUIRE(quarter.accepted);
  CHECK(quarter.length >= (kPi / 2.0) / 2.0 - 1e-3);
}

TEST_CASE("generalized corner sequences verify clause by clause", "[billiard]") {
  auto sq = unit_square();
  const Mat I2 = Mat::Identity(2, 2);

  GeneralizedBilliardReport ok = verify_generalized(chain({{0, -1}, {0, 1}, {0, -1}}), sq, I2);
  CHECK(ok.pass);
  CHECK(ok.worst_violation < 1e-9);
  CHECK(ok.endpoint_rule != EndpointRule::direct);  // wall endpoints use a mirrored rule

  GeneralizedBilliardReport bad = verify_generalized(chain({{0, -1}, {0, 1}, {0, -1}}), sq, rotation2(kPi / 2.0));
  CHECK_FALSE(bad.pass);
  bool endpoint_failed = false;
  for (const auto& c : bad.checks)
    if (!c.pass && (c.name == "endpoint-position" || c.name == "endpoint-velocity")) endpoint_failed = true;
  CHECK(endpoint_failed);

  // A corner bounce is certified through the two-normal cone.
  GeneralizedBilliardReport corner =
      verify_generalized(chain({{0, 0}, {1, 1}, {-1, 1}, {0, 0}}), sq, I2);
  for (const auto& c : corner.checks)
    if (c.name == "bounce-normal-cones") CHECK(c.pass);

  // Distinctness rejects a stuttering sequence.
  GeneralizedBilliardReport stutter =
      verify_generalized(chain({{0, -1}, {0, 1}, {0, 1}, {0, -1}}), sq, I2);
  CHECK_FALSE(stutter.pass);

  // Bounce sequences of accepted smooth-table trajectories verify as corner
  // sequences, and vice versa for the failing twist.
  auto disk = unit_disk();
  BilliardTrajectory found = find_a_billiard(disk, I2, {2}, 8, 11);
  REQUIRE(found.accepted);
  CHECK(verify_generalized(found.points, disk, I2).pass);
}

TEST_CASE("lifted orbits act like their lengths", "[billiard]") {
  auto disk = unit_disk();
  BilliardTrajectory orbit =
      trajectory_from_points(disk, chain({{-0.5, 0}, {1, 0}, {-1, 0}, {-0.5, 0}}));
  orbit.A = Mat::Identity(2, 2);

  PhaseTrajectory lifted = lift_to_phase(orbit);
  CHECK(lifted.action == Catch::Approx(orbit.length).epsilon(1e-9));
  CHECK(lifted.action == Catch::Approx(4.0).epsilon(1e-6));
  CHECK(lifted.loop_action_mismatch < 1e-9);

  double momentum_action = 0.0;
  int momentum_arcs = 0;
  for (const auto& arc : lifted.arcs)
    if (arc.momentum_arc) {
      momentum_action += std::abs(arc.action);
      ++momentum_arcs;
    }
  CHECK(momentum_arcs >= 2);
  CHECK(momentum_action < 1e-12);  // bounce chords never move the position

  PhaseTrajectory scaled = lift_to_phase(orbit, 2.0);
  CHECK(scaled.action == Catch::Approx(2.0 * orbit.length).epsilon(1e-9));

  // The same works on a polytope table through per-bounce normals.
  auto sq = unit_square();
  BilliardTrajectory closed = flow(sq, v2(0, 0), v2(0, 1), 2, 0.5);
  closed.A = Mat::Identity(2, 2);
  PhaseTrajectory sq_lift = lift_to_phase(closed);
  CHECK(sq_lift.action == Catch::Approx(4.0).epsilon(1e-9));

  // Unaccepted trajectories cannot be lifted.
  BilliardTrajectory open_path = trajectory_from_points(disk, chain({{-0.5, 0}, {1, 0}, {-0.3, 0.4}}));
  open_path.A = Mat::Identity(2, 2);
  CHECK_THROWS_AS(lift_to_phase(open_path), LiftValidationFailed);
}

TEST_CASE("support sums reproduce twisted path actions", "[billiard]") {
  Mat square_path = chain({{1, 1}, {-1, 1}, {-1, -1}, {1, -1}, {1, 1}});
  auto b1 = make_ball(v2(0, 0), 1.0);
  CHECK(adl_action(square_path, b1) == Catch::Approx(8.0).epsilon(1e-12));
  CHECK(adl_action(square_path, make_ball(v2(0, 0), 2.0)) == Catch::Approx(16.0).epsilon(1e-12));

  // Square momentum factor turns the sum into l1 length.
  CHECK(adl_action(chain({{0, 0}, {1, 1}, {0, 0}}), unit_square()) == Catch::Approx(4.0).epsilon(1e-12));

  auto disk = unit_disk();
  BilliardTrajectory orbit =
      trajectory_from_points(disk, chain({{-0.5, 0}, {1, 0}, {-1, 0}, {-0.5, 0}}));
  orbit.A = Mat::Identity(2, 2);
  CHECK(lift_to_phase(orbit).action == Catch::Approx(adl_action(orbit.points, b1)).epsilon(1e-9));
}

TEST_CASE("phase paths classify by wall contact", "[billiard]") {
  auto disk = unit_disk();

  BilliardTrajectory orbit =
      trajectory_from_points(disk, chain({{-0.5, 0}, {1, 0}, {-1, 0}, {-0.5, 0}}));
  orbit.A = Mat::Identity(2, 2);
  PhaseClassification lifted = classify_phase(lift_to_phase(orbit));
  CHECK(lifted.kind == PhaseKind::proper);
  CHECK(lifted.structure_ok);
  CHECK(lifted.junctions >= 2);

  // Constant-speed rotation pair rides both walls the whole time.
  const int N = 256;
  Mat glide(N + 1, 4);
  for (int i = 0; i <= N; ++i) {
    const double t = 2.0 * kPi * i / N;
    glide.row(i) << std::cos(t), std::sin(t), std::sin(t), -std::cos(t);
  }
  PhaseTrajectory gliding = phase_path(disk, disk, glide, Mat::Identity(4, 4));
  CHECK(classify_phase(gliding).kind == PhaseKind::gliding);

  // An edge-riding arc puts a whole interval on both walls: neither proper
  // nor gliding.
  Mat ride(3, 4);
  ride.row(0) << 1, -0.5, 1, 0;
  ride.row(1) << 1, 0.5, 1, 0;
  ride.row(2) << 0, 0, 1, 0;
  PhaseTrajectory mixed = phase_path(unit_square(), disk, ride, Mat::Identity(4, 4));
  CHECK(classify_phase(mixed).kind == PhaseKind::mixed);

  Mat frozen = Mat::Zero(2, 4);
  CHECK_THROWS_AS(phase_path(disk, disk, frozen, Mat::Identity(4, 4)), BadInput);
}

TEST_CASE("length bounds hold on the canonical tables", "[billiard]") {
  const Mat I2 = Mat::Identity(2, 2);
  BilliardSearchConfig cfg;
  cfg.bounce_counts = {1, 2, 3};
  cfg.restarts = 8;
  cfg.seed = 17;

  LengthBoundsReport disk_rep = length_bound_suite(unit_disk(), I2, cfg);
  CHECK(disk_rep.any_accepted);
  CHECK(disk_rep.fixed_point_radius == Catch::Approx(1.0).epsilon(1e-6));
  CHECK(disk_rep.twist_angle == Catch::Approx(2.0 * kPi).epsilon(1e-9));
  CHECK(disk_rep.shortest_length == Catch::Approx(4.0).epsilon(5e-3));
  CHECK(disk_rep.four_inradius_equality);
  CHECK(disk_rep.product_capacity == Catch::Approx(4.0).epsilon(3e-2));
  CHECK(disk_rep.pass);

  LengthBoundsReport sq_rep = length_bound_suite(unit_square(), I2, cfg);
  CHECK(sq_rep.any_accepted);
  CHECK(sq_rep.shortest_length == Catch::Approx(4.0).epsilon(5e-3));
  CHECK(sq_rep.inradius_value == Catch::Approx(1.0).epsilon(1e-6));
  CHECK(sq_rep.width_value == Catch::Approx(2.0).epsilon(1e-6));
  CHECK(sq_rep.four_inradius_equality);
  CHECK(sq_rep.pass);

  LengthBoundsReport flip_rep = length_bound_suite(unit_disk(), Mat(-I2), cfg);
  CHECK(flip_rep.any_accepted);
  CHECK(flip_rep.twist_angle == Catch::Approx(kPi).epsilon(1e-9));
  for (double len : flip_rep.accepted_lengths) CHECK(len >= kPi / 2.0 - 1e-3);
  CHECK(flip_rep.pass);

  // A fixed-point-free twist over a shifted table is rejected up front.
  auto shifted = make_ball(v2(2.0, 0.0), 0.5);
  CHECK_THROWS_AS(length_bound_suite(shifted, Mat(-I2), cfg), NoFixedInteriorPoint);
}
