#include <doctest.h>

#include "fourdfold/geom.hpp"
#include "test_util.hpp"

#include <numbers>

using namespace fourdfold;
using fourdfold::testing::max_abs;

namespace {
constexpr double kPi = std::numbers::pi;

// Axis-angle reconstruction straight from a quaternion, independent of quat_to_rot.
Mat3 axis_angle_matrix(const Quat& q) {
  const Quat u = q.normalized();
  const double angle = 2.0 * std::atan2(u.tail<3>().norm(), u[0]);
  if (u.tail<3>().norm() < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, u.tail<3>().normalized()).toRotationMatrix();
}
}  // namespace

TEST_CASE("quat_to_rot closed forms") {
  CHECK(max_abs(quat_to_rot(1, 0, 0, 0).matrix() - Mat3::Identity()) == 0.0);
  Mat3 expect;
  expect << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  CHECK(max_abs(quat_to_rot(1 / std::sqrt(2.0), 1 / std::sqrt(2.0), 0, 0).matrix() - expect) < 1e-15);
  CHECK_THROWS_AS(quat_to_rot(0, 0, 0, 0), std::invalid_argument);
}

TEST_CASE("quat_to_rot agrees with axis-angle reconstruction and round-trips") {
  Rng rng(11);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int k = 0; k < 1000; ++k) {
    const Quat q(normal(rng), normal(rng), normal(rng), normal(rng));
    const Rotation r = quat_to_rot(q[0], q[1], q[2], q[3]);
    REQUIRE(r.is_valid(1e-8));
    CHECK(max_abs(r.matrix() - axis_angle_matrix(q)) < 1e-12);
    Quat back = r.to_quaternion();
    Quat qn = q.normalized();
    if (qn[0] < 0) qn = -qn;
    CHECK((back - qn).norm() < 1e-10);
  }
}

TEST_CASE("exp_so3 and log_so3 closed forms") {
  CHECK(max_abs(exp_so3(Vec3::Zero()).matrix() - Mat3::Identity()) == 0.0);
  Mat3 rx;
  rx << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  CHECK(max_abs(exp_so3(Vec3(kPi / 2, 0, 0)).matrix() - rx) < 1e-15);
  CHECK(log_so3(Rotation::identity()).norm() == 0.0);
  const Rotation rz(Eigen::AngleAxisd(kPi / 2, Vec3::UnitZ()).toRotationMatrix());
  CHECK((log_so3(rz) - Vec3(0, 0, kPi / 2)).norm() < 1e-15);
}

TEST_CASE("exp/log round trip below pi") {
  Rng rng(3);
  std::uniform_real_distribution<double> uni(0.0, kPi - 1e-3);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Vec3 v = random_unit_vector(rng) * uni(rng);
    worst = std::max(worst, (log_so3(exp_so3(v)) - v).norm());
  }
  CHECK(worst < 1e-7);
  // Tiny angles take the series branch.
  const Vec3 tiny(3e-9, -1e-9, 2e-9);
  CHECK((log_so3(exp_so3(tiny)) - tiny).norm() < 1e-20);
}

TEST_CASE("log_so3 near pi matches quaternion extraction") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const Vec3 axis = random_unit_vector(rng);
    const double angle = kPi - 1e-7;
    const Rotation r(Eigen::AngleAxisd(angle, axis).toRotationMatrix());
    const Vec3 v = log_so3(r);
    CHECK(std::abs(v.norm() - angle) < 1e-5);
    // Quaternion-based oracle: axis = q.xyz / |q.xyz|, angle = 2 atan2(|q.xyz|, q.w).
    const Quat q = r.to_quaternion();
    const Vec3 oracle = q.tail<3>().normalized() * 2.0 * std::atan2(q.tail<3>().norm(), q[0]);
    CHECK((v - oracle).norm() < 1e-5);
  }
}

TEST_CASE("log_so3 at exactly pi picks the first nonzero component positive") {
  const Vec3 axis = Vec3(0.0, -0.6, 0.8);
  Mat3 m = 2.0 * axis * axis.transpose() - Mat3::Identity();
  const Vec3 v = log_so3(Rotation(m));
  CHECK(std::abs(v.norm() - kPi) < 1e-12);
  CHECK(v.y() > 0.0);
  CHECK((v.normalized() + axis).norm() < 1e-12);
}

TEST_CASE("rigid group laws over random transforms") {
  Rng rng(17);
  for (int k = 0; k < 1000; ++k) {
    const Rigid a = random_rigid(rng), b = random_rigid(rng), c = random_rigid(rng);
    const Rigid l = compose(compose(a, b), c);
    const Rigid r = compose(a, compose(b, c));
    CHECK(max_abs(l.rot.matrix() - r.rot.matrix()) < 1e-12);
    CHECK((l.trans - r.trans).norm() < 1e-10);
    const Rigid e = compose(a, Rigid::identity());
    CHECK(max_abs(e.rot.matrix() - a.rot.matrix()) == 0.0);
    CHECK((e.trans - a.trans).norm() == 0.0);
    const Rigid id = invert(compose(a, invert(a)));
    CHECK(max_abs(id.rot.matrix() - Mat3::Identity()) < 1e-8);
    CHECK(id.trans.norm() < 1e-8);
    const Vec3 p = random_unit_vector(rng) * 5.0;
    CHECK((apply(invert(a), apply(a, p)) - p).norm() < 1e-8);
  }
  CHECK((apply(Rigid{Rotation(), Vec3(1, 2, 3)}, Vec3::Zero()) - Vec3(1, 2, 3)).norm() == 0.0);
}

TEST_CASE("vee inverts hat and angle matches axis-angle") {
  const Vec3 v(0.3, -1.2, 0.7);
  CHECK((vee(hat(v)) - v).norm() == 0.0);
  CHECK(std::abs(exp_so3(v).angle() - v.norm()) < 1e-14);
  CHECK(std::abs(geodesic_angle(exp_so3(v), exp_so3(v)) - 0.0) < 1e-7);
}

TEST_CASE("random_rotation is valid and orthonormalized repairs drift") {
  Rng rng(2);
  for (int k = 0; k < 100; ++k) CHECK(random_rotation(rng).is_valid(1e-12));
  Mat3 m = random_rotation(rng).matrix();
  m(0, 0) += 1e-4;
  CHECK_FALSE(Rotation(m).is_valid());
  CHECK(Rotation(m).orthonormalized().is_valid(1e-12));
}

TEST_CASE("FrameGrid layout and shape contract") {
  CHECK_THROWS_AS(FrameGrid(0, 3), std::invalid_argument);
  FrameGrid g(2, 3);
  g.at(1, 2).trans = Vec3(1, 2, 3);
  CHECK(g.data()[5].trans.x() == 1.0);
  CHECK(g.step(1)[2].trans.z() == 3.0);
  CHECK_THROWS(g.set_step(0, std::vector<Rigid>(2)));
}
