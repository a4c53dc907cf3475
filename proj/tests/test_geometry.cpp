#include <doctest.h>

#include "doorbench/geometry.hpp"
#include "doorbench/random.hpp"

using namespace doorbench;

TEST_CASE("ray hits a unit box face at the hand-computed distance") {
  Box b{make_pose(Mat3::Identity(), Vec3(2.0, 0.0, 0.0)), Vec3(0.1, 0.5, 0.5)};
  auto t = intersect(Ray{Vec3::Zero(), Vec3::UnitX()}, b);
  REQUIRE(t);
  CHECK(*t == doctest::Approx(1.9).epsilon(1e-12));
  CHECK_FALSE(intersect(Ray{Vec3::Zero(), -Vec3::UnitX()}, b));
  CHECK_FALSE(intersect(Ray{Vec3(0, 0.6, 0), Vec3::UnitX()}, b));
}

TEST_CASE("ray starting inside reports zero") {
  Box b{Pose::Identity(), Vec3(1, 1, 1)};
  auto t = intersect(Ray{Vec3::Zero(), Vec3::UnitY()}, b);
  REQUIRE(t);
  CHECK(*t == 0.0);
}

TEST_CASE("cylinder side and cap hits") {
  Cylinder c{make_pose(Mat3::Identity(), Vec3(0, 0, 0)), 0.5, 1.0};
  auto side = intersect(Ray{Vec3(-3, 0, 0), Vec3::UnitX()}, c);
  REQUIRE(side);
  CHECK(*side == doctest::Approx(2.5));
  auto cap = intersect(Ray{Vec3(0.2, 0, 5), -Vec3::UnitZ()}, c);
  REQUIRE(cap);
  CHECK(*cap == doctest::Approx(4.0));
  CHECK_FALSE(intersect(Ray{Vec3(0.6, 0, 5), -Vec3::UnitZ()}, c));
}

TEST_CASE("capsule hit through the spherical end") {
  Capsule cap{Vec3(0, 0, 0), Vec3(0, 0, 1), 0.2};
  auto t = intersect(Ray{Vec3(0, 0, 3), -Vec3::UnitZ()}, cap);
  REQUIRE(t);
  CHECK(*t == doctest::Approx(1.8));
}

TEST_CASE("signed distances agree with ray hits on surfaces") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const Mat3 r = exp_so3(Vec3(rng.normal(), rng.normal(), rng.normal()));
    Box b{make_pose(r, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))),
          Vec3(rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5))};
    Cylinder c{b.pose, rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
    const Vec3 o(5, rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
    const Vec3 d = (b.pose.translation() - o).normalized();
    for (const Solid& s : {Solid(b), Solid(c)}) {
      auto t = intersect(Ray{o, d}, s);
      REQUIRE(t);
      CHECK(std::abs(signed_distance(o + *t * d, s)) < 1e-9);
    }
  }
}

TEST_CASE("log and exp are inverse") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    Vec3 w(rng.normal(), rng.normal(), rng.normal());
    w = w.normalized() * rng.uniform(0.0, 3.1);
    CHECK((log_so3(exp_so3(w)) - w).norm() < 1e-9);
  }
  CHECK(log_so3(Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("clip_motion limits translation and rotation independently") {
  const Pose a = Pose::Identity();
  const Pose b = make_pose(axis_angle(Vec3::UnitZ(), 1.0), Vec3(0.5, 0, 0));
  const Pose c = clip_motion(a, b, 0.1, 0.5);
  CHECK((c.translation() - Vec3(0.1, 0, 0)).norm() < 1e-12);
  CHECK(rotation_angle(c.linear()) == doctest::Approx(0.5));
}

TEST_CASE("box overlap by separating axes") {
  Box a{Pose::Identity(), Vec3(0.5, 0.5, 0.5)};
  Box b{make_pose(axis_angle(Vec3::UnitZ(), kPi / 4), Vec3(1.2, 0, 0)), Vec3(0.5, 0.5, 0.5)};
  CHECK(overlaps(a, b));  // the rotated corner reaches x = 1.2 - 0.707
  b.pose.translation() = Vec3(1.25, 0, 0);
  CHECK_FALSE(overlaps(a, b));
}

TEST_CASE("capsule-box overlap") {
  Box a{Pose::Identity(), Vec3(0.5, 0.5, 0.5)};
  CHECK(overlaps(Capsule{Vec3(0.6, -2, 0), Vec3(0.6, 2, 0), 0.15}, a));
  CHECK_FALSE(overlaps(Capsule{Vec3(0.7, -2, 0), Vec3(0.7, 2, 0), 0.15}, a));
}

TEST_CASE("extent along a direction") {
  Box b{Pose::Identity(), Vec3(0.1, 0.2, 0.3)};
  CHECK(extent_along(b, Vec3::UnitY()) == doctest::Approx(0.4));
  Cylinder c{Pose::Identity(), 0.05, 0.2};
  CHECK(extent_along(c, Vec3::UnitX()) == doctest::Approx(0.1));
  CHECK(extent_along(c, Vec3::UnitZ()) == doctest::Approx(0.4));
}
