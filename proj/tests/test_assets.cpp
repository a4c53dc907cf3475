#include <doctest.h>

#include <filesystem>

#include "doorbench/assets.hpp"
#include "doorbench/error.hpp"
#include "doorbench/random.hpp"

using namespace doorbench;
using namespace doorbench::assets;

TEST_CASE("generate_body is deterministic and within the Interior range") {
  const BodySpec a = generate_body(Category::Interior, 0);
  const BodySpec b = generate_body(Category::Interior, 0);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.width >= 0.8);
  CHECK(a.width <= 1.0);
  CHECK(a.hinge_axis == Vec3::UnitZ());
  CHECK(std::abs(a.socket_pose.translation().x()) < 1e-6);
}

TEST_CASE("Safe boards are thicker than any Interior board") {
  // Interior template tops out at 0.045 m.
  for (std::uint64_t s = 0; s < 20; ++s)
    CHECK(generate_body(Category::Safe, s).thickness >= 0.045);
  CHECK(generate_body(Category::Safe, 3).thickness >= 0.045);
}

TEST_CASE("invalid enum values are rejected") {
  CHECK_THROWS_AS(generate_body(static_cast<Category>(17), 0), Error);
  CHECK_THROWS_AS(generate_handle(static_cast<Mechanism>(9), 0), Error);
}

TEST_CASE("handle defaults and invariants") {
  CHECK(generate_handle(Mechanism::Lever, 1).unlock_threshold == 0.5);
  CHECK(generate_handle(Mechanism::Round, 1).unlock_threshold == 1.0);
  CHECK(generate_handle(Mechanism::Key, 1).unlock_threshold == 1.2);
  CHECK(generate_handle(Mechanism::Valve, 1).unlock_threshold == 1.5);
  const HandleSpec lever = generate_handle(Mechanism::Lever, 1);
  CHECK(std::abs(std::abs(lever.joint_axis.dot(Vec3::UnitX())) - 1.0) < 1e-9);
  CHECK(to_json(generate_handle(Mechanism::Round, 5)).dump() ==
        to_json(generate_handle(Mechanism::Round, 5)).dump());
  for (auto m : kAllMechanisms) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const HandleSpec h = generate_handle(m, s);
      CHECK(h.unlock_threshold > 0.0);
      CHECK(h.unlock_threshold < h.joint_limit);
      for (const auto& p : h.primitives) CHECK(p.dimensions.minCoeff() > 0.0);
      // The anchor must sit on the surface of its primitive.
      const Solid s0 = h.primitives[h.grasp_primitive].solid(Pose::Identity());
      CHECK(std::abs(signed_distance(h.grasp_point, s0)) < 1e-6);
    }
  }
}

TEST_CASE("valve anchor lies on the rim") {
  const HandleSpec v = generate_handle(Mechanism::Valve, 2);
  const Solid rim = v.primitives[v.grasp_primitive].solid(Pose::Identity());
  CHECK(std::abs(signed_distance(v.grasp_point, rim)) < 1e-6);
  CHECK(v.grasp_point.z() > 0.07);
}

TEST_CASE("compose places the handle at the socket and rotates with the hinge") {
  for (auto side : {0, 1}) {
    BodySpec body = generate_body(Category::Interior, 11 + side);
    const DoorInstance d = compose(body, generate_handle(Mechanism::Lever, 4));
    const Pose h0 = d.handle_link(0.0, 0.0);
    CHECK((h0.matrix() - d.body.socket_pose.matrix()).norm() < 1e-12);

    // Hand-computed: rotate the socket point a quarter turn about the vertical hinge line.
    const Vec3 s = d.body.socket_pose.translation();
    const Vec3 h = d.body.hinge_point;
    const double sign = d.body.opening_sign();
    const Vec3 r = s - h;
    const Vec3 expected = h + Vec3(-sign * r.y(), sign * r.x(), r.z());
    CHECK((d.handle_link(kPi / 2, 0.0).translation() - expected).norm() < 1e-12);
    // Opening swings the free edge toward +x (toward the robot).
    CHECK(expected.x() > 0.1);
  }
}

TEST_CASE("compose rejects a handle thicker than the aperture") {
  HandleSpec h = generate_handle(Mechanism::Lever, 0);
  h.primitives[h.grasp_primitive].dimensions.z() = 0.10;
  h.grasp_tangent = Vec3::UnitY();
  try {
    compose(generate_body(Category::Interior, 0), h, 0.08);
    FAIL("expected a compatibility error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Compatibility);
    CHECK(std::string(e.what()).find("0.100") != std::string::npos);
  }
}

TEST_CASE("mounted handles turn toward the hinge") {
  for (std::uint64_t s = 0; s < 12; ++s) {
    const DoorInstance d = compose(generate_body(Category::Interior, s), generate_handle(Mechanism::Lever, s));
    const Vec3 g0 = d.grasp_point(0.0, 0.0);
    const Vec3 g1 = d.grasp_point(0.0, 0.3);
    // The bar end moves down when the lever is pressed.
    CHECK(g1.z() < g0.z());
    // The bar extends from the rose toward the hinge side.
    CHECK((g0.y() - d.body.socket_pose.translation().y()) * (d.body.hinge_point.y()) > 0.0);
  }
}

TEST_CASE("FK composition equals product of joint transforms") {
  const AssetCatalog cat = build_catalog(CategoryCounts::uniform(17), 0.25, 5);
  Rng rng(99);
  int n = 0;
  for (const auto& [id, d] : cat.instances) {
    if (n++ >= 100) break;
    const double td = rng.uniform(0, d.joints.door.upper);
    const double th = rng.uniform(0, d.joints.handle.upper);
    const Pose composed = d.joints.forward(td, th).handle;
    const Pose product = d.joints.door.transform(td) * d.joints.handle.transform(th);
    CHECK((composed.matrix() - product.matrix()).norm() < 1e-9);
  }
}

TEST_CASE("catalog counts and splits") {
  const AssetCatalog cat = build_catalog(CategoryCounts::uniform(10), 0.25, 1);
  CHECK(cat.instances.size() == 60);
  CHECK(cat.ids(Category::Interior, SplitTag::TestShape).size() == 3);
  CHECK(cat.ids(Category::Interior, SplitTag::Train).size() == 7);
  for (const auto& id : cat.by_category.at(Category::Refrigerator))
    CHECK(cat.at(id).split == SplitTag::TestCategory);
  for (const auto& id : cat.by_category.at(Category::StorageFurniture))
    CHECK(cat.at(id).split == SplitTag::TestCategory);
  std::size_t total = 0;
  for (const auto& [tag, ids] : cat.by_split) total += ids.size();
  CHECK(total == 60);
  CHECK(build_catalog(CategoryCounts::uniform(10), 0.25, 1).hash() == cat.hash());
  CHECK(build_catalog(CategoryCounts::uniform(10), 0.25, 2).hash() != cat.hash());

  CategoryCounts zero = CategoryCounts::uniform(3);
  zero[Category::Car] = 0;
  CHECK_THROWS_AS(build_catalog(zero, 0.25, 1), Error);
  CHECK_THROWS_AS(build_catalog(CategoryCounts::uniform(3), 1.0, 1), Error);
}

TEST_CASE("catalog JSON round trip") {
  const AssetCatalog cat = build_catalog(CategoryCounts::uniform(2), 0.5, 8);
  const auto dir = std::filesystem::temp_directory_path() / "doorbench_catalog_rt";
  std::filesystem::remove_all(dir);
  save_catalog(cat, dir.string());
  const AssetCatalog back = load_catalog(dir.string());
  CHECK(back.hash() == cat.hash());
  for (const auto& [id, d] : cat.instances) {
    CHECK(to_json(back.at(id)).dump() == to_json(d).dump());
    CHECK((back.at(id).handle_link(0.3, 0.2).matrix() - d.handle_link(0.3, 0.2).matrix()).norm() < 1e-12);
  }
  std::filesystem::remove_all(dir);
}
