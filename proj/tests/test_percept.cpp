#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "doorbench/error.hpp"
#include "doorbench/expert.hpp"
#include "doorbench/percept.hpp"

using namespace doorbench;
using namespace doorbench::percept;

namespace {

CameraConfig small_camera() {
  CameraConfig c;
  c.position = Vec3(0, 0, 0);
  c.look_at = Vec3(1, 0, 0);
  c.width = 33;
  c.height = 33;
  return c;
}

double nearest_surface(const std::vector<sim::SceneSolid>& scene, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : scene) best = std::min(best, std::abs(signed_distance(p, s.solid)));
  return best;
}

}  // namespace

TEST_CASE("empty scene renders all misses") {
  const DepthImage img = render_solids({}, small_camera());
  for (float z : img.depth) CHECK(std::isinf(z));
  CHECK(depth_to_cloud(img, small_camera()).empty());
}

TEST_CASE("centre pixel sees a box face at the hand-computed depth") {
  const CameraConfig cam = small_camera();
  const Box b{make_pose(Mat3::Identity(), Vec3(2.0, 0, 0)), Vec3(0.05, 0.5, 0.5)};
  const DepthImage img = render_solids({b}, cam);
  CHECK(img.at(16, 16) == doctest::Approx(1.95).epsilon(1e-6));
  const auto cloud = depth_to_cloud(img, cam);
  const Vec3 centre = cam.unproject(16, 16, img.at(16, 16));
  CHECK((centre - Vec3(1.95, 0, 0)).norm() < 1e-6);
  (void)cloud;
}

TEST_CASE("principal pixel unprojects onto the optical axis") {
  const CameraConfig cam = small_camera();
  const Vec3 p = cam.unproject(cam.cx(), cam.cy(), 2.5);
  const Vec3 c = cam.camera_to_world().transpose() * (p - cam.position);
  CHECK(c.x() == doctest::Approx(0.0));
  CHECK(c.y() == doctest::Approx(0.0));
  CHECK(c.z() == doctest::Approx(2.5));
}

TEST_CASE("project and unproject round trip") {
  CameraConfig cam;
  for (int v = 0; v < cam.height; v += 17)
    for (int u = 0; u < cam.width; u += 13) {
      const Eigen::Vector3d px = cam.project(cam.unproject(u, v, 1.7));
      CHECK(std::abs(px.x() - u) < 0.5);
      CHECK(std::abs(px.y() - v) < 0.5);
      CHECK(px.z() == doctest::Approx(1.7));
    }
}

TEST_CASE("near clip is flagged") {
  const Box b{Pose::Identity(), Vec3(0.5, 0.5, 0.5)};
  CHECK_THROWS_AS(render_solids({b}, small_camera()), Error);
}

TEST_CASE("a gripper in front of the board occludes it") {
  const auto d = assets::compose(assets::generate_body(assets::Category::Interior, 1),
                                 assets::generate_handle(assets::Mechanism::Lever, 1));
  sim::RobotModel robot;
  sim::TaskConfig task;
  sim::SimState s = sim::reset(d, robot, task, 0);
  const CameraConfig cam = default_camera(d);
  const DepthImage without = render_depth(d, s, robot, cam, false);
  const DepthImage with = render_depth(d, s, robot, cam, true);
  int nearer = 0;
  for (std::size_t i = 0; i < with.depth.size(); ++i) {
    CHECK(with.depth[i] <= without.depth[i]);
    if (with.depth[i] < without.depth[i]) ++nearer;
  }
  CHECK(nearer > 0);
}

TEST_CASE("downsampling rules") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 4096; ++i) pts.emplace_back(i * 0.001, std::sin(i * 0.1), 0.0);
  const PointCloud full = downsample_fps(pts, 4096, 3);
  CHECK_FALSE(full.duplicated);
  std::set<int> idx(full.source.begin(), full.source.end());
  CHECK(idx.size() == 4096);

  std::vector<Vec3> few(pts.begin(), pts.begin() + 100);
  const PointCloud filled = downsample_fps(few, 4096, 3);
  CHECK(filled.points.rows() == 4096);
  CHECK(filled.duplicated);
  CHECK_THROWS_AS(downsample_fps({}, 10, 0), Error);
}

TEST_CASE("observation of a closed door lies on scene surfaces") {
  const auto d = assets::compose(assets::generate_body(assets::Category::Window, 4),
                                 assets::generate_handle(assets::Mechanism::Key, 4));
  sim::RobotModel robot;
  sim::TaskConfig task;
  sim::SimState s = sim::reset(d, robot, task, 0);
  // Park the arm out of view.
  s.ee.translation() = Vec3(1.3, 0, 0.2);
  s.base.x = 1.4;
  s.prev_ee = s.ee;
  const CameraConfig cam = default_camera(d);
  const Observation a = observe(d, s, robot, cam, 11);
  const Observation b = observe(d, s, robot, cam, 11);
  CHECK(a.cloud.rows() == kCloudSize);
  CHECK(a.cloud == b.cloud);
  CHECK(a.state == b.state);
  CHECK(a.state(13) == 0.0f);
  CHECK(a.state(14) == 0.0f);
  const auto scene = sim::scene_solids(d, s, robot, false);
  for (Eigen::Index i = 0; i < a.cloud.rows(); ++i) {
    const Vec3 p = a.cloud.row(i).cast<double>().transpose();
    CHECK(nearest_surface(scene, p) < 1e-3);
    CHECK(p.x() > -1e-3);  // no back faces
  }
}

TEST_CASE("PLY round trip") {
  CloudMatrix c(5, 3);
  c.setRandom();
  const auto path = (std::filesystem::temp_directory_path() / "doorbench_rt.ply").string();
  write_ply(path, c);
  const CloudMatrix back = read_ply(path);
  CHECK((back - c).cwiseAbs().maxCoeff() < 1e-6f);
  std::filesystem::remove(path);
}
