#include "doorbench/percept.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "doorbench/error.hpp"
#include "doorbench/random.hpp"

namespace doorbench::percept {

void CameraConfig::validate() const {
  if (!(near_clip > 0.0 && near_clip < far_clip)) fail(ErrorKind::InvalidArgument, "camera needs 0 < near < far");
  if (!(vfov > 0.0 && vfov < kPi)) fail(ErrorKind::InvalidArgument, "camera fov must lie in (0, pi)");
  if (width <= 0 || height <= 0) fail(ErrorKind::InvalidArgument, "camera resolution must be positive");
  if ((look_at - position).norm() < 1e-9) fail(ErrorKind::InvalidArgument, "camera look_at equals position");
}

Mat3 CameraConfig::camera_to_world() const {
  const Vec3 f = (look_at - position).normalized();
  Vec3 right = f.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) right = Vec3::UnitY();
  right.normalize();
  const Vec3 down = f.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = f;
  return r;
}

double CameraConfig::focal() const { return 0.5 * height / std::tan(0.5 * vfov); }

kernels::RayGrid CameraConfig::ray_grid() const {
  kernels::RayGrid g;
  g.origin = position;
  g.camera_to_world = camera_to_world();
  g.fx = g.fy = focal();
  g.cx = cx();
  g.cy = cy();
  g.width = width;
  g.height = height;
  g.far = far_clip;
  return g;
}

Eigen::Vector3d CameraConfig::project(const Vec3& world) const {
  const Vec3 c = camera_to_world().transpose() * (world - position);
  const double f = focal();
  return {f * c.x() / c.z() + cx(), f * c.y() / c.z() + cy(), c.z()};
}

Vec3 CameraConfig::unproject(double u, double v, double depth) const {
  const double f = focal();
  const Vec3 c((u - cx()) / f * depth, (v - cy()) / f * depth, depth);
  return position + camera_to_world() * c;
}

CameraConfig default_camera(const assets::DoorInstance& d) {
  CameraConfig c;
  c.position = Vec3(1.5, 0.0, 1.3);
  c.look_at = Vec3(0.0, 0.0, d.body.bottom + 0.5 * d.body.height);
  return c;
}

DepthImage render_solids(const std::vector<Solid>& solids, const CameraConfig& camera) {
  camera.validate();
  DepthImage img;
  img.width = camera.width;
  img.height = camera.height;
  img.depth = kernels::raycast(camera.ray_grid(), solids);
  for (float z : img.depth)
    if (z < camera.near_clip) fail(ErrorKind::NearClip, "geometry closer than the near plane; camera inside the scene?");
  return img;
}

DepthImage render_depth(const assets::DoorInstance& d, const sim::SimState& s, const sim::RobotModel& robot,
                        const CameraConfig& camera, bool include_robot) {
  std::vector<Solid> solids;
  for (const auto& ss : sim::scene_solids(d, s, robot, include_robot)) solids.push_back(ss.solid);
  return render_solids(solids, camera);
}

std::vector<Vec3> depth_to_cloud(const DepthImage& depth, const CameraConfig& camera) {
  std::vector<Vec3> out;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const float z = depth.at(u, v);
      if (std::isfinite(z)) out.push_back(camera.unproject(u, v, z));
    }
  return out;
}

PointCloud downsample_fps(const std::vector<Vec3>& points, int n, std::uint64_t seed) {
  if (points.empty()) fail(ErrorKind::EmptyObservation, "no points to downsample");
  if (n <= 0) fail(ErrorKind::InvalidArgument, "sample count must be positive");
  std::vector<float> xyz;
  xyz.reserve(points.size() * 3);
  for (const auto& p : points)
    for (int a = 0; a < 3; ++a) xyz.push_back(static_cast<float>(p[a]));
  Rng rng(derive_seed(seed, {0xF95}));
  const int total = static_cast<int>(points.size());
  const int start = static_cast<int>(rng.index(points.size()));
  PointCloud pc;
  pc.source = kernels::farthest_point_sample(xyz, std::min(n, total), start);
  if (total < n) {
    pc.duplicated = true;
    while (static_cast<int>(pc.source.size()) < n) pc.source.push_back(static_cast<int>(rng.index(points.size())));
  }
  pc.points.resize(n, 3);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) pc.points(i, a) = xyz[3 * static_cast<std::size_t>(pc.source[i]) + a];
  return pc;
}

CropBox workspace_crop(const assets::DoorInstance& d) {
  const auto& b = d.body;
  return {Vec3(-0.3, -0.5 * b.width - 0.25, b.bottom - 0.15),
          Vec3(b.width + 0.3, 0.5 * b.width + 0.25, b.bottom + b.height + 0.15)};
}

StateVector state_vector(const sim::SimState& s, const sim::RobotModel& robot, const assets::DoorInstance& d) {
  StateVector v;
  v(0) = static_cast<float>(s.base.x);
  v(1) = static_cast<float>(s.base.y);
  v(2) = static_cast<float>(s.base.yaw);
  const Vec3 p = s.ee.translation();
  const Mat3 r = s.ee.linear();
  for (int i = 0; i < 3; ++i) v(3 + i) = static_cast<float>(p[i]);
  for (int i = 0; i < 3; ++i) {
    v(6 + i) = static_cast<float>(r(i, 0));
    v(9 + i) = static_cast<float>(r(i, 1));
  }
  const sim::RobotGeometry g = sim::robot_geometry(s, robot, d);
  const double gap = (g.finger_a.pose.translation() - g.finger_b.pose.translation()).norm() - 2.0 * g.finger_a.half.x();
  v(12) = static_cast<float>(gap);
  v(13) = static_cast<float>((p - s.prev_ee.translation()).norm());
  v(14) = static_cast<float>(rotation_angle(r * s.prev_ee.linear().transpose()));
  v(15) = s.attached ? 1.0f : 0.0f;
  return v;
}

Observation observe(const assets::DoorInstance& d, const sim::SimState& s, const sim::RobotModel& robot,
                    const CameraConfig& camera, std::uint64_t seed) {
  const DepthImage img = render_depth(d, s, robot, camera, true);
  const CropBox crop = workspace_crop(d);
  std::vector<Vec3> pts;
  for (const auto& p : depth_to_cloud(img, camera))
    if (crop.contains(p)) pts.push_back(p);
  if (pts.empty()) fail(ErrorKind::EmptyObservation, "workspace crop is empty; door out of frame");
  PointCloud pc = downsample_fps(pts, kCloudSize, seed);
  Observation o;
  o.cloud = std::move(pc.points);
  o.duplicated = pc.duplicated;
  o.state = state_vector(s, robot, d);
  return o;
}

// ---------------------------------------------------------------------------

void write_ply(const std::string& path, const CloudMatrix& cloud, const std::vector<float>* scores) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.rows() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (scores) out << "property float score\n";
  out << "end_header\n";
  out.precision(9);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    out << cloud(i, 0) << ' ' << cloud(i, 1) << ' ' << cloud(i, 2);
    if (scores) out << ' ' << (*scores)[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

CloudMatrix read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path);
  std::string line;
  long count = -1;
  int props = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "element") {
      std::string kind;
      ls >> kind >> count;
    } else if (tok == "property") {
      ++props;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (count < 0 || props < 3) fail(ErrorKind::InvalidArgument, path + ": not an xyz PLY");
  CloudMatrix c(count, 3);
  for (long i = 0; i < count; ++i) {
    std::vector<float> row(static_cast<std::size_t>(props));
    for (auto& x : row) in >> x;
    if (!in) fail(ErrorKind::InvalidArgument, path + ": truncated vertex list");
    c.row(i) << row[0], row[1], row[2];
  }
  return c;
}

void write_depth_pgm(const std::string& path, const DepthImage& depth) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << "P2\n" << depth.width << ' ' << depth.height << "\n65535\n";
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const float z = depth.at(u, v);
      const long mm = std::isfinite(z) ? std::lround(z * 1000.0) : 0;
      out << (u ? " " : "") << std::min(mm, 65535L);
    }
    out << '\n';
  }
}

}  // namespace doorbench::percept
