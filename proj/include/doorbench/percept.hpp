#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doorbench/assets.hpp"
#include "doorbench/kernels.hpp"
#include "doorbench/sim.hpp"

namespace doorbench::percept {

inline constexpr int kCloudSize = 4096;
inline constexpr int kStateDim = 16;

using CloudMatrix = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;
using StateVector = Eigen::Matrix<float, kStateDim, 1>;

struct CameraConfig {
  Vec3 position = Vec3(1.5, 0.0, 1.3);
  Vec3 look_at = Vec3(0.0, 0.0, 1.0);
  double vfov = 60.0 * kPi / 180.0;
  int width = 256;
  int height = 256;
  double near_clip = 0.05;
  double far_clip = 5.0;

  void validate() const;
  /// Camera frame: x right, y down, z forward.
  Mat3 camera_to_world() const;
  double focal() const;
  double cx() const { return 0.5 * (width - 1); }
  double cy() const { return 0.5 * (height - 1); }
  kernels::RayGrid ray_grid() const;
  /// Pixel coordinates and z-depth of a world point.
  Eigen::Vector3d project(const Vec3& world) const;
  Vec3 unproject(double u, double v, double depth) const;
};

/// Default camera for an instance: 1.5 m out, 1.3 m high, aimed at the door centre.
CameraConfig default_camera(const assets::DoorInstance& instance);

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> depth;  // row-major, misses are +inf

  float at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
};

DepthImage render_solids(const std::vector<Solid>& solids, const CameraConfig& camera);
DepthImage render_depth(const assets::DoorInstance& instance, const sim::SimState& state,
                        const sim::RobotModel& robot, const CameraConfig& camera,
                        bool include_robot = true);

std::vector<Vec3> depth_to_cloud(const DepthImage& depth, const CameraConfig& camera);

struct PointCloud {
  CloudMatrix points;
  std::vector<int> source;  // index into the input list
  bool duplicated = false;
};

PointCloud downsample_fps(const std::vector<Vec3>& points, int n, std::uint64_t seed);

struct Observation {
  CloudMatrix cloud;
  StateVector state = StateVector::Zero();
  bool duplicated = false;
};

/// Workspace crop around the door: the board's swept region plus margins.
struct CropBox {
  Vec3 lo;
  Vec3 hi;
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};
CropBox workspace_crop(const assets::DoorInstance& instance);

StateVector state_vector(const sim::SimState& state, const sim::RobotModel& robot,
                         const assets::DoorInstance& instance);

Observation observe(const assets::DoorInstance& instance, const sim::SimState& state,
                    const sim::RobotModel& robot, const CameraConfig& camera, std::uint64_t seed);

// ---------------------------------------------------------------------------
// IO

void write_ply(const std::string& path, const CloudMatrix& cloud,
               const std::vector<float>* scores = nullptr);
CloudMatrix read_ply(const std::string& path);
/// Plain-text grid of depths in millimetres; misses are written as 0.
void write_depth_pgm(const std::string& path, const DepthImage& depth);

}  // namespace doorbench::percept
