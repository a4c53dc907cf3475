#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <variant>

namespace doorbench {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Pose = Eigen::Isometry3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

Pose make_pose(const Mat3& rotation, const Vec3& translation);
Mat3 axis_angle(const Vec3& axis, double angle);

/// Rotation vector (axis * angle) of a rotation matrix, angle in [0, pi].
Vec3 log_so3(const Mat3& rotation);
Mat3 exp_so3(const Vec3& rotation_vector);
double rotation_angle(const Mat3& rotation);

/// Rigid motion rotating by `angle` about the line through `origin` along `axis`.
Pose rotate_about_line(const Vec3& origin, const Vec3& axis, double angle);

bool is_rotation(const Mat3& rotation, double tol);

/// Re-orthonormalises a nearly orthonormal matrix (SVD projection onto SO(3)).
Mat3 project_to_so3(const Mat3& m);

/// Clips the motion from `from` to `to` to at most `max_translation` metres and
/// `max_rotation` radians; each component is scaled independently.
Pose clip_motion(const Pose& from, const Pose& to, double max_translation,
                 double max_rotation);

/// Interpolates translation linearly and rotation along the geodesic.
Pose interpolate(const Pose& from, const Pose& to, double s);

// ---------------------------------------------------------------------------
// Primitive solids. Cylinders use the local z axis as their axis.

struct Box {
  Pose pose = Pose::Identity();
  Vec3 half = Vec3::Constant(0.5);
};

struct Cylinder {
  Pose pose = Pose::Identity();
  double radius = 0.5;
  double half_length = 0.5;
};

struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::UnitZ();
  double radius = 0.1;
};

using Solid = std::variant<Box, Cylinder, Capsule>;

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

/// First intersection parameter t >= 0 along the ray. A ray starting inside
/// the solid reports t = 0.
std::optional<double> intersect(const Ray& ray, const Box& box);
std::optional<double> intersect(const Ray& ray, const Cylinder& cyl);
std::optional<double> intersect(const Ray& ray, const Capsule& cap);
std::optional<double> intersect(const Ray& ray, const Solid& solid);

/// Signed distance: negative inside, zero on the surface.
double signed_distance(const Vec3& p, const Box& box);
double signed_distance(const Vec3& p, const Cylinder& cyl);
double signed_distance(const Vec3& p, const Capsule& cap);
double signed_distance(const Vec3& p, const Solid& solid);

inline double surface_distance(const Vec3& p, const Solid& solid) {
  return std::abs(signed_distance(p, solid));
}

/// Length of the orthogonal projection of the solid onto `direction`.
double extent_along(const Solid& solid, const Vec3& direction);

/// Separating-axis overlap test for two oriented boxes.
bool overlaps(const Box& a, const Box& b);

/// True when the capsule (segment swept by a sphere) touches the box.
bool overlaps(const Capsule& cap, const Box& box);

/// The eight corners of the solid's oriented bounding box.
std::array<Vec3, 8> bounding_corners(const Solid& solid);

Solid transformed(const Pose& t, const Solid& solid);

}  // namespace doorbench
