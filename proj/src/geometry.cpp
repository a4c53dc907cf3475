#include "doorbench/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace doorbench {

Pose make_pose(const Mat3& rotation, const Vec3& translation) {
  Pose p = Pose::Identity();
  p.linear() = rotation;
  p.translation() = translation;
  return p;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Vec3 log_so3(const Mat3& rotation) {
  Eigen::AngleAxisd aa(rotation);
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle > kPi) {
    angle = 2.0 * kPi - angle;
    axis = -axis;
  }
  return axis * angle;
}

Mat3 exp_so3(const Vec3& rotation_vector) {
  const double angle = rotation_vector.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, rotation_vector / angle).toRotationMatrix();
}

double rotation_angle(const Mat3& rotation) {
  const double c = std::clamp((rotation.trace() - 1.0) * 0.5, -1.0, 1.0);
  if (c > 0.99) {
    const Vec3 w(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
                 rotation(1, 0) - rotation(0, 1));
    return std::asin(std::min(1.0, 0.5 * w.norm()));
  }
  return std::acos(c);
}

Pose rotate_about_line(const Vec3& origin, const Vec3& axis, double angle) {
  const Mat3 r = axis_angle(axis, angle);
  return make_pose(r, origin - r * origin);
}

bool is_rotation(const Mat3& rotation, double tol) {
  if (!rotation.allFinite()) return false;
  const Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0) u.col(2) = -u.col(2);
  return u * v.transpose();
}

Pose clip_motion(const Pose& from, const Pose& to, double max_translation,
                 double max_rotation) {
  Vec3 dp = to.translation() - from.translation();
  const double dist = dp.norm();
  if (dist > max_translation) dp *= max_translation / dist;
  Vec3 w = log_so3(to.linear() * from.linear().transpose());
  const double ang = w.norm();
  if (ang > max_rotation) w *= max_rotation / ang;
  return make_pose(exp_so3(w) * from.linear(), from.translation() + dp);
}

Pose interpolate(const Pose& from, const Pose& to, double s) {
  const Vec3 w = log_so3(to.linear() * from.linear().transpose());
  return make_pose(exp_so3(s * w) * from.linear(),
                   from.translation() + s * (to.translation() - from.translation()));
}

// ---------------------------------------------------------------------------

namespace {

Ray to_local(const Pose& pose, const Ray& ray) {
  const Mat3 rt = pose.linear().transpose();
  return {rt * (ray.origin - pose.translation()), rt * ray.direction};
}

std::optional<double> ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  if (cc <= 0.0) return 0.0;
  const double disc = b * b - cc;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t < 0.0) return std::nullopt;
  return t;
}

}  // namespace

std::optional<double> intersect(const Ray& ray, const Box& box) {
  const Ray r = to_local(box.pose, ray);
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double h = box.half[i];
    if (std::abs(r.direction[i]) < 1e-300) {
      if (r.origin[i] < -h || r.origin[i] > h) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / r.direction[i];
    double a = (-h - r.origin[i]) * inv;
    double b = (h - r.origin[i]) * inv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  if (t1 < 0.0) return std::nullopt;
  return std::max(t0, 0.0);
}

std::optional<double> intersect(const Ray& ray, const Cylinder& cyl) {
  const Ray r = to_local(cyl.pose, ray);
  const Vec3& o = r.origin;
  const Vec3& d = r.direction;
  const double rr = cyl.radius * cyl.radius;
  const double h = cyl.half_length;
  if (o.x() * o.x() + o.y() * o.y() <= rr && std::abs(o.z()) <= h) return 0.0;

  double best = std::numeric_limits<double>::infinity();
  // Lateral surface.
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-300) {
    const double b = o.x() * d.x() + o.y() * d.y();
    const double c = o.x() * o.x() + o.y() * o.y() - rr;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / a;
      if (t >= 0.0 && std::abs(o.z() + t * d.z()) <= h) best = std::min(best, t);
    }
  }
  // Caps.
  if (std::abs(d.z()) > 1e-300) {
    for (double zc : {-h, h}) {
      const double t = (zc - o.z()) / d.z();
      if (t < 0.0) continue;
      const double x = o.x() + t * d.x();
      const double y = o.y() + t * d.y();
      if (x * x + y * y <= rr) best = std::min(best, t);
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

std::optional<double> intersect(const Ray& ray, const Capsule& cap) {
  const Vec3 axis = cap.b - cap.a;
  const double len = axis.norm();
  double best = std::numeric_limits<double>::infinity();
  if (len > 1e-12) {
    Cylinder body;
    const Vec3 z = axis / len;
    Vec3 x = z.unitOrthogonal();
    Vec3 y = z.cross(x);
    Mat3 rot;
    rot << x, y, z;
    body.pose = make_pose(rot, 0.5 * (cap.a + cap.b));
    body.radius = cap.radius;
    body.half_length = 0.5 * len;
    if (auto t = intersect(ray, body)) best = std::min(best, *t);
  }
  for (const Vec3& c : {cap.a, cap.b}) {
    if (auto t = ray_sphere(ray.origin, ray.direction, c, cap.radius)) best = std::min(best, *t);
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

std::optional<double> intersect(const Ray& ray, const Solid& solid) {
  return std::visit([&](const auto& s) { return intersect(ray, s); }, solid);
}

double signed_distance(const Vec3& p, const Box& box) {
  const Vec3 q = box.pose.linear().transpose() * (p - box.pose.translation());
  const Vec3 d = q.cwiseAbs() - box.half;
  const double outside = d.cwiseMax(0.0).norm();
  const double inside = std::min(d.maxCoeff(), 0.0);
  return outside + inside;
}

double signed_distance(const Vec3& p, const Cylinder& cyl) {
  const Vec3 q = cyl.pose.linear().transpose() * (p - cyl.pose.translation());
  const double dr = std::hypot(q.x(), q.y()) - cyl.radius;
  const double dz = std::abs(q.z()) - cyl.half_length;
  const double outside = std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
  const double inside = std::min(std::max(dr, dz), 0.0);
  return outside + inside;
}

double signed_distance(const Vec3& p, const Capsule& cap) {
  const Vec3 ab = cap.b - cap.a;
  const double len2 = ab.squaredNorm();
  double s = len2 > 0.0 ? (p - cap.a).dot(ab) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return (p - (cap.a + s * ab)).norm() - cap.radius;
}

double signed_distance(const Vec3& p, const Solid& solid) {
  return std::visit([&](const auto& s) { return signed_distance(p, s); }, solid);
}

double extent_along(const Solid& solid, const Vec3& direction) {
  const Vec3 d = direction.normalized();
  if (const auto* box = std::get_if<Box>(&solid)) {
    const Mat3& r = box->pose.linear();
    double e = 0.0;
    for (int i = 0; i < 3; ++i) e += 2.0 * box->half[i] * std::abs(d.dot(r.col(i)));
    return e;
  }
  if (const auto* cyl = std::get_if<Cylinder>(&solid)) {
    const double c = std::abs(d.dot(cyl->pose.linear().col(2)));
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    return 2.0 * (cyl->radius * s + cyl->half_length * c);
  }
  const auto& cap = std::get<Capsule>(solid);
  return 2.0 * cap.radius + std::abs(d.dot(cap.b - cap.a));
}

bool overlaps(const Box& a, const Box& b) {
  const Mat3& ra = a.pose.linear();
  const Mat3& rb = b.pose.linear();
  const Vec3 t = b.pose.translation() - a.pose.translation();
  auto separated = [&](const Vec3& axis) {
    const double n = axis.norm();
    if (n < 1e-12) return false;
    const Vec3 l = axis / n;
    double pa = 0.0, pb = 0.0;
    for (int i = 0; i < 3; ++i) {
      pa += a.half[i] * std::abs(l.dot(ra.col(i)));
      pb += b.half[i] * std::abs(l.dot(rb.col(i)));
    }
    return std::abs(t.dot(l)) > pa + pb;
  };
  for (int i = 0; i < 3; ++i) {
    if (separated(ra.col(i)) || separated(rb.col(i))) return false;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (separated(ra.col(i).cross(rb.col(j)))) return false;
  return true;
}

bool overlaps(const Capsule& cap, const Box& box) {
  // Distance to a convex set is convex along the segment: golden-section search.
  auto f = [&](double s) { return signed_distance(cap.a + s * (cap.b - cap.a), box); };
  constexpr double g = 0.6180339887498949;
  double lo = 0.0, hi = 1.0;
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 60; ++it) {
    if (f1 < f2) {
      hi = x2; x2 = x1; f2 = f1;
      x1 = hi - g * (hi - lo); f1 = f(x1);
    } else {
      lo = x1; x1 = x2; f1 = f2;
      x2 = lo + g * (hi - lo); f2 = f(x2);
    }
  }
  const double best = std::min({f(0.0), f(1.0), f1, f2});
  return best <= cap.radius;
}

std::array<Vec3, 8> bounding_corners(const Solid& solid) {
  Pose pose = Pose::Identity();
  Vec3 half;
  if (const auto* box = std::get_if<Box>(&solid)) {
    pose = box->pose;
    half = box->half;
  } else if (const auto* cyl = std::get_if<Cylinder>(&solid)) {
    pose = cyl->pose;
    half = Vec3(cyl->radius, cyl->radius, cyl->half_length);
  } else {
    const auto& cap = std::get<Capsule>(solid);
    const Vec3 lo = cap.a.cwiseMin(cap.b) - Vec3::Constant(cap.radius);
    const Vec3 hi = cap.a.cwiseMax(cap.b) + Vec3::Constant(cap.radius);
    pose.translation() = 0.5 * (lo + hi);
    half = 0.5 * (hi - lo);
  }
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    const Vec3 s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    out[i] = pose * s.cwiseProduct(half);
  }
  return out;
}

Solid transformed(const Pose& t, const Solid& solid) {
  if (const auto* box = std::get_if<Box>(&solid)) return Box{t * box->pose, box->half};
  if (const auto* cyl = std::get_if<Cylinder>(&solid))
    return Cylinder{t * cyl->pose, cyl->radius, cyl->half_length};
  const auto& cap = std::get<Capsule>(solid);
  return Capsule{t * cap.a, t * cap.b, cap.radius};
}

}  // namespace doorbench
