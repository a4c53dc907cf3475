#include "doorbench/assets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doorbench/error.hpp"
#include "doorbench/hash.hpp"
#include "doorbench/random.hpp"

namespace doorbench::assets {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Names

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::Lever: return "lever";
    case Mechanism::Round: return "round";
    case Mechanism::Key: return "key";
    case Mechanism::Valve: return "valve";
  }
  fail(ErrorKind::InvalidArgument, "unknown mechanism");
}

std::string to_string(Category c) {
  switch (c) {
    case Category::Interior: return "Interior";
    case Category::Window: return "Window";
    case Category::Car: return "Car";
    case Category::Safe: return "Safe";
    case Category::StorageFurniture: return "StorageFurniture";
    case Category::Refrigerator: return "Refrigerator";
  }
  fail(ErrorKind::InvalidArgument, "unknown category");
}

std::string to_string(HingeSide h) { return h == HingeSide::Left ? "left" : "right"; }

std::string to_string(SplitTag s) {
  switch (s) {
    case SplitTag::Train: return "train";
    case SplitTag::TestShape: return "test_shape";
    case SplitTag::TestCategory: return "test_category";
  }
  fail(ErrorKind::InvalidArgument, "unknown split tag");
}

Mechanism parse_mechanism(const std::string& s) {
  for (auto m : kAllMechanisms)
    if (to_string(m) == s) return m;
  fail(ErrorKind::InvalidArgument, "unknown mechanism '" + s + "'");
}

Category parse_category(const std::string& s) {
  for (auto c : kAllCategories)
    if (to_string(c) == s) return c;
  fail(ErrorKind::InvalidArgument, "unknown category '" + s + "'");
}

SplitTag parse_split(const std::string& s) {
  for (auto t : {SplitTag::Train, SplitTag::TestShape, SplitTag::TestCategory})
    if (to_string(t) == s) return t;
  fail(ErrorKind::InvalidArgument, "unknown split '" + s + "'");
}

bool is_train_category(Category c) {
  return c == Category::Interior || c == Category::Window || c == Category::Safe ||
         c == Category::Car;
}

// ---------------------------------------------------------------------------
// Geometry helpers

Solid HandlePrimitive::solid(const Pose& link_to_world) const {
  const Pose world = link_to_world * local;
  if (shape == PrimitiveShape::Box) return Box{world, 0.5 * dimensions};
  return Cylinder{world, 0.5 * dimensions.x(), 0.5 * dimensions.z()};
}

Box BodySpec::board_closed() const {
  Box b;
  b.pose = make_pose(Mat3::Identity(), Vec3(-0.5 * thickness, 0.0, bottom + 0.5 * height));
  b.half = Vec3(0.5 * thickness, 0.5 * width, 0.5 * height);
  return b;
}

Pose RevoluteJoint::transform(double q) const {
  return parent_from_joint * make_pose(axis_angle(axis, q), Vec3::Zero());
}

JointTree::Links JointTree::forward(double theta_d, double theta_h) const {
  Links l;
  l.board = door.transform(theta_d);
  l.handle = l.board * handle.transform(theta_h);
  return l;
}

Box DoorInstance::board_box(double theta_d) const {
  return Box{joints.door.transform(theta_d) * board_local, board_half};
}

Pose DoorInstance::handle_link(double theta_d, double theta_h) const {
  return joints.forward(theta_d, theta_h).handle;
}

std::vector<Solid> DoorInstance::handle_solids(double theta_d, double theta_h) const {
  const Pose link = handle_link(theta_d, theta_h);
  std::vector<Solid> out;
  out.reserve(handle.primitives.size());
  for (const auto& p : handle.primitives) out.push_back(p.solid(link));
  return out;
}

Vec3 DoorInstance::grasp_point(double theta_d, double theta_h) const {
  return handle_link(theta_d, theta_h) * handle.grasp_point;
}

Vec3 DoorInstance::grasp_tangent(double theta_d, double theta_h) const {
  return handle_link(theta_d, theta_h).linear() * handle.grasp_tangent;
}

Vec3 DoorInstance::face_normal(double theta_d) const {
  return joints.door.transform(theta_d).linear() * Vec3::UnitX();
}

std::pair<Vec3, Vec3> DoorInstance::handle_axis_line(double theta_d) const {
  const Pose link = handle_link(theta_d, 0.0);
  return {link.translation(), link.linear() * handle.joint_axis};
}

std::pair<Vec3, Vec3> DoorInstance::hinge_axis_line() const {
  return {joints.door.parent_from_joint.translation(),
          joints.door.parent_from_joint.linear() * joints.door.axis};
}

double DoorInstance::grasp_thickness() const {
  const auto& prim = handle.primitives.at(static_cast<std::size_t>(handle.grasp_primitive));
  const Vec3 finger = Vec3::UnitX().cross(handle.grasp_tangent);
  return extent_along(prim.solid(Pose::Identity()), finger);
}

CategoryCounts CategoryCounts::uniform(std::uint32_t n) {
  CategoryCounts c;
  c.counts.fill(n);
  return c;
}

const DoorInstance& AssetCatalog::at(const std::string& id) const {
  auto it = instances.find(id);
  if (it == instances.end()) fail(ErrorKind::InvalidArgument, "unknown instance id '" + id + "'");
  return it->second;
}

std::vector<std::string> AssetCatalog::ids(Category c, SplitTag s) const {
  std::vector<std::string> out;
  auto it = by_category.find(c);
  if (it == by_category.end()) return out;
  for (const auto& id : it->second)
    if (instances.at(id).split == s) out.push_back(id);
  return out;
}

std::vector<std::string> AssetCatalog::ids(SplitTag s) const {
  auto it = by_split.find(s);
  return it == by_split.end() ? std::vector<std::string>{} : it->second;
}

std::uint64_t AssetCatalog::hash() const { return fnv1a64(manifest_json(*this).dump()); }

// ---------------------------------------------------------------------------
// Body templates

namespace {

struct Range {
  double lo, hi;
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct BodyTemplate {
  Range width, height, thickness, bottom;
  Range socket_height;  // fraction of board height
  Range inset;          // socket distance from the free edge
  Range joint_limit;
  double frame_margin;  // surround extent beyond the opening
  double shell_depth;   // depth of the surround; cabinets also get a back panel
  bool cabinet;
};

BodyTemplate body_template(Category c) {
  switch (c) {
    case Category::Interior:
      return {{0.80, 1.00}, {1.95, 2.10}, {0.035, 0.045}, {0.0, 0.0},
              {0.47, 0.51}, {0.06, 0.09}, {1.60, 2.00}, 0.45, 0.12, false};
    case Category::Window:
      return {{0.45, 0.70}, {0.80, 1.20}, {0.040, 0.060}, {0.85, 1.00},
              {0.45, 0.55}, {0.05, 0.08}, {1.40, 1.70}, 0.40, 0.15, false};
    case Category::Car:
      return {{0.90, 1.05}, {0.85, 1.00}, {0.080, 0.120}, {0.30, 0.40},
              {0.55, 0.65}, {0.10, 0.16}, {1.05, 1.25}, 0.30, 1.00, true};
    case Category::Safe:
      return {{0.45, 0.70}, {0.50, 0.90}, {0.080, 0.150}, {0.20, 0.40},
              {0.45, 0.55}, {0.12, 0.16}, {1.50, 1.90}, 0.08, 0.50, true};
    case Category::StorageFurniture:
      return {{0.35, 0.60}, {0.60, 1.40}, {0.018, 0.030}, {0.10, 0.50},
              {0.45, 0.60}, {0.05, 0.08}, {1.50, 1.90}, 0.05, 0.45, true};
    case Category::Refrigerator:
      return {{0.55, 0.80}, {1.20, 1.70}, {0.050, 0.080}, {0.05, 0.10},
              {0.55, 0.65}, {0.05, 0.08}, {1.50, 1.90}, 0.06, 0.65, true};
  }
  fail(ErrorKind::InvalidArgument, "unknown category");
}

Box make_box(const Vec3& lo, const Vec3& hi) {
  return Box{make_pose(Mat3::Identity(), 0.5 * (lo + hi)), 0.5 * (hi - lo)};
}

// Rotation taking local z onto world/link x.
Mat3 z_to_x() {
  Mat3 r;
  r << 0, 0, 1,
       0, 1, 0,
      -1, 0, 0;
  return r;
}

HandlePrimitive cylinder_x(double x0, double x1, double radius, const Vec3& offset = Vec3::Zero()) {
  HandlePrimitive p;
  p.shape = PrimitiveShape::Cylinder;
  p.local = make_pose(z_to_x(), Vec3(0.5 * (x0 + x1), 0.0, 0.0) + offset);
  p.dimensions = Vec3(2 * radius, 2 * radius, x1 - x0);
  return p;
}

HandlePrimitive box_at(const Vec3& center, const Vec3& size, const Mat3& rot = Mat3::Identity()) {
  HandlePrimitive p;
  p.shape = PrimitiveShape::Box;
  p.local = make_pose(rot, center);
  p.dimensions = size;
  return p;
}

}  // namespace

std::vector<Mechanism> mechanisms_for(Category c) {
  switch (c) {
    case Category::Interior: return {Mechanism::Lever, Mechanism::Round, Mechanism::Key};
    case Category::Window: return {Mechanism::Lever, Mechanism::Key};
    case Category::Car: return {Mechanism::Lever, Mechanism::Key};
    case Category::Safe: return {Mechanism::Valve, Mechanism::Lever, Mechanism::Key};
    case Category::StorageFurniture: return {Mechanism::Round, Mechanism::Lever};
    case Category::Refrigerator: return {Mechanism::Lever};
  }
  fail(ErrorKind::InvalidArgument, "unknown category");
}

double default_unlock_threshold(Mechanism m) {
  switch (m) {
    case Mechanism::Lever: return 0.5;
    case Mechanism::Round: return 1.0;
    case Mechanism::Key: return 1.2;
    case Mechanism::Valve: return 1.5;
  }
  fail(ErrorKind::InvalidArgument, "unknown mechanism");
}

BodySpec generate_body(Category category, std::uint64_t seed) {
  const int ci = static_cast<int>(category);
  if (ci < 0 || ci >= static_cast<int>(kAllCategories.size()))
    fail(ErrorKind::InvalidArgument, "unknown category " + std::to_string(ci));
  const BodyTemplate t = body_template(category);
  Rng rng(derive_seed(seed, {0xB0D1, static_cast<std::uint64_t>(ci)}));

  BodySpec b;
  b.category = category;
  b.width = t.width.draw(rng);
  b.height = t.height.draw(rng);
  b.thickness = t.thickness.draw(rng);
  b.bottom = t.bottom.draw(rng);
  b.hinge_side = rng.bernoulli(0.5) ? HingeSide::Left : HingeSide::Right;
  b.joint_limit = t.joint_limit.draw(rng);
  const double socket_frac = t.socket_height.draw(rng);
  const double inset = t.inset.draw(rng);

  const double half_w = 0.5 * b.width;
  const double hinge_y = b.hinge_side == HingeSide::Left ? -half_w : half_w;
  const double free_y = -hinge_y;
  b.hinge_point = Vec3(0.0, hinge_y, b.bottom);
  b.hinge_axis = Vec3::UnitZ();
  const double socket_y = free_y + (free_y > 0 ? -inset : inset);
  b.socket_pose = make_pose(Mat3::Identity(), Vec3(0.0, socket_y, b.bottom + socket_frac * b.height));

  // Static surround: jambs, header and sill, all flush with the x = 0 face.
  const double m = t.frame_margin;
  const double d = t.shell_depth;
  const double z_lo = std::max(0.0, b.bottom - m);
  const double z_hi = b.bottom + b.height + m;
  b.frame.push_back(make_box(Vec3(-d, -half_w - m, z_lo), Vec3(0.0, -half_w, z_hi)));
  b.frame.push_back(make_box(Vec3(-d, half_w, z_lo), Vec3(0.0, half_w + m, z_hi)));
  b.frame.push_back(make_box(Vec3(-d, -half_w, b.bottom + b.height), Vec3(0.0, half_w, z_hi)));
  if (b.bottom > 1e-9)
    b.frame.push_back(make_box(Vec3(-d, -half_w, z_lo), Vec3(0.0, half_w, b.bottom)));
  if (t.cabinet)
    b.frame.push_back(make_box(Vec3(-d - 0.02, -half_w - m, z_lo), Vec3(-d, half_w + m, z_hi)));
  return b;
}

HandleSpec generate_handle(Mechanism mechanism, std::uint64_t seed) {
  const int mi = static_cast<int>(mechanism);
  if (mi < 0 || mi >= static_cast<int>(kAllMechanisms.size()))
    fail(ErrorKind::InvalidArgument, "unknown mechanism " + std::to_string(mi));
  Rng rng(derive_seed(seed, {0x4A4D, static_cast<std::uint64_t>(mi)}));

  HandleSpec h;
  h.mechanism = mechanism;
  h.joint_axis = -Vec3::UnitX();
  h.joint_origin = Pose::Identity();
  h.unlock_threshold = default_unlock_threshold(mechanism);
  h.joint_limit = h.unlock_threshold + 0.35;

  switch (mechanism) {
    case Mechanism::Lever: {
      const double rose_r = rng.uniform(0.022, 0.030);
      const double standoff = rng.uniform(0.045, 0.060);
      const double bar_depth = rng.uniform(0.016, 0.022);
      const double bar_len = rng.uniform(0.10, 0.14);
      const double bar_h = rng.uniform(0.016, 0.022);
      h.primitives.push_back(cylinder_x(0.0, 0.012, rose_r));
      h.primitives.push_back(cylinder_x(0.012, standoff, 0.009));
      h.primitives.push_back(box_at(Vec3(standoff + 0.5 * bar_depth, 0.5 * bar_len - 0.012, 0.0),
                                    Vec3(bar_depth, bar_len, bar_h)));
      h.grasp_primitive = 2;
      h.grasp_point = Vec3(standoff + bar_depth, 0.6 * bar_len - 0.012, 0.0);
      h.grasp_tangent = Vec3::UnitY();
      break;
    }
    case Mechanism::Round: {
      const double standoff = rng.uniform(0.030, 0.040);
      const double knob_r = rng.uniform(0.026, 0.034);
      const double knob_len = rng.uniform(0.025, 0.035);
      h.primitives.push_back(cylinder_x(0.0, 0.010, 0.030));
      h.primitives.push_back(cylinder_x(0.010, standoff, 0.012));
      h.primitives.push_back(cylinder_x(standoff, standoff + knob_len, knob_r));
      h.grasp_primitive = 2;
      h.grasp_point = Vec3(standoff + knob_len, 0.0, 0.0);
      h.grasp_tangent = Vec3::UnitY();
      break;
    }
    case Mechanism::Key: {
      const double depth = rng.uniform(0.035, 0.045);
      const double blade_w = rng.uniform(0.010, 0.014);
      const double blade_h = rng.uniform(0.035, 0.050);
      h.primitives.push_back(cylinder_x(0.0, 0.010, 0.025));
      h.primitives.push_back(box_at(Vec3(0.5 * (0.010 + depth), 0.0, 0.0),
                                    Vec3(depth - 0.010, blade_w, blade_h)));
      h.grasp_primitive = 1;
      h.grasp_point = Vec3(depth, 0.0, 0.0);
      h.grasp_tangent = Vec3::UnitZ();
      break;
    }
    case Mechanism::Valve: {
      const double standoff = rng.uniform(0.050, 0.070);
      const double radius = rng.uniform(0.080, 0.100);
      constexpr double rim_depth = 0.020;
      constexpr double rim_width = 0.020;
      const double xc = standoff + 0.5 * rim_depth;
      h.primitives.push_back(cylinder_x(0.0, standoff + rim_depth, 0.020));
      // Octagonal rim; segment 2 is the top one.
      const double seg_len = 2.0 * radius * std::tan(kPi / 8.0) + 0.004;
      for (int k = 0; k < 8; ++k) {
        const double phi = k * kPi / 4.0 - kPi / 2.0;
        const Vec3 c(xc, radius * std::cos(phi), radius * std::sin(phi));
        // Local y along the rim tangent, local z radial.
        const Mat3 rot = axis_angle(Vec3::UnitX(), phi - kPi / 2.0);
        h.primitives.push_back(box_at(c, Vec3(rim_depth, seg_len, rim_width), rot));
      }
      h.primitives.push_back(box_at(Vec3(xc, 0.0, 0.0), Vec3(0.012, 2.0 * radius, 0.012)));
      h.primitives.push_back(box_at(Vec3(xc, 0.0, 0.0), Vec3(0.012, 0.012, 2.0 * radius)));
      h.grasp_primitive = 1 + 4;  // phi = pi/2, the top of the wheel
      h.grasp_point = Vec3(standoff + rim_depth, 0.0, radius);
      h.grasp_tangent = Vec3::UnitY();
      break;
    }
  }
  return h;
}

namespace {

HandleSpec mirrored(const HandleSpec& h) {
  const Mat3 m = Vec3(1.0, -1.0, 1.0).asDiagonal();
  HandleSpec out = h;
  for (auto& p : out.primitives) {
    p.local = make_pose(m * p.local.linear() * m, m * p.local.translation());
  }
  out.joint_axis = -(m * h.joint_axis);
  out.joint_origin = make_pose(m * h.joint_origin.linear() * m, m * h.joint_origin.translation());
  out.grasp_point = m * h.grasp_point;
  out.grasp_tangent = m * h.grasp_tangent;
  return out;
}

}  // namespace

DoorInstance compose(const BodySpec& body, const HandleSpec& handle, double aperture) {
  if (handle.primitives.empty()) fail(ErrorKind::InvalidArgument, "handle has no primitives");
  if (handle.grasp_primitive < 0 ||
      handle.grasp_primitive >= static_cast<int>(handle.primitives.size()))
    fail(ErrorKind::InvalidArgument, "grasp primitive index out of range");

  DoorInstance d;
  d.body = body;
  d.handle_mirrored = body.hinge_side == HingeSide::Left;
  d.handle = d.handle_mirrored ? mirrored(handle) : handle;

  const double thickness = d.grasp_thickness();
  if (!(thickness < aperture)) {
    std::ostringstream msg;
    msg.precision(3);
    msg << std::fixed << "handle thickness " << thickness
        << " m at the grasp anchor is not below the gripper aperture " << aperture << " m";
    fail(ErrorKind::Compatibility, msg.str());
  }

  d.latch.unlock_threshold = handle.unlock_threshold;

  const Pose hinge = make_pose(Mat3::Identity(), body.hinge_point);
  d.joints.door.parent_from_joint = hinge;
  d.joints.door.axis = body.opening_sign() * body.hinge_axis;
  d.joints.door.lower = 0.0;
  d.joints.door.upper = body.joint_limit;

  d.joints.handle.parent_from_joint = hinge.inverse() * body.socket_pose * d.handle.joint_origin;
  d.joints.handle.axis = d.handle.joint_axis;
  d.joints.handle.lower = 0.0;
  d.joints.handle.upper = d.handle.joint_limit;

  const Box board = body.board_closed();
  d.board_local = hinge.inverse() * board.pose;
  d.board_half = board.half;
  return d;
}

AssetCatalog build_catalog(const CategoryCounts& counts, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    fail(ErrorKind::InvalidArgument, "holdout fraction must lie in (0, 1)");
  for (auto c : kAllCategories)
    if (counts[c] == 0) fail(ErrorKind::InvalidArgument, "count for " + to_string(c) + " is zero");

  AssetCatalog cat;
  cat.holdout_fraction = holdout_fraction;
  cat.seed = seed;
  for (auto c : kAllCategories) {
    const auto ci = static_cast<std::uint64_t>(c);
    const std::uint32_t n = counts[c];
    Rng pick(derive_seed(seed, {0xCA7A, ci}));
    std::vector<std::uint32_t> order(n);
    for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
    pick.shuffle(order.begin(), order.end());
    const auto n_holdout = static_cast<std::uint32_t>(std::ceil(holdout_fraction * n - 1e-12));
    std::vector<bool> held(n, false);
    for (std::uint32_t i = 0; i < n_holdout && i < n; ++i) held[order[i]] = true;

    const auto mechs = mechanisms_for(c);
    for (std::uint32_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, {0x1D57, ci, i}));
      const std::uint64_t body_seed = rng.next();
      const std::uint64_t handle_seed = rng.next();
      const Mechanism mech = mechs[rng.index(mechs.size())];
      DoorInstance d = compose(generate_body(c, body_seed), generate_handle(mech, handle_seed));
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s_%04u", to_string(c).c_str(), i);
      d.id = buf;
      d.body_seed = body_seed;
      d.handle_seed = handle_seed;
      if (!is_train_category(c)) d.split = SplitTag::TestCategory;
      else d.split = held[i] ? SplitTag::TestShape : SplitTag::Train;
      cat.by_category[c].push_back(d.id);
      cat.by_split[d.split].push_back(d.id);
      cat.instances.emplace(d.id, std::move(d));
    }
  }
  return cat;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json vec_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from_json(const nlohmann::json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

nlohmann::json pose_to_json(const Pose& p) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(p.linear()(i, k));
  return {{"position_m", vec_to_json(p.translation())}, {"rotation_rowmajor", r}};
}

Pose pose_from_json(const nlohmann::json& j) {
  Mat3 r;
  const auto& a = j.at("rotation_rowmajor");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r(i, k) = a.at(3 * i + k).get<double>();
  return make_pose(r, vec_from_json(j.at("position_m")));
}

namespace {

nlohmann::json box_to_json(const Box& b) {
  return {{"pose", pose_to_json(b.pose)}, {"half_extents_m", vec_to_json(b.half)}};
}

Box box_from_json(const nlohmann::json& j) {
  return Box{pose_from_json(j.at("pose")), vec_from_json(j.at("half_extents_m"))};
}

}  // namespace

nlohmann::json to_json(const BodySpec& b) {
  nlohmann::json frame = nlohmann::json::array();
  for (const auto& f : b.frame) frame.push_back(box_to_json(f));
  return {{"category", to_string(b.category)},
          {"width_m", b.width},
          {"height_m", b.height},
          {"thickness_m", b.thickness},
          {"bottom_m", b.bottom},
          {"hinge_side", to_string(b.hinge_side)},
          {"hinge_point_m", vec_to_json(b.hinge_point)},
          {"hinge_axis", vec_to_json(b.hinge_axis)},
          {"joint_limit_rad", b.joint_limit},
          {"socket_pose", pose_to_json(b.socket_pose)},
          {"frame", frame}};
}

BodySpec body_from_json(const nlohmann::json& j) {
  BodySpec b;
  b.category = parse_category(j.at("category").get<std::string>());
  b.width = j.at("width_m").get<double>();
  b.height = j.at("height_m").get<double>();
  b.thickness = j.at("thickness_m").get<double>();
  b.bottom = j.at("bottom_m").get<double>();
  b.hinge_side = j.at("hinge_side").get<std::string>() == "left" ? HingeSide::Left : HingeSide::Right;
  b.hinge_point = vec_from_json(j.at("hinge_point_m"));
  b.hinge_axis = vec_from_json(j.at("hinge_axis"));
  b.joint_limit = j.at("joint_limit_rad").get<double>();
  b.socket_pose = pose_from_json(j.at("socket_pose"));
  for (const auto& f : j.at("frame")) b.frame.push_back(box_from_json(f));
  return b;
}

nlohmann::json to_json(const HandleSpec& h) {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : h.primitives) {
    prims.push_back({{"shape", p.shape == PrimitiveShape::Box ? "box" : "cylinder"},
                     {"pose", pose_to_json(p.local)},
                     {"dimensions_m", vec_to_json(p.dimensions)}});
  }
  return {{"mechanism", to_string(h.mechanism)},
          {"primitives", prims},
          {"joint_axis", vec_to_json(h.joint_axis)},
          {"joint_origin", pose_to_json(h.joint_origin)},
          {"unlock_threshold_rad", h.unlock_threshold},
          {"joint_limit_rad", h.joint_limit},
          {"grasp_anchor", {{"point_m", vec_to_json(h.grasp_point)},
                            {"tangent", vec_to_json(h.grasp_tangent)},
                            {"primitive", h.grasp_primitive}}}};
}

HandleSpec handle_from_json(const nlohmann::json& j) {
  HandleSpec h;
  h.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
  for (const auto& p : j.at("primitives")) {
    HandlePrimitive hp;
    hp.shape = p.at("shape").get<std::string>() == "box" ? PrimitiveShape::Box : PrimitiveShape::Cylinder;
    hp.local = pose_from_json(p.at("pose"));
    hp.dimensions = vec_from_json(p.at("dimensions_m"));
    h.primitives.push_back(hp);
  }
  h.joint_axis = vec_from_json(j.at("joint_axis"));
  h.joint_origin = pose_from_json(j.at("joint_origin"));
  h.unlock_threshold = j.at("unlock_threshold_rad").get<double>();
  h.joint_limit = j.at("joint_limit_rad").get<double>();
  const auto& a = j.at("grasp_anchor");
  h.grasp_point = vec_from_json(a.at("point_m"));
  h.grasp_tangent = vec_from_json(a.at("tangent"));
  h.grasp_primitive = a.at("primitive").get<int>();
  return h;
}

nlohmann::json to_json(const DoorInstance& d) {
  return {{"schema", kAssetSchema},
          {"id", d.id},
          {"split", to_string(d.split)},
          {"body_seed", d.body_seed},
          {"handle_seed", d.handle_seed},
          {"body", to_json(d.body)},
          {"handle_mirrored", d.handle_mirrored},
          {"handle", to_json(d.handle)},
          {"latch", {{"k1_N_per_rad", d.latch.k1},
                     {"k2_N_per_rad", d.latch.k2},
                     {"friction_force_N", d.latch.friction_force},
                     {"unlock_threshold_rad", d.latch.unlock_threshold}}}};
}

DoorInstance instance_from_json(const nlohmann::json& j) {
  if (j.value("schema", std::string{}) != kAssetSchema)
    fail(ErrorKind::InvalidArgument, "asset schema mismatch, expected " + std::string(kAssetSchema));
  BodySpec body = body_from_json(j.at("body"));
  HandleSpec handle = handle_from_json(j.at("handle"));
  // The stored handle is already mounted; compose mirrors canonical handles only.
  DoorInstance d;
  if (j.at("handle_mirrored").get<bool>()) {
    const Mat3 m = Vec3(1.0, -1.0, 1.0).asDiagonal();
    HandleSpec canonical = handle;
    for (auto& p : canonical.primitives)
      p.local = make_pose(m * p.local.linear() * m, m * p.local.translation());
    canonical.joint_axis = -(m * handle.joint_axis);
    canonical.joint_origin = make_pose(m * handle.joint_origin.linear() * m, m * handle.joint_origin.translation());
    canonical.grasp_point = m * handle.grasp_point;
    canonical.grasp_tangent = m * handle.grasp_tangent;
    d = compose(body, canonical);
  } else {
    d = compose(body, handle);
  }
  d.id = j.at("id").get<std::string>();
  d.split = parse_split(j.at("split").get<std::string>());
  d.body_seed = j.value("body_seed", std::uint64_t{0});
  d.handle_seed = j.value("handle_seed", std::uint64_t{0});
  const auto& l = j.at("latch");
  d.latch.k1 = l.at("k1_N_per_rad").get<double>();
  d.latch.k2 = l.at("k2_N_per_rad").get<double>();
  d.latch.friction_force = l.at("friction_force_N").get<double>();
  d.latch.unlock_threshold = l.at("unlock_threshold_rad").get<double>();
  return d;
}

nlohmann::json manifest_json(const AssetCatalog& c) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& [id, d] : c.instances) {
    items.push_back({{"id", id},
                     {"category", to_string(d.body.category)},
                     {"mechanism", to_string(d.handle.mechanism)},
                     {"split", to_string(d.split)},
                     {"file", id + ".json"}});
  }
  return {{"schema", "doorverse-catalog-v1"},
          {"asset_schema", kAssetSchema},
          {"seed", c.seed},
          {"holdout_fraction", c.holdout_fraction},
          {"instances", items}};
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << text;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidArgument, path + ": " + e.what());
  }
}

}  // namespace

void save_instance(const DoorInstance& d, const std::string& path) {
  write_text(path, to_json(d).dump(2) + "\n");
}

DoorInstance load_instance(const std::string& path) { return instance_from_json(read_json(path)); }

void save_catalog(const AssetCatalog& c, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& [id, d] : c.instances) save_instance(d, (fs::path(dir) / (id + ".json")).string());
  write_text((fs::path(dir) / "manifest.json").string(), manifest_json(c).dump(2) + "\n");
}

AssetCatalog load_catalog(const std::string& dir) {
  const nlohmann::json m = read_json((fs::path(dir) / "manifest.json").string());
  AssetCatalog c;
  c.seed = m.at("seed").get<std::uint64_t>();
  c.holdout_fraction = m.at("holdout_fraction").get<double>();
  // Manifest order is id order; rebuild the per-category order by id as well.
  for (const auto& item : m.at("instances")) {
    DoorInstance d = load_instance((fs::path(dir) / item.at("file").get<std::string>()).string());
    c.by_category[d.body.category].push_back(d.id);
    c.by_split[d.split].push_back(d.id);
    c.instances.emplace(d.id, std::move(d));
  }
  return c;
}

}  // namespace doorbench::assets
