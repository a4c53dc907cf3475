#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/geometry.hpp"

namespace doorbench::assets {

enum class Mechanism { Lever, Round, Key, Valve };
enum class Category { Interior, Window, Car, Safe, StorageFurniture, Refrigerator };
enum class HingeSide { Left, Right };  // Left: hinge edge at -y, Right: hinge edge at +y
enum class SplitTag { Train, TestShape, TestCategory };
enum class PrimitiveShape { Box, Cylinder };

inline constexpr std::array<Category, 6> kAllCategories = {
    Category::Interior, Category::Window, Category::Car,
    Category::Safe, Category::StorageFurniture, Category::Refrigerator};
inline constexpr std::array<Mechanism, 4> kAllMechanisms = {
    Mechanism::Lever, Mechanism::Round, Mechanism::Key, Mechanism::Valve};

std::string to_string(Mechanism m);
std::string to_string(Category c);
std::string to_string(HingeSide h);
std::string to_string(SplitTag s);
Mechanism parse_mechanism(const std::string& s);
Category parse_category(const std::string& s);
SplitTag parse_split(const std::string& s);

/// Categories trained on; the remaining two are held out entirely.
bool is_train_category(Category c);

inline constexpr double kDefaultAperture = 0.08;

struct HandlePrimitive {
  PrimitiveShape shape = PrimitiveShape::Box;
  Pose local = Pose::Identity();  // in the handle link (mount) frame
  Vec3 dimensions = Vec3::Zero(); // full extents; cylinders: (2r, 2r, length) along local z

  Solid solid(const Pose& link_to_world) const;
};

/// Handle link frame: x = mount-face normal (out of the board), z = up,
/// y completes the frame. Generated handles are canonical: they turn toward
/// a hinge lying on the +y side; compose() mirrors them for the other side.
struct HandleSpec {
  Mechanism mechanism = Mechanism::Lever;
  std::vector<HandlePrimitive> primitives;
  Vec3 joint_axis = -Vec3::UnitX();
  Pose joint_origin = Pose::Identity();
  double unlock_threshold = 0.5;  // thre
  double joint_limit = 0.85;      // theta_h max
  Vec3 grasp_point = Vec3::Zero();
  Vec3 grasp_tangent = Vec3::UnitY();
  int grasp_primitive = 0;
};

struct BodySpec {
  Category category = Category::Interior;
  double width = 0.9;
  double height = 2.0;
  double thickness = 0.04;
  double bottom = 0.0;  // world z of the board's lower edge
  HingeSide hinge_side = HingeSide::Left;
  Vec3 hinge_point = Vec3::Zero();  // on the front face edge
  Vec3 hinge_axis = Vec3::UnitZ();
  double joint_limit = 1.8;  // theta_d max
  Pose socket_pose = Pose::Identity();  // world, door closed
  std::vector<Box> frame;  // static surround (wall, jambs, cabinet shell)

  /// Board box in the world at theta_d = 0. Front face lies on x = 0.
  Box board_closed() const;
  /// Sign of rotation about +z that swings the board out toward +x.
  double opening_sign() const { return hinge_side == HingeSide::Left ? -1.0 : 1.0; }
};

struct LatchModel {
  double k1 = 3.0;
  double k2 = 3.0;
  double friction_force = 150.0;  // F_f
  double unlock_threshold = 0.5;  // thre
};

struct RevoluteJoint {
  Pose parent_from_joint = Pose::Identity();
  Vec3 axis = Vec3::UnitZ();  // in the joint frame
  double lower = 0.0;
  double upper = 0.0;

  Pose transform(double q) const;
};

/// world -> revolute(theta_d) -> board -> revolute(theta_h) -> handle
struct JointTree {
  RevoluteJoint door;
  RevoluteJoint handle;

  struct Links {
    Pose board;
    Pose handle;
  };
  Links forward(double theta_d, double theta_h) const;
};

struct DoorInstance {
  std::string id;
  BodySpec body;
  HandleSpec handle;  // as mounted (mirrored for left hinges)
  bool handle_mirrored = false;
  LatchModel latch;
  JointTree joints;
  Pose board_local = Pose::Identity();  // board box centre in the board link frame
  Vec3 board_half = Vec3::Zero();
  SplitTag split = SplitTag::Train;
  std::uint64_t body_seed = 0;
  std::uint64_t handle_seed = 0;

  Box board_box(double theta_d) const;
  std::vector<Solid> handle_solids(double theta_d, double theta_h) const;
  Pose handle_link(double theta_d, double theta_h) const;
  /// Grasp anchor point and tangent in the world.
  Vec3 grasp_point(double theta_d, double theta_h) const;
  Vec3 grasp_tangent(double theta_d, double theta_h) const;
  /// Outward face normal of the board.
  Vec3 face_normal(double theta_d) const;
  /// World-space handle joint axis line (origin, direction).
  std::pair<Vec3, Vec3> handle_axis_line(double theta_d) const;
  std::pair<Vec3, Vec3> hinge_axis_line() const;
  /// Thickness of the grasped primitive across the expert's finger axis.
  double grasp_thickness() const;
};

struct CategoryCounts {
  std::array<std::uint32_t, 6> counts{};
  std::uint32_t& operator[](Category c) { return counts[static_cast<int>(c)]; }
  std::uint32_t operator[](Category c) const { return counts[static_cast<int>(c)]; }
  static CategoryCounts uniform(std::uint32_t n);
};

struct AssetCatalog {
  std::map<std::string, DoorInstance> instances;
  std::map<Category, std::vector<std::string>> by_category;
  std::map<SplitTag, std::vector<std::string>> by_split;
  double holdout_fraction = 0.25;
  std::uint64_t seed = 0;

  const DoorInstance& at(const std::string& id) const;
  /// Ids of one category restricted to one split, in catalog order.
  std::vector<std::string> ids(Category c, SplitTag s) const;
  std::vector<std::string> ids(SplitTag s) const;
  /// Stable content hash of the catalog manifest.
  std::uint64_t hash() const;
};

// ---------------------------------------------------------------------------
// Operations

BodySpec generate_body(Category category, std::uint64_t seed);
HandleSpec generate_handle(Mechanism mechanism, std::uint64_t seed);
DoorInstance compose(const BodySpec& body, const HandleSpec& handle,
                     double aperture = kDefaultAperture);
AssetCatalog build_catalog(const CategoryCounts& counts, double holdout_fraction,
                           std::uint64_t seed);

/// Mechanisms a category's handles are drawn from.
std::vector<Mechanism> mechanisms_for(Category c);

/// Default unlock threshold per mechanism.
double default_unlock_threshold(Mechanism m);

// ---------------------------------------------------------------------------
// Serialization (schema "doorverse-asset-v1")

inline constexpr const char* kAssetSchema = "doorverse-asset-v1";

nlohmann::json to_json(const BodySpec& b);
nlohmann::json to_json(const HandleSpec& h);
nlohmann::json to_json(const DoorInstance& d);
nlohmann::json manifest_json(const AssetCatalog& c);
BodySpec body_from_json(const nlohmann::json& j);
HandleSpec handle_from_json(const nlohmann::json& j);
DoorInstance instance_from_json(const nlohmann::json& j);

void save_instance(const DoorInstance& d, const std::string& path);
DoorInstance load_instance(const std::string& path);
/// Writes one asset file per instance plus manifest.json into `dir`.
void save_catalog(const AssetCatalog& c, const std::string& dir);
AssetCatalog load_catalog(const std::string& dir);

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);
nlohmann::json vec_to_json(const Vec3& v);
Vec3 vec_from_json(const nlohmann::json& j);

}  // namespace doorbench::assets
