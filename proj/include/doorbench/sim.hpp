#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/assets.hpp"
#include "doorbench/geometry.hpp"

namespace doorbench::sim {

using assets::DoorInstance;
using assets::LatchModel;

struct RobotModel {
  bool mobile = true;
  double reach = 0.9;
  double aperture = assets::kDefaultAperture;
  double finger_length = 0.05;
  double shoulder_height = 1.0;
  double min_planar_reach = 0.45;
  double home_standoff = 1.2;        // mobile base
  double fixed_home_standoff = 0.6;  // fixed base
  double home_jitter = 0.1;
  double max_step_translation = 0.10;
  double max_step_rotation = 0.5;
  double free_substep_translation = 0.10;
  double free_substep_rotation = 0.5;
  double base_radius = 0.25;
  double arm_radius = 0.04;
  double attach_distance = 0.015;
};

struct TaskConfig {
  double thre_door = 0.7853981634;
  std::uint32_t horizon = 40;
  std::uint32_t stage2_budget = 10;
  bool terminate_on_collision = true;
};

enum class Gripper { Open, Close };

/// Target end-effector pose. Frame convention: x = finger closing axis,
/// y = handle tangent, z = approach direction.
struct Action {
  Vec3 p = Vec3::Zero();
  Mat3 r = Mat3::Identity();
  Gripper gripper = Gripper::Open;

  Pose pose() const { return make_pose(r, p); }
};

struct BasePose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

struct SimState {
  double theta_d = 0.0;
  double theta_h = 0.0;
  bool unlocked = false;
  std::optional<Pose> attached;  // grasp frame in the handle link
  bool gripper_closed = false;
  Pose ee = Pose::Identity();
  Pose prev_ee = Pose::Identity();
  BasePose base;
  std::uint32_t step_index = 0;
  bool success = false;
  bool collided = false;
  bool terminated = false;
  double max_theta_d = 0.0;
};

enum Event : std::uint32_t {
  kGrasped = 1u << 0,
  kDetached = 1u << 1,
  kUnlocked = 1u << 2,
  kCollided = 1u << 3,
  kSuccess = 1u << 4,
  kReachClipped = 1u << 5,
};

std::vector<std::string> event_names(std::uint32_t events);

struct StepResult {
  SimState state;
  std::uint32_t events = 0;
  double dtheta_h = 0.0;
  double dtheta_d = 0.0;

  bool has(Event e) const { return (events & e) != 0; }
};

double latch_force_door(double theta_d, double theta_h, const LatchModel& latch);
double latch_force_handle(double theta_h, const LatchModel& latch);

SimState reset(const DoorInstance& instance, const RobotModel& robot, const TaskConfig& task,
               std::uint64_t seed);

StepResult step(const SimState& state, const Action& action, const DoorInstance& instance,
                const RobotModel& robot, const TaskConfig& task);

bool is_success(const SimState& state, const TaskConfig& task);

/// World pose of the grasp frame predicted by forward kinematics.
Pose attached_frame(const DoorInstance& instance, const SimState& state);

Vec3 shoulder_position(const BasePose& base, const RobotModel& robot);
bool within_reach(const BasePose& base, const Vec3& p, const RobotModel& robot);

// ---------------------------------------------------------------------------
// Attached-motion solve

struct JointSolve {
  double theta_d = 0.0;
  double theta_h = 0.0;
  double position_residual = 0.0;
  double rotation_residual = 0.0;
};

/// Damped Gauss-Newton projection of a commanded grasp frame onto the
/// two-joint motion manifold, with box limits on both joints.
JointSolve solve_attached(const DoorInstance& instance, const Pose& grasp_in_handle,
                          double theta_d, double theta_h, const Pose& command, bool latched);

// ---------------------------------------------------------------------------
// Scene geometry

struct RobotGeometry {
  Box palm;
  Box finger_a;
  Box finger_b;
  Capsule arm;
  Capsule base;
};

RobotGeometry robot_geometry(const SimState& state, const RobotModel& robot,
                             const DoorInstance& instance);

enum class SceneTag : std::uint8_t { Frame, Board, Handle, Robot };

struct SceneSolid {
  Solid solid;
  SceneTag tag;
};

/// Everything the camera can see. The base footprint is collision-only.
std::vector<SceneSolid> scene_solids(const DoorInstance& instance, const SimState& state,
                                     const RobotModel& robot, bool include_robot = true);

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const Action& a);
Action action_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimState& s);
SimState state_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskConfig& t);
TaskConfig task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RobotModel& r);
RobotModel robot_from_json(const nlohmann::json& j);
/// One trajectory line: state summary, action, events and joint residuals.
nlohmann::json step_line(const StepResult& r, const Action& a);

}  // namespace doorbench::sim
