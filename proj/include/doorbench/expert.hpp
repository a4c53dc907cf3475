#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/assets.hpp"
#include "doorbench/percept.hpp"
#include "doorbench/random.hpp"
#include "doorbench/sim.hpp"

namespace doorbench::expert {

using assets::DoorInstance;
using sim::Action;
using sim::RobotModel;
using sim::SimState;
using sim::TaskConfig;

enum class Stage : std::uint8_t { Grasp = 0, Handle = 1, Door = 2 };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

inline constexpr double kHandleStep = 0.15;
inline constexpr double kDoorStep = 0.10;

/// Approach along the inward face normal, fingers closing across the local
/// handle tangent, positioned at the grasp anchor.
Action expert_grasp_action(const DoorInstance& instance, const SimState& state, const RobotModel& robot);
Action expert_handle_action(const DoorInstance& instance, const SimState& state, double delta_h = kHandleStep);
Action expert_door_action(const DoorInstance& instance, const SimState& state, double delta_d = kDoorStep);

/// Grasp frame for a contact point: z = approach, y = handle tangent, x = y cross z.
Mat3 grasp_frame(const Vec3& approach, const Vec3& tangent);

struct NoiseConfig {
  double sigma_pos = 0.0;
  double sigma_rot = 0.0;
  double fraction = 0.0;
  bool grasp = true;
  bool handle = true;
  bool door = true;

  void validate() const;
  bool applies(Stage s) const;
};

nlohmann::json to_json(const NoiseConfig& n);
NoiseConfig noise_from_json(const nlohmann::json& j);

/// Seeded Gaussian perturbation of an action's pose.
Action perturb(const Action& a, const NoiseConfig& noise, Rng& rng);

struct StepContext {
  const DoorInstance& instance;
  const SimState& state;
  const percept::Observation* observation;  // null when observations are off
  const RobotModel& robot;
  Stage stage;
  std::uint32_t stage_step;
  std::uint64_t seed;  // per-step stream for stochastic controllers
};

using Controller = std::function<Action(const StepContext&)>;

struct StageControllers {
  Controller grasp;
  Controller handle;
  Controller door;
};

/// Rule-based controllers using privileged joint axes.
StageControllers expert_controllers();

struct StepRecord {
  Stage stage = Stage::Grasp;
  std::optional<percept::Observation> observation;
  Action action;    // as executed
  Action proposed;  // controller output before any perturbation
  bool perturbed = false;
  std::uint32_t events = 0;
  double dtheta_h = 0.0;
  double dtheta_d = 0.0;
  SimState state_before;
};

struct TrajectoryRecord {
  std::string instance_id;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  double final_theta_d = 0.0;
  double max_theta_d = 0.0;
  bool success = false;
  bool grasped = false;
  bool unlocked = false;
  std::vector<std::string> events;
  std::string failure;  // simulator error text, if the episode aborted
};

struct RolloutOptions {
  RobotModel robot;
  TaskConfig task;
  bool record_observations = false;
  /// Observations are still computed for controllers that need them.
  bool controllers_need_observations = false;
  /// Bit (1 << stage) enables observations in that stage.
  std::uint32_t observe_stages = 0b111;
  std::optional<percept::CameraConfig> camera;  // default_camera() when unset
  /// Stop as soon as the outcome can no longer change.
  bool early_stop = true;
};

/// Grasp (one action), then the handle loop until unlock or the stage-2
/// budget, then the door loop until success or the horizon. Simulator
/// errors end the episode and are recorded, not thrown.
TrajectoryRecord collect_episode(const DoorInstance& instance, const StageControllers& controllers,
                                 const NoiseConfig& noise, std::uint64_t seed,
                                 const RolloutOptions& options = {});

/// Re-executes the recorded actions and returns the replayed record.
TrajectoryRecord replay(const DoorInstance& instance, const TrajectoryRecord& record,
                        const RolloutOptions& options = {});

nlohmann::json to_json(const TrajectoryRecord& r, const std::string& cloud_prefix = "");
TrajectoryRecord trajectory_from_json(const nlohmann::json& j);

}  // namespace doorbench::expert
