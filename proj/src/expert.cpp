#include "doorbench/expert.hpp"

#include <cmath>

#include "doorbench/error.hpp"

namespace doorbench::expert {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Grasp: return "grasp";
    case Stage::Handle: return "handle";
    case Stage::Door: return "door";
  }
  return "unknown";
}

Stage parse_stage(const std::string& s) {
  if (s == "grasp") return Stage::Grasp;
  if (s == "handle") return Stage::Handle;
  if (s == "door") return Stage::Door;
  fail(ErrorKind::InvalidArgument, "unknown stage '" + s + "'");
}

Mat3 grasp_frame(const Vec3& approach, const Vec3& tangent) {
  const Vec3 z = approach.normalized();
  const Vec3 y = (tangent - tangent.dot(z) * z).normalized();
  Mat3 r;
  r.col(0) = y.cross(z);
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

Action expert_grasp_action(const DoorInstance& d, const SimState& s, const RobotModel& robot) {
  const Vec3 anchor = d.grasp_point(s.theta_d, s.theta_h);
  if (!robot.mobile && !sim::within_reach(s.base, anchor, robot))
    fail(ErrorKind::Reachability, "grasp anchor is outside the reach of the fixed base");
  Action a;
  a.p = anchor;
  a.r = grasp_frame(-d.face_normal(s.theta_d), d.grasp_tangent(s.theta_d, s.theta_h));
  a.gripper = sim::Gripper::Close;
  return a;
}

Action expert_handle_action(const DoorInstance& d, const SimState& s, double delta_h) {
  if (!s.attached) fail(ErrorKind::InvalidState, "handle action needs a grasped handle");
  const auto [origin, axis] = d.handle_axis_line(s.theta_d);
  const Pose target = rotate_about_line(origin, axis, delta_h) * sim::attached_frame(d, s);
  return {target.translation(), target.linear(), sim::Gripper::Close};
}

Action expert_door_action(const DoorInstance& d, const SimState& s, double delta_d) {
  if (!s.attached) fail(ErrorKind::InvalidState, "door action needs a grasped handle");
  if (!s.unlocked) fail(ErrorKind::InvalidState, "door action needs an unlocked latch");
  const auto [origin, axis] = d.hinge_axis_line();
  const Pose target = rotate_about_line(origin, axis, delta_d) * sim::attached_frame(d, s);
  return {target.translation(), target.linear(), sim::Gripper::Close};
}

void NoiseConfig::validate() const {
  if (sigma_pos < 0 || sigma_rot < 0 || fraction < 0 || fraction > 1)
    fail(ErrorKind::InvalidArgument, "noise parameters must be non-negative with fraction in [0, 1]");
}

bool NoiseConfig::applies(Stage s) const {
  switch (s) {
    case Stage::Grasp: return grasp;
    case Stage::Handle: return handle;
    case Stage::Door: return door;
  }
  return false;
}

nlohmann::json to_json(const NoiseConfig& n) {
  return {{"sigma_pos_m", n.sigma_pos}, {"sigma_rot_rad", n.sigma_rot}, {"fraction", n.fraction},
          {"stages", {{"grasp", n.grasp}, {"handle", n.handle}, {"door", n.door}}}};
}

NoiseConfig noise_from_json(const nlohmann::json& j) {
  NoiseConfig n;
  n.sigma_pos = j.value("sigma_pos_m", 0.0);
  n.sigma_rot = j.value("sigma_rot_rad", 0.0);
  n.fraction = j.value("fraction", 0.0);
  if (j.contains("stages")) {
    const auto& s = j.at("stages");
    n.grasp = s.value("grasp", true);
    n.handle = s.value("handle", true);
    n.door = s.value("door", true);
  }
  n.validate();
  return n;
}

Action perturb(const Action& a, const NoiseConfig& noise, Rng& rng) {
  Action out = a;
  const Vec3 dp(rng.normal(), rng.normal(), rng.normal());
  const Vec3 dw(rng.normal(), rng.normal(), rng.normal());
  out.p += noise.sigma_pos * dp;
  out.r = exp_so3(noise.sigma_rot * dw) * a.r;
  return out;
}

StageControllers expert_controllers() {
  StageControllers c;
  c.grasp = [](const StepContext& ctx) { return expert_grasp_action(ctx.instance, ctx.state, ctx.robot); };
  c.handle = [](const StepContext& ctx) { return expert_handle_action(ctx.instance, ctx.state); };
  c.door = [](const StepContext& ctx) { return expert_door_action(ctx.instance, ctx.state); };
  return c;
}

namespace {

void log_events(TrajectoryRecord& rec, std::uint32_t step, std::uint32_t events) {
  for (const auto& e : sim::event_names(events)) rec.events.push_back(std::to_string(step) + ":" + e);
}

struct Runner {
  const DoorInstance& d;
  const RolloutOptions& opt;
  percept::CameraConfig camera;

  explicit Runner(const DoorInstance& inst, const RolloutOptions& o)
      : d(inst), opt(o), camera(o.camera ? *o.camera : percept::default_camera(inst)) {}

  std::optional<percept::Observation> maybe_observe(const SimState& s, Stage stage, std::uint64_t seed) const {
    if (!opt.record_observations && !opt.controllers_need_observations) return std::nullopt;
    if ((opt.observe_stages & (1u << static_cast<unsigned>(stage))) == 0) return std::nullopt;
    return percept::observe(d, s, opt.robot, camera, derive_seed(seed, {0x0B5, s.step_index}));
  }
};

}  // namespace

TrajectoryRecord collect_episode(const DoorInstance& d, const StageControllers& controllers,
                                 const NoiseConfig& noise, std::uint64_t seed, const RolloutOptions& opt) {
  noise.validate();
  TrajectoryRecord rec;
  rec.instance_id = d.id;
  rec.seed = seed;
  const Runner runner(d, opt);
  Rng noise_rng(derive_seed(seed, {0x401}));
  SimState s;
  try {
    s = sim::reset(d, opt.robot, opt.task, seed);
  } catch (const Error& e) {
    rec.failure = e.what();
    return rec;
  }

  Stage stage = Stage::Grasp;
  std::uint32_t stage_step = 0;
  try {
    while (s.step_index < opt.task.horizon && !s.terminated) {
      auto obs = runner.maybe_observe(s, stage, seed);
      const StepContext ctx{d, s, obs ? &*obs : nullptr, opt.robot, stage, stage_step,
                            derive_seed(seed, {0xC7, s.step_index})};
      const Controller& ctrl = stage == Stage::Grasp ? controllers.grasp
                               : stage == Stage::Handle ? controllers.handle
                                                        : controllers.door;
      const Action proposed = ctrl(ctx);
      Action a = proposed;
      bool perturbed = false;
      if (noise.fraction > 0 && noise.applies(stage) && noise_rng.bernoulli(noise.fraction)) {
        a = perturb(a, noise, noise_rng);
        perturbed = true;
      }
      const sim::StepResult r = sim::step(s, a, d, opt.robot, opt.task);
      StepRecord sr;
      sr.stage = stage;
      if (opt.record_observations) sr.observation = std::move(obs);
      sr.action = a;
      sr.proposed = proposed;
      sr.perturbed = perturbed;
      sr.events = r.events;
      sr.dtheta_h = r.dtheta_h;
      sr.dtheta_d = r.dtheta_d;
      sr.state_before = s;
      rec.steps.push_back(std::move(sr));
      log_events(rec, r.state.step_index, r.events);
      if (r.has(sim::kGrasped)) rec.grasped = true;
      if (r.has(sim::kUnlocked)) rec.unlocked = true;
      s = r.state;
      ++stage_step;

      if (s.success) break;
      if (stage == Stage::Grasp) {
        stage = Stage::Handle;
        stage_step = 0;
      } else if (stage == Stage::Handle && (s.unlocked || stage_step >= opt.task.stage2_budget)) {
        stage = Stage::Door;
        stage_step = 0;
      }
      // Stage actions keep the gripper closed, so an ungrasped door never moves again.
      if (opt.early_stop && !s.attached) break;
    }
  } catch (const Error& e) {
    rec.failure = std::string(doorbench::to_string(e.kind())) + ": " + e.what();
  }
  rec.final_theta_d = s.theta_d;
  rec.max_theta_d = s.max_theta_d;
  rec.success = sim::is_success(s, opt.task);
  return rec;
}

TrajectoryRecord replay(const DoorInstance& d, const TrajectoryRecord& record, const RolloutOptions& opt) {
  std::size_t i = 0;
  auto next = [&](const StepContext&) -> Action {
    if (i >= record.steps.size()) fail(ErrorKind::Data, "replay ran past the recorded actions");
    return record.steps[i++].action;
  };
  StageControllers c{next, next, next};
  RolloutOptions o = opt;
  o.record_observations = false;
  o.controllers_need_observations = false;
  TrajectoryRecord out = collect_episode(d, c, NoiseConfig{}, record.seed, o);
  // Recorded actions already carry their perturbations.
  for (std::size_t k = 0; k < out.steps.size() && k < record.steps.size(); ++k)
    out.steps[k].perturbed = record.steps[k].perturbed;
  return out;
}

nlohmann::json to_json(const TrajectoryRecord& r, const std::string& cloud_prefix) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const auto& s = r.steps[i];
    nlohmann::json js = {{"stage", to_string(s.stage)},
                         {"action", sim::to_json(s.action)},
                         {"perturbed", s.perturbed},
                         {"events", sim::event_names(s.events)},
                         {"dtheta_h", s.dtheta_h},
                         {"dtheta_d", s.dtheta_d},
                         {"theta_d_before", s.state_before.theta_d},
                         {"theta_h_before", s.state_before.theta_h}};
    if (s.observation) {
      js["robot_state"] = std::vector<float>(s.observation->state.data(), s.observation->state.data() + percept::kStateDim);
      if (!cloud_prefix.empty()) js["cloud"] = cloud_prefix + "_" + std::to_string(i) + ".ply";
    }
    steps.push_back(std::move(js));
  }
  return {{"instance_id", r.instance_id}, {"seed", r.seed},           {"success", r.success},
          {"final_theta_d", r.final_theta_d}, {"max_theta_d", r.max_theta_d}, {"grasped", r.grasped},
          {"unlocked", r.unlocked},       {"events", r.events},       {"failure", r.failure},
          {"steps", steps}};
}

TrajectoryRecord trajectory_from_json(const nlohmann::json& j) {
  TrajectoryRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.success = j.at("success").get<bool>();
  r.final_theta_d = j.at("final_theta_d").get<double>();
  r.max_theta_d = j.at("max_theta_d").get<double>();
  r.grasped = j.value("grasped", false);
  r.unlocked = j.value("unlocked", false);
  r.events = j.value("events", std::vector<std::string>{});
  r.failure = j.value("failure", std::string{});
  for (const auto& js : j.at("steps")) {
    StepRecord s;
    s.stage = parse_stage(js.at("stage").get<std::string>());
    s.action = sim::action_from_json(js.at("action"));
    s.perturbed = js.value("perturbed", false);
    s.dtheta_h = js.at("dtheta_h").get<double>();
    s.dtheta_d = js.at("dtheta_d").get<double>();
    r.steps.push_back(std::move(s));
  }
  return r;
}

}  // namespace doorbench::expert
