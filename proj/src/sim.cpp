#include "doorbench/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "doorbench/error.hpp"
#include "doorbench/hash.hpp"
#include "doorbench/random.hpp"

namespace doorbench::sim {

namespace {

constexpr double kUnlockTolerance = 1e-9;
constexpr double kRelockAngle = 2.0 * kPi / 180.0;
constexpr double kHandleRelax = 0.5;
constexpr double kDoorRelax = 0.05;
constexpr double kDetachPosition = 0.03;
constexpr double kDetachRotation = 0.3;
constexpr double kRotationWeight = 0.1;  // metres per radian in the solve metric
constexpr int kSolveIterations = 5;
constexpr double kSolveDamping = 1e-6;

struct JointLine {
  Vec3 origin;
  Vec3 axis;
};

JointLine door_line(const DoorInstance& d) {
  const auto& j = d.joints.door;
  return {j.parent_from_joint.translation(), j.parent_from_joint.linear() * j.axis};
}

JointLine handle_line(const DoorInstance& d, double theta_d) {
  const Pose f = d.joints.door.transform(theta_d) * d.joints.handle.parent_from_joint;
  return {f.translation(), f.linear() * d.joints.handle.axis};
}

// Nearest handle primitive to a point, with its unsigned surface distance.
std::pair<int, double> nearest_handle_primitive(const DoorInstance& d, const SimState& s, const Vec3& p) {
  const auto solids = d.handle_solids(s.theta_d, s.theta_h);
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < solids.size(); ++i) {
    const double dist = std::abs(signed_distance(p, solids[i]));
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(i);
    }
  }
  return {best, best_d};
}

void face_base_toward(BasePose& b, const Vec3& p) { b.yaw = std::atan2(p.y() - b.y, p.x() - b.x); }

// Keeps the end effector inside the reachable shell. A mobile base moves,
// a fixed base clips the target. Returns true when the target was clipped.
bool enforce_reach(BasePose& base, Pose& ee, const RobotModel& robot) {
  bool clipped = false;
  Vec3 p = ee.translation();
  const double lim_z = 0.95 * robot.reach;
  double dz = p.z() - robot.shoulder_height;
  if (std::abs(dz) > lim_z) {
    dz = std::clamp(dz, -lim_z, lim_z);
    p.z() = robot.shoulder_height + dz;
    clipped = true;
  }
  const double max_planar = std::sqrt(robot.reach * robot.reach - dz * dz);
  const double min_planar = std::min(robot.min_planar_reach, max_planar);
  Eigen::Vector2d v(p.x() - base.x, p.y() - base.y);
  double n = v.norm();
  if (n < 1e-12) {
    v = Eigen::Vector2d(std::cos(base.yaw), std::sin(base.yaw));
    n = 0.0;
  } else {
    v /= n;
  }
  if (n > max_planar || n < min_planar) {
    const double target = std::clamp(n, min_planar, max_planar);
    if (robot.mobile) {
      base.x = p.x() - target * v.x();
      base.y = p.y() - target * v.y();
    } else {
      p.x() = base.x + target * v.x();
      p.y() = base.y + target * v.y();
      clipped = true;
    }
  }
  ee.translation() = p;
  if (robot.mobile) face_base_toward(base, p);
  return clipped;
}

bool robot_collides(const DoorInstance& d, const SimState& s, const RobotModel& robot) {
  const RobotGeometry g = robot_geometry(s, robot, d);
  const Box board = d.board_box(s.theta_d);
  auto hits = [&](const Box& obstacle) {
    return overlaps(g.palm, obstacle) || overlaps(g.arm, obstacle) || overlaps(g.base, obstacle);
  };
  if (hits(board)) return true;
  for (const auto& f : d.body.frame)
    if (hits(f)) return true;
  return false;
}

}  // namespace

std::vector<std::string> event_names(std::uint32_t events) {
  std::vector<std::string> out;
  if (events & kGrasped) out.emplace_back("grasped");
  if (events & kDetached) out.emplace_back("detached");
  if (events & kUnlocked) out.emplace_back("unlocked");
  if (events & kCollided) out.emplace_back("collided");
  if (events & kSuccess) out.emplace_back("success");
  if (events & kReachClipped) out.emplace_back("reach_clipped");
  return out;
}

double latch_force_door(double theta_d, double theta_h, const LatchModel& latch) {
  if (theta_d < 0.0 || theta_h < 0.0) fail(ErrorKind::InvalidArgument, "joint angles must be non-negative");
  if (theta_h <= latch.unlock_threshold) return latch.friction_force;
  return latch.k1 * theta_d;
}

double latch_force_handle(double theta_h, const LatchModel& latch) {
  if (theta_h < 0.0) fail(ErrorKind::InvalidArgument, "handle angle must be non-negative");
  return latch.k2 * theta_h;
}

Vec3 shoulder_position(const BasePose& base, const RobotModel& robot) {
  return Vec3(base.x, base.y, robot.shoulder_height);
}

bool within_reach(const BasePose& base, const Vec3& p, const RobotModel& robot) {
  BasePose b = base;
  Pose ee = make_pose(Mat3::Identity(), p);
  RobotModel fixed = robot;
  fixed.mobile = false;
  return !enforce_reach(b, ee, fixed);
}

SimState reset(const DoorInstance& instance, const RobotModel& robot, const TaskConfig& task,
               std::uint64_t seed) {
  if (!(task.thre_door > 0.0)) fail(ErrorKind::Configuration, "thre_door must be positive");
  if (instance.body.joint_limit <= task.thre_door)
    fail(ErrorKind::Configuration, "door joint limit " + std::to_string(instance.body.joint_limit) +
                                       " rad does not exceed thre_door; the task is unachievable");
  Rng rng(derive_seed(seed, {0x5E7, fnv1a64(instance.id)}));
  const double standoff = robot.mobile ? robot.home_standoff : robot.fixed_home_standoff;
  SimState s;
  s.base.x = standoff + rng.uniform(-robot.home_jitter, robot.home_jitter);
  s.base.y = rng.uniform(-robot.home_jitter, robot.home_jitter);
  s.base.yaw = kPi;
  Mat3 frontal;
  frontal.col(0) = Vec3::UnitZ();
  frontal.col(1) = Vec3::UnitY();
  frontal.col(2) = -Vec3::UnitX();
  s.ee = make_pose(frontal, Vec3(s.base.x - 0.5, s.base.y, robot.shoulder_height));
  s.prev_ee = s.ee;
  return s;
}

Pose attached_frame(const DoorInstance& instance, const SimState& state) {
  if (!state.attached) fail(ErrorKind::InvalidState, "no grasp attachment");
  return instance.handle_link(state.theta_d, state.theta_h) * *state.attached;
}

JointSolve solve_attached(const DoorInstance& d, const Pose& grasp, double theta_d, double theta_h,
                          const Pose& command, bool latched) {
  const double lo_d = d.joints.door.lower;
  const double hi_d = latched ? std::min(theta_d, d.joints.door.upper) : d.joints.door.upper;
  const double lo_h = d.joints.handle.lower;
  const double hi_h = d.joints.handle.upper;
  const JointLine dl = door_line(d);

  double qd = theta_d;
  double qh = theta_h;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  auto residual = [&](double a, double b, Vec6& e, Pose& g) {
    g = d.handle_link(a, b) * grasp;
    e.head<3>() = command.translation() - g.translation();
    e.tail<3>() = kRotationWeight * log_so3(command.linear() * g.linear().transpose());
  };

  for (int it = 0; it < kSolveIterations; ++it) {
    Vec6 e;
    Pose g;
    residual(qd, qh, e, g);
    const JointLine hl = handle_line(d, qd);
    Eigen::Matrix<double, 6, 2> jac;
    jac.col(0).head<3>() = dl.axis.cross(g.translation() - dl.origin);
    jac.col(0).tail<3>() = kRotationWeight * dl.axis;
    jac.col(1).head<3>() = hl.axis.cross(g.translation() - hl.origin);
    jac.col(1).tail<3>() = kRotationWeight * hl.axis;

    const Eigen::Matrix2d a = jac.transpose() * jac + kSolveDamping * Eigen::Matrix2d::Identity();
    const Eigen::Vector2d delta = a.ldlt().solve(jac.transpose() * e);
    double nd = qd + delta(0);
    double nh = qh + delta(1);
    const bool out_d = nd < lo_d || nd > hi_d;
    const bool out_h = nh < lo_h || nh > hi_h;
    if (out_d && out_h) {
      nd = std::clamp(nd, lo_d, hi_d);
      nh = std::clamp(nh, lo_h, hi_h);
    } else if (out_d) {
      nd = std::clamp(nd, lo_d, hi_d);
      const Vec6 rest = e - jac.col(0) * (nd - qd);
      const double dh = jac.col(1).dot(rest) / (jac.col(1).squaredNorm() + kSolveDamping);
      nh = std::clamp(qh + dh, lo_h, hi_h);
    } else if (out_h) {
      nh = std::clamp(nh, lo_h, hi_h);
      const Vec6 rest = e - jac.col(1) * (nh - qh);
      const double dd = jac.col(0).dot(rest) / (jac.col(0).squaredNorm() + kSolveDamping);
      nd = std::clamp(qd + dd, lo_d, hi_d);
    }
    qd = nd;
    qh = nh;
  }

  JointSolve out;
  out.theta_d = qd;
  out.theta_h = qh;
  const Pose g = d.handle_link(qd, qh) * grasp;
  out.position_residual = (command.translation() - g.translation()).norm();
  out.rotation_residual = rotation_angle(command.linear() * g.linear().transpose());
  return out;
}

StepResult step(const SimState& state, const Action& action, const DoorInstance& d,
                const RobotModel& robot, const TaskConfig& task) {
  if (state.terminated) fail(ErrorKind::EpisodeExhausted, "episode already terminated");
  if (state.step_index >= task.horizon)
    fail(ErrorKind::EpisodeExhausted, "step " + std::to_string(state.step_index) + " is past the horizon");
  if (!is_rotation(action.r, 1e-6)) fail(ErrorKind::InvalidArgument, "action rotation is not orthonormal");
  if (!action.p.allFinite()) fail(ErrorKind::InvalidArgument, "action position is not finite");

  StepResult r;
  SimState s = state;
  s.prev_ee = state.ee;
  const bool was_latched = !state.unlocked;

  if (s.attached && action.gripper == Gripper::Open) {
    s.attached.reset();
    r.events |= kDetached;
  }

  if (s.attached) {
    Pose command = clip_motion(s.ee, action.pose(), robot.max_step_translation, robot.max_step_rotation);
    if (!robot.mobile) {
      BasePose b = s.base;
      if (enforce_reach(b, command, robot)) r.events |= kReachClipped;
    }
    const JointSolve js = solve_attached(d, *s.attached, s.theta_d, s.theta_h, command, was_latched);
    s.theta_d = js.theta_d;
    s.theta_h = js.theta_h;
    if (js.position_residual > kDetachPosition || js.rotation_residual > kDetachRotation) {
      s.attached.reset();
      s.gripper_closed = true;
      s.ee = command;
      r.events |= kDetached;
    } else {
      s.ee = attached_frame(d, s);
    }
    if (enforce_reach(s.base, s.ee, robot)) r.events |= kReachClipped;
    if (robot_collides(d, s, robot)) s.collided = true;
  } else {
    // Free-space motion runs as collision-checked sub-steps.
    const Pose start = s.ee;
    const Pose target = action.pose();
    const double dist = (target.translation() - start.translation()).norm();
    const double ang = rotation_angle(target.linear() * start.linear().transpose());
    const int n = std::max({1, static_cast<int>(std::ceil(dist / robot.free_substep_translation - 1e-12)),
                            static_cast<int>(std::ceil(ang / robot.free_substep_rotation - 1e-12))});
    for (int k = 1; k <= n; ++k) {
      s.ee = interpolate(start, target, static_cast<double>(k) / n);
      if (enforce_reach(s.base, s.ee, robot)) r.events |= kReachClipped;
      if (robot_collides(d, s, robot)) {
        s.collided = true;
        break;
      }
    }
    const bool closing = action.gripper == Gripper::Close;
    if (closing && !state.gripper_closed && !s.collided) {
      const auto [idx, dist_surface] = nearest_handle_primitive(d, s, s.ee.translation());
      if (idx >= 0 && dist_surface < robot.attach_distance) {
        const auto solids = d.handle_solids(s.theta_d, s.theta_h);
        const double width = extent_along(solids[static_cast<std::size_t>(idx)], s.ee.linear().col(0));
        if (width < robot.aperture) {
          s.attached = d.handle_link(s.theta_d, s.theta_h).inverse() * s.ee;
          r.events |= kGrasped;
        }
      }
    }
    s.gripper_closed = closing;
  }

  if (s.attached) s.gripper_closed = true;

  if (!s.attached) {
    s.theta_h *= 1.0 - kHandleRelax;
    if (s.unlocked) s.theta_d *= 1.0 - kDoorRelax;
  }

  const double thre = d.latch.unlock_threshold;
  if (!s.unlocked && s.theta_h >= thre - kUnlockTolerance) {
    s.unlocked = true;
    r.events |= kUnlocked;
  } else if (s.unlocked && s.theta_h < thre - kUnlockTolerance && s.theta_d < kRelockAngle) {
    s.unlocked = false;
  }

  s.theta_d = std::clamp(s.theta_d, d.joints.door.lower, d.joints.door.upper);
  s.theta_h = std::clamp(s.theta_h, d.joints.handle.lower, d.joints.handle.upper);

  if (s.collided && !state.collided) r.events |= kCollided;
  if (s.collided && task.terminate_on_collision) s.terminated = true;

  s.max_theta_d = std::max(s.max_theta_d, s.theta_d);
  if (!s.success && s.theta_d > task.thre_door) {
    s.success = true;
    r.events |= kSuccess;
  }

  s.step_index = state.step_index + 1;
  r.dtheta_h = s.theta_h - state.theta_h;
  r.dtheta_d = s.theta_d - state.theta_d;
  r.state = s;
  return r;
}

bool is_success(const SimState& state, const TaskConfig&) { return state.success; }

RobotGeometry robot_geometry(const SimState& s, const RobotModel& robot, const DoorInstance& d) {
  const Mat3 r = s.ee.linear();
  const Vec3 x = r.col(0);
  const Vec3 z = r.col(2);
  const Vec3 p = s.ee.translation();

  double gap = robot.aperture;
  if (s.attached) {
    const auto [idx, dist] = nearest_handle_primitive(d, s, p);
    (void)dist;
    const auto solids = d.handle_solids(s.theta_d, s.theta_h);
    gap = std::min(robot.aperture, extent_along(solids[static_cast<std::size_t>(idx)], x));
  } else if (s.gripper_closed) {
    gap = 0.01;
  }

  constexpr double palm_depth = 0.03;
  constexpr double finger_width = 0.012;
  RobotGeometry g;
  g.palm.pose = make_pose(r, p - z * (robot.finger_length + 0.5 * palm_depth));
  g.palm.half = Vec3(0.5 * robot.aperture + finger_width, 0.025, 0.5 * palm_depth);
  const Vec3 finger_center = p - z * (0.5 * robot.finger_length - 0.01);
  const Vec3 finger_half(0.5 * finger_width, 0.01, 0.5 * robot.finger_length);
  g.finger_a.pose = make_pose(r, finger_center + x * (0.5 * gap + 0.5 * finger_width));
  g.finger_a.half = finger_half;
  g.finger_b.pose = make_pose(r, finger_center - x * (0.5 * gap + 0.5 * finger_width));
  g.finger_b.half = finger_half;
  g.arm.a = shoulder_position(s.base, robot);
  g.arm.b = p - z * (robot.finger_length + palm_depth + robot.arm_radius);
  g.arm.radius = robot.arm_radius;
  g.base.a = Vec3(s.base.x, s.base.y, robot.base_radius);
  g.base.b = Vec3(s.base.x, s.base.y, robot.base_radius + 0.05);
  g.base.radius = robot.base_radius;
  return g;
}

std::vector<SceneSolid> scene_solids(const DoorInstance& d, const SimState& s, const RobotModel& robot,
                                     bool include_robot) {
  std::vector<SceneSolid> out;
  for (const auto& f : d.body.frame) out.push_back({f, SceneTag::Frame});
  out.push_back({d.board_box(s.theta_d), SceneTag::Board});
  for (const auto& h : d.handle_solids(s.theta_d, s.theta_h)) out.push_back({h, SceneTag::Handle});
  if (include_robot) {
    const RobotGeometry g = robot_geometry(s, robot, d);
    out.push_back({g.palm, SceneTag::Robot});
    out.push_back({g.finger_a, SceneTag::Robot});
    out.push_back({g.finger_b, SceneTag::Robot});
    out.push_back({g.arm, SceneTag::Robot});
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const Action& a) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(a.r(i, k));
  return {{"p", assets::vec_to_json(a.p)},
          {"r", r},
          {"gripper", a.gripper == Gripper::Close ? "close" : "open"}};
}

Action action_from_json(const nlohmann::json& j) {
  Action a;
  a.p = assets::vec_from_json(j.at("p"));
  const auto& r = j.at("r");
  if (r.size() != 9) fail(ErrorKind::InvalidArgument, "action rotation needs 9 row-major entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) a.r(i, k) = r.at(3 * i + k).get<double>();
  const std::string g = j.value("gripper", std::string("close"));
  if (g != "open" && g != "close") fail(ErrorKind::InvalidArgument, "gripper must be open or close");
  a.gripper = g == "close" ? Gripper::Close : Gripper::Open;
  return a;
}

nlohmann::json to_json(const SimState& s) {
  return {{"theta_d", s.theta_d},
          {"theta_h", s.theta_h},
          {"unlocked", s.unlocked},
          {"attached", s.attached ? assets::pose_to_json(*s.attached) : nlohmann::json(nullptr)},
          {"gripper_closed", s.gripper_closed},
          {"ee", assets::pose_to_json(s.ee)},
          {"prev_ee", assets::pose_to_json(s.prev_ee)},
          {"base", {s.base.x, s.base.y, s.base.yaw}},
          {"step_index", s.step_index},
          {"success", s.success},
          {"collided", s.collided},
          {"terminated", s.terminated},
          {"max_theta_d", s.max_theta_d}};
}

SimState state_from_json(const nlohmann::json& j) {
  SimState s;
  s.theta_d = j.value("theta_d", 0.0);
  s.theta_h = j.value("theta_h", 0.0);
  s.unlocked = j.value("unlocked", false);
  if (j.contains("attached") && !j.at("attached").is_null()) s.attached = assets::pose_from_json(j.at("attached"));
  s.gripper_closed = j.value("gripper_closed", false);
  if (j.contains("ee")) s.ee = assets::pose_from_json(j.at("ee"));
  s.prev_ee = j.contains("prev_ee") ? assets::pose_from_json(j.at("prev_ee")) : s.ee;
  if (j.contains("base")) {
    const auto& b = j.at("base");
    s.base = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()};
  }
  s.step_index = j.value("step_index", 0u);
  s.success = j.value("success", false);
  s.collided = j.value("collided", false);
  s.terminated = j.value("terminated", false);
  s.max_theta_d = j.value("max_theta_d", s.theta_d);
  return s;
}

nlohmann::json to_json(const TaskConfig& t) {
  return {{"thre_door_rad", t.thre_door},
          {"horizon", t.horizon},
          {"stage2_budget", t.stage2_budget},
          {"terminate_on_collision", t.terminate_on_collision}};
}

TaskConfig task_from_json(const nlohmann::json& j) {
  TaskConfig t;
  t.thre_door = j.value("thre_door_rad", t.thre_door);
  t.horizon = j.value("horizon", t.horizon);
  t.stage2_budget = j.value("stage2_budget", t.stage2_budget);
  t.terminate_on_collision = j.value("terminate_on_collision", t.terminate_on_collision);
  return t;
}

nlohmann::json to_json(const RobotModel& r) {
  return {{"mobile", r.mobile},
          {"reach_m", r.reach},
          {"aperture_m", r.aperture},
          {"finger_length_m", r.finger_length},
          {"max_step_translation_m", r.max_step_translation},
          {"max_step_rotation_rad", r.max_step_rotation}};
}

RobotModel robot_from_json(const nlohmann::json& j) {
  RobotModel r;
  r.mobile = j.value("mobile", r.mobile);
  r.reach = j.value("reach_m", r.reach);
  r.aperture = j.value("aperture_m", r.aperture);
  r.finger_length = j.value("finger_length_m", r.finger_length);
  r.max_step_translation = j.value("max_step_translation_m", r.max_step_translation);
  r.max_step_rotation = j.value("max_step_rotation_rad", r.max_step_rotation);
  if (!(r.reach > 0.0) || !(r.aperture > 0.0)) fail(ErrorKind::InvalidArgument, "reach and aperture must be positive");
  return r;
}

nlohmann::json step_line(const StepResult& r, const Action& a) {
  const SimState& s = r.state;
  return {{"step", s.step_index},
          {"state", {{"theta_d", s.theta_d},
                     {"theta_h", s.theta_h},
                     {"unlocked", s.unlocked},
                     {"attached", s.attached.has_value()},
                     {"success", s.success},
                     {"collided", s.collided}}},
          {"action", to_json(a)},
          {"events", event_names(r.events)},
          {"dtheta_h", r.dtheta_h},
          {"dtheta_d", r.dtheta_d}};
}

}  // namespace doorbench::sim
