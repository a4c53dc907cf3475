#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/expert.hpp"
#include "doorbench/nets.hpp"
#include "doorbench/percept.hpp"
#include "doorbench/sim.hpp"

namespace doorbench::policies {

using expert::Stage;
using nets::TensorF;
using percept::CloudMatrix;
using percept::StateVector;
using sim::Action;

inline constexpr int kCondDim = nets::kFeatureDim + percept::kStateDim;
inline constexpr int kGraspCandidates = 100;
inline constexpr int kStageCandidates = 32;
inline constexpr int kAxisNeighbours = 200;
inline constexpr int kContextNeighbours = 16;
inline constexpr float kContextScale = 0.05f;

/// Frozen feature extractor. The global feature is the column max of a
/// per-point MLP (3 -> 64 -> 128). A point's local feature is the max over
/// its nearest cloud neighbours of a second MLP (3 -> 32 -> 128) applied to
/// their offsets from the point, scaled by 1 / kContextScale.
struct Backbone {
  nets::Mlp<float> mlp;
  nets::Mlp<float> context;

  struct Features {
    TensorF local;              // n x 128
    std::vector<float> global;  // 128
  };

  static Backbone make(std::uint64_t seed);
  Features features(const CloudMatrix& cloud) const;
  std::vector<float> global(const CloudMatrix& cloud) const;
  /// Local features of arbitrary points against `cloud`, k x 128.
  TensorF local_at(const CloudMatrix& cloud, const std::vector<Vec3>& points) const;
};

/// Per-column affine standardisation fitted on training rows.
struct Normalizer {
  std::vector<float> mean;
  std::vector<float> inv_std;

  static Normalizer identity(int dim);
  /// rows holds n * dim values; columns with std below 1e-6 keep unit scale.
  static Normalizer fit(const std::vector<float>& rows, int dim);
  int dim() const { return static_cast<int>(mean.size()); }
  TensorF apply(const TensorF& x) const;
  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

/// 9-d action code: position (3) then the first two rotation columns.
using ActionCode = std::array<float, 9>;
ActionCode world_code(const Action& a);

// ---------------------------------------------------------------------------
// Stage 1: grasping

struct GraspPolicy {
  // Affordance predictor: per-point feature head and contact-point embedding.
  nets::Linear<float> e_head;  // 256 -> 128
  nets::Mlp<float> e_point;    // 3 -> 128
  nets::Mlp<float> e_score;    // 256 -> 128 -> 1
  // Action discriminator: feature of the contact point plus action embedding.
  nets::Linear<float> d_head;  // 256 -> 128
  nets::Mlp<float> d_action;   // 9 -> 128
  nets::Mlp<float> d_score;    // 256 -> 128 -> 1
  Normalizer feature_norm = Normalizer::identity(2 * nets::kFeatureDim);
  int k_grasp = kGraspCandidates;

  static GraspPolicy make(Rng& rng);

  /// Scores in (0, 1) per row of local/points; global has one row or one per row.
  TensorF affordance(const TensorF& local, const TensorF& global, const TensorF& points) const;
  /// Scores in (0, 1) for k actions with their contact features.
  TensorF discriminate(const TensorF& local, const TensorF& global, const TensorF& codes) const;

  void affordance_params(nets::ParamList<float>& out);
  void discriminator_params(nets::ParamList<float>& out);
};

/// One score per observed point; each point is its own contact query.
std::vector<float> affordance_map(const CloudMatrix& cloud, const Backbone& backbone, const GraspPolicy& policy);

/// k grasp poses at `point`, approach uniform on the circle orthogonal to
/// the handle axis, y = axis, x = y cross z, gripper closed.
std::vector<Action> sample_grasp_candidates(const Vec3& point, const Vec3& handle_axis, int k, std::uint64_t seed);

/// Principal direction of the kAxisNeighbours points nearest `point`.
Vec3 estimate_handle_axis(const CloudMatrix& cloud, const Vec3& point);

/// Index of the largest value; the lowest index wins ties. NaN never wins.
std::size_t argmax_lowest(const std::vector<float>& v);
std::size_t argmax_lowest(const std::vector<double>& v);

using PointScorer = std::function<std::vector<float>(const CloudMatrix&)>;
using ActionScorer = std::function<std::vector<double>(const std::vector<Action>&)>;

struct GraspChoice {
  Action action;
  int point_index = -1;
  int candidate_index = -1;
  std::vector<Action> candidates;
};

/// Argmax-affordance point, k candidates, argmax discriminator score.
GraspChoice select_grasp(const CloudMatrix& cloud, const PointScorer& affordance, const ActionScorer& discriminator,
                         const std::function<Vec3(const Vec3&)>& handle_axis, int k, std::uint64_t seed);
GraspChoice select_grasp(const CloudMatrix& cloud, const Backbone& backbone, const GraspPolicy& policy,
                         const std::function<Vec3(const Vec3&)>& handle_axis, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Stages 2 and 3: generator / discriminator pairs

struct StagePolicy {
  nets::Cvae<float> generator;
  nets::Mlp<float> discriminator;  // cond + 9 -> 128 -> 128 -> 1, predicts the residual joint angle
  Normalizer cond_norm = Normalizer::identity(kCondDim);
  /// Actions are always coded relative to the end-effector pose in S; this
  /// flag only controls whether S enters the condition.
  bool use_state = true;
  int k_stage = kStageCandidates;

  static StagePolicy make(Rng& rng, bool use_state);

  /// Normalised 1 x kCondDim condition; S is zeroed when the state is unused.
  TensorF condition(const std::vector<float>& global, const StateVector& s) const;
  static Pose reference(const StateVector& s);
  /// Action to the generator's raw 9-d code relative to `ref`, and back.
  ActionCode encode(const Pose& ref, const Action& a) const;
  Action decode(const Pose& ref, const float* raw) const;

  void generator_params(nets::ParamList<float>& out);
  void discriminator_params(nets::ParamList<float>& out);
};

/// Decodes k sampled latents; candidates with degenerate rotations are dropped.
std::vector<Action> generate_stage_candidates(const StagePolicy& policy, const std::vector<float>& global,
                                              const StateVector& s, int k, std::uint64_t seed);
std::vector<double> score_stage_candidates(const StagePolicy& policy, const std::vector<float>& global,
                                           const StateVector& s, const std::vector<Action>& candidates);
/// Highest-scoring generated candidate; `scorer` replaces the learned
/// discriminator when given.
Action propose_stage_action(const StagePolicy& policy, const std::vector<float>& global, const StateVector& s,
                            std::uint64_t seed, const ActionScorer* scorer = nullptr);

// ---------------------------------------------------------------------------
// Universal policy

struct PolicyFlags {
  bool no_disentangle = false;  // one merged stage policy for stages 2 and 3
  bool no_state = false;
  bool privileged_axis = true;
};

nlohmann::json to_json(const PolicyFlags& f);
PolicyFlags flags_from_json(const nlohmann::json& j);

struct UniversalPolicy {
  Backbone backbone;
  GraspPolicy grasp;
  StagePolicy handle;  // the merged policy when no_disentangle
  StagePolicy door;
  PolicyFlags flags;

  const StagePolicy& stage_policy(Stage s) const;
  /// Closed-loop controllers reading only the observation, the unlock
  /// event (through the stage tag) and, when privileged, the handle axis.
  expert::StageControllers controllers() const;
};

using EpisodeResult = expert::TrajectoryRecord;

struct EpisodeOptions {
  sim::RobotModel robot;
  sim::TaskConfig task;
  std::optional<percept::CameraConfig> camera;
  bool early_stop = true;
};

EpisodeResult run_episode(const UniversalPolicy& policy, const assets::DoorInstance& instance,
                          const EpisodeOptions& options, std::uint64_t seed);

/// Affordance heat map as a PLY with a per-vertex score.
void write_affordance_ply(const std::string& path, const CloudMatrix& cloud, const std::vector<float>& scores);

}  // namespace doorbench::policies
