#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/assets.hpp"
#include "doorbench/expert.hpp"
#include "doorbench/policies.hpp"

namespace doorbench::trainer {

using assets::AssetCatalog;
using expert::Stage;
using sim::Action;

enum class Ablation { Full, NoDisentangle, NoCondition, NoState, NoMobile };
inline constexpr std::array<Ablation, 5> kAllAblations = {Ablation::Full, Ablation::NoDisentangle,
                                                          Ablation::NoCondition, Ablation::NoState,
                                                          Ablation::NoMobile};
std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

struct TrainConfig {
  std::uint32_t door_episodes = 600;
  std::uint32_t handle_episodes = 600;
  std::uint32_t grasp_episodes = 800;
  std::uint32_t epochs = 200;
  std::uint32_t batch = 32;
  double lr = 1e-3;
  nets::LossWeights loss;
  std::uint64_t seed = 0;
  expert::NoiseConfig door_noise{0.015, 0.1, 0.3, false, false, true};
  expert::NoiseConfig handle_noise{0.015, 0.1, 0.3, false, true, false};
  /// Share of grasp-stage contact points drawn from the handle surface.
  double handle_contact_fraction = 0.8;
  /// Contact queries per initial observation for the affordance targets.
  std::uint32_t affordance_points = 16;
  /// Share of exploratory grasps whose approach is drawn from the half circle
  /// facing the door; the rest use the full circle.
  double front_approach_fraction = 0.7;
  /// Extra grasps per initial observation executed for one step. Those that do
  /// not attach have a final outcome and are kept as discriminator samples.
  std::uint32_t screen_contacts = 8;
  std::uint32_t grasp_samples = 50;
  std::uint32_t grasp_topk = 10;
  double holdout_fraction = 0.15;
  std::uint32_t probe_size = 256;
  Ablation ablation = Ablation::Full;
  bool privileged_axis = true;
  sim::RobotModel robot;
  sim::TaskConfig task;

  void validate() const;
  policies::PolicyFlags flags() const;
  /// Robot model with the ablation applied.
  sim::RobotModel robot_model() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
/// FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const TrainConfig& c);

// ---------------------------------------------------------------------------
// Datasets

/// One stage-2/3 step: observation features, the controller's proposal, the
/// executed action and its realised residual joint angle.
struct StageSample {
  std::vector<float> global;  // 128
  percept::StateVector state = percept::StateVector::Zero();
  Action proposed;
  Action executed;
  double delta = 0.0;
  Stage stage = Stage::Door;
  std::string instance_id;
  sim::SimState state_before;
};

/// One grasp-stage episode: features at the executed contact, the action and
/// its normalised outcome, plus the affordance contact queries.
struct GraspSample {
  std::vector<float> global;  // 128
  std::vector<float> local;   // 128, at the contact point
  Action action;
  float label = 0.0f;
  double final_theta_d = 0.0;
  std::string instance_id;
  std::uint64_t seed = 0;
  std::vector<Action> screen_actions;
  std::vector<float> screen_labels;
  std::vector<float> screen_local;  // screened x 128
  std::vector<Vec3> query_points;
  std::vector<Vec3> query_axes;
  std::vector<float> query_local;  // queries x 128
};

/// Mean of the k largest scores.
double topk_mean(std::vector<double> scores, std::size_t k);

/// clamp(theta, 0, thre) / thre.
float grasp_label(double final_theta_d, double thre_door);

// ---------------------------------------------------------------------------
// Metrics

struct EpochRow {
  std::string stage;
  std::string net;
  std::uint32_t epoch = 0;  // 0 = before the first update
  double train_loss = 0.0;
  double probe_loss = 0.0;  // generators: frozen probe total; regressors: held-out L1
  double probe_kl = 0.0;
  double probe_pos = 0.0;
  double probe_rot = 0.0;
};

struct FitSummary {
  std::string stage;
  std::string net;
  std::size_t train_samples = 0;
  std::size_t holdout_samples = 0;
  double probe_epoch0 = 0.0;
  double probe_epoch1 = 0.0;
  double probe_final = 0.0;
  double zero_baseline = 0.0;  // regressors: held-out L1 of a constant-zero predictor
};

nlohmann::json to_json(const FitSummary& s);
FitSummary fit_summary_from_json(const nlohmann::json& j);

struct MetricsLog {
  std::vector<EpochRow> rows;
  std::vector<FitSummary> fits;

  std::string csv() const;
  void write_csv(const std::string& path) const;
  const FitSummary& fit(const std::string& stage, const std::string& net) const;
};

// ---------------------------------------------------------------------------
// Stages

struct StageRecord {
  std::string name;
  std::uint64_t hash = 0;  // content hash of the trained weights
  nlohmann::json provenance;
};

struct DoorStage {
  policies::StagePolicy policy;
  StageRecord record;
  std::vector<StageSample> samples;
};

struct HandleStage {
  policies::StagePolicy policy;  // merged stage-2/3 policy when no_disentangle
  StageRecord record;
  std::vector<StageSample> samples;
};

struct GraspStage {
  policies::GraspPolicy policy;
  StageRecord record;
  std::vector<GraspSample> samples;
};

/// Deterministic data collection and fitting; collection is parallel over
/// episodes, updates are single threaded.
DoorStage train_door_stage(const AssetCatalog& catalog, const TrainConfig& config, const policies::Backbone& backbone,
                           MetricsLog& metrics);
/// Throws a provenance error when `door` is null.
HandleStage train_handle_stage(const AssetCatalog& catalog, const DoorStage* door, const TrainConfig& config,
                               const policies::Backbone& backbone, MetricsLog& metrics);
/// Throws a provenance error when either downstream stage is null.
GraspStage train_grasp_stage(const AssetCatalog& catalog, const HandleStage* handle, const DoorStage* door,
                             const TrainConfig& config, const policies::Backbone& backbone, MetricsLog& metrics);

// ---------------------------------------------------------------------------
// Bundles

struct CheckpointBundle {
  policies::UniversalPolicy policy;
  TrainConfig config;
  std::uint64_t config_hash = 0;
  std::uint64_t catalog_hash = 0;
  std::uint64_t backbone_hash = 0;
  std::vector<StageRecord> stages;  // training order: door, handle, grasp
  MetricsLog metrics;

  const StageRecord& stage(const std::string& name) const;
};

/// Door, then handle conditioned on door, then grasp conditioned on both.
CheckpointBundle train_full(const AssetCatalog& catalog, const TrainConfig& config);

/// Bundle directory: manifest.json, metrics.csv and one DBCK file per network group.
void save_bundle(const CheckpointBundle& bundle, const std::string& dir);
CheckpointBundle load_bundle(const std::string& dir);

/// Content hash over parameter names, shapes and values plus a JSON header.
std::uint64_t weights_hash(const nets::ParamList<float>& params, const nlohmann::json& header);

}  // namespace doorbench::trainer
