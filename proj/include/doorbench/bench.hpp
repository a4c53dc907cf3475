#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/trainer.hpp"

namespace doorbench::bench {

using assets::AssetCatalog;
using assets::Category;
using assets::DoorInstance;
using assets::SplitTag;

struct EvalOptions {
  std::uint32_t episodes_per_cell = 50;  // per seed
  std::uint32_t num_seeds = 3;
  std::uint64_t seed = 0;
  /// Cells are every (category, split) pair with instances in one of these splits.
  std::vector<SplitTag> splits = {SplitTag::TestShape, SplitTag::TestCategory};
  sim::RobotModel robot;  // replaced by the bundle's robot when evaluating a bundle
  sim::TaskConfig task;

  void validate() const;
};

nlohmann::json to_json(const EvalOptions& o);

/// Seeds of one report, all derived from the report seed.
std::vector<std::uint64_t> report_seeds(const EvalOptions& o);

struct EpisodeLog {
  Category category = Category::Interior;
  SplitTag split = SplitTag::Train;
  std::uint32_t seed_index = 0;
  std::uint32_t episode = 0;
  expert::TrajectoryRecord record;  // executed actions, no observations
};

nlohmann::json to_json(const EpisodeLog& e);
EpisodeLog episode_from_json(const nlohmann::json& j);

struct CellResult {
  Category category = Category::Interior;
  SplitTag split = SplitTag::Train;
  std::uint32_t episodes_per_seed = 0;
  std::vector<double> per_seed;  // success rate per seed
  double mean = 0.0;
  double variance = 0.0;  // population variance over seeds
  std::vector<std::string> instance_ids;  // evaluation order, shared by every seed
};

struct EvalReport {
  std::string policy;
  std::uint64_t catalog_hash = 0;
  nlohmann::json config;  // options plus the policy's training config when known
  std::vector<std::uint64_t> seeds;
  sim::RobotModel robot;
  sim::TaskConfig task;
  std::vector<CellResult> cells;
  std::vector<EpisodeLog> episodes;
  double runtime_s = 0.0;

  const CellResult& cell(Category c, SplitTag s) const;
  /// Mean over cells of the per-cell mean, optionally restricted to one split.
  double average(const SplitTag* split = nullptr) const;
};

/// Report summary without the episode logs.
nlohmann::json to_json(const EvalReport& r);
void write_report(const EvalReport& r, const std::string& path);
/// One JSON object per line.
void write_episode_log(const std::vector<EpisodeLog>& episodes, const std::string& path);
std::vector<EpisodeLog> read_episode_log(const std::string& path);

/// Mean and population variance.
std::pair<double, double> mean_variance(const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Evaluation

using EpisodeRunner =
    std::function<expert::TrajectoryRecord(const DoorInstance& instance, std::uint64_t seed)>;

/// Core protocol: episodes run in parallel, results are stored by index.
EvalReport evaluate_runner(const std::string& name, const EpisodeRunner& runner, const AssetCatalog& catalog,
                           const EvalOptions& options);

/// Throws a compatibility error when the bundle was trained on another catalog.
EvalReport evaluate(const trainer::CheckpointBundle& bundle, const AssetCatalog& catalog, const EvalOptions& options);

/// Rule-based controllers; `observe` is the stage mask that needs observations.
EvalReport evaluate_controllers(const std::string& name, const expert::StageControllers& controllers,
                                const AssetCatalog& catalog, const EvalOptions& options, std::uint32_t observe = 0);

/// Holds the current pose with the gripper open.
expert::StageControllers idle_controllers();
/// Uniform random poses around the door board, gripper closed.
expert::StageControllers random_controllers();

EvalReport random_baseline(const AssetCatalog& catalog, const EvalOptions& options);

// ---------------------------------------------------------------------------
// Ablations

struct AblationTable {
  std::vector<std::string> variants;
  std::vector<std::pair<Category, SplitTag>> columns;
  std::vector<std::vector<double>> mean;      // variants x columns
  std::vector<std::vector<double>> variance;  // variants x columns

  double row_average(std::size_t variant) const;
  std::size_t row(const std::string& variant) const;
  std::string csv() const;
  nlohmann::json to_json() const;
};

/// Requires every report to share one set of cells and instance lists.
AblationTable tabulate(const std::vector<EvalReport>& reports);

using BundleSource = std::function<trainer::CheckpointBundle(const trainer::TrainConfig&)>;

struct AblationRun {
  AblationTable table;
  std::vector<EvalReport> reports;
};

/// Trains (through `source`, train_full when empty) and evaluates each variant
/// under identical seeds and instance lists.
AblationRun ablation_run(const AssetCatalog& catalog, const trainer::TrainConfig& base,
                         const std::vector<trainer::Ablation>& variants, const EvalOptions& options,
                         const BundleSource& source = {});

// ---------------------------------------------------------------------------
// Threshold curves

struct ThresholdCurve {
  std::vector<double> thresholds;  // radians
  std::vector<std::string> variants;
  std::vector<std::vector<double>> success;  // variants x thresholds

  std::string csv() const;
  std::string svg() const;
};

/// Success iff the logged max door angle exceeds t. Thresholds must ascend
/// and stay within [0, thre_door], because episodes stop at success.
std::vector<double> rescore(const std::vector<EpisodeLog>& episodes, const std::vector<double>& thresholds,
                            double thre_door);
ThresholdCurve threshold_curve(const std::vector<EvalReport>& reports, const std::vector<double>& thresholds);
/// Evaluates the bundle and rescores its episodes.
ThresholdCurve threshold_curve(const trainer::CheckpointBundle& bundle, const AssetCatalog& catalog,
                               const std::vector<double>& thresholds, const EvalOptions& options);

// ---------------------------------------------------------------------------
// Replay

struct ReplayCheck {
  std::size_t checked = 0;
  std::vector<std::string> mismatches;  // "instance/seed: reason"
  bool ok() const { return checked > 0 && mismatches.empty(); }
};

/// Re-executes `count` randomly chosen logged episodes and compares outcomes exactly.
ReplayCheck verify_replay(const EvalReport& report, const AssetCatalog& catalog, std::size_t count,
                          std::uint64_t seed);

}  // namespace doorbench::bench
