#include "doorbench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doorbench/error.hpp"
#include "doorbench/hash.hpp"

namespace doorbench::bench {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <class F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Cell {
  Category category;
  SplitTag split;
  std::vector<std::string> ids;
};

std::vector<Cell> cells_of(const AssetCatalog& catalog, const EvalOptions& o) {
  std::vector<Cell> cells;
  for (auto c : assets::kAllCategories)
    for (auto s : o.splits) {
      auto ids = catalog.ids(c, s);
      if (!ids.empty()) cells.push_back({c, s, std::move(ids)});
    }
  if (cells.empty()) fail(ErrorKind::Data, "catalog has no instances in the requested splits");
  return cells;
}

}  // namespace

void EvalOptions::validate() const {
  if (episodes_per_cell == 0) fail(ErrorKind::Configuration, "episodes_per_cell must be positive");
  if (num_seeds == 0) fail(ErrorKind::Configuration, "num_seeds must be positive");
  if (splits.empty()) fail(ErrorKind::Configuration, "no evaluation splits");
}

nlohmann::json to_json(const EvalOptions& o) {
  nlohmann::json splits = nlohmann::json::array();
  for (auto s : o.splits) splits.push_back(assets::to_string(s));
  return {{"episodes_per_cell", o.episodes_per_cell},
          {"num_seeds", o.num_seeds},
          {"seed", o.seed},
          {"splits", splits},
          {"robot", sim::to_json(o.robot)},
          {"task", sim::to_json(o.task)}};
}

std::vector<std::uint64_t> report_seeds(const EvalOptions& o) {
  std::vector<std::uint64_t> seeds;
  for (std::uint32_t s = 0; s < o.num_seeds; ++s) seeds.push_back(derive_seed(o.seed, {0xE5, s}));
  return seeds;
}

nlohmann::json to_json(const EpisodeLog& e) {
  return {{"category", assets::to_string(e.category)},
          {"split", assets::to_string(e.split)},
          {"seed_index", e.seed_index},
          {"episode", e.episode},
          {"trajectory", expert::to_json(e.record)}};
}

EpisodeLog episode_from_json(const nlohmann::json& j) {
  EpisodeLog e;
  try {
    e.category = assets::parse_category(j.at("category").get<std::string>());
    e.split = assets::parse_split(j.at("split").get<std::string>());
    e.seed_index = j.at("seed_index").get<std::uint32_t>();
    e.episode = j.at("episode").get<std::uint32_t>();
    e.record = expert::trajectory_from_json(j.at("trajectory"));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::Data, std::string("malformed episode log entry: ") + ex.what());
  }
  return e;
}

const CellResult& EvalReport::cell(Category c, SplitTag s) const {
  for (const auto& r : cells)
    if (r.category == c && r.split == s) return r;
  fail(ErrorKind::InvalidArgument, "report has no cell " + assets::to_string(c) + "/" + assets::to_string(s));
}

double EvalReport::average(const SplitTag* split) const {
  double acc = 0;
  int n = 0;
  for (const auto& c : cells)
    if (!split || c.split == *split) {
      acc += c.mean;
      ++n;
    }
  if (n == 0) fail(ErrorKind::InvalidArgument, "no cells to average");
  return acc / n;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"category", assets::to_string(c.category)},
                     {"split", assets::to_string(c.split)},
                     {"episodes_per_seed", c.episodes_per_seed},
                     {"per_seed", c.per_seed},
                     {"mean", c.mean},
                     {"variance", c.variance},
                     {"instance_ids", c.instance_ids}});
  nlohmann::json seeds = nlohmann::json::array();
  for (auto s : r.seeds) seeds.push_back(hex64(s));
  return {{"policy", r.policy},     {"catalog_hash", hex64(r.catalog_hash)},
          {"config", r.config},     {"num_seeds", r.seeds.size()},
          {"seeds", seeds},         {"cells", cells},
          {"average", r.cells.empty() ? 0.0 : r.average()},
          {"episodes", r.episodes.size()}, {"runtime_s", r.runtime_s}};
}

void write_report(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << to_json(r).dump(2) << "\n";
}

void write_episode_log(const std::vector<EpisodeLog>& episodes, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  for (const auto& e : episodes) out << to_json(e).dump() << "\n";
}

std::vector<EpisodeLog> read_episode_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path);
  std::vector<EpisodeLog> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Data, path + ": " + e.what());
    }
    out.push_back(episode_from_json(j));
  }
  return out;
}

std::pair<double, double> mean_variance(const std::vector<double>& v) {
  if (v.empty()) fail(ErrorKind::InvalidArgument, "mean of an empty sample");
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return {v.front(), 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, var / static_cast<double>(v.size())};
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_runner(const std::string& name, const EpisodeRunner& runner, const AssetCatalog& catalog,
                           const EvalOptions& o) {
  o.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = cells_of(catalog, o);
  const auto seeds = report_seeds(o);
  const std::size_t per_cell = o.episodes_per_cell;
  const std::size_t per_seed = cells.size() * per_cell;

  std::vector<EpisodeLog> logs(seeds.size() * per_seed);
  parallel_for(logs.size(), [&](std::size_t i) {
    const std::size_t s = i / per_seed;
    const std::size_t c = (i % per_seed) / per_cell;
    const std::size_t j = i % per_cell;
    const Cell& cell = cells[c];
    EpisodeLog& e = logs[i];
    e.category = cell.category;
    e.split = cell.split;
    e.seed_index = static_cast<std::uint32_t>(s);
    e.episode = static_cast<std::uint32_t>(j);
    const std::uint64_t ep_seed = derive_seed(
        seeds[s], {static_cast<std::uint64_t>(cell.category), static_cast<std::uint64_t>(cell.split), j});
    e.record = runner(catalog.at(cell.ids[j % cell.ids.size()]), ep_seed);
    for (auto& st : e.record.steps) st.observation.reset();
  });

  EvalReport r;
  r.policy = name;
  r.catalog_hash = catalog.hash();
  r.config = {{"options", to_json(o)}};
  r.seeds = seeds;
  r.robot = o.robot;
  r.task = o.task;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult cr;
    cr.category = cells[c].category;
    cr.split = cells[c].split;
    cr.episodes_per_seed = o.episodes_per_cell;
    for (std::size_t j = 0; j < per_cell; ++j) cr.instance_ids.push_back(cells[c].ids[j % cells[c].ids.size()]);
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      std::size_t ok = 0;
      for (std::size_t j = 0; j < per_cell; ++j) ok += logs[s * per_seed + c * per_cell + j].record.success;
      cr.per_seed.push_back(static_cast<double>(ok) / static_cast<double>(per_cell));
    }
    std::tie(cr.mean, cr.variance) = mean_variance(cr.per_seed);
    r.cells.push_back(std::move(cr));
  }
  r.episodes = std::move(logs);
  r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

EvalReport evaluate(const trainer::CheckpointBundle& bundle, const AssetCatalog& catalog, const EvalOptions& options) {
  if (bundle.catalog_hash != catalog.hash())
    fail(ErrorKind::Compatibility, "bundle was trained on catalog " + hex64(bundle.catalog_hash) +
                                       ", evaluation catalog is " + hex64(catalog.hash()));
  EvalOptions o = options;
  o.robot = bundle.config.robot_model();
  policies::EpisodeOptions eo;
  eo.robot = o.robot;
  eo.task = o.task;
  const auto& policy = bundle.policy;
  EvalReport r = evaluate_runner(
      trainer::to_string(bundle.config.ablation),
      [&](const DoorInstance& d, std::uint64_t seed) { return policies::run_episode(policy, d, eo, seed); }, catalog,
      o);
  r.config["train"] = trainer::to_json(bundle.config);
  r.config["config_hash"] = hex64(bundle.config_hash);
  return r;
}

EvalReport evaluate_controllers(const std::string& name, const expert::StageControllers& controllers,
                                const AssetCatalog& catalog, const EvalOptions& options, std::uint32_t observe) {
  expert::RolloutOptions ro;
  ro.robot = options.robot;
  ro.task = options.task;
  ro.controllers_need_observations = observe != 0;
  ro.observe_stages = observe;
  return evaluate_runner(
      name,
      [&](const DoorInstance& d, std::uint64_t seed) {
        return expert::collect_episode(d, controllers, expert::NoiseConfig{}, seed, ro);
      },
      catalog, options);
}

expert::StageControllers idle_controllers() {
  const expert::Controller hold = [](const expert::StepContext& ctx) {
    sim::Action a;
    a.p = ctx.state.ee.translation();
    a.r = ctx.state.ee.linear();
    a.gripper = sim::Gripper::Open;
    return a;
  };
  return {hold, hold, hold};
}

expert::StageControllers random_controllers() {
  const expert::Controller act = [](const expert::StepContext& ctx) {
    const auto& b = ctx.instance.body;
    Rng rng(ctx.seed);
    sim::Action a;
    a.p = Vec3(rng.uniform(-0.05, 0.5), rng.uniform(-0.5 * b.width - 0.2, 0.5 * b.width + 0.2),
               rng.uniform(b.bottom - 0.2, b.bottom + b.height + 0.2));
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    a.r = q.normalized().toRotationMatrix();
    a.gripper = sim::Gripper::Close;
    return a;
  };
  return {act, act, act};
}

EvalReport random_baseline(const AssetCatalog& catalog, const EvalOptions& options) {
  return evaluate_controllers("random", random_controllers(), catalog, options);
}

// ---------------------------------------------------------------------------
// Ablations

double AblationTable::row_average(std::size_t v) const {
  if (v >= mean.size()) fail(ErrorKind::InvalidArgument, "no such table row");
  return std::accumulate(mean[v].begin(), mean[v].end(), 0.0) / static_cast<double>(mean[v].size());
}

std::size_t AblationTable::row(const std::string& variant) const {
  for (std::size_t i = 0; i < variants.size(); ++i)
    if (variants[i] == variant) return i;
  fail(ErrorKind::InvalidArgument, "table has no row " + variant);
}

std::string AblationTable::csv() const {
  std::ostringstream out;
  out << "variant";
  for (const auto& [c, s] : columns) out << "," << assets::to_string(c) << "/" << assets::to_string(s);
  out << ",average\n";
  char buf[64];
  for (std::size_t v = 0; v < variants.size(); ++v) {
    out << variants[v];
    for (std::size_t k = 0; k < columns.size(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.4f+-%.4f", mean[v][k], std::sqrt(variance[v][k]));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.4f\n", row_average(v));
    out << buf;
  }
  return out.str();
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& [c, s] : columns) cols.push_back({{"category", assets::to_string(c)}, {"split", assets::to_string(s)}});
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t v = 0; v < variants.size(); ++v)
    rows.push_back({{"variant", variants[v]}, {"mean", mean[v]}, {"variance", variance[v]}, {"average", row_average(v)}});
  return {{"columns", cols}, {"rows", rows}};
}

AblationTable tabulate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) fail(ErrorKind::InvalidArgument, "no reports to tabulate");
  AblationTable t;
  for (const auto& c : reports.front().cells) t.columns.emplace_back(c.category, c.split);
  for (const auto& r : reports) {
    if (r.cells.size() != t.columns.size() || r.seeds != reports.front().seeds)
      fail(ErrorKind::InvalidArgument, "report " + r.policy + " uses a different protocol");
    std::vector<double> m, v;
    for (std::size_t k = 0; k < r.cells.size(); ++k) {
      const auto& c = r.cells[k];
      const auto& ref = reports.front().cells[k];
      if (c.category != ref.category || c.split != ref.split || c.instance_ids != ref.instance_ids)
        fail(ErrorKind::InvalidArgument, "report " + r.policy + " evaluated different instances");
      m.push_back(c.mean);
      v.push_back(c.variance);
    }
    t.variants.push_back(r.policy);
    t.mean.push_back(std::move(m));
    t.variance.push_back(std::move(v));
  }
  return t;
}

AblationRun ablation_run(const AssetCatalog& catalog, const trainer::TrainConfig& base,
                         const std::vector<trainer::Ablation>& variants, const EvalOptions& options,
                         const BundleSource& source) {
  if (variants.empty()) fail(ErrorKind::InvalidArgument, "no ablation variants");
  AblationRun run;
  for (auto v : variants) {
    trainer::TrainConfig cfg = base;
    cfg.ablation = v;
    const trainer::CheckpointBundle bundle = source ? source(cfg) : trainer::train_full(catalog, cfg);
    run.reports.push_back(evaluate(bundle, catalog, options));
  }
  run.table = tabulate(run.reports);
  return run;
}

// ---------------------------------------------------------------------------
// Threshold curves

std::vector<double> rescore(const std::vector<EpisodeLog>& episodes, const std::vector<double>& thresholds,
                            double thre_door) {
  if (episodes.empty()) fail(ErrorKind::Data, "empty episode log");
  if (thresholds.empty()) fail(ErrorKind::InvalidArgument, "no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] >= 0) || thresholds[i] > thre_door + 1e-12)
      fail(ErrorKind::InvalidArgument, "thresholds must lie in [0, thre_door]");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
      fail(ErrorKind::InvalidArgument, "thresholds must be strictly ascending");
  }
  std::vector<double> out;
  for (double t : thresholds) {
    std::size_t ok = 0;
    for (const auto& e : episodes) ok += e.record.max_theta_d > t;
    out.push_back(static_cast<double>(ok) / static_cast<double>(episodes.size()));
  }
  return out;
}

ThresholdCurve threshold_curve(const std::vector<EvalReport>& reports, const std::vector<double>& thresholds) {
  if (reports.empty()) fail(ErrorKind::InvalidArgument, "no reports for the curve");
  ThresholdCurve c;
  c.thresholds = thresholds;
  for (const auto& r : reports) {
    c.variants.push_back(r.policy);
    c.success.push_back(rescore(r.episodes, thresholds, r.task.thre_door));
  }
  return c;
}

ThresholdCurve threshold_curve(const trainer::CheckpointBundle& bundle, const AssetCatalog& catalog,
                               const std::vector<double>& thresholds, const EvalOptions& options) {
  return threshold_curve(std::vector<EvalReport>{evaluate(bundle, catalog, options)}, thresholds);
}

std::string ThresholdCurve::csv() const {
  std::ostringstream out;
  out << "threshold_deg";
  for (const auto& v : variants) out << "," << v;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.4f", thresholds[i] * 180.0 / M_PI);
    out << buf;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      std::snprintf(buf, sizeof buf, ",%.4f", success[v][i]);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

std::string ThresholdCurve::svg() const {
  constexpr double W = 640, H = 400, L = 60, R = 150, T = 20, B = 50;
  const double tmax = thresholds.empty() ? 1.0 : std::max(thresholds.back(), 1e-9);
  const auto X = [&](double t) { return L + (W - L - R) * t / tmax; };
  const auto Y = [&](double s) { return T + (H - T - B) * (1.0 - s); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                "font-size=\"12\">\n",
                W, H);
  out << buf;
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", L,
                Y(0), W - R, Y(0));
  out << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", L,
                Y(0), L, Y(1));
  out << buf;
  for (int k = 0; k <= 5; ++k) {
    const double s = k / 5.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.1f</text>\n", L - 6, Y(s) + 4, s);
    out << buf;
  }
  for (double t : thresholds) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.0f</text>\n", X(t),
                  Y(0) + 18, t * 180.0 / M_PI);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">door angle threshold (deg)</text>\n",
                0.5 * (L + W - R), H - 8);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"14\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 14 %.1f)\">success rate</text>\n",
                0.5 * (T + H - B), 0.5 * (T + H - B));
  out << buf;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const char* col = colors[v % 6];
    out << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.1f,%.1f", i ? " " : "", X(thresholds[i]), Y(success[v][i]));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" fill=\"%s\">%s</text>\n", W - R + 10,
                  T + 16.0 * static_cast<double>(v + 1), col, variants[v].c_str());
    out << buf;
  }
  out << "</svg>\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Replay

ReplayCheck verify_replay(const EvalReport& report, const AssetCatalog& catalog, std::size_t count,
                          std::uint64_t seed) {
  if (report.episodes.empty()) fail(ErrorKind::Data, "report has no logged episodes");
  std::vector<std::size_t> idx(report.episodes.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(std::min(count, idx.size()));

  expert::RolloutOptions ro;
  ro.robot = report.robot;
  ro.task = report.task;
  ReplayCheck out;
  for (std::size_t i : idx) {
    const auto& rec = report.episodes[i].record;
    const auto again = expert::replay(catalog.at(rec.instance_id), rec, ro);
    ++out.checked;
    const std::string tag = rec.instance_id + "/" + hex64(rec.seed) + ": ";
    if (again.success != rec.success) out.mismatches.push_back(tag + "success differs");
    if (again.final_theta_d != rec.final_theta_d) out.mismatches.push_back(tag + "final door angle differs");
    if (again.max_theta_d != rec.max_theta_d) out.mismatches.push_back(tag + "max door angle differs");
    if (again.steps.size() != rec.steps.size()) out.mismatches.push_back(tag + "step count differs");
  }
  return out;
}

}  // namespace doorbench::bench
