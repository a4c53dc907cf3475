// Acceptance gate. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any criterion fails.
//
// Criteria 6-10 need trained bundles at the default budget. Bundles are
// cached under --cache keyed by variant, config hash and catalog hash, so a
// rerun only pays for evaluation.

#include <CLI11.hpp>

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/bench.hpp"
#include "doorbench/error.hpp"
#include "doorbench/nets.hpp"
#include "doorbench/percept.hpp"
#include "doorbench/random.hpp"

using namespace doorbench;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Latch law

Outcome latch_exactness() {
  const auto t0 = clk::now();
  const assets::LatchModel defaults;
  if (defaults.k1 != 3.0 || defaults.k2 != 3.0 || defaults.friction_force != 150.0)
    return {false, "default latch constants differ from k1=3, k2=3, F_f=150"};
  Rng rng(0x1a7c);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    assets::LatchModel l;
    l.unlock_threshold = rng.uniform(0.1, 1.2);
    const double td = rng.uniform(0.0, 2.0);
    // Every 10th sample sits exactly on the branch point.
    const double th = i % 10 == 0 ? l.unlock_threshold : rng.uniform(0.0, 1.5);
    const double door = th <= l.unlock_threshold ? 150.0 : 3.0 * td;
    const double handle = 3.0 * th;
    bad += sim::latch_force_door(td, th, l) != door;
    bad += sim::latch_force_handle(th, l) != handle;
  }
  const double dt = seconds_since(t0);
  return {bad == 0 && dt < 1.0, std::to_string(bad) + " mismatches in 2x10^4 evaluations, " + fmt("%.3f s", dt)};
}

// ---------------------------------------------------------------------------
// 2. Success threshold

assets::DoorInstance lever_door() {
  auto d = assets::compose(assets::generate_body(assets::Category::Interior, 3),
                           assets::generate_handle(assets::Mechanism::Lever, 3));
  d.id = "acceptance_lever";
  return d;
}

Outcome success_threshold() {
  const sim::TaskConfig task;
  const sim::RobotModel robot;
  const auto d = lever_door();
  const double deg = kPi / 180.0;
  std::ostringstream detail;
  bool ok = true;

  // Route 1: a latched state placed exactly at the angle, held for one step.
  for (double a : {44.9, 45.0, 45.1}) {
    sim::SimState s = sim::reset(d, robot, task, 1);
    s.theta_d = a * deg;
    s.max_theta_d = s.theta_d;
    const sim::Action hold{s.ee.translation(), s.ee.linear(), sim::Gripper::Open};
    const auto r = sim::step(s, hold, d, robot, task);
    const bool expect = a > 45.0;
    const bool got = sim::is_success(r.state, task);
    ok &= got == expect && r.state.theta_d == a * deg;
    detail << a << "deg:" << (got ? "success" : "no") << " ";
  }

  // Route 2: the expert opens the door onto the angle.
  for (double a : {44.9, 45.1}) {
    sim::SimState s = sim::reset(d, robot, task, 1);
    s = sim::step(s, expert::expert_grasp_action(d, s, robot), d, robot, task).state;
    for (int i = 0; i < 10 && !s.unlocked; ++i) s = sim::step(s, expert::expert_handle_action(d, s), d, robot, task).state;
    const double target = a * deg;
    for (int i = 0; i < 100 && s.theta_d < target - 1e-9 && !s.terminated; ++i)
      s = sim::step(s, expert::expert_door_action(d, s, std::min(0.1, target - s.theta_d)), d, robot, task).state;
    const bool landed = std::abs(s.theta_d - target) < 1e-6;
    const bool got = sim::is_success(s, task);
    ok &= landed && got == (a > 45.0);
    detail << "driven " << a << "deg:" << (landed ? (got ? "success" : "no") : "missed") << " ";
  }
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Expert competence

Outcome expert_competence() {
  omp_set_num_threads(1);
  const auto t0 = clk::now();
  const auto cat = assets::build_catalog(assets::CategoryCounts::uniform(10), 0.25, 0xE3E3);
  std::size_t n = 0;
  std::size_t ok = 0;
  for (const auto& [id, d] : cat.instances) {
    const auto r = expert::collect_episode(d, expert::expert_controllers(), expert::NoiseConfig{}, derive_seed(7, {n}));
    ok += r.success;
    ++n;
  }
  const double dt = seconds_since(t0);
  const double rate = static_cast<double>(ok) / static_cast<double>(n);
  return {n == 60 && rate >= 0.95 && dt < 300.0,
          std::to_string(ok) + "/" + std::to_string(n) + " instances opened, " + fmt("%.2f s", dt)};
}

// ---------------------------------------------------------------------------
// 4. Perception

Outcome perception_soundness() {
  omp_set_num_threads(1);
  const auto t0 = clk::now();
  const auto cat = assets::build_catalog(assets::CategoryCounts::uniform(5), 0.25, 0x9E9E);
  std::vector<const assets::DoorInstance*> pool;
  for (const auto& [id, d] : cat.instances) pool.push_back(&d);
  const sim::RobotModel robot;
  const expert::NoiseConfig noise{0.03, 0.2, 0.5, true, true, true};
  Rng rng(0x4444);
  std::size_t occluded = 0;
  std::size_t wrong_size = 0;
  std::size_t checked = 0;
  for (int scene = 0; scene < 100; ++scene) {
    const auto& d = *pool[rng.index(pool.size())];
    // A random moment of a noisy expert episode.
    const auto rec = expert::collect_episode(d, expert::expert_controllers(), noise, rng.next());
    const auto& st = rec.steps[rng.index(rec.steps.size())].state_before;
    const auto cam = percept::default_camera(d);
    const auto obs = percept::observe(d, st, robot, cam, rng.next());
    wrong_size += obs.cloud.rows() != 4096;
    const auto solids = sim::scene_solids(d, st, robot, true);
    for (Eigen::Index i = 0; i < obs.cloud.rows(); ++i) {
      const Vec3 p = obs.cloud.row(i).cast<double>().transpose();
      const Vec3 v = p - cam.position;
      const double dist = v.norm();
      const Ray ray{cam.position, v / dist};
      double first = std::numeric_limits<double>::infinity();
      for (const auto& s : solids)
        if (auto t = intersect(ray, s.solid)) first = std::min(first, *t);
      occluded += first < dist - 1e-3;
      ++checked;
    }
  }
  const double dt = seconds_since(t0);
  return {occluded == 0 && wrong_size == 0 && dt < 120.0,
          std::to_string(occluded) + " occluded of " + std::to_string(checked) + " points, " +
              std::to_string(wrong_size) + " clouds not 4096, " + fmt("%.1f s", dt)};
}

// ---------------------------------------------------------------------------
// 5. Autodiff substrate

using nets::TensorD;

TensorD random_tensor(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from(r, c, std::move(v));
}

TensorD away_from_zero(int r, int c, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.05, 1.0);
  return TensorD::from(r, c, std::move(v));
}

TensorD project(const TensorD& y, std::uint64_t seed) {
  Rng rng(seed);
  return nets::sum(nets::mul(y, random_tensor(y.rows(), y.cols(), rng)));
}

Outcome autodiff_substrate() {
  using namespace nets;
  Rng rng(0x5555);
  using F = std::function<TensorD(const std::vector<TensorD>&)>;
  std::vector<std::tuple<std::string, F, std::vector<TensorD>>> ops = {
      {"matmul", [](const auto& x) { return project(matmul(x[0], x[1]), 1); }, {random_tensor(4, 5, rng), random_tensor(5, 3, rng)}},
      {"add_row", [](const auto& x) { return project(add_row(x[0], x[1]), 2); }, {random_tensor(4, 3, rng), random_tensor(1, 3, rng)}},
      {"add", [](const auto& x) { return project(add(x[0], x[1]), 3); }, {random_tensor(3, 3, rng), random_tensor(3, 3, rng)}},
      {"sub", [](const auto& x) { return project(sub(x[0], x[1]), 4); }, {random_tensor(3, 3, rng), random_tensor(3, 3, rng)}},
      {"mul", [](const auto& x) { return project(mul(x[0], x[1]), 5); }, {random_tensor(3, 3, rng), random_tensor(3, 3, rng)}},
      {"scale", [](const auto& x) { return project(scale(x[0], -1.7), 6); }, {random_tensor(3, 2, rng)}},
      {"relu", [](const auto& x) { return project(relu(x[0]), 7); }, {away_from_zero(4, 4, rng)}},
      {"tanh", [](const auto& x) { return project(nets::tanh(x[0]), 8); }, {random_tensor(4, 4, rng, -2, 2)}},
      {"sigmoid", [](const auto& x) { return project(sigmoid(x[0]), 9); }, {random_tensor(4, 4, rng, -4, 4)}},
      {"exp", [](const auto& x) { return project(nets::exp(x[0]), 10); }, {random_tensor(4, 4, rng)}},
      {"abs", [](const auto& x) { return project(nets::abs(x[0]), 11); }, {away_from_zero(4, 4, rng)}},
      {"square", [](const auto& x) { return project(square(x[0]), 12); }, {random_tensor(4, 4, rng)}},
      {"clamp", [](const auto& x) { return project(clamp(x[0], -0.5, 0.5), 13); }, {away_from_zero(4, 4, rng)}},
      {"sum", [](const auto& x) { return nets::sum(x[0]); }, {random_tensor(4, 4, rng)}},
      {"mean", [](const auto& x) { return mean(x[0]); }, {random_tensor(4, 4, rng)}},
      {"concat_cols", [](const auto& x) { return project(concat_cols<double>({x[0], x[1]}), 14); }, {random_tensor(3, 2, rng), random_tensor(3, 4, rng)}},
      {"slice_cols", [](const auto& x) { return project(slice_cols(x[0], 1, 3), 15); }, {random_tensor(3, 5, rng)}},
      {"repeat_rows", [](const auto& x) { return project(repeat_rows(x[0], 4), 16); }, {random_tensor(1, 5, rng)}},
      {"max_rows", [](const auto& x) { return project(max_rows(x[0]), 17); }, {random_tensor(6, 4, rng)}},
      {"rot6d_to_matrix", [](const auto& x) { return project(rot6d_to_matrix(x[0]), 18); }, {random_tensor(5, 6, rng)}},
      {"kl_loss", [](const auto& x) { return kl_loss(x[0], x[1]); }, {random_tensor(3, 4, rng, -2, 2), random_tensor(3, 4, rng, -2, 2)}},
      {"l1_loss", [](const auto& x) { return l1_loss(x[0], x[1]); }, {away_from_zero(3, 4, rng), TensorD::zeros(3, 4)}},
      {"mse_loss", [](const auto& x) { return mse_loss(x[0], x[1]); }, {random_tensor(3, 4, rng), random_tensor(3, 4, rng)}},
  };
  double worst = 0.0;
  std::string worst_op;
  std::size_t failed = 0;
  for (auto& [name, f, inputs] : ops) {
    const auto r = grad_check(f, inputs);
    const bool good = r.checked > 0 && r.nonsmooth == 0 && r.max_rel_error < 1e-3;
    failed += !good;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_op = name;
    }
  }

  // rot6d orthonormality on random inputs.
  const TensorD m = rot6d_to_matrix(random_tensor(1000, 6, rng, -3, 3));
  double ortho = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Eigen::Matrix3d r;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) r(a, b) = m.at(i, 3 * a + b);
    ortho = std::max(ortho, (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
    ortho = std::max(ortho, std::abs(r.determinant() - 1.0));
  }

  // kl_loss: zero at the prior, non-negative elsewhere.
  const double kl0 = kl_loss(TensorD::zeros(4, kLatentDim), TensorD::zeros(4, kLatentDim)).item();
  double kl_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    const double spread = std::pow(10.0, rng.uniform(-4.0, 1.0));
    kl_min = std::min(kl_min, kl_loss(random_tensor(2, kLatentDim, rng, -spread, spread),
                                      random_tensor(2, kLatentDim, rng, -spread, spread)).item());
  }

  const bool ok = failed == 0 && ortho < 1e-5 && kl0 == 0.0 && kl_min >= 0.0;
  return {ok, std::to_string(ops.size() - failed) + "/" + std::to_string(ops.size()) + " ops pass, worst " + worst_op +
                  fmt(" %.2e", worst) + fmt(", rot6d orthonormality %.1e", ortho) + fmt(", kl(0,0)=%g", kl0) +
                  fmt(", min kl %.2e", kl_min)};
}

// ---------------------------------------------------------------------------
// Trained state for criteria 6-10

struct Trained {
  trainer::CheckpointBundle bundle;
  double train_seconds = 0.0;
  bool from_cache = false;
};

class Study {
 public:
  Study(fs::path cache, std::uint64_t catalog_seed, std::uint32_t episodes_per_cell)
      : cache_(std::move(cache)),
        catalog_(assets::build_catalog(assets::CategoryCounts::uniform(20), 0.25, catalog_seed)) {
    options_.episodes_per_cell = episodes_per_cell;
    options_.seed = 0xACCE;
  }

  const assets::AssetCatalog& catalog() const { return catalog_; }
  const bench::EvalOptions& options() const { return options_; }

  const Trained& trained(trainer::Ablation a) {
    auto it = trained_.find(a);
    if (it != trained_.end()) return it->second;
    trainer::TrainConfig cfg;
    cfg.ablation = a;
    const fs::path dir = cache_ / (trainer::to_string(a) + "-" + hex(trainer::config_hash(cfg)) + "-" + hex(catalog_.hash()));
    Trained t;
    if (fs::exists(dir / "manifest.json") && fs::exists(dir / "timing.json")) {
      t.bundle = trainer::load_bundle(dir.string());
      std::ifstream in(dir / "timing.json");
      t.train_seconds = nlohmann::json::parse(in).at("train_seconds").get<double>();
      t.from_cache = true;
    } else {
      std::printf("  training %s at the default budget...\n", trainer::to_string(a).c_str());
      std::fflush(stdout);
      const auto t0 = clk::now();
      t.bundle = trainer::train_full(catalog_, cfg);
      t.train_seconds = seconds_since(t0);
      trainer::save_bundle(t.bundle, dir.string());
      std::ofstream out(dir / "timing.json");
      out << nlohmann::json{{"train_seconds", t.train_seconds}, {"threads", omp_get_max_threads()}}.dump() << "\n";
    }
    return trained_.emplace(a, std::move(t)).first->second;
  }

  const bench::EvalReport& report(trainer::Ablation a) {
    auto it = reports_.find(a);
    if (it != reports_.end()) return it->second;
    const auto& t = trained(a);
    std::printf("  evaluating %s...\n", trainer::to_string(a).c_str());
    std::fflush(stdout);
    auto r = bench::evaluate(t.bundle, catalog_, options_);
    bench::write_report(r, (results() / ("report_" + r.policy + ".json")).string());
    bench::write_episode_log(r.episodes, (results() / ("episodes_" + r.policy + ".jsonl")).string());
    return reports_.emplace(a, std::move(r)).first->second;
  }

  const bench::EvalReport& random_report() {
    if (!random_) {
      random_ = bench::random_baseline(catalog_, options_);
      bench::write_report(*random_, (results() / "report_random.json").string());
    }
    return *random_;
  }

  fs::path results() const {
    fs::create_directories(cache_ / "results");
    return cache_ / "results";
  }

 private:
  fs::path cache_;
  assets::AssetCatalog catalog_;
  bench::EvalOptions options_;
  std::map<trainer::Ablation, Trained> trained_;
  std::map<trainer::Ablation, bench::EvalReport> reports_;
  std::optional<bench::EvalReport> random_;
};

// Mean over the cells of one split, recomputed from the episode logs.
double split_average(const bench::EvalReport& r, assets::SplitTag split) {
  std::map<assets::Category, std::pair<std::size_t, std::size_t>> cells;
  for (const auto& e : r.episodes)
    if (e.split == split) {
      cells[e.category].first += e.record.success;
      ++cells[e.category].second;
    }
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [c, v] : cells) s += static_cast<double>(v.first) / static_cast<double>(v.second);
  return s / static_cast<double>(cells.size());
}

// ---------------------------------------------------------------------------
// 6. Generator probes

Outcome training_progress(Study& st) {
  const auto& t = st.trained(trainer::Ablation::Full);
  std::ostringstream detail;
  bool ok = true;
  std::size_t generators = 0;
  for (const auto& f : t.bundle.metrics.fits) {
    if (f.net != "generator") continue;
    ++generators;
    const double drop = 1.0 - f.probe_final / f.probe_epoch0;
    ok &= drop >= 0.5;
    detail << f.stage << fmt(" %.4g", f.probe_epoch0) << fmt("->%.4g", f.probe_final) << fmt(" (-%.1f%%) ", 100 * drop);
  }
  // The three loss components are logged and sum to the total under the configured weights.
  const auto w = t.bundle.config.loss;
  std::size_t rows = 0;
  for (const auto& r : t.bundle.metrics.rows) {
    if (r.net != "generator") continue;
    ++rows;
    const double total = w.kl * r.probe_kl + w.pos * r.probe_pos + w.rot * r.probe_rot;
    ok &= std::abs(total - r.probe_loss) <= 1e-4 * std::max(1.0, std::abs(r.probe_loss));
  }
  ok &= generators >= 2 && rows > 0;
  detail << "components checked on " << rows << " rows";
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 7. End-to-end policy

Outcome end_to_end(Study& st) {
  const auto& t = st.trained(trainer::Ablation::Full);
  const auto& full = st.report(trainer::Ablation::Full);
  const auto& rnd = st.random_report();
  const double success = split_average(full, assets::SplitTag::TestShape);
  const double random = split_average(rnd, assets::SplitTag::TestShape);
  double random_worst = 0.0;
  for (const auto& c : rnd.cells) random_worst = std::max(random_worst, c.mean);
  const double hours = t.train_seconds / 3600.0;
  const bool ok = success >= 0.5 && random <= 0.05 && success >= 10.0 * random && hours <= 12.0;
  return {ok, fmt("unseen shapes %.3f", success) + fmt(", unseen categories %.3f", split_average(full, assets::SplitTag::TestCategory)) +
                  fmt(", random %.3f", random) + fmt(" (worst cell %.3f)", random_worst) +
                  fmt(", training %.2f h", hours) + (t.from_cache ? " (cached)" : "") + ", " +
                  std::to_string(full.cells.front().episodes_per_seed) + " episodes/cell/seed"};
}

// ---------------------------------------------------------------------------
// 8. Ablations

Outcome ablation_trends(Study& st) {
  std::vector<bench::EvalReport> reports;
  for (auto a : trainer::kAllAblations) reports.push_back(st.report(a));
  const auto table = bench::tabulate(reports);
  std::ofstream(st.results() / "ablation.csv") << table.csv();
  std::map<std::string, double> avg;
  for (std::size_t i = 0; i < table.variants.size(); ++i) avg[table.variants[i]] = table.row_average(i);
  const double full = avg.at("full");
  bool ok = full - avg.at("no_disentangle") >= 0.1;
  for (const char* v : {"no_condition", "no_state", "no_mobile"}) ok &= full > avg.at(v);
  std::ostringstream detail;
  for (auto a : trainer::kAllAblations) detail << trainer::to_string(a) << fmt(" %.3f ", avg.at(trainer::to_string(a)));
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 9. Threshold curves

Outcome threshold_trend(Study& st) {
  std::vector<double> ts;
  const double deg = kPi / 180.0;
  for (int d = 0; d <= 45; d += 5) ts.push_back(d * deg);
  std::vector<bench::EvalReport> reports;
  for (auto a : trainer::kAllAblations) reports.push_back(st.report(a));
  const auto curve = bench::threshold_curve(reports, ts);
  std::ofstream(st.results() / "curve.csv") << curve.csv();
  std::ofstream(st.results() / "curve.svg") << curve.svg();

  bool ok = true;
  std::size_t full_i = 0;
  std::size_t state_i = 0;
  for (std::size_t v = 0; v < curve.variants.size(); ++v) {
    if (curve.variants[v] == "full") full_i = v;
    if (curve.variants[v] == "no_state") state_i = v;
    for (std::size_t i = 1; i < ts.size(); ++i) ok &= curve.success[v][i] <= curve.success[v][i - 1];
  }
  std::ostringstream detail;
  detail << (ok ? "monotone" : "NOT monotone") << "; full - no_state at";
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] < 30 * deg - 1e-12) continue;
    const double gap = curve.success[full_i][i] - curve.success[state_i][i];
    ok &= gap > 0.0;
    detail << fmt(" %.0f:", ts[i] / deg) << fmt("%+.3f", gap);
  }
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 10. Reporting protocol

Outcome protocol(Study& st) {
  std::vector<const bench::EvalReport*> reports;
  for (auto a : trainer::kAllAblations) reports.push_back(&st.report(a));
  reports.push_back(&st.random_report());
  bool ok = true;
  for (const auto* r : reports) {
    ok &= r->seeds.size() == 3 && std::set<std::uint64_t>(r->seeds.begin(), r->seeds.end()).size() == 3;
    for (const auto& c : r->cells) {
      ok &= c.per_seed.size() == 3;
      // Per-seed rates, mean and population variance recomputed from the logs.
      std::vector<double> rate(3, 0.0);
      std::vector<double> count(3, 0.0);
      for (const auto& e : r->episodes)
        if (e.category == c.category && e.split == c.split) {
          rate[e.seed_index] += e.record.success;
          count[e.seed_index] += 1.0;
        }
      double mean = 0.0;
      for (int s = 0; s < 3; ++s) {
        rate[s] /= count[s];
        ok &= std::abs(rate[s] - c.per_seed[s]) < 1e-12;
        mean += rate[s] / 3.0;
      }
      double var = 0.0;
      for (int s = 0; s < 3; ++s) var += (rate[s] - mean) * (rate[s] - mean) / 3.0;
      ok &= std::abs(mean - c.mean) < 1e-12 && std::abs(var - c.variance) < 1e-12;
    }
  }
  const auto replay = bench::verify_replay(st.report(trainer::Ablation::Full), st.catalog(), 10, 0x10);
  ok &= replay.checked == 10 && replay.ok();
  std::string detail = std::to_string(reports.size()) + " reports with 3 seeds, mean and variance verified; " +
                       std::to_string(replay.checked - replay.mismatches.size()) + "/" +
                       std::to_string(replay.checked) + " replays identical";
  if (!replay.mismatches.empty()) detail += " (" + replay.mismatches.front() + ")";
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"doorbench acceptance gate"};
  std::string cache = "acceptance_cache";
  std::vector<int> only;
  std::uint64_t catalog_seed = 123;
  std::uint32_t episodes = 50;
  app.add_option("--cache", cache, "Bundle cache and results directory")->capture_default_str();
  app.add_option("--only", only, "Run these criteria only")->delimiter(',');
  app.add_option("--catalog-seed", catalog_seed)->capture_default_str();
  app.add_option("--episodes", episodes, "Evaluation episodes per cell and seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const int threads = omp_get_max_threads();
  Study study(cache, catalog_seed, episodes);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"latch model exactness", latch_exactness},
      {"task threshold strictly above 45 deg", success_threshold},
      {"expert competence", expert_competence},
      {"perception soundness", perception_soundness},
      {"learning substrate", autodiff_substrate},
      {"generator probe loss drops by half", [&] { omp_set_num_threads(threads); return training_progress(study); }},
      {"end-to-end policy vs random", [&] { omp_set_num_threads(threads); return end_to_end(study); }},
      {"ablation trends", [&] { omp_set_num_threads(threads); return ablation_trends(study); }},
      {"threshold-curve trend", [&] { omp_set_num_threads(threads); return threshold_trend(study); }},
      {"protocol: seeds and replay", [&] { omp_set_num_threads(threads); return protocol(study); }},
  };

  fs::create_directories(cache);
  std::ofstream summary(fs::path(cache) / "summary.txt");
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    char head[32];
    std::snprintf(head, sizeof head, "criterion %2d %s  ", id, o.pass ? "PASS" : "FAIL");
    const std::string line = head + criteria[i].first + ": " + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    summary << line << '\n' << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
