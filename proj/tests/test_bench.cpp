#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "doorbench/bench.hpp"
#include "doorbench/error.hpp"
#include "doorbench/hash.hpp"

using namespace doorbench;
using namespace doorbench::bench;
namespace fs = std::filesystem;

namespace {

template <class E>
ErrorKind kind_of(E&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

const AssetCatalog& catalog() {
  static const AssetCatalog cat = assets::build_catalog(assets::CategoryCounts::uniform(4), 0.25, 91);
  return cat;
}

EvalOptions small_options(std::uint32_t n = 4) {
  EvalOptions o;
  o.episodes_per_cell = n;
  o.seed = 17;
  return o;
}

constexpr double kDeg = M_PI / 180.0;

// Door angle fixed by the instance id, independent of the episode seed.
expert::TrajectoryRecord scripted(const DoorInstance& d, std::uint64_t seed) {
  expert::TrajectoryRecord r;
  r.instance_id = d.id;
  r.seed = seed;
  const double frac = static_cast<double>(fnv1a64(d.id) % 7) / 6.0;
  r.max_theta_d = frac * 60.0 * kDeg;
  r.final_theta_d = r.max_theta_d;
  r.success = r.max_theta_d > sim::TaskConfig{}.thre_door;
  return r;
}

}  // namespace

TEST_CASE("mean and population variance") {
  auto [m, v] = mean_variance({0.4, 0.4, 0.4});
  CHECK(m == doctest::Approx(0.4));
  CHECK(v == 0.0);
  std::tie(m, v) = mean_variance({0.0, 1.0});
  CHECK(m == doctest::Approx(0.5));
  CHECK(v == doctest::Approx(0.25));
  CHECK(kind_of([] { mean_variance({}); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("report protocol: cells, seeds, identical per-seed results") {
  const EvalOptions o = small_options(5);
  const EvalReport r = evaluate_runner("scripted", scripted, catalog(), o);
  CHECK(r.seeds.size() == 3);
  CHECK(r.seeds == report_seeds(o));
  CHECK(r.cells.size() == assets::kAllCategories.size());
  CHECK(r.episodes.size() == 3 * 6 * 5);
  for (const auto& c : r.cells) {
    CHECK(c.per_seed.size() == 3);
    CHECK(c.variance == 0.0);
    CHECK(c.mean >= 0.0);
    CHECK(c.mean <= 1.0);
    CHECK(c.instance_ids.size() == 5);
    const auto expect = assets::is_train_category(c.category) ? SplitTag::TestShape : SplitTag::TestCategory;
    CHECK(c.split == expect);
  }
  const auto j = to_json(r);
  CHECK(j["num_seeds"] == 3);
  CHECK(j["cells"].size() == 6);

  EvalOptions bad = o;
  bad.episodes_per_cell = 0;
  CHECK(kind_of([&] { evaluate_runner("x", scripted, catalog(), bad); }) == ErrorKind::Configuration);
}

TEST_CASE("idle policy never succeeds; expert succeeds on the train split") {
  const EvalReport idle = evaluate_controllers("idle", idle_controllers(), catalog(), small_options(3));
  for (const auto& c : idle.cells) CHECK(c.mean == 0.0);

  EvalOptions o = small_options(10);
  o.splits = {SplitTag::Train};
  const EvalReport ex = evaluate_controllers("expert", expert::expert_controllers(), catalog(), o);
  CHECK(ex.cells.size() == 4);
  CHECK(ex.average() >= 0.95);
}

TEST_CASE("random-action baseline stays under 5% per category") {
  EvalOptions o = small_options(100);
  o.num_seeds = 1;
  const EvalReport r = random_baseline(catalog(), o);
  for (const auto& c : r.cells) CHECK(c.mean <= 0.05);
}

TEST_CASE("bundle compatibility is checked against the catalog") {
  trainer::CheckpointBundle b;
  b.catalog_hash = catalog().hash() ^ 1;
  CHECK(kind_of([&] { evaluate(b, catalog(), small_options()); }) == ErrorKind::Compatibility);
}

TEST_CASE("ablation table shape and shared instance lists") {
  const EvalOptions o = small_options(3);
  std::vector<EvalReport> reports;
  for (auto a : trainer::kAllAblations) reports.push_back(evaluate_runner(trainer::to_string(a), scripted, catalog(), o));
  const AblationTable t = tabulate(reports);
  CHECK(t.variants.size() == 5);
  CHECK(t.columns.size() == 6);
  CHECK(t.mean.size() == 5);
  for (const auto& row : t.mean) CHECK(row.size() == 6);
  CHECK(t.row("no_state") == 3);
  CHECK(t.row_average(0) == doctest::Approx(reports[0].average()));
  const std::string csv = t.csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);

  EvalOptions other = o;
  other.seed = 18;
  reports.push_back(evaluate_runner("other", scripted, catalog(), other));
  CHECK(kind_of([&] { tabulate(reports); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("threshold curves") {
  const EvalReport r = evaluate_runner("scripted", scripted, catalog(), small_options(6));
  std::vector<double> ts;
  for (int d = 0; d <= 45; d += 5) ts.push_back(d * kDeg);
  const auto s = rescore(r.episodes, ts, r.task.thre_door);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] <= s[i - 1]);

  std::size_t moved = 0;
  for (const auto& e : r.episodes) moved += e.record.max_theta_d > 0;
  CHECK(s.front() == doctest::Approx(static_cast<double>(moved) / static_cast<double>(r.episodes.size())));
  CHECK(rescore(r.episodes, {r.task.thre_door}, r.task.thre_door)[0] == doctest::Approx(r.average()));

  const ThresholdCurve c = threshold_curve({r, r}, ts);
  CHECK(c.success.size() == 2);
  CHECK(c.svg().find("<polyline") != std::string::npos);
  const std::string csv = c.csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(ts.size() + 1));

  CHECK(kind_of([&] { rescore({}, ts, r.task.thre_door); }) == ErrorKind::Data);
  CHECK(kind_of([&] { rescore(r.episodes, {0.2, 0.1}, r.task.thre_door); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { rescore(r.episodes, {60 * kDeg}, r.task.thre_door); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("logged episodes replay to identical outcomes") {
  EvalOptions o = small_options(4);
  o.num_seeds = 1;
  expert::NoiseConfig noise{0.01, 0.05, 0.3, false, true, true};
  expert::RolloutOptions ro;
  EvalReport r = evaluate_runner(
      "noisy-expert",
      [&](const DoorInstance& d, std::uint64_t seed) {
        return expert::collect_episode(d, expert::expert_controllers(), noise, seed, ro);
      },
      catalog(), o);
  const ReplayCheck ok = verify_replay(r, catalog(), 10, 3);
  CHECK(ok.checked == 10);
  CHECK(ok.ok());

  const fs::path path = fs::temp_directory_path() / "doorbench_bench_episodes.jsonl";
  write_episode_log(r.episodes, path.string());
  const auto back = read_episode_log(path.string());
  REQUIRE(back.size() == r.episodes.size());
  EvalReport reread = r;
  reread.episodes = back;
  CHECK(verify_replay(reread, catalog(), r.episodes.size(), 4).ok());
  fs::remove(path);

  auto hit = std::find_if(r.episodes.begin(), r.episodes.end(), [](const EpisodeLog& e) { return e.record.success; });
  REQUIRE(hit != r.episodes.end());
  hit->record.steps[0].action.p.z() += 0.3;
  CHECK_FALSE(verify_replay(r, catalog(), r.episodes.size(), 5).ok());
}
