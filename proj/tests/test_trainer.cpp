#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doorbench/error.hpp"
#include "doorbench/trainer.hpp"

using namespace doorbench;
using namespace doorbench::trainer;
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

const AssetCatalog& small_catalog() {
  static const AssetCatalog cat = assets::build_catalog(assets::CategoryCounts::uniform(4), 0.25, 77);
  return cat;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.door_episodes = 6;
  c.handle_episodes = 6;
  c.grasp_episodes = 6;
  c.epochs = 3;
  c.batch = 8;
  c.probe_size = 16;
  c.affordance_points = 4;
  c.screen_contacts = 2;
  c.grasp_samples = 8;
  c.grasp_topk = 2;
  c.seed = 5;
  return c;
}

const CheckpointBundle& tiny_bundle() {
  static const CheckpointBundle b = train_full(small_catalog(), tiny_config());
  return b;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("doorbench_trainer_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("top-k mean") {
  std::vector<double> s(50);
  std::iota(s.begin(), s.end(), 1.0);
  for (auto& v : s) v *= 0.01;
  CHECK(topk_mean(s, 10) == doctest::Approx(0.455).epsilon(1e-12));
  CHECK(topk_mean(std::vector<double>(50, 0.3), 10) == doctest::Approx(0.3));
  CHECK(topk_mean({0.2, 0.9}, 5) == doctest::Approx(0.55));
  CHECK(kind_of([] { topk_mean({}, 3); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { topk_mean({1.0}, 0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("grasp labels normalise the final door angle") {
  const double thre = 45.0 * M_PI / 180.0;
  CHECK(grasp_label(thre / 2, thre) == doctest::Approx(0.5));
  CHECK(grasp_label(-0.1, thre) == 0.0f);
  CHECK(grasp_label(2 * thre, thre) == 1.0f);
  CHECK(kind_of([] { grasp_label(0.1, 0.0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("config validation and JSON round trip") {
  TrainConfig c = tiny_config();
  c.ablation = Ablation::NoState;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  c.lr = 2e-3;
  CHECK(config_hash(c) != config_hash(back));

  TrainConfig bad = tiny_config();
  bad.grasp_episodes = 0;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::Configuration);
  bad = tiny_config();
  bad.grasp_topk = bad.grasp_samples + 1;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::Configuration);
  CHECK(kind_of([] { parse_ablation("no_such"); }) == ErrorKind::InvalidArgument);
  for (auto a : kAllAblations) CHECK(parse_ablation(to_string(a)) == a);
}

TEST_CASE("stages refuse to train out of order") {
  const TrainConfig cfg = tiny_config();
  const auto bb = policies::Backbone::make(1);
  MetricsLog m;
  CHECK(kind_of([&] { train_handle_stage(small_catalog(), nullptr, cfg, bb, m); }) == ErrorKind::Provenance);
  CHECK(kind_of([&] { train_grasp_stage(small_catalog(), nullptr, nullptr, cfg, bb, m); }) ==
        ErrorKind::Provenance);
}

TEST_CASE("door stage: unperturbed targets, replayable labels, beats the zero baseline") {
  TrainConfig cfg = tiny_config();
  cfg.door_episodes = 40;
  cfg.epochs = 40;
  cfg.probe_size = 64;
  const auto& cat = small_catalog();
  const auto bb = policies::Backbone::make(2);
  const auto robot = cfg.robot_model();

  SUBCASE("zero perturbation") {
    cfg.door_noise = expert::NoiseConfig{};
    cfg.epochs = 1;
    MetricsLog m;
    const DoorStage door = train_door_stage(cat, cfg, bb, m);
    REQUIRE(!door.samples.empty());
    int opening = 0;
    for (const auto& s : door.samples) {
      CHECK(s.stage == Stage::Door);
      const auto& d = cat.at(s.instance_id);
      const auto& st = s.state_before;
      const bool free = st.unlocked && st.theta_d + expert::kDoorStep < d.joints.door.upper - 1e-9 && !st.collided;
      if (s.delta > 1e-9 && free) {
        ++opening;
        CHECK(s.delta == doctest::Approx(expert::kDoorStep).epsilon(1e-6));
      }
    }
    CHECK(opening > 0);
  }

  SUBCASE("trained") {
    MetricsLog m;
    const DoorStage door = train_door_stage(cat, cfg, bb, m);
    for (const auto& s : door.samples) {
      const auto r = sim::step(s.state_before, s.executed, cat.at(s.instance_id), robot, cfg.task);
      CHECK(std::abs(r.dtheta_d - s.delta) <= 1e-9);
    }
    const auto& f = m.fit("door", "discriminator");
    CHECK(f.holdout_samples > 0);
    CHECK(f.probe_final < f.zero_baseline);
    CHECK(door.record.provenance.at("requires").empty());
    CHECK(door.record.hash != 0);
  }
}

TEST_CASE("full pipeline: provenance chain, determinism, bundle round trip") {
  const CheckpointBundle& b = tiny_bundle();
  REQUIRE(b.stages.size() == 3);
  const auto& door = b.stage("door");
  const auto& handle = b.stage("handle");
  const auto& grasp = b.stage("grasp");
  const auto hex = [](std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  };
  REQUIRE(handle.provenance.at("requires").size() == 1);
  CHECK(handle.provenance["requires"][0]["stage"] == "door");
  CHECK(handle.provenance["requires"][0]["hash"] == hex(door.hash));
  CHECK(handle.provenance["downstream"] == "learned");
  REQUIRE(grasp.provenance.at("requires").size() == 2);
  CHECK(grasp.provenance["requires"][0]["hash"] == hex(handle.hash));
  CHECK(grasp.provenance["requires"][1]["hash"] == hex(door.hash));
  CHECK(b.catalog_hash == small_catalog().hash());

  for (const char* net : {"generator", "discriminator"}) {
    CHECK_NOTHROW(b.metrics.fit("door", net));
    CHECK_NOTHROW(b.metrics.fit("handle", net));
  }
  CHECK_NOTHROW(b.metrics.fit("grasp", "affordance"));

  SUBCASE("same seed, same metrics log") {
    const CheckpointBundle again = train_full(small_catalog(), tiny_config());
    CHECK(again.metrics.csv() == b.metrics.csv());
    CHECK(again.stage("grasp").hash == grasp.hash);
  }

  SUBCASE("save and load") {
    const fs::path dir = temp_dir("roundtrip");
    save_bundle(b, dir.string());
    CHECK(fs::exists(dir / "door.dbck"));
    const CheckpointBundle back = load_bundle(dir.string());
    CHECK(back.config_hash == b.config_hash);
    CHECK(back.catalog_hash == b.catalog_hash);
    CHECK(back.backbone_hash == b.backbone_hash);
    CHECK(back.stage("handle").hash == handle.hash);
    CHECK(back.metrics.csv() == b.metrics.csv());
    CHECK(back.metrics.fits.size() == b.metrics.fits.size());

    {
      std::fstream f(dir / "handle.dbck", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(-4, std::ios::end);
      f.put('\x7f');
    }
    CHECK(kind_of([&] { load_bundle(dir.string()); }) == ErrorKind::Compatibility);
    fs::remove_all(dir);
  }
}

TEST_CASE("ablation flags shape the pipeline") {
  SUBCASE("no_condition collects with expert downstream rules") {
    TrainConfig c = tiny_config();
    c.ablation = Ablation::NoCondition;
    const auto b = train_full(small_catalog(), c);
    CHECK(b.stage("handle").provenance["downstream"] == "expert");
    CHECK(b.stage("grasp").provenance["downstream"] == "expert");
  }
  SUBCASE("no_disentangle bundles one merged stage policy") {
    TrainConfig c = tiny_config();
    c.ablation = Ablation::NoDisentangle;
    const auto b = train_full(small_catalog(), c);
    CHECK(b.stage("handle").provenance["merged"] == true);
    CHECK_NOTHROW(b.metrics.fit("merged", "generator"));
    CHECK(&b.policy.stage_policy(Stage::Door) == &b.policy.handle);
    const fs::path dir = temp_dir("merged");
    save_bundle(b, dir.string());
    CHECK_FALSE(fs::exists(dir / "door.dbck"));
    const auto back = load_bundle(dir.string());
    CHECK(back.policy.flags.no_disentangle);
    CHECK(&back.policy.stage_policy(Stage::Door) == &back.policy.handle);
    fs::remove_all(dir);
  }
}
