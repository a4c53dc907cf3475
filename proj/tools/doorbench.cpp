#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/bench.hpp"
#include "doorbench/error.hpp"
#include "doorbench/percept.hpp"
#include "doorbench/random.hpp"

using namespace doorbench;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
};

// Accepts a path to a JSON file or an inline JSON string.
json read_json_arg(const std::string& arg) {
  if (arg.empty()) return json::object();
  if (fs::exists(arg)) {
    std::ifstream in(arg);
    if (!in) fail(ErrorKind::Io, "cannot open " + arg);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::Data, arg + ": " + e.what());
    }
  }
  try {
    return json::parse(arg);
  } catch (const json::exception&) {
    fail(ErrorKind::InvalidArgument, "not a JSON file or JSON text: " + arg);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) fail(ErrorKind::InvalidArgument, "--out is required");
  fs::create_directories(g.out);
  return g.out;
}

// "8" for every category, or "Interior=8,Safe=4,..." per category.
assets::CategoryCounts parse_counts(const std::string& s) {
  if (s.find('=') == std::string::npos) {
    try {
      return assets::CategoryCounts::uniform(static_cast<std::uint32_t>(std::stoul(s)));
    } catch (const std::logic_error&) {
      fail(ErrorKind::InvalidArgument, "bad --counts: " + s);
    }
  }
  assets::CategoryCounts c;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) fail(ErrorKind::InvalidArgument, "bad --counts entry: " + item);
    try {
      c[assets::parse_category(item.substr(0, eq))] = static_cast<std::uint32_t>(std::stoul(item.substr(eq + 1)));
    } catch (const std::logic_error&) {
      fail(ErrorKind::InvalidArgument, "bad --counts entry: " + item);
    }
  }
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<assets::SplitTag> parse_splits(const std::string& s) {
  std::vector<assets::SplitTag> out;
  for (const auto& t : split_list(s)) out.push_back(assets::parse_split(t));
  return out;
}

// ---------------------------------------------------------------------------

struct ForgeArgs {
  std::string counts = "20";
  double holdout = 0.25;
};

void run_forge(const Globals& g, const ForgeArgs& a) {
  const auto cat = assets::build_catalog(parse_counts(a.counts), a.holdout, g.seed);
  const fs::path out = require_out(g);
  assets::save_catalog(cat, out.string());
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cat.hash()));
  std::cout << json{{"instances", cat.instances.size()}, {"catalog_hash", hash}, {"out", out.string()}}.dump()
            << "\n";
}

struct SimArgs {
  std::string asset;
  std::string script;
};

void run_sim(const Globals& g, const SimArgs& a) {
  const auto d = assets::load_instance(a.asset);
  const json cfg = read_json_arg(g.config);
  const sim::TaskConfig task = cfg.contains("task") ? sim::task_from_json(cfg["task"]) : sim::TaskConfig{};
  const sim::RobotModel robot = cfg.contains("robot") ? sim::robot_from_json(cfg["robot"]) : sim::RobotModel{};
  std::ifstream in(a.script);
  if (!in) fail(ErrorKind::Io, "cannot open " + a.script);
  sim::SimState s = sim::reset(d, robot, task, g.seed);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    sim::Action act;
    try {
      act = sim::action_from_json(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::Data, a.script + ":" + std::to_string(n) + ": " + e.what());
    }
    const auto r = sim::step(s, act, d, robot, task);
    std::cout << sim::step_line(r, act).dump() << "\n";
    s = r.state;
  }
}

struct RenderArgs {
  std::string asset;
  std::string state;
  std::string depth;
};

void run_render(const Globals& g, const RenderArgs& a) {
  if (g.out.empty()) fail(ErrorKind::InvalidArgument, "--out <ply> is required");
  const auto d = assets::load_instance(a.asset);
  const json cfg = read_json_arg(g.config);
  const sim::TaskConfig task = cfg.contains("task") ? sim::task_from_json(cfg["task"]) : sim::TaskConfig{};
  const sim::RobotModel robot = cfg.contains("robot") ? sim::robot_from_json(cfg["robot"]) : sim::RobotModel{};
  const sim::SimState s = a.state.empty() ? sim::reset(d, robot, task, g.seed) : sim::state_from_json(read_json_arg(a.state));
  const auto cam = percept::default_camera(d);
  const auto obs = percept::observe(d, s, robot, cam, g.seed);
  const fs::path out = g.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  percept::write_ply(out.string(), obs.cloud);
  if (!a.depth.empty()) percept::write_depth_pgm(a.depth, percept::render_depth(d, s, robot, cam));
  std::cout << json{{"points", obs.cloud.rows()}, {"duplicated", obs.duplicated}, {"out", out.string()}}.dump()
            << "\n";
}

struct CollectArgs {
  std::string catalog;
  std::uint32_t episodes = 10;
  std::string noise;
  std::string split = "train";
};

void run_collect(const Globals& g, const CollectArgs& a) {
  const auto cat = assets::load_catalog(a.catalog);
  const auto noise = a.noise.empty() ? expert::NoiseConfig{} : expert::noise_from_json(read_json_arg(a.noise));
  const auto ids = cat.ids(assets::parse_split(a.split));
  if (ids.empty()) fail(ErrorKind::Data, "catalog has no instances in split " + a.split);
  const fs::path out = require_out(g);
  fs::create_directories(out / "clouds");

  expert::RolloutOptions ro;
  ro.record_observations = true;
  std::ofstream jl(out / "trajectories.jsonl");
  if (!jl) fail(ErrorKind::Io, "cannot write trajectories.jsonl");
  std::map<std::string, std::map<std::string, std::uint64_t>> counts;  // category -> stage -> steps
  std::uint32_t successes = 0;
  for (std::uint32_t e = 0; e < a.episodes; ++e) {
    const auto& d = cat.at(ids[e % ids.size()]);
    const auto rec = expert::collect_episode(d, expert::expert_controllers(), noise, derive_seed(g.seed, {e}), ro);
    const std::string prefix = "clouds/ep" + std::to_string(e);
    for (std::size_t i = 0; i < rec.steps.size(); ++i) {
      const auto& st = rec.steps[i];
      if (st.observation) percept::write_ply((out / (prefix + "_" + std::to_string(i) + ".ply")).string(), st.observation->cloud);
      ++counts[assets::to_string(d.body.category)][expert::to_string(st.stage)];
    }
    successes += rec.success;
    jl << expert::to_json(rec, prefix).dump() << "\n";
  }
  const json manifest = {{"episodes", a.episodes},
                         {"successes", successes},
                         {"seed", g.seed},
                         {"noise", expert::to_json(noise)},
                         {"split", a.split},
                         {"steps", counts},
                         {"records", "trajectories.jsonl"}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << json{{"episodes", a.episodes}, {"successes", successes}, {"out", out.string()}}.dump() << "\n";
}

trainer::TrainConfig train_config(const Globals& g, const std::string& ablation) {
  const json j = read_json_arg(g.config);
  trainer::TrainConfig c = j.empty() ? trainer::TrainConfig{} : trainer::train_config_from_json(j);
  if (!j.contains("seed")) c.seed = g.seed;
  if (!ablation.empty()) c.ablation = trainer::parse_ablation(ablation);
  c.validate();
  return c;
}

struct TrainArgs {
  std::string catalog;
  std::string ablation;
};

void run_train(const Globals& g, const TrainArgs& a) {
  const auto cat = assets::load_catalog(a.catalog);
  const auto cfg = train_config(g, a.ablation);
  const fs::path out = require_out(g);
  const auto b = trainer::train_full(cat, cfg);
  trainer::save_bundle(b, out.string());
  json stages = json::array();
  for (const auto& s : b.stages) stages.push_back(s.name);
  std::cout << json{{"ablation", trainer::to_string(cfg.ablation)}, {"stages", stages}, {"out", out.string()}}.dump()
            << "\n";
}

struct EvalArgs {
  std::string catalog;
  std::string bundle;
  std::string baseline;  // expert | random | idle
  std::uint32_t episodes = 50;
  std::uint32_t seeds = 3;
  std::string splits = "test_shape,test_category";
};

bench::EvalOptions eval_options(const Globals& g, std::uint32_t episodes, std::uint32_t seeds, const std::string& splits) {
  bench::EvalOptions o;
  o.episodes_per_cell = episodes;
  o.num_seeds = seeds;
  o.seed = g.seed;
  o.splits = parse_splits(splits);
  o.validate();
  return o;
}

void write_eval(const bench::EvalReport& r, const fs::path& out) {
  bench::write_report(r, (out / "report.json").string());
  bench::write_episode_log(r.episodes, (out / "episodes.jsonl").string());
  bench::AblationTable t = bench::tabulate({r});
  write_text(out / "success.csv", t.csv());
}

void run_eval(const Globals& g, const EvalArgs& a) {
  const auto cat = assets::load_catalog(a.catalog);
  const auto opts = eval_options(g, a.episodes, a.seeds, a.splits);
  const fs::path out = require_out(g);
  bench::EvalReport r;
  if (!a.bundle.empty()) {
    r = bench::evaluate(trainer::load_bundle(a.bundle), cat, opts);
  } else if (a.baseline == "expert") {
    r = bench::evaluate_controllers("expert", expert::expert_controllers(), cat, opts);
  } else if (a.baseline == "random") {
    r = bench::random_baseline(cat, opts);
  } else if (a.baseline == "idle") {
    r = bench::evaluate_controllers("idle", bench::idle_controllers(), cat, opts);
  } else {
    fail(ErrorKind::InvalidArgument, "give --bundle <dir> or --baseline expert|random|idle");
  }
  write_eval(r, out);
  std::cout << json{{"policy", r.policy}, {"average", r.average()}, {"out", out.string()}}.dump() << "\n";
}

struct AblateArgs {
  std::string catalog;
  std::string variants = "full,no_disentangle,no_condition,no_state,no_mobile";
  std::string bundles;  // directory of <variant>/ bundles; trained into out/bundles when missing
  std::uint32_t episodes = 50;
  std::uint32_t seeds = 3;
  std::string splits = "test_shape,test_category";
};

void run_ablate(const Globals& g, const AblateArgs& a) {
  const auto cat = assets::load_catalog(a.catalog);
  const auto opts = eval_options(g, a.episodes, a.seeds, a.splits);
  const fs::path out = require_out(g);
  const fs::path store = a.bundles.empty() ? out / "bundles" : fs::path(a.bundles);
  const auto base = train_config(g, "");
  std::vector<trainer::Ablation> variants;
  for (const auto& v : split_list(a.variants)) variants.push_back(trainer::parse_ablation(v));

  const bench::BundleSource source = [&](const trainer::TrainConfig& c) {
    const fs::path dir = store / trainer::to_string(c.ablation);
    if (fs::exists(dir / "manifest.json")) {
      auto b = trainer::load_bundle(dir.string());
      if (b.config_hash != trainer::config_hash(c))
        fail(ErrorKind::Compatibility, dir.string() + " was trained with another config");
      return b;
    }
    auto b = trainer::train_full(cat, c);
    trainer::save_bundle(b, dir.string());
    return b;
  };
  const auto run = bench::ablation_run(cat, base, variants, opts, source);
  write_text(out / "ablation.csv", run.table.csv());
  write_text(out / "ablation.json", run.table.to_json().dump(2) + "\n");
  for (const auto& r : run.reports) {
    const fs::path dir = out / "reports" / r.policy;
    fs::create_directories(dir);
    write_eval(r, dir);
  }
  json avg = json::object();
  for (std::size_t i = 0; i < run.table.variants.size(); ++i) avg[run.table.variants[i]] = run.table.row_average(i);
  std::cout << json{{"average", avg}, {"out", out.string()}}.dump() << "\n";
}

struct CurveArgs {
  std::vector<std::string> logs;  // name=episodes.jsonl
  double step_deg = 5.0;
};

void run_curve(const Globals& g, const CurveArgs& a) {
  if (a.logs.empty()) fail(ErrorKind::InvalidArgument, "give at least one --log name=episodes.jsonl");
  if (!(a.step_deg > 0.0)) fail(ErrorKind::InvalidArgument, "--step must be positive");
  const json cfg = read_json_arg(g.config);
  const sim::TaskConfig task = cfg.contains("task") ? sim::task_from_json(cfg["task"]) : sim::TaskConfig{};
  const double deg = M_PI / 180.0;
  std::vector<double> ts;
  for (double t = 0.0; t * deg <= task.thre_door + 1e-12; t += a.step_deg) ts.push_back(std::min(t * deg, task.thre_door));

  bench::ThresholdCurve c;
  c.thresholds = ts;
  for (const auto& spec : a.logs) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? fs::path(spec).parent_path().filename().string() : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    c.variants.push_back(name);
    c.success.push_back(bench::rescore(bench::read_episode_log(path), ts, task.thre_door));
  }
  const fs::path out = require_out(g);
  write_text(out / "curve.csv", c.csv());
  write_text(out / "curve.svg", c.svg());
  std::cout << json{{"variants", c.variants}, {"thresholds", ts.size()}, {"out", out.string()}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"doorbench: articulated-door manipulation benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--config", g.config, "JSON file or inline JSON");
  app.add_option("--out", g.out, "Output directory (file for render-cloud)");

  ForgeArgs forge;
  auto* f = app.add_subcommand("forge", "Generate an asset catalog");
  f->add_option("--counts", forge.counts, "Instances per category: N or Cat=N,...")->capture_default_str();
  f->add_option("--holdout", forge.holdout, "Held-out shape fraction")->capture_default_str();

  SimArgs simargs;
  auto* s = app.add_subcommand("sim", "Replay an action script and print step events");
  s->add_option("--asset", simargs.asset)->required();
  s->add_option("--script", simargs.script, "JSON-lines actions")->required();

  RenderArgs render;
  auto* rc = app.add_subcommand("render-cloud", "Render the observed point cloud to PLY");
  rc->add_option("--asset", render.asset)->required();
  rc->add_option("--state", render.state, "SimState JSON file or text; reset state when omitted");
  rc->add_option("--depth", render.depth, "Also write the depth grid here");

  CollectArgs collect;
  auto* c = app.add_subcommand("collect", "Collect expert trajectories");
  c->add_option("--catalog", collect.catalog)->required();
  c->add_option("--episodes", collect.episodes)->capture_default_str();
  c->add_option("--noise", collect.noise, "NoiseConfig JSON file or text");
  c->add_option("--split", collect.split)->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a policy bundle");
  t->add_option("--catalog", train.catalog)->required();
  t->add_option("--ablation", train.ablation, "full, no_disentangle, no_condition, no_state or no_mobile");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a bundle or a baseline");
  e->add_option("--catalog", eval.catalog)->required();
  e->add_option("--bundle", eval.bundle);
  e->add_option("--baseline", eval.baseline);
  e->add_option("--episodes", eval.episodes, "Episodes per cell and seed")->capture_default_str();
  e->add_option("--seeds", eval.seeds)->capture_default_str();
  e->add_option("--splits", eval.splits)->capture_default_str();

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  ab->add_option("--catalog", ablate.catalog)->required();
  ab->add_option("--variants", ablate.variants)->capture_default_str();
  ab->add_option("--bundles", ablate.bundles, "Bundle store; defaults to <out>/bundles");
  ab->add_option("--episodes", ablate.episodes)->capture_default_str();
  ab->add_option("--seeds", ablate.seeds)->capture_default_str();
  ab->add_option("--splits", ablate.splits)->capture_default_str();

  CurveArgs curve;
  auto* cv = app.add_subcommand("curve", "Success rate against the door-angle threshold");
  cv->add_option("--log", curve.logs, "name=episodes.jsonl, repeatable")->required();
  cv->add_option("--step", curve.step_deg, "Threshold step in degrees")->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
    if (*f) run_forge(g, forge);
    else if (*s) run_sim(g, simargs);
    else if (*rc) run_render(g, render);
    else if (*c) run_collect(g, collect);
    else if (*t) run_train(g, train);
    else if (*e) run_eval(g, eval);
    else if (*ab) run_ablate(g, ablate);
    else if (*cv) run_curve(g, curve);
    return 0;
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", err.what()}}}}.dump() << "\n";
    return 2;
  } catch (const Error& err) {
    std::cerr << json{{"error", {{"kind", std::string(to_string(err.kind()))}, {"message", err.what()}}}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", err.what()}}}}.dump() << "\n";
    return 1;
  }
}
