#include "doorbench/trainer.hpp"

#include "doorbench/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "doorbench/error.hpp"
#include "doorbench/hash.hpp"

namespace doorbench::trainer {

namespace fs = std::filesystem;
using nets::TensorF;
using policies::Backbone;
using policies::StagePolicy;

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoDisentangle: return "no_disentangle";
    case Ablation::NoCondition: return "no_condition";
    case Ablation::NoState: return "no_state";
    case Ablation::NoMobile: return "no_mobile";
  }
  return "full";
}

Ablation parse_ablation(const std::string& s) {
  for (Ablation a : kAllAblations)
    if (to_string(a) == s) return a;
  fail(ErrorKind::InvalidArgument, "unknown ablation '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (door_episodes == 0 || handle_episodes == 0 || grasp_episodes == 0)
    fail(ErrorKind::Configuration, "episode counts must be positive");
  if (epochs == 0 || batch == 0) fail(ErrorKind::Configuration, "epochs and batch must be positive");
  if (!(lr > 0)) fail(ErrorKind::Configuration, "learning rate must be positive");
  if (affordance_points == 0 || grasp_samples == 0 || grasp_topk == 0 || grasp_topk > grasp_samples)
    fail(ErrorKind::Configuration, "affordance sampling needs 0 < topk <= samples and at least one query");
  if (!(holdout_fraction > 0 && holdout_fraction < 1))
    fail(ErrorKind::Configuration, "holdout_fraction must lie in (0, 1)");
  if (!(handle_contact_fraction >= 0 && handle_contact_fraction <= 1))
    fail(ErrorKind::Configuration, "handle_contact_fraction must lie in [0, 1]");
  if (!(front_approach_fraction >= 0 && front_approach_fraction <= 1))
    fail(ErrorKind::Configuration, "front_approach_fraction must lie in [0, 1]");
  if (probe_size == 0) fail(ErrorKind::Configuration, "probe_size must be positive");
  loss.validate();
  door_noise.validate();
  handle_noise.validate();
}

policies::PolicyFlags TrainConfig::flags() const {
  policies::PolicyFlags f;
  f.no_disentangle = ablation == Ablation::NoDisentangle;
  f.no_state = ablation == Ablation::NoState;
  f.privileged_axis = privileged_axis;
  return f;
}

sim::RobotModel TrainConfig::robot_model() const {
  sim::RobotModel r = robot;
  if (ablation == Ablation::NoMobile) r.mobile = false;
  return r;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"door_episodes", c.door_episodes},
          {"handle_episodes", c.handle_episodes},
          {"grasp_episodes", c.grasp_episodes},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"loss", nets::to_json(c.loss)},
          {"seed", c.seed},
          {"door_noise", expert::to_json(c.door_noise)},
          {"handle_noise", expert::to_json(c.handle_noise)},
          {"handle_contact_fraction", c.handle_contact_fraction},
          {"affordance_points", c.affordance_points},
          {"front_approach_fraction", c.front_approach_fraction},
          {"screen_contacts", c.screen_contacts},
          {"grasp_samples", c.grasp_samples},
          {"grasp_topk", c.grasp_topk},
          {"holdout_fraction", c.holdout_fraction},
          {"probe_size", c.probe_size},
          {"ablation", to_string(c.ablation)},
          {"privileged_axis", c.privileged_axis},
          {"robot", sim::to_json(c.robot)},
          {"task", sim::to_json(c.task)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.door_episodes = j.value("door_episodes", c.door_episodes);
  c.handle_episodes = j.value("handle_episodes", c.handle_episodes);
  c.grasp_episodes = j.value("grasp_episodes", c.grasp_episodes);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  if (j.contains("loss")) c.loss = nets::loss_weights_from_json(j.at("loss"));
  c.seed = j.value("seed", c.seed);
  if (j.contains("door_noise")) c.door_noise = expert::noise_from_json(j.at("door_noise"));
  if (j.contains("handle_noise")) c.handle_noise = expert::noise_from_json(j.at("handle_noise"));
  c.handle_contact_fraction = j.value("handle_contact_fraction", c.handle_contact_fraction);
  c.affordance_points = j.value("affordance_points", c.affordance_points);
  c.front_approach_fraction = j.value("front_approach_fraction", c.front_approach_fraction);
  c.screen_contacts = j.value("screen_contacts", c.screen_contacts);
  c.grasp_samples = j.value("grasp_samples", c.grasp_samples);
  c.grasp_topk = j.value("grasp_topk", c.grasp_topk);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.probe_size = j.value("probe_size", c.probe_size);
  if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  c.privileged_axis = j.value("privileged_axis", c.privileged_axis);
  if (j.contains("robot")) c.robot = sim::robot_from_json(j.at("robot"));
  if (j.contains("task")) c.task = sim::task_from_json(j.at("task"));
  c.validate();
  return c;
}

std::uint64_t config_hash(const TrainConfig& c) { return fnv1a64(to_json(c).dump()); }

double topk_mean(std::vector<double> scores, std::size_t k) {
  if (scores.empty() || k == 0) fail(ErrorKind::InvalidArgument, "topk_mean needs scores and k > 0");
  k = std::min(k, scores.size());
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), scores.end(),
                    std::greater<double>());
  return std::accumulate(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
         static_cast<double>(k);
}

float grasp_label(double final_theta_d, double thre_door) {
  if (!(thre_door > 0)) fail(ErrorKind::InvalidArgument, "thre_door must be positive");
  return static_cast<float>(std::clamp(final_theta_d, 0.0, thre_door) / thre_door);
}

// ---------------------------------------------------------------------------
// Metrics

nlohmann::json to_json(const FitSummary& s) {
  return {{"stage", s.stage},
          {"net", s.net},
          {"train_samples", s.train_samples},
          {"holdout_samples", s.holdout_samples},
          {"probe_epoch0", s.probe_epoch0},
          {"probe_epoch1", s.probe_epoch1},
          {"probe_final", s.probe_final},
          {"zero_baseline", s.zero_baseline}};
}

FitSummary fit_summary_from_json(const nlohmann::json& j) {
  FitSummary s;
  s.stage = j.at("stage").get<std::string>();
  s.net = j.at("net").get<std::string>();
  s.train_samples = j.value("train_samples", std::size_t{0});
  s.holdout_samples = j.value("holdout_samples", std::size_t{0});
  s.probe_epoch0 = j.value("probe_epoch0", 0.0);
  s.probe_epoch1 = j.value("probe_epoch1", 0.0);
  s.probe_final = j.value("probe_final", 0.0);
  s.zero_baseline = j.value("zero_baseline", 0.0);
  return s;
}

std::string MetricsLog::csv() const {
  std::ostringstream os;
  os << "stage,net,epoch,train_loss,probe_loss,probe_kl,probe_pos,probe_rot\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%u,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.stage.c_str(), r.net.c_str(), r.epoch,
                  r.train_loss, r.probe_loss, r.probe_kl, r.probe_pos, r.probe_rot);
    os << buf;
  }
  return os.str();
}

void MetricsLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << csv();
}

const FitSummary& MetricsLog::fit(const std::string& stage, const std::string& net) const {
  for (const auto& f : fits)
    if (f.stage == stage && f.net == net) return f;
  fail(ErrorKind::InvalidArgument, "no fit recorded for " + stage + "/" + net);
}

namespace {

MetricsLog parse_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path);
  MetricsLog log;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) fail(ErrorKind::Data, path + ": malformed metrics row");
    EpochRow r;
    r.stage = f[0];
    r.net = f[1];
    r.epoch = static_cast<std::uint32_t>(std::stoul(f[2]));
    r.train_loss = std::stod(f[3]);
    r.probe_loss = std::stod(f[4]);
    r.probe_kl = std::stod(f[5]);
    r.probe_pos = std::stod(f[6]);
    r.probe_rot = std::stod(f[7]);
    log.rows.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Parallel episodes

template <class Fn>
void parallel_episodes(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::string> episode_plan(const AssetCatalog& catalog, std::uint32_t episodes, std::uint64_t seed) {
  std::vector<std::string> ids = catalog.ids(assets::SplitTag::Train);
  if (ids.empty()) fail(ErrorKind::Data, "catalog has no train instances");
  Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());
  std::vector<std::string> plan(episodes);
  for (std::uint32_t i = 0; i < episodes; ++i) plan[i] = ids[i % ids.size()];
  return plan;
}

// Cloud points within this distance of a handle solid count as handle contacts.
constexpr double kOnHandle = 0.002;

constexpr std::uint32_t bit(Stage s) { return 1u << static_cast<unsigned>(s); }

struct Captured {
  std::vector<float> global;
  percept::StateVector state;
};

using CaptureMap = std::map<std::uint32_t, Captured>;

expert::Controller capturing(expert::Controller inner, const Backbone& bb, CaptureMap& out) {
  return [inner = std::move(inner), &bb, &out](const expert::StepContext& ctx) {
    if (!ctx.observation) fail(ErrorKind::InvalidState, "capture needs an observation");
    out[ctx.state.step_index] = Captured{bb.global(ctx.observation->cloud), ctx.observation->state};
    return inner(ctx);
  };
}

expert::Controller learned(const Backbone& bb, const StagePolicy& sp) {
  return [&bb, &sp](const expert::StepContext& ctx) {
    if (!ctx.observation) fail(ErrorKind::InvalidState, "stage policy needs an observation");
    return policies::propose_stage_action(sp, bb.global(ctx.observation->cloud), ctx.observation->state, ctx.seed);
  };
}

std::vector<StageSample> stage_samples(const expert::TrajectoryRecord& rec, const CaptureMap& cap, Stage target,
                                       const std::string& id) {
  std::vector<StageSample> out;
  for (const auto& st : rec.steps) {
    if (st.stage != target) continue;
    const auto it = cap.find(st.state_before.step_index);
    if (it == cap.end()) fail(ErrorKind::InvalidState, "stage step without captured features");
    StageSample s;
    s.global = it->second.global;
    s.state = it->second.state;
    s.proposed = st.proposed;
    s.executed = st.action;
    s.delta = target == Stage::Handle ? st.dtheta_h : st.dtheta_d;
    s.stage = target;
    s.instance_id = id;
    s.state_before = st.state_before;
    out.push_back(std::move(s));
  }
  return out;
}

expert::RolloutOptions rollout_options(const TrainConfig& cfg, std::uint32_t observe) {
  expert::RolloutOptions opt;
  opt.robot = cfg.robot_model();
  opt.task = cfg.task;
  opt.controllers_need_observations = true;
  opt.observe_stages = observe;
  opt.early_stop = true;
  return opt;
}

// ---------------------------------------------------------------------------
// Fitting

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
  std::vector<std::size_t> probe;
};

Split make_split(std::size_t n, const TrainConfig& cfg, std::uint64_t seed) {
  if (n < 2) fail(ErrorKind::Data, "need at least two samples to train, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const std::size_t h = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(n))), 1, n - 1);
  Split s;
  s.holdout.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(h));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(h), idx.end());
  s.probe.assign(s.holdout.begin(), s.holdout.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(h, cfg.probe_size)));
  return s;
}

TensorF gather(const std::vector<float>& buf, int dim, const std::vector<std::size_t>& idx, std::size_t begin,
               std::size_t end) {
  std::vector<float> v;
  v.reserve((end - begin) * static_cast<std::size_t>(dim));
  for (std::size_t i = begin; i < end; ++i) {
    const float* row = buf.data() + idx[i] * static_cast<std::size_t>(dim);
    v.insert(v.end(), row, row + dim);
  }
  return TensorF::from(static_cast<int>(end - begin), dim, std::move(v));
}

TensorF normal_tensor(int rows, int cols, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return TensorF::from(rows, cols, std::move(v));
}

/// Generator regression of proposed actions for one stage policy.
void fit_generator(StagePolicy& sp, const std::vector<const StageSample*>& data, const TrainConfig& cfg,
                   std::uint64_t seed, const std::string& stage, const Split& split, std::vector<float>& cond_rows,
                   MetricsLog& metrics) {
  const std::size_t n = data.size();
  std::vector<float> pos(n * 3), rot(n * 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Pose ref = sp.reference(data[i]->state);
    const Mat3 rt = ref.linear().transpose();
    const Vec3 lp = rt * (data[i]->proposed.p - ref.translation());
    const Mat3 lr = rt * data[i]->proposed.r;
    for (int a = 0; a < 3; ++a) pos[i * 3 + a] = static_cast<float>(lp[a]);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot[i * 9 + r * 3 + c] = static_cast<float>(lr(r, c));
  }
  for (int a = 0; a < 3; ++a) {
    double m = 0, v = 0;
    for (std::size_t i : split.train) m += pos[i * 3 + a];
    m /= static_cast<double>(split.train.size());
    for (std::size_t i : split.train) v += (pos[i * 3 + a] - m) * (pos[i * 3 + a] - m);
    sp.generator.pos_offset[a] = m;
    sp.generator.pos_scale[a] = std::max(1e-3, std::sqrt(v / static_cast<double>(split.train.size())));
  }

  cond_rows.assign(n * policies::kCondDim, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    float* row = cond_rows.data() + i * policies::kCondDim;
    std::copy(data[i]->global.begin(), data[i]->global.end(), row);
    if (sp.use_state)
      for (int k = 0; k < percept::kStateDim; ++k) row[nets::kFeatureDim + k] = data[i]->state(k);
  }
  std::vector<float> train_rows;
  for (std::size_t i : split.train)
    train_rows.insert(train_rows.end(), cond_rows.begin() + static_cast<std::ptrdiff_t>(i * policies::kCondDim),
                      cond_rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * policies::kCondDim));
  sp.cond_norm = policies::Normalizer::fit(train_rows, policies::kCondDim);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < policies::kCondDim; ++k) {
      float& x = cond_rows[i * policies::kCondDim + k];
      x = (x + -sp.cond_norm.mean[k]) * sp.cond_norm.inv_std[k];
    }

  Rng rng(derive_seed(seed, {0x6E}));
  const std::size_t np = split.probe.size();
  const TensorF probe_eps = normal_tensor(static_cast<int>(np), nets::kLatentDim, rng);
  const TensorF probe_pos = gather(pos, 3, split.probe, 0, np);
  const TensorF probe_rot = gather(rot, 9, split.probe, 0, np);
  const TensorF probe_cond = gather(cond_rows, policies::kCondDim, split.probe, 0, np);

  FitSummary sum;
  sum.stage = stage;
  sum.net = "generator";
  sum.train_samples = split.train.size();
  sum.holdout_samples = split.holdout.size();
  const auto probe = [&](std::uint32_t epoch, double train_loss) {
    nets::NoGradGuard guard;
    const auto l = nets::cvae_loss(probe_pos, probe_rot, probe_cond, sp.generator, cfg.loss, probe_eps);
    metrics.rows.push_back({stage, "generator", epoch, train_loss, l.total.item(), l.kl.item(), l.pos.item(), l.rot.item()});
    if (epoch == 0) sum.probe_epoch0 = l.total.item();
    if (epoch == 1) sum.probe_epoch1 = l.total.item();
    sum.probe_final = l.total.item();
  };
  probe(0, 0.0);

  nets::ParamList<float> params;
  sp.generator_params(params);
  nets::Adam opt(params, cfg.lr);
  std::vector<std::size_t> order = split.train;
  for (std::uint32_t e = 1; e <= cfg.epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    double acc = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch);
      const int rows = static_cast<int>(end - b);
      const auto l = nets::cvae_loss(gather(pos, 3, order, b, end), gather(rot, 9, order, b, end),
                                     gather(cond_rows, policies::kCondDim, order, b, end), sp.generator, cfg.loss,
                                     normal_tensor(rows, nets::kLatentDim, rng));
      opt.zero_grad();
      l.total.backward();
      opt.step();
      acc += l.total.item();
      ++batches;
    }
    probe(e, acc / static_cast<double>(batches));
  }
  metrics.fits.push_back(sum);
}

using Forward = std::function<TensorF(const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end)>;

/// Training order for one epoch. With `balanced`, samples above 0.5 and the
/// rest are drawn equally often by upsampling the smaller group.
std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train, const std::vector<float>& targets,
                                     bool balanced, Rng& rng) {
  std::vector<std::size_t> order = train;
  if (balanced) {
    std::vector<std::size_t> hi, lo;
    for (std::size_t i : train) (targets[i] > 0.5f ? hi : lo).push_back(i);
    if (!hi.empty() && !lo.empty()) {
      auto& minority = hi.size() < lo.size() ? hi : lo;
      const std::size_t deficit = std::max(hi.size(), lo.size()) - minority.size();
      for (std::size_t k = 0; k < deficit; ++k) order.push_back(minority[rng.index(minority.size())]);
    }
  }
  rng.shuffle(order.begin(), order.end());
  return order;
}

/// L1 regression of one scalar per sample; reports held-out L1 every epoch.
void fit_regressor(const Forward& forward, const std::vector<float>& targets, nets::ParamList<float> params,
                   const Split& split, const TrainConfig& cfg, std::uint64_t seed, const std::string& stage,
                   const std::string& net, MetricsLog& metrics, bool balanced = false) {
  const auto target_tensor = [&](const std::vector<std::size_t>& idx, std::size_t b, std::size_t e) {
    std::vector<float> v;
    for (std::size_t i = b; i < e; ++i) v.push_back(targets[idx[i]]);
    return TensorF::from(static_cast<int>(e - b), 1, std::move(v));
  };
  const auto holdout_l1 = [&] {
    nets::NoGradGuard guard;
    double acc = 0;
    for (std::size_t b = 0; b < split.holdout.size(); b += 1024) {
      const std::size_t e = std::min(split.holdout.size(), b + 1024);
      const auto err = nets::abs(nets::sub(forward(split.holdout, b, e), target_tensor(split.holdout, b, e)));
      acc += nets::sum(err).item();
    }
    return acc / static_cast<double>(split.holdout.size());
  };

  FitSummary sum;
  sum.stage = stage;
  sum.net = net;
  sum.train_samples = split.train.size();
  sum.holdout_samples = split.holdout.size();
  for (std::size_t i : split.holdout) sum.zero_baseline += std::abs(targets[i]);
  sum.zero_baseline /= static_cast<double>(split.holdout.size());
  sum.probe_epoch0 = holdout_l1();
  metrics.rows.push_back({stage, net, 0, 0.0, sum.probe_epoch0, 0, 0, 0});

  Rng rng(derive_seed(seed, {0x7E}));
  nets::Adam opt(std::move(params), cfg.lr);
  for (std::uint32_t ep = 1; ep <= cfg.epochs; ++ep) {
    const std::vector<std::size_t> order = epoch_order(split.train, targets, balanced, rng);
    double acc = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t e = std::min(order.size(), b + cfg.batch);
      const TensorF loss = nets::mean(nets::abs(nets::sub(forward(order, b, e), target_tensor(order, b, e))));
      opt.zero_grad();
      loss.backward();
      opt.step();
      acc += loss.item();
      ++batches;
    }
    const double h = holdout_l1();
    if (ep == 1) sum.probe_epoch1 = h;
    sum.probe_final = h;
    metrics.rows.push_back({stage, net, ep, acc / static_cast<double>(batches), h, 0, 0, 0});
  }
  metrics.fits.push_back(sum);
}

void fit_stage_discriminator(StagePolicy& sp, const std::vector<const StageSample*>& data, const TrainConfig& cfg,
                             std::uint64_t seed, const std::string& stage, const Split& split,
                             const std::vector<float>& cond_rows, MetricsLog& metrics) {
  const std::size_t n = data.size();
  std::vector<float> codes(n * nets::kActionDim), targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = sp.encode(sp.reference(data[i]->state), data[i]->executed);
    std::copy(c.begin(), c.end(), codes.begin() + static_cast<std::ptrdiff_t>(i * nets::kActionDim));
    targets[i] = static_cast<float>(data[i]->delta);
  }
  const Forward fwd = [&](const std::vector<std::size_t>& idx, std::size_t b, std::size_t e) {
    return sp.discriminator(nets::concat_cols<float>(
        {gather(cond_rows, policies::kCondDim, idx, b, e), gather(codes, nets::kActionDim, idx, b, e)}));
  };
  nets::ParamList<float> params;
  sp.discriminator_params(params);
  fit_regressor(fwd, targets, params, split, cfg, seed, stage, "discriminator", metrics);
}

void fit_stage_policy(StagePolicy& sp, const std::vector<const StageSample*>& data, const TrainConfig& cfg,
                      std::uint64_t seed, const std::string& stage, MetricsLog& metrics) {
  if (data.empty()) fail(ErrorKind::Data, stage + ": no training samples were collected");
  const Split split = make_split(data.size(), cfg, derive_seed(seed, {0x5B}));
  std::vector<float> cond_rows;
  fit_generator(sp, data, cfg, seed, stage, split, cond_rows, metrics);
  fit_stage_discriminator(sp, data, cfg, seed, stage, split, cond_rows, metrics);
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing

nets::ParamList<float> stage_params(StagePolicy& sp) {
  nets::ParamList<float> p;
  sp.generator_params(p);
  sp.discriminator_params(p);
  return p;
}

nets::ParamList<float> grasp_params(policies::GraspPolicy& g) {
  nets::ParamList<float> p;
  g.affordance_params(p);
  g.discriminator_params(p);
  return p;
}

nets::ParamList<float> backbone_params(Backbone& b) {
  nets::ParamList<float> p;
  nets::collect(p, "backbone", b.mlp);
  nets::collect(p, "context", b.context);
  return p;
}

nlohmann::json stage_header(const StagePolicy& sp) {
  return {{"kind", "stage"},
          {"cond_norm", sp.cond_norm.to_json()},
          {"pos_offset", sp.generator.pos_offset},
          {"pos_scale", sp.generator.pos_scale},
          {"use_state", sp.use_state},
          {"k_stage", sp.k_stage}};
}

void apply_stage_header(StagePolicy& sp, const nlohmann::json& h) {
  sp.cond_norm = policies::Normalizer::from_json(h.at("cond_norm"));
  sp.generator.pos_offset = h.at("pos_offset").get<std::vector<double>>();
  sp.generator.pos_scale = h.at("pos_scale").get<std::vector<double>>();
  sp.use_state = h.at("use_state").get<bool>();
  sp.k_stage = h.at("k_stage").get<int>();
}

nlohmann::json grasp_header(const policies::GraspPolicy& g) {
  return {{"kind", "grasp"}, {"feature_norm", g.feature_norm.to_json()}, {"k_grasp", g.k_grasp}};
}

nlohmann::json backbone_header() { return {{"kind", "backbone"}}; }

std::uint64_t stage_hash(const StagePolicy& sp) {
  return weights_hash(stage_params(const_cast<StagePolicy&>(sp)), stage_header(sp));
}

std::uint64_t grasp_hash(const policies::GraspPolicy& g) {
  return weights_hash(grasp_params(const_cast<policies::GraspPolicy&>(g)), grasp_header(g));
}

nlohmann::json requirement(const StageRecord& r) { return {{"stage", r.name}, {"hash", hex64(r.hash)}}; }

template <class Fn>
auto in_stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage " + name + ": " + e.what());
  }
}

}  // namespace

std::uint64_t weights_hash(const nets::ParamList<float>& params, const nlohmann::json& header) {
  std::uint64_t h = fnv1a64(header.dump());
  for (const auto& [name, t] : params) {
    h = fnv1a64(name, h);
    const std::int32_t shape[2] = {t->rows(), t->cols()};
    h = fnv1a64(shape, sizeof shape, h);
    h = fnv1a64(t->data(), t->size() * sizeof(float), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Stages

DoorStage train_door_stage(const AssetCatalog& catalog, const TrainConfig& cfg, const Backbone& backbone,
                           MetricsLog& metrics) {
  cfg.validate();
  const std::uint64_t seed = derive_seed(cfg.seed, {0xD0});
  const auto plan = episode_plan(catalog, cfg.door_episodes, seed);
  const auto opt = rollout_options(cfg, bit(Stage::Door));
  std::vector<std::vector<StageSample>> per(plan.size());
  parallel_episodes(plan.size(), [&](std::size_t i) {
    const auto& d = catalog.at(plan[i]);
    CaptureMap cap;
    auto c = expert::expert_controllers();
    c.door = capturing(c.door, backbone, cap);
    const auto rec = expert::collect_episode(d, c, cfg.door_noise, derive_seed(seed, {i}), opt);
    per[i] = stage_samples(rec, cap, Stage::Door, d.id);
  });

  DoorStage out;
  for (auto& v : per)
    for (auto& s : v) out.samples.push_back(std::move(s));
  Rng rng(derive_seed(seed, {0x1}));
  out.policy = StagePolicy::make(rng, !cfg.flags().no_state);
  std::vector<const StageSample*> data;
  for (const auto& s : out.samples) data.push_back(&s);
  fit_stage_policy(out.policy, data, cfg, seed, "door", metrics);
  out.record.name = "door";
  out.record.hash = stage_hash(out.policy);
  out.record.provenance = {{"requires", nlohmann::json::array()}, {"samples", out.samples.size()}};
  return out;
}

HandleStage train_handle_stage(const AssetCatalog& catalog, const DoorStage* door, const TrainConfig& cfg,
                               const Backbone& backbone, MetricsLog& metrics) {
  if (!door) fail(ErrorKind::Provenance, "the handle stage needs a trained door stage first");
  cfg.validate();
  const bool learned_downstream = cfg.ablation != Ablation::NoCondition;
  const std::uint64_t seed = derive_seed(cfg.seed, {0xA0});
  const auto plan = episode_plan(catalog, cfg.handle_episodes, seed);
  const auto opt = rollout_options(cfg, bit(Stage::Handle) | (learned_downstream ? bit(Stage::Door) : 0u));
  std::vector<std::vector<StageSample>> per(plan.size());
  parallel_episodes(plan.size(), [&](std::size_t i) {
    const auto& d = catalog.at(plan[i]);
    CaptureMap cap;
    auto c = expert::expert_controllers();
    c.handle = capturing(c.handle, backbone, cap);
    if (learned_downstream) c.door = learned(backbone, door->policy);
    const auto rec = expert::collect_episode(d, c, cfg.handle_noise, derive_seed(seed, {i}), opt);
    per[i] = stage_samples(rec, cap, Stage::Handle, d.id);
  });

  HandleStage out;
  for (auto& v : per)
    for (auto& s : v) out.samples.push_back(std::move(s));
  const bool merged = cfg.flags().no_disentangle;
  std::vector<const StageSample*> data;
  for (const auto& s : out.samples) data.push_back(&s);
  if (merged)
    for (const auto& s : door->samples) data.push_back(&s);
  Rng rng(derive_seed(seed, {0x1}));
  out.policy = StagePolicy::make(rng, !cfg.flags().no_state);
  fit_stage_policy(out.policy, data, cfg, seed, merged ? "merged" : "handle", metrics);
  out.record.name = "handle";
  out.record.hash = stage_hash(out.policy);
  out.record.provenance = {{"requires", {requirement(door->record)}},
                           {"downstream", learned_downstream ? "learned" : "expert"},
                           {"merged", merged},
                           {"samples", data.size()}};
  return out;
}

GraspStage train_grasp_stage(const AssetCatalog& catalog, const HandleStage* handle, const DoorStage* door,
                             const TrainConfig& cfg, const Backbone& backbone, MetricsLog& metrics) {
  if (!handle || !door) fail(ErrorKind::Provenance, "the grasp stage needs trained handle and door stages first");
  cfg.validate();
  const bool learned_downstream = cfg.ablation != Ablation::NoCondition;
  const bool merged = cfg.flags().no_disentangle;
  const StagePolicy& door_policy = merged ? handle->policy : door->policy;
  const std::uint64_t seed = derive_seed(cfg.seed, {0x6A});
  const auto plan = episode_plan(catalog, cfg.grasp_episodes, seed);
  const auto opt = rollout_options(
      cfg, bit(Stage::Grasp) | (learned_downstream ? bit(Stage::Handle) | bit(Stage::Door) : 0u));

  std::vector<GraspSample> samples(plan.size());
  parallel_episodes(plan.size(), [&](std::size_t i) {
    const auto& d = catalog.at(plan[i]);
    GraspSample& gs = samples[i];
    auto c = expert::expert_controllers();
    c.grasp = [&](const expert::StepContext& ctx) {
      if (!ctx.observation) fail(ErrorKind::InvalidState, "grasp sampling needs an observation");
      const percept::CloudMatrix& cloud = ctx.observation->cloud;
      const auto f = backbone.features(cloud);
      const auto solids = ctx.instance.handle_solids(ctx.state.theta_d, ctx.state.theta_h);
      std::vector<int> on_handle;
      for (int k = 0; k < cloud.rows(); ++k) {
        const Vec3 p = cloud.row(k).cast<double>().transpose();
        double dmin = std::numeric_limits<double>::infinity();
        for (const auto& s : solids) dmin = std::min(dmin, surface_distance(p, s));
        if (dmin < kOnHandle) on_handle.push_back(k);
      }
      Rng rng(derive_seed(ctx.seed, {0x6C}));
      const auto pick = [&](bool handle_point) {
        if (handle_point && !on_handle.empty()) return on_handle[rng.index(on_handle.size())];
        return static_cast<int>(rng.index(static_cast<std::size_t>(cloud.rows())));
      };
      // Spread contacts spatially so that small isolated clusters are covered.
      const std::uint32_t n_spread = cfg.screen_contacts + cfg.affordance_points;
      std::vector<float> xyz(cloud.data(), cloud.data() + cloud.size());
      const auto spread = kernels::farthest_point_sample(
          xyz, static_cast<int>(std::min<std::size_t>(n_spread, cloud.rows())),
          static_cast<int>(rng.index(static_cast<std::size_t>(cloud.rows()))));
      std::size_t next_spread = 0;
      const auto pick_spread = [&](bool handle_point) {
        if (handle_point && !on_handle.empty()) return on_handle[rng.index(on_handle.size())];
        return spread[next_spread++ % spread.size()];
      };
      const auto axis_at = [&](const Vec3& p) {
        return cfg.privileged_axis ? ctx.instance.grasp_tangent(ctx.state.theta_d, ctx.state.theta_h)
                                   : policies::estimate_handle_axis(cloud, p);
      };
      const auto local_row = [&](int k) {
        const float* r = f.local.data() + static_cast<std::size_t>(k) * nets::kFeatureDim;
        return std::vector<float>(r, r + nets::kFeatureDim);
      };
      const int contact = pick(rng.bernoulli(cfg.handle_contact_fraction));
      const Vec3 p = cloud.row(contact).cast<double>().transpose();
      gs.global = f.global;
      gs.local = local_row(contact);
      gs.action = policies::sample_grasp_candidates(p, axis_at(p), 1, derive_seed(ctx.seed, {0x6D}))[0];
      if (rng.bernoulli(cfg.front_approach_fraction) && gs.action.r(0, 2) > 0) {
        gs.action.r.col(0) = -gs.action.r.col(0);
        gs.action.r.col(2) = -gs.action.r.col(2);
      }
      for (std::uint32_t e = 0; e < cfg.screen_contacts; ++e) {
        const int k = pick_spread(e % 2 == 0);
        const Vec3 ep = cloud.row(k).cast<double>().transpose();
        const Action ea = policies::sample_grasp_candidates(ep, axis_at(ep), 1, derive_seed(ctx.seed, {0x6E, e}))[0];
        sim::StepResult r;
        try {
          r = sim::step(ctx.state, ea, ctx.instance, ctx.robot, cfg.task);
        } catch (const Error&) {
          continue;
        }
        if (r.state.attached) continue;
        gs.screen_actions.push_back(ea);
        gs.screen_labels.push_back(grasp_label(r.state.theta_d, cfg.task.thre_door));
        const auto lr = local_row(k);
        gs.screen_local.insert(gs.screen_local.end(), lr.begin(), lr.end());
      }
      for (std::uint32_t q = 0; q < cfg.affordance_points; ++q) {
        const int k = pick_spread(2 * q < cfg.affordance_points);
        const Vec3 qp = cloud.row(k).cast<double>().transpose();
        gs.query_points.push_back(qp);
        gs.query_axes.push_back(axis_at(qp));
        const auto lr = local_row(k);
        gs.query_local.insert(gs.query_local.end(), lr.begin(), lr.end());
      }
      return gs.action;
    };
    if (learned_downstream) {
      c.handle = learned(backbone, handle->policy);
      c.door = learned(backbone, door_policy);
    }
    const std::uint64_t ep_seed = derive_seed(seed, {i});
    const auto rec = expert::collect_episode(d, c, expert::NoiseConfig{}, ep_seed, opt);
    if (gs.global.empty()) fail(ErrorKind::Data, "episode on " + d.id + " ended before the grasp step");
    gs.final_theta_d = rec.final_theta_d;
    gs.label = grasp_label(rec.final_theta_d, cfg.task.thre_door);
    gs.instance_id = d.id;
    gs.seed = ep_seed;
  });

  GraspStage out;
  out.samples = std::move(samples);
  Rng rng(derive_seed(seed, {0x1}));
  out.policy = policies::GraspPolicy::make(rng);
  auto& g = out.policy;
  const std::size_t n = out.samples.size();
  constexpr int F = nets::kFeatureDim;

  std::vector<float> local, global, codes, labels;
  const auto add_row = [&](const float* l, const std::vector<float>& gl, const Action& a, float label) {
    local.insert(local.end(), l, l + F);
    global.insert(global.end(), gl.begin(), gl.end());
    const auto c = policies::world_code(a);
    codes.insert(codes.end(), c.begin(), c.end());
    labels.push_back(label);
  };
  for (const auto& s : out.samples) {
    add_row(s.local.data(), s.global, s.action, s.label);
    for (std::size_t e = 0; e < s.screen_actions.size(); ++e)
      add_row(s.screen_local.data() + e * F, s.global, s.screen_actions[e], s.screen_labels[e]);
  }
  const std::size_t nd = labels.size();
  std::vector<float> feature_rows;
  const Split dsplit = make_split(nd, cfg, derive_seed(seed, {0x5B}));
  for (std::size_t i : dsplit.train) {
    feature_rows.insert(feature_rows.end(), local.begin() + static_cast<std::ptrdiff_t>(i * F),
                        local.begin() + static_cast<std::ptrdiff_t>((i + 1) * F));
    feature_rows.insert(feature_rows.end(), global.begin() + static_cast<std::ptrdiff_t>(i * F),
                        global.begin() + static_cast<std::ptrdiff_t>((i + 1) * F));
  }
  g.feature_norm = policies::Normalizer::fit(feature_rows, 2 * F);

  const Forward dfwd = [&](const std::vector<std::size_t>& idx, std::size_t b, std::size_t e) {
    return g.discriminate(gather(local, F, idx, b, e), gather(global, F, idx, b, e),
                          gather(codes, nets::kActionDim, idx, b, e));
  };
  nets::ParamList<float> dparams;
  g.discriminator_params(dparams);
  fit_regressor(dfwd, labels, dparams, dsplit, cfg, seed, "grasp", "discriminator", metrics, true);

  // Affordance targets: top-k mean of discriminator scores over sampled grasps.
  const std::size_t nq = cfg.affordance_points;
  std::vector<float> qlocal(n * nq * F), qglobal(n * nq * F), qpoints(n * nq * 3), qtargets(n * nq);
  parallel_episodes(n, [&](std::size_t i) {
    nets::NoGradGuard guard;
    const auto& s = out.samples[i];
    const TensorF gl = TensorF::from(1, F, s.global);
    std::vector<float> lrep, qcodes;
    for (std::size_t q = 0; q < nq; ++q) {
      const auto cands = policies::sample_grasp_candidates(s.query_points[q], s.query_axes[q],
                                                           static_cast<int>(cfg.grasp_samples),
                                                           derive_seed(s.seed, {0xE7, q}));
      for (const auto& a : cands) {
        const auto c = policies::world_code(a);
        qcodes.insert(qcodes.end(), c.begin(), c.end());
        lrep.insert(lrep.end(), s.query_local.begin() + static_cast<std::ptrdiff_t>(q * F),
                    s.query_local.begin() + static_cast<std::ptrdiff_t>((q + 1) * F));
      }
    }
    const int rows = static_cast<int>(nq * cfg.grasp_samples);
    const auto scores = g.discriminate(TensorF::from(rows, F, std::move(lrep)), gl,
                                       TensorF::from(rows, nets::kActionDim, std::move(qcodes)))
                            .values();
    for (std::size_t q = 0; q < nq; ++q) {
      const std::size_t r = i * nq + q;
      std::vector<double> sc(scores.begin() + static_cast<std::ptrdiff_t>(q * cfg.grasp_samples),
                             scores.begin() + static_cast<std::ptrdiff_t>((q + 1) * cfg.grasp_samples));
      qtargets[r] = static_cast<float>(topk_mean(std::move(sc), cfg.grasp_topk));
      std::copy(s.query_local.begin() + static_cast<std::ptrdiff_t>(q * F),
                s.query_local.begin() + static_cast<std::ptrdiff_t>((q + 1) * F),
                qlocal.begin() + static_cast<std::ptrdiff_t>(r * F));
      std::copy(s.global.begin(), s.global.end(), qglobal.begin() + static_cast<std::ptrdiff_t>(r * F));
      for (int a = 0; a < 3; ++a) qpoints[r * 3 + a] = static_cast<float>(s.query_points[q][a]);
    }
  });
  const Split esplit = make_split(n * nq, cfg, derive_seed(seed, {0x5C}));
  const Forward efwd = [&](const std::vector<std::size_t>& idx, std::size_t b, std::size_t e) {
    return g.affordance(gather(qlocal, F, idx, b, e), gather(qglobal, F, idx, b, e), gather(qpoints, 3, idx, b, e));
  };
  nets::ParamList<float> eparams;
  g.affordance_params(eparams);
  fit_regressor(efwd, qtargets, eparams, esplit, cfg, seed, "grasp", "affordance", metrics);

  out.record.name = "grasp";
  out.record.hash = grasp_hash(out.policy);
  out.record.provenance = {{"requires", {requirement(handle->record), requirement(door->record)}},
                           {"downstream", learned_downstream ? "learned" : "expert"},
                           {"samples", n}};
  return out;
}

// ---------------------------------------------------------------------------
// Full pipeline and bundles

const StageRecord& CheckpointBundle::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return s;
  fail(ErrorKind::InvalidArgument, "bundle has no stage " + name);
}

CheckpointBundle train_full(const AssetCatalog& catalog, const TrainConfig& config) {
  config.validate();
  CheckpointBundle b;
  b.config = config;
  b.config_hash = config_hash(config);
  b.catalog_hash = catalog.hash();
  b.policy.backbone = Backbone::make(derive_seed(config.seed, {0xBB}));
  b.backbone_hash = weights_hash(backbone_params(b.policy.backbone), backbone_header());
  b.policy.flags = config.flags();

  const DoorStage door = in_stage("door", [&] { return train_door_stage(catalog, config, b.policy.backbone, b.metrics); });
  const HandleStage handle =
      in_stage("handle", [&] { return train_handle_stage(catalog, &door, config, b.policy.backbone, b.metrics); });
  GraspStage grasp = in_stage(
      "grasp", [&] { return train_grasp_stage(catalog, &handle, &door, config, b.policy.backbone, b.metrics); });

  b.policy.grasp = std::move(grasp.policy);
  b.policy.handle = handle.policy;
  if (!b.policy.flags.no_disentangle) b.policy.door = door.policy;
  b.stages = {door.record, handle.record, grasp.record};
  return b;
}

void save_bundle(const CheckpointBundle& bundle, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir + ": " + ec.message());
  auto& pol = const_cast<policies::UniversalPolicy&>(bundle.policy);
  const std::string chash = hex64(bundle.config_hash);
  const auto with_hash = [&](nlohmann::json h) {
    h["config_hash"] = chash;
    return h;
  };
  nlohmann::json files = nlohmann::json::object();
  const auto write = [&](const std::string& name, const nlohmann::json& header, const nets::ParamList<float>& params) {
    const std::string path = (fs::path(dir) / (name + ".dbck")).string();
    nets::save_checkpoint(path, with_hash(header), params);
    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    files[name] = {{"path", name + ".dbck"}, {"fnv1a64", hex64(fnv1a64(bytes))}};
  };
  write("backbone", backbone_header(), backbone_params(pol.backbone));
  write("grasp", grasp_header(pol.grasp), grasp_params(pol.grasp));
  write("handle", stage_header(pol.handle), stage_params(pol.handle));
  if (!bundle.policy.flags.no_disentangle) write("door", stage_header(pol.door), stage_params(pol.door));

  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : bundle.stages)
    stages.push_back({{"name", s.name}, {"hash", hex64(s.hash)}, {"provenance", s.provenance}});
  nlohmann::json fits = nlohmann::json::array();
  for (const auto& f : bundle.metrics.fits) fits.push_back(to_json(f));
  const nlohmann::json manifest = {{"schema", "doorbench-bundle-v1"},
                                   {"config", to_json(bundle.config)},
                                   {"config_hash", chash},
                                   {"catalog_hash", hex64(bundle.catalog_hash)},
                                   {"backbone_hash", hex64(bundle.backbone_hash)},
                                   {"ablation", to_string(bundle.config.ablation)},
                                   {"flags", policies::to_json(bundle.policy.flags)},
                                   {"stages", stages},
                                   {"files", files},
                                   {"fits", fits}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) fail(ErrorKind::Io, "cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  bundle.metrics.write_csv((fs::path(dir) / "metrics.csv").string());
}

CheckpointBundle load_bundle(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) fail(ErrorKind::Io, "no manifest.json in " + dir);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, dir + "/manifest.json: " + e.what());
  }
  if (m.value("schema", std::string{}) != "doorbench-bundle-v1")
    fail(ErrorKind::Compatibility, dir + ": unsupported bundle schema");

  CheckpointBundle b;
  b.config = train_config_from_json(m.at("config"));
  b.config_hash = config_hash(b.config);
  const std::string chash = hex64(b.config_hash);
  if (chash != m.at("config_hash").get<std::string>())
    fail(ErrorKind::Compatibility, dir + ": manifest config does not match its recorded hash");
  b.catalog_hash = std::stoull(m.at("catalog_hash").get<std::string>(), nullptr, 16);
  b.policy.flags = policies::flags_from_json(m.at("flags"));

  const auto& files = m.at("files");
  const auto read = [&](const std::string& name, const nets::ParamList<float>& params) {
    const auto& f = files.at(name);
    const std::string path = (fs::path(dir) / f.at("path").get<std::string>()).string();
    std::ifstream fin(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(fin)), std::istreambuf_iterator<char>());
    if (hex64(fnv1a64(bytes)) != f.at("fnv1a64").get<std::string>())
      fail(ErrorKind::Compatibility, path + ": file hash does not match the manifest");
    return nets::load_checkpoint(path, params, chash);
  };
  Rng rng(0);
  auto& pol = b.policy;
  pol.backbone = Backbone::make(0);
  read("backbone", backbone_params(pol.backbone));
  b.backbone_hash = weights_hash(backbone_params(pol.backbone), backbone_header());
  pol.grasp = policies::GraspPolicy::make(rng);
  {
    const auto h = read("grasp", grasp_params(pol.grasp));
    pol.grasp.feature_norm = policies::Normalizer::from_json(h.at("feature_norm"));
    pol.grasp.k_grasp = h.at("k_grasp").get<int>();
  }
  const bool use_state = !pol.flags.no_state;
  pol.handle = StagePolicy::make(rng, use_state);
  apply_stage_header(pol.handle, read("handle", stage_params(pol.handle)));
  if (!pol.flags.no_disentangle) {
    pol.door = StagePolicy::make(rng, use_state);
    apply_stage_header(pol.door, read("door", stage_params(pol.door)));
  }

  for (const auto& s : m.at("stages")) {
    StageRecord r;
    r.name = s.at("name").get<std::string>();
    r.hash = std::stoull(s.at("hash").get<std::string>(), nullptr, 16);
    r.provenance = s.at("provenance");
    b.stages.push_back(r);
  }
  const auto check = [&](const std::string& name, std::uint64_t actual) {
    if (b.stage(name).hash != actual)
      fail(ErrorKind::Compatibility, dir + ": " + name + " weights do not match the recorded stage hash");
  };
  check("grasp", grasp_hash(pol.grasp));
  check("handle", stage_hash(pol.handle));
  if (!pol.flags.no_disentangle) check("door", stage_hash(pol.door));

  const std::string csv = (fs::path(dir) / "metrics.csv").string();
  if (fs::exists(csv)) b.metrics = parse_metrics_csv(csv);
  for (const auto& f : m.value("fits", nlohmann::json::array())) b.metrics.fits.push_back(fit_summary_from_json(f));
  return b;
}

}  // namespace doorbench::trainer
