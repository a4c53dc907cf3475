#include "doorbench/policies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "doorbench/error.hpp"
#include "doorbench/kernels.hpp"

namespace doorbench::policies {

namespace {

TensorF cloud_tensor(const CloudMatrix& cloud) {
  return TensorF::from(static_cast<int>(cloud.rows()), 3,
                       std::vector<float>(cloud.data(), cloud.data() + cloud.size()));
}

TensorF row_tensor(const std::vector<float>& v) {
  return TensorF::from(1, static_cast<int>(v.size()), v);
}

Mat3 gram_schmidt(const Vec3& c0, const Vec3& c1) {
  const Vec3 a1 = c0.normalized();
  const Vec3 a2 = (c1 - a1.dot(c1) * a1).normalized();
  Mat3 r;
  r.col(0) = a1;
  r.col(1) = a2;
  r.col(2) = a1.cross(a2);
  return r;
}

void freeze(nets::Mlp<float>& m) {
  for (auto& l : m.layers) {
    l.weight.set_requires_grad(false);
    l.bias.set_requires_grad(false);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Backbone Backbone::make(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xBAC}));
  Backbone b;
  b.mlp = nets::make_mlp<float>({3, 64, nets::kFeatureDim}, rng, nets::Activation::Relu, nets::Activation::Relu);
  b.context = nets::make_mlp<float>({3, 32, nets::kFeatureDim}, rng, nets::Activation::Relu, nets::Activation::Relu);
  freeze(b.mlp);
  freeze(b.context);
  return b;
}

namespace {

std::vector<float> flat_xyz(const CloudMatrix& cloud) {
  return std::vector<float>(cloud.data(), cloud.data() + cloud.size());
}

TensorF context_features(const Backbone& b, const std::vector<float>& cloud_xyz, const std::vector<float>& queries) {
  const int m = static_cast<int>(queries.size() / 3);
  const int k = std::min(kContextNeighbours, static_cast<int>(cloud_xyz.size() / 3));
  const std::vector<int> nn = kernels::knn(cloud_xyz, queries, k);
  std::vector<float> rel(static_cast<std::size_t>(m) * k * 3);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) {
      const int idx = nn[static_cast<std::size_t>(i) * k + j];
      for (int a = 0; a < 3; ++a)
        rel[(static_cast<std::size_t>(i) * k + j) * 3 + a] =
            (cloud_xyz[static_cast<std::size_t>(idx) * 3 + a] - queries[static_cast<std::size_t>(i) * 3 + a]) /
            kContextScale;
    }
  const TensorF h = b.context(TensorF::from(m * k, 3, std::move(rel)));
  std::vector<float> out(static_cast<std::size_t>(m) * nets::kFeatureDim, -std::numeric_limits<float>::infinity());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) {
      const float* r = h.data() + (static_cast<std::size_t>(i) * k + j) * nets::kFeatureDim;
      float* o = out.data() + static_cast<std::size_t>(i) * nets::kFeatureDim;
      for (int c = 0; c < nets::kFeatureDim; ++c) o[c] = std::max(o[c], r[c]);
    }
  return TensorF::from(m, nets::kFeatureDim, std::move(out));
}

}  // namespace

Backbone::Features Backbone::features(const CloudMatrix& cloud) const {
  if (cloud.rows() == 0) fail(ErrorKind::EmptyObservation, "cannot featurise an empty cloud");
  nets::NoGradGuard guard;
  Features f;
  const std::vector<float> xyz = flat_xyz(cloud);
  f.global = nets::max_rows(mlp(cloud_tensor(cloud))).values();
  f.local = context_features(*this, xyz, xyz);
  return f;
}

std::vector<float> Backbone::global(const CloudMatrix& cloud) const {
  if (cloud.rows() == 0) fail(ErrorKind::EmptyObservation, "cannot featurise an empty cloud");
  nets::NoGradGuard guard;
  return nets::max_rows(mlp(cloud_tensor(cloud))).values();
}

TensorF Backbone::local_at(const CloudMatrix& cloud, const std::vector<Vec3>& points) const {
  nets::NoGradGuard guard;
  std::vector<float> q;
  q.reserve(points.size() * 3);
  for (const auto& p : points)
    for (int a = 0; a < 3; ++a) q.push_back(static_cast<float>(p[a]));
  return context_features(*this, flat_xyz(cloud), q);
}

// ---------------------------------------------------------------------------

Normalizer Normalizer::identity(int dim) {
  Normalizer n;
  n.mean.assign(static_cast<std::size_t>(dim), 0.0f);
  n.inv_std.assign(static_cast<std::size_t>(dim), 1.0f);
  return n;
}

Normalizer Normalizer::fit(const std::vector<float>& rows, int dim) {
  if (dim <= 0 || rows.empty() || rows.size() % static_cast<std::size_t>(dim) != 0)
    fail(ErrorKind::Data, "normalizer: row buffer does not divide into the feature width");
  const std::size_t n = rows.size() / static_cast<std::size_t>(dim);
  std::vector<double> m(static_cast<std::size_t>(dim), 0.0), s(static_cast<std::size_t>(dim), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) m[j] += rows[i * dim + j];
  for (auto& x : m) x /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) {
      const double d = rows[i * dim + j] - m[j];
      s[j] += d * d;
    }
  Normalizer out;
  for (int j = 0; j < dim; ++j) {
    const double sd = std::sqrt(s[j] / static_cast<double>(n));
    out.mean.push_back(static_cast<float>(m[j]));
    out.inv_std.push_back(sd > 1e-6 ? static_cast<float>(1.0 / sd) : 1.0f);
  }
  return out;
}

TensorF Normalizer::apply(const TensorF& x) const {
  if (x.cols() != dim()) fail(ErrorKind::Shape, "normalizer width does not match its input");
  std::vector<float> neg(mean.size());
  for (std::size_t j = 0; j < mean.size(); ++j) neg[j] = -mean[j];
  std::vector<float> inv;
  inv.reserve(static_cast<std::size_t>(x.rows()) * inv_std.size());
  for (int i = 0; i < x.rows(); ++i) inv.insert(inv.end(), inv_std.begin(), inv_std.end());
  return nets::mul(nets::add_row(x, row_tensor(neg)), TensorF::from(x.rows(), x.cols(), std::move(inv)));
}

nlohmann::json Normalizer::to_json() const { return {{"mean", mean}, {"inv_std", inv_std}}; }

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<std::vector<float>>();
  n.inv_std = j.at("inv_std").get<std::vector<float>>();
  if (n.mean.size() != n.inv_std.size()) fail(ErrorKind::Data, "normalizer arrays differ in length");
  return n;
}

ActionCode world_code(const Action& a) {
  ActionCode c{};
  for (int k = 0; k < 3; ++k) {
    c[k] = static_cast<float>(a.p[k]);
    c[3 + k] = static_cast<float>(a.r(k, 0));
    c[6 + k] = static_cast<float>(a.r(k, 1));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Grasping

GraspPolicy GraspPolicy::make(Rng& rng) {
  using nets::Activation;
  GraspPolicy g;
  g.e_head = nets::make_linear<float>(2 * nets::kFeatureDim, nets::kFeatureDim, rng);
  g.e_point = nets::make_mlp<float>({3, nets::kFeatureDim}, rng, Activation::Relu, Activation::Relu);
  g.e_score = nets::make_mlp<float>({2 * nets::kFeatureDim, 128, 1}, rng);
  g.d_head = nets::make_linear<float>(2 * nets::kFeatureDim, nets::kFeatureDim, rng);
  g.d_action = nets::make_mlp<float>({nets::kActionDim, nets::kFeatureDim}, rng, Activation::Relu, Activation::Relu);
  g.d_score = nets::make_mlp<float>({2 * nets::kFeatureDim, 128, 1}, rng);
  return g;
}

TensorF GraspPolicy::affordance(const TensorF& local, const TensorF& global, const TensorF& points) const {
  const int n = local.rows();
  const TensorF g = global.rows() == n ? global : nets::repeat_rows(global, n);
  const TensorF in = feature_norm.apply(nets::concat_cols<float>({local, g}));
  const TensorF h = nets::relu(e_head(in));
  return nets::sigmoid(e_score(nets::concat_cols<float>({h, e_point(points)})));
}

TensorF GraspPolicy::discriminate(const TensorF& local, const TensorF& global, const TensorF& codes) const {
  const int n = local.rows();
  const TensorF g = global.rows() == n ? global : nets::repeat_rows(global, n);
  const TensorF in = feature_norm.apply(nets::concat_cols<float>({local, g}));
  const TensorF h = nets::relu(d_head(in));
  return nets::sigmoid(d_score(nets::concat_cols<float>({h, d_action(codes)})));
}

void GraspPolicy::affordance_params(nets::ParamList<float>& out) {
  nets::collect(out, "e_head", e_head);
  nets::collect(out, "e_point", e_point);
  nets::collect(out, "e_score", e_score);
}

void GraspPolicy::discriminator_params(nets::ParamList<float>& out) {
  nets::collect(out, "d_head", d_head);
  nets::collect(out, "d_action", d_action);
  nets::collect(out, "d_score", d_score);
}

std::vector<float> affordance_map(const CloudMatrix& cloud, const Backbone& backbone, const GraspPolicy& policy) {
  if (cloud.rows() != percept::kCloudSize)
    fail(ErrorKind::Shape, "affordance_map expects " + std::to_string(percept::kCloudSize) + " points, got " +
                               std::to_string(cloud.rows()));
  const auto f = backbone.features(cloud);
  nets::NoGradGuard guard;
  return policy.affordance(f.local, row_tensor(f.global), cloud_tensor(cloud)).values();
}

std::vector<Action> sample_grasp_candidates(const Vec3& point, const Vec3& handle_axis, int k, std::uint64_t seed) {
  const double len = handle_axis.norm();
  if (!(len > 1e-9)) fail(ErrorKind::InvalidArgument, "handle axis must be non-zero");
  if (k <= 0) fail(ErrorKind::InvalidArgument, "candidate count must be positive");
  const Vec3 a = handle_axis / len;
  int least = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(a[i]) < std::abs(a[least])) least = i;
  const Vec3 u = a.cross(Vec3::Unit(least)).normalized();
  const Vec3 w = a.cross(u);
  Rng rng(derive_seed(seed, {0x6A5}));
  std::vector<Action> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double phi = 2.0 * kPi * rng.uniform();
    const Vec3 z = std::cos(phi) * u + std::sin(phi) * w;
    Action act;
    act.p = point;
    act.r.col(0) = a.cross(z);
    act.r.col(1) = a;
    act.r.col(2) = z;
    act.gripper = sim::Gripper::Close;
    out.push_back(act);
  }
  return out;
}

Vec3 estimate_handle_axis(const CloudMatrix& cloud, const Vec3& point) {
  const int n = static_cast<int>(cloud.rows());
  if (n < 2) fail(ErrorKind::EmptyObservation, "too few points to estimate a handle axis");
  std::vector<std::pair<double, int>> d(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) d[i] = {(cloud.row(i).cast<double>().transpose() - point).squaredNorm(), i};
  const int m = std::min(kAxisNeighbours, n);
  std::partial_sort(d.begin(), d.begin() + m, d.end());
  Vec3 mean = Vec3::Zero();
  for (int i = 0; i < m; ++i) mean += cloud.row(d[i].second).cast<double>().transpose();
  mean /= m;
  Mat3 cov = Mat3::Zero();
  for (int i = 0; i < m; ++i) {
    const Vec3 q = cloud.row(d[i].second).cast<double>().transpose() - mean;
    cov += q * q.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Vec3 axis = es.eigenvectors().col(2);
  int big = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(axis[i]) > std::abs(axis[big])) big = i;
  if (axis[big] < 0) axis = -axis;
  return axis;
}

template <class V>
static std::size_t argmax_impl(const V& v) {
  if (v.empty()) fail(ErrorKind::InvalidArgument, "argmax of an empty score list");
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isnan(v[i]) && (best == v.size() || v[i] > v[best])) best = i;
  if (best == v.size()) fail(ErrorKind::GenerationFailure, "all scores are NaN");
  return best;
}

std::size_t argmax_lowest(const std::vector<float>& v) { return argmax_impl(v); }
std::size_t argmax_lowest(const std::vector<double>& v) { return argmax_impl(v); }

GraspChoice select_grasp(const CloudMatrix& cloud, const PointScorer& affordance, const ActionScorer& discriminator,
                         const std::function<Vec3(const Vec3&)>& handle_axis, int k, std::uint64_t seed) {
  const std::vector<float> scores = affordance(cloud);
  if (scores.size() != static_cast<std::size_t>(cloud.rows())) fail(ErrorKind::Shape, "affordance length differs from the cloud");
  GraspChoice c;
  c.point_index = static_cast<int>(argmax_lowest(scores));
  const Vec3 p = cloud.row(c.point_index).cast<double>().transpose();
  c.candidates = sample_grasp_candidates(p, handle_axis(p), k, seed);
  c.candidate_index = static_cast<int>(argmax_lowest(discriminator(c.candidates)));
  c.action = c.candidates[static_cast<std::size_t>(c.candidate_index)];
  return c;
}

GraspChoice select_grasp(const CloudMatrix& cloud, const Backbone& backbone, const GraspPolicy& policy,
                         const std::function<Vec3(const Vec3&)>& handle_axis, std::uint64_t seed) {
  if (cloud.rows() != percept::kCloudSize)
    fail(ErrorKind::Shape, "select_grasp expects " + std::to_string(percept::kCloudSize) + " points");
  const auto f = backbone.features(cloud);
  const TensorF global = row_tensor(f.global);
  const PointScorer aff = [&](const CloudMatrix& c) {
    nets::NoGradGuard guard;
    return policy.affordance(f.local, global, cloud_tensor(c)).values();
  };
  const ActionScorer disc = [&](const std::vector<Action>& cands) {
    nets::NoGradGuard guard;
    const TensorF local = backbone.local_at(cloud, {cands.front().p});
    std::vector<float> codes;
    for (const auto& a : cands) {
      const ActionCode c = world_code(a);
      codes.insert(codes.end(), c.begin(), c.end());
    }
    const int k = static_cast<int>(cands.size());
    const TensorF s = policy.discriminate(nets::repeat_rows(local, k), global, TensorF::from(k, 9, std::move(codes)));
    return std::vector<double>(s.values().begin(), s.values().end());
  };
  return select_grasp(cloud, aff, disc, handle_axis, policy.k_grasp, seed);
}

// ---------------------------------------------------------------------------
// Stage policies

StagePolicy StagePolicy::make(Rng& rng, bool use_state) {
  StagePolicy s;
  s.generator = nets::make_cvae<float>(kCondDim, rng);
  s.discriminator = nets::make_mlp<float>({kCondDim + nets::kActionDim, 128, 128, 1}, rng);
  s.use_state = use_state;
  return s;
}

TensorF StagePolicy::condition(const std::vector<float>& global, const StateVector& s) const {
  if (global.size() != static_cast<std::size_t>(nets::kFeatureDim)) fail(ErrorKind::Shape, "global feature must have 128 entries");
  std::vector<float> v = global;
  for (int i = 0; i < percept::kStateDim; ++i) v.push_back(use_state ? s(i) : 0.0f);
  return cond_norm.apply(row_tensor(v));
}

Pose StagePolicy::reference(const StateVector& s) {
  const Vec3 p(s(3), s(4), s(5));
  const Vec3 c0(s(6), s(7), s(8));
  const Vec3 c1(s(9), s(10), s(11));
  return make_pose(gram_schmidt(c0, c1), p);
}

ActionCode StagePolicy::encode(const Pose& ref, const Action& a) const {
  const Mat3 rt = ref.linear().transpose();
  const Vec3 lp = rt * (a.p - ref.translation());
  const Mat3 lr = rt * a.r;
  ActionCode c{};
  for (int k = 0; k < 3; ++k) {
    c[k] = static_cast<float>((lp[k] - generator.pos_offset[k]) / generator.pos_scale[k]);
    c[3 + k] = static_cast<float>(lr(k, 0));
    c[6 + k] = static_cast<float>(lr(k, 1));
  }
  return c;
}

Action StagePolicy::decode(const Pose& ref, const float* raw) const {
  Vec3 lp;
  for (int k = 0; k < 3; ++k) lp[k] = raw[k] * generator.pos_scale[k] + generator.pos_offset[k];
  const Mat3 lr = gram_schmidt(Vec3(raw[3], raw[4], raw[5]), Vec3(raw[6], raw[7], raw[8]));
  Action a;
  a.p = ref.translation() + ref.linear() * lp;
  a.r = ref.linear() * lr;
  a.gripper = sim::Gripper::Close;
  return a;
}

void StagePolicy::generator_params(nets::ParamList<float>& out) {
  nets::collect(out, "encoder", generator.encoder);
  nets::collect(out, "decoder", generator.decoder);
}

void StagePolicy::discriminator_params(nets::ParamList<float>& out) { nets::collect(out, "discriminator", discriminator); }

std::vector<Action> generate_stage_candidates(const StagePolicy& policy, const std::vector<float>& global,
                                              const StateVector& s, int k, std::uint64_t seed) {
  if (k <= 0) fail(ErrorKind::InvalidArgument, "candidate count must be positive");
  nets::NoGradGuard guard;
  const TensorF cond = nets::repeat_rows(policy.condition(global, s), k);
  Rng rng(derive_seed(seed, {0x2A7}));
  std::vector<float> z(static_cast<std::size_t>(k) * nets::kLatentDim);
  for (auto& x : z) x = static_cast<float>(rng.normal());
  const TensorF raw = policy.generator.decode(TensorF::from(k, nets::kLatentDim, std::move(z)), cond);
  const Pose ref = policy.reference(s);
  std::vector<Action> out;
  for (int i = 0; i < k; ++i) {
    const float* r = raw.data() + static_cast<std::size_t>(i) * nets::kActionDim;
    bool finite = true;
    for (int j = 0; j < nets::kActionDim; ++j) finite = finite && std::isfinite(r[j]);
    if (!finite || nets::rot6d_degenerate(r + 3)) continue;
    out.push_back(policy.decode(ref, r));
  }
  if (out.empty()) fail(ErrorKind::GenerationFailure, "every generated candidate had a degenerate rotation");
  return out;
}

std::vector<double> score_stage_candidates(const StagePolicy& policy, const std::vector<float>& global,
                                           const StateVector& s, const std::vector<Action>& candidates) {
  nets::NoGradGuard guard;
  const int k = static_cast<int>(candidates.size());
  const Pose ref = policy.reference(s);
  std::vector<float> codes;
  codes.reserve(static_cast<std::size_t>(k) * nets::kActionDim);
  for (const auto& a : candidates) {
    const ActionCode c = policy.encode(ref, a);
    codes.insert(codes.end(), c.begin(), c.end());
  }
  const TensorF cond = nets::repeat_rows(policy.condition(global, s), k);
  const TensorF out = policy.discriminator(nets::concat_cols<float>({cond, TensorF::from(k, nets::kActionDim, std::move(codes))}));
  return {out.values().begin(), out.values().end()};
}

Action propose_stage_action(const StagePolicy& policy, const std::vector<float>& global, const StateVector& s,
                            std::uint64_t seed, const ActionScorer* scorer) {
  const std::vector<Action> cands = generate_stage_candidates(policy, global, s, policy.k_stage, seed);
  const std::vector<double> scores = scorer ? (*scorer)(cands) : score_stage_candidates(policy, global, s, cands);
  if (scores.size() != cands.size()) fail(ErrorKind::Shape, "one score per candidate expected");
  return cands[argmax_lowest(scores)];
}

// ---------------------------------------------------------------------------
// Universal policy

nlohmann::json to_json(const PolicyFlags& f) {
  return {{"no_disentangle", f.no_disentangle}, {"no_state", f.no_state}, {"privileged_axis", f.privileged_axis}};
}

PolicyFlags flags_from_json(const nlohmann::json& j) {
  PolicyFlags f;
  f.no_disentangle = j.value("no_disentangle", false);
  f.no_state = j.value("no_state", false);
  f.privileged_axis = j.value("privileged_axis", true);
  return f;
}

const StagePolicy& UniversalPolicy::stage_policy(Stage s) const {
  if (s == Stage::Door && !flags.no_disentangle) return door;
  if (s == Stage::Grasp) fail(ErrorKind::InvalidArgument, "the grasp stage has no generator policy");
  return handle;
}

expert::StageControllers UniversalPolicy::controllers() const {
  expert::StageControllers c;
  c.grasp = [this](const expert::StepContext& ctx) {
    if (!ctx.observation) fail(ErrorKind::InvalidState, "grasp policy needs an observation");
    const CloudMatrix& cloud = ctx.observation->cloud;
    const auto axis = [&](const Vec3& p) -> Vec3 {
      if (flags.privileged_axis) return ctx.instance.grasp_tangent(ctx.state.theta_d, ctx.state.theta_h);
      return estimate_handle_axis(cloud, p);
    };
    return select_grasp(cloud, backbone, grasp, axis, ctx.seed).action;
  };
  const auto stage = [this](const expert::StepContext& ctx) {
    if (!ctx.observation) fail(ErrorKind::InvalidState, "stage policy needs an observation");
    const auto global = backbone.global(ctx.observation->cloud);
    return propose_stage_action(stage_policy(ctx.stage), global, ctx.observation->state, ctx.seed);
  };
  c.handle = stage;
  c.door = stage;
  return c;
}

EpisodeResult run_episode(const UniversalPolicy& policy, const assets::DoorInstance& instance,
                          const EpisodeOptions& options, std::uint64_t seed) {
  expert::RolloutOptions opt;
  opt.robot = options.robot;
  opt.task = options.task;
  opt.camera = options.camera;
  opt.controllers_need_observations = true;
  opt.early_stop = options.early_stop;
  return expert::collect_episode(instance, policy.controllers(), expert::NoiseConfig{}, seed, opt);
}

void write_affordance_ply(const std::string& path, const CloudMatrix& cloud, const std::vector<float>& scores) {
  if (scores.size() != static_cast<std::size_t>(cloud.rows())) fail(ErrorKind::Shape, "one score per point expected");
  percept::write_ply(path, cloud, &scores);
}

}  // namespace doorbench::policies
