#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <Eigen/Dense>

#include "doorbench/error.hpp"
#include "doorbench/nets.hpp"

using namespace doorbench;
using namespace doorbench::nets;

namespace {

TensorD random_tensor(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from(r, c, std::move(v));
}

/// Values bounded away from zero so elementwise kinks stay outside the FD stencil.
TensorD away_from_zero(int r, int c, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.05, 1.0);
  return TensorD::from(r, c, std::move(v));
}

/// Random linear functional of the output, so every output entry matters.
TensorD probe(const TensorD& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.rows(), y.cols(), rng)));
}

Eigen::Matrix3d as_matrix(const TensorD& m, int row) {
  Eigen::Matrix3d r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = m.at(row, 3 * i + j);
  return r;
}

}  // namespace

TEST_CASE("elementwise and structural ops pass gradient checks") {
  Rng rng(7);
  using F = std::function<TensorD(const std::vector<TensorD>&)>;
  const std::vector<std::pair<const char*, std::pair<F, std::vector<TensorD>>>> cases = {
      {"matmul", {[](const auto& x) { return probe(matmul(x[0], x[1]), 1); }, {random_tensor(4, 5, rng), random_tensor(5, 3, rng)}}},
      {"add_row", {[](const auto& x) { return probe(add_row(x[0], x[1]), 2); }, {random_tensor(4, 3, rng), random_tensor(1, 3, rng)}}},
      {"add", {[](const auto& x) { return probe(add(x[0], x[1]), 3); }, {random_tensor(3, 3, rng), random_tensor(3, 3, rng)}}},
      {"sub", {[](const auto& x) { return probe(sub(x[0], x[1]), 4); }, {random_tensor(3, 3, rng), random_tensor(3, 3, rng)}}},
      {"mul", {[](const auto& x) { return probe(mul(x[0], x[1]), 5); }, {random_tensor(3, 3, rng), random_tensor(3, 3, rng)}}},
      {"scale", {[](const auto& x) { return probe(scale(x[0], 2.5), 6); }, {random_tensor(3, 2, rng)}}},
      {"relu", {[](const auto& x) { return probe(relu(x[0]), 7); }, {away_from_zero(4, 4, rng)}}},
      {"tanh", {[](const auto& x) { return probe(tanh(x[0]), 8); }, {random_tensor(4, 4, rng, -2, 2)}}},
      {"sigmoid", {[](const auto& x) { return probe(sigmoid(x[0]), 9); }, {random_tensor(4, 4, rng, -4, 4)}}},
      {"exp", {[](const auto& x) { return probe(exp(x[0]), 10); }, {random_tensor(4, 4, rng)}}},
      {"abs", {[](const auto& x) { return probe(abs(x[0]), 11); }, {away_from_zero(4, 4, rng)}}},
      {"square", {[](const auto& x) { return probe(square(x[0]), 12); }, {random_tensor(4, 4, rng)}}},
      {"clamp", {[](const auto& x) { return probe(clamp(x[0], -0.5, 0.5), 13); }, {away_from_zero(4, 4, rng)}}},
      {"sum", {[](const auto& x) { return sum(x[0]); }, {random_tensor(4, 4, rng)}}},
      {"mean", {[](const auto& x) { return mean(x[0]); }, {random_tensor(4, 4, rng)}}},
      {"concat_cols", {[](const auto& x) { return probe(concat_cols<double>({x[0], x[1]}), 14); }, {random_tensor(3, 2, rng), random_tensor(3, 4, rng)}}},
      {"slice_cols", {[](const auto& x) { return probe(slice_cols(x[0], 1, 3), 15); }, {random_tensor(3, 5, rng)}}},
      {"repeat_rows", {[](const auto& x) { return probe(repeat_rows(x[0], 4), 16); }, {random_tensor(1, 5, rng)}}},
      {"max_rows", {[](const auto& x) { return probe(max_rows(x[0]), 17); }, {random_tensor(6, 4, rng)}}},
      {"rot6d_to_matrix", {[](const auto& x) { return probe(rot6d_to_matrix(x[0]), 18); }, {random_tensor(5, 6, rng)}}},
      {"kl_loss", {[](const auto& x) { return kl_loss(x[0], x[1]); }, {random_tensor(3, 4, rng, -2, 2), random_tensor(3, 4, rng, -2, 2)}}},
  };
  for (const auto& [name, c] : cases) {
    CAPTURE(name);
    const auto r = grad_check(c.first, c.second);
    CHECK(r.checked > 0);
    CHECK(r.nonsmooth == 0);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("linear map gradient is exact") {
  Rng rng(1);
  const auto r = grad_check([](const auto& x) { return sum(matmul(x[0], x[1])); }, {random_tensor(3, 4, rng), random_tensor(4, 2, rng)});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("tanh MLP gradient check") {
  Rng rng(2);
  auto mlp = make_mlp<double>({5, 8, 8, 3}, rng, Activation::Tanh);
  std::vector<TensorD> inputs = {random_tensor(4, 5, rng)};
  for (auto& l : mlp.layers) {
    inputs.push_back(l.weight);
    inputs.push_back(l.bias);
  }
  const auto f = [](const std::vector<TensorD>& x) {
    Mlp<double> m;
    m.hidden = Activation::Tanh;
    for (std::size_t i = 1; i + 1 < x.size(); i += 2) m.layers.push_back({x[i], x[i + 1]});
    return probe(m(x[0]), 3);
  };
  const auto r = grad_check(f, inputs);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("rot6d_to_matrix") {
  SUBCASE("identity and scale invariance") {
    for (const std::vector<double>& v : {std::vector<double>{1, 0, 0, 0, 1, 0}, std::vector<double>{2, 0, 0, 0, 3, 0}}) {
      const TensorD m = rot6d_to_matrix(TensorD::from(1, 6, v));
      CHECK((as_matrix(m, 0) - Eigen::Matrix3d::Identity()).norm() < 1e-15);
    }
  }
  SUBCASE("orthonormal with unit determinant") {
    Rng rng(3);
    const TensorD m = rot6d_to_matrix(random_tensor(1000, 6, rng));
    for (int i = 0; i < 1000; ++i) {
      const Eigen::Matrix3d r = as_matrix(m, i);
      CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-5);
      CHECK(std::abs(r.determinant() - 1.0) < 1e-5);
    }
  }
  SUBCASE("first column follows the first triple") {
    const TensorD m = rot6d_to_matrix(TensorD::from(1, 6, {0, 0, 5, 1, 0, 1}));
    CHECK(as_matrix(m, 0).col(0).isApprox(Eigen::Vector3d(0, 0, 1)));
    CHECK(as_matrix(m, 0).col(1).isApprox(Eigen::Vector3d(1, 0, 0)));
  }
  SUBCASE("degenerate input") {
    CHECK_THROWS_AS(rot6d_to_matrix(TensorD::from(1, 6, {1, 0, 0, 2, 0, 0})), Error);
    CHECK_THROWS_AS(rot6d_to_matrix(TensorD::from(1, 6, {0, 0, 0, 0, 1, 0})), Error);
    const double v[6] = {1, 0, 0, 1, 1e-9, 0};
    CHECK(rot6d_degenerate(v));
  }
}

TEST_CASE("kl_loss closed form") {
  CHECK(kl_loss(TensorD::zeros(1, 32), TensorD::zeros(1, 32)).item() == 0.0);
  std::vector<double> mu(32, 0.0);
  mu[0] = 1.0;
  CHECK(kl_loss(TensorD::from(1, 32, mu), TensorD::zeros(1, 32)).item() == doctest::Approx(0.5).epsilon(1e-15));
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double k = kl_loss(random_tensor(2, 32, rng, -3, 3), random_tensor(2, 32, rng, -20, 20)).item();
    CHECK(k >= -1e-6);
  }
  // Hand formula for a single dimension: 0.5 (mu^2 + e^lv - 1 - lv), clamped lv.
  const double expect = 0.5 * (0.25 + std::exp(10.0) - 1 - 10.0);
  CHECK(kl_loss(TensorD::from(1, 1, {0.5}), TensorD::from(1, 1, {30.0})).item() == doctest::Approx(expect));
}

TEST_CASE("point encoder symmetries") {
  Rng rng(5);
  auto enc = make_point_encoder<float>(rng);
  std::vector<float> pts(4096 * 3);
  for (auto& x : pts) x = static_cast<float>(rng.uniform(-1, 1));
  const TensorF cloud = TensorF::from(4096, 3, pts);
  const auto a = point_encode(cloud, enc);
  CHECK(a.per_point.rows() == 4096);
  CHECK(a.per_point.cols() == 128);
  CHECK(a.global.cols() == 128);

  SUBCASE("permutation") {
    std::vector<int> perm(4096);
    for (int i = 0; i < 4096; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    std::vector<float> q(pts.size());
    for (int i = 0; i < 4096; ++i) std::copy_n(&pts[3 * perm[i]], 3, &q[3 * i]);
    const auto b = point_encode(TensorF::from(4096, 3, q), enc);
    CHECK(b.global.values() == a.global.values());
    for (int i = 0; i < 4096; i += 97)
      for (int j = 0; j < 128; ++j) CHECK(b.per_point.at(i, j) == a.per_point.at(perm[i], j));
  }
  SUBCASE("duplicated multiset") {
    std::vector<float> half(pts.begin(), pts.begin() + 2048 * 3);
    std::vector<float> doubled = half;
    doubled.insert(doubled.end(), half.begin(), half.end());
    const auto h = enc.backbone(TensorF::from(2048, 3, half));
    const auto d = point_encode(TensorF::from(4096, 3, doubled), enc);
    CHECK(h.global.values() == d.global.values());
  }
  SUBCASE("zero weights") {
    auto z = enc;
    for (auto* l : {&z.shared.layers[0], &z.shared.layers[1], &z.head}) {
      l->weight = TensorF::zeros(l->in(), l->out());
      l->bias = TensorF::zeros(1, l->out());
    }
    const auto o = point_encode(cloud, z);
    CHECK(*std::max_element(o.per_point.values().begin(), o.per_point.values().end()) == 0.0f);
    CHECK(*std::max_element(o.global.values().begin(), o.global.values().end()) == 0.0f);
  }
  SUBCASE("point count is enforced") { CHECK_THROWS_AS(point_encode(TensorF::zeros(100, 3), enc), Error); }
  SUBCASE("deterministic") { CHECK(point_encode(cloud, enc).per_point.values() == a.per_point.values()); }
}

TEST_CASE("point encoder gradient check") {
  Rng rng(6);
  const auto enc = make_point_encoder<double>(rng);
  for (int attempt = 0; attempt < 5; ++attempt) {
    std::vector<TensorD> inputs = {random_tensor(16, 3, rng), enc.head.weight, enc.head.bias,
                                   enc.shared.layers[1].weight};
    const auto f = [&](const std::vector<TensorD>& x) {
      PointEncoder<double> e = enc;
      e.head = {x[1], x[2]};
      e.shared.layers[1].weight = x[3];
      const auto o = e(x[0]);
      return add(probe(o.per_point, 4), probe(o.global, 5));
    };
    const auto r = grad_check(f, inputs, 1e-4);
    if (r.nonsmooth > 0) continue;  // kink within the stencil; resample
    CHECK(r.max_rel_error < 1e-3);
    return;
  }
  FAIL("no smooth sample point found");
}

TEST_CASE("cvae loss") {
  Rng rng(8);
  auto cvae = make_cvae<double>(10, rng);
  const int n = 4;
  const TensorD cond = random_tensor(n, 10, rng);
  const TensorD eps = random_tensor(n, kLatentDim, rng);
  const TensorD gt_pos = random_tensor(n, 3, rng, -0.1, 0.1);
  const TensorD gt_rot = rot6d_to_matrix(random_tensor(n, 6, rng));

  SUBCASE("gradient check through the whole loss") {
    std::vector<TensorD> inputs = {cond, cvae.decoder.layers[2].weight, cvae.encoder.layers[2].weight,
                                   cvae.encoder.layers[2].bias};
    const auto f = [&](const std::vector<TensorD>& x) {
      Cvae<double> c = cvae;
      c.decoder.layers[2].weight = x[1];
      c.encoder.layers[2].weight = x[2];
      c.encoder.layers[2].bias = x[3];
      return cvae_loss(gt_pos, gt_rot, x[0], c, LossWeights{}, eps).total;
    };
    const auto r = grad_check(f, inputs, 1e-4);
    CHECK(r.max_rel_error < 1e-3);
  }
  SUBCASE("perfect decoder with a standard-normal posterior gives zero") {
    Cvae<double> c = cvae;
    auto& last = c.decoder.layers.back();
    last.weight = TensorD::zeros(last.in(), last.out());
    std::vector<double> b = {gt_pos.at(0, 0), gt_pos.at(0, 1), gt_pos.at(0, 2)};
    for (int r = 0; r < 3; ++r) b.push_back(gt_rot.at(0, 3 * r));
    for (int r = 0; r < 3; ++r) b.push_back(gt_rot.at(0, 3 * r + 1));
    last.bias = TensorD::from(1, 9, b);
    const TensorD one_pos = TensorD::from(1, 3, {b[0], b[1], b[2]});
    const TensorD one_rot = TensorD::from(1, 9, std::vector<double>(gt_rot.values().begin(), gt_rot.values().begin() + 9));
    const auto l = cvae_loss_from_posterior(one_pos, one_rot, TensorD::from(1, 10, std::vector<double>(cond.values().begin(), cond.values().begin() + 10)), c, LossWeights{},
                                            TensorD::zeros(1, kLatentDim), TensorD::zeros(1, kLatentDim),
                                            TensorD::zeros(1, kLatentDim));
    CHECK(l.total.item() < 1e-12);
  }
  SUBCASE("zero KL weight ignores the posterior") {
    LossWeights w{0.0, 1.0, 1.0};
    const TensorD mu0 = TensorD::zeros(n, kLatentDim);
    const TensorD lv0 = TensorD::zeros(n, kLatentDim);
    const TensorD mu1 = random_tensor(n, kLatentDim, rng);
    const TensorD lv1 = random_tensor(n, kLatentDim, rng);
    const TensorD zero_eps = TensorD::zeros(n, kLatentDim);
    // With eps = 0 the decoder sees mu, so pin mu equal and vary logvar only.
    const double a = cvae_loss_from_posterior(gt_pos, gt_rot, cond, cvae, w, mu1, lv0, zero_eps).total.item();
    const double b = cvae_loss_from_posterior(gt_pos, gt_rot, cond, cvae, w, mu1, lv1, zero_eps).total.item();
    CHECK(a == b);
    (void)mu0;
  }
  SUBCASE("position weight enters linearly") {
    const auto l1 = cvae_loss(gt_pos, gt_rot, cond, cvae, LossWeights{0.1, 1.0, 1.0}, eps);
    const auto l2 = cvae_loss(gt_pos, gt_rot, cond, cvae, LossWeights{0.1, 2.0, 1.0}, eps);
    CHECK(l2.total.item() - l1.total.item() == doctest::Approx(l1.pos.item()).epsilon(1e-12));
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(cvae_loss(gt_pos, gt_rot, random_tensor(n, 9, rng), cvae, LossWeights{}, eps), Error);
  }
}

TEST_CASE("Adam minimises a convex quadratic") {
  TensorF x = TensorF::from(1, 2, {3.0f, -2.0f}, true);
  const TensorF w = TensorF::from(1, 2, {1.0f, 4.0f});
  const auto objective = [&] { return sum(mul(w, square(x))); };
  const double f0 = objective().item();
  Adam opt({{"x", &x}}, 0.1);
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    objective().backward();
    opt.step();
  }
  CHECK(objective().item() <= 0.01 * f0);
}

TEST_CASE("checkpoint round trip and hash guard") {
  Rng rng(9);
  auto m = make_mlp<float>({4, 6, 2}, rng);
  ParamList<float> params;
  collect(params, "m", m);
  const auto path = (std::filesystem::temp_directory_path() / "doorbench_ck.dbck").string();
  save_checkpoint(path, {{"config_hash", "abc"}, {"seed", 9}}, params);

  Rng other(10);
  auto n = make_mlp<float>({4, 6, 2}, other);
  ParamList<float> loaded;
  collect(loaded, "m", n);
  const auto h = load_checkpoint(path, loaded, "abc");
  CHECK(h.at("seed") == 9);
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i].second->values() == loaded[i].second->values());
  try {
    load_checkpoint(path, loaded, "def");
    FAIL("expected compatibility error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Compatibility);
  }
  auto wrong = make_mlp<float>({4, 5, 2}, other);
  ParamList<float> wl;
  collect(wl, "m", wrong);
  CHECK_THROWS_AS(load_checkpoint(path, wl), Error);
  CHECK(read_checkpoint_header(path).at("config_hash") == "abc");
  std::filesystem::remove(path);
}
