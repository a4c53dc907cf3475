#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "doorbench/random.hpp"

namespace doorbench::nets {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over row-major matrices.

template <class T>
struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Disables graph recording on the current thread while alive. Inference
/// under a guard never touches parameter nodes, so it is re-entrant.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor from(int rows, int cols, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v) { return from(1, 1, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  /// Gradient buffer; empty until backward() reaches this tensor.
  const std::vector<T>& grad() const { return node_->grad; }
  T& at(int r, int c) { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  T at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  T item() const;
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }
  /// Seeds d(self)/d(self) = 1 and propagates; self must be 1x1.
  void backward() const;
  /// Same values, no graph linkage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a[n x c] + bias[1 x c], broadcast over rows.
template <class T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias);
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
template <class T> Tensor<T> relu(const Tensor<T>& a);
template <class T> Tensor<T> tanh(const Tensor<T>& a);
template <class T> Tensor<T> sigmoid(const Tensor<T>& a);
template <class T> Tensor<T> exp(const Tensor<T>& a);
template <class T> Tensor<T> abs(const Tensor<T>& a);
template <class T> Tensor<T> square(const Tensor<T>& a);
/// Elementwise clamp; the gradient is zero where the clamp is active.
template <class T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);
template <class T> Tensor<T> sum(const Tensor<T>& a);
template <class T> Tensor<T> mean(const Tensor<T>& a);
template <class T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <class T> Tensor<T> slice_cols(const Tensor<T>& a, int begin, int count);
/// [1 x c] -> [n x c]
template <class T> Tensor<T> repeat_rows(const Tensor<T>& a, int n);
/// Column-wise max over rows: [n x c] -> [1 x c]; ties resolve to the first row.
template <class T> Tensor<T> max_rows(const Tensor<T>& a);
/// Rows of 6 -> rows of 9 (row-major 3x3, columns a1 a2 a3 by Gram-Schmidt).
template <class T> Tensor<T> rot6d_to_matrix(const Tensor<T>& v);
/// Batch mean of -1/2 sum(1 + lv - mu^2 - exp(lv)) with lv clamped to [-10, 10].
template <class T> Tensor<T> kl_loss(const Tensor<T>& mu, const Tensor<T>& logvar);

template <class T> Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) { return mean(abs(sub(pred, target))); }
template <class T> Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) { return mean(square(sub(pred, target))); }

/// True when v cannot be orthonormalised (zero first triple or parallel triples).
bool rot6d_degenerate(const float* v, double tol = 1e-6);
bool rot6d_degenerate(const double* v, double tol = 1e-6);

// ---------------------------------------------------------------------------
// Layers

enum class Activation { Relu, Tanh, None };

template <class T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [1 x out]

  int in() const { return weight.rows(); }
  int out() const { return weight.cols(); }
  Tensor<T> operator()(const Tensor<T>& x) const { return add_row(matmul(x, weight), bias); }
};

template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Activation hidden = Activation::Relu;
  Activation last = Activation::None;

  Tensor<T> operator()(const Tensor<T>& x) const;
  int in() const { return layers.front().in(); }
  int out() const { return layers.back().out(); }
};

template <class T>
Linear<T> make_linear(int in, int out, Rng& rng, Activation act = Activation::Relu);
/// sizes = {in, h1, ..., out}
template <class T>
Mlp<T> make_mlp(const std::vector<int>& sizes, Rng& rng, Activation hidden = Activation::Relu,
                Activation last = Activation::None);

/// Named parameter list, the unit of optimisation and serialisation.
template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>*>>;

template <class T> void collect(ParamList<T>& out, const std::string& prefix, Linear<T>& l);
template <class T> void collect(ParamList<T>& out, const std::string& prefix, Mlp<T>& m);

/// Element-type conversion preserving structure (used for double-precision checks).
template <class To, class From> Tensor<To> cast(const Tensor<From>& t, bool requires_grad);
template <class To, class From> Linear<To> cast(const Linear<From>& l);
template <class To, class From> Mlp<To> cast(const Mlp<From>& m);

// ---------------------------------------------------------------------------
// Point encoder: shared per-point MLP 3 -> 64 -> 128, max-pool, per-point head.

inline constexpr int kFeatureDim = 128;

template <class T>
struct PointEncoder {
  Mlp<T> shared;   // 3 -> 64 -> 128, ReLU on both layers
  Linear<T> head;  // 256 -> 128, ReLU

  struct Output {
    Tensor<T> per_point;  // [n x 128]
    Tensor<T> global;     // [1 x 128]
  };

  /// Pre-pool features and their max over points, without the head.
  Output backbone(const Tensor<T>& cloud) const;
  /// Head over precomputed local rows and one global row.
  Tensor<T> apply_head(const Tensor<T>& local, const Tensor<T>& global) const;
  Output operator()(const Tensor<T>& cloud) const;
};

template <class T>
PointEncoder<T> make_point_encoder(Rng& rng);

/// Full encoder on an observation-sized cloud; rejects other point counts.
template <class T>
typename PointEncoder<T>::Output point_encode(const Tensor<T>& cloud, const PointEncoder<T>& params,
                                              int expected_points = 4096);

// ---------------------------------------------------------------------------
// Conditional VAE over 9-d actions (position 3 + rotation 6D).

inline constexpr int kActionDim = 9;
inline constexpr int kLatentDim = 32;

struct LossWeights {
  double kl = 0.1;
  double pos = 1.0;
  double rot = 1.0;

  void validate() const;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

template <class T>
struct Cvae {
  Mlp<T> encoder;  // 9 + cond -> 128 -> 128 -> 2 * latent
  Mlp<T> decoder;  // latent + cond -> 128 -> 128 -> 9
  int cond_dim = 0;
  /// Decoded position = raw * pos_scale + pos_offset (per axis).
  std::vector<double> pos_offset = {0, 0, 0};
  std::vector<double> pos_scale = {1, 1, 1};

  std::pair<Tensor<T>, Tensor<T>> encode(const Tensor<T>& action9, const Tensor<T>& cond) const;
  Tensor<T> decode(const Tensor<T>& z, const Tensor<T>& cond) const;
  /// Raw decoder output position columns to metres, and back.
  Tensor<T> position(const Tensor<T>& raw9) const;
  Tensor<T> encode_position(const Tensor<T>& pos_m) const;
};

template <class T>
Cvae<T> make_cvae(int cond_dim, Rng& rng);

template <class T>
struct CvaeLoss {
  Tensor<T> total;
  Tensor<T> kl;
  Tensor<T> pos;
  Tensor<T> rot;
};

/// gt_pos [n x 3] metres, gt_rot [n x 9] row-major matrices, eps [n x latent].
template <class T>
CvaeLoss<T> cvae_loss(const Tensor<T>& gt_pos, const Tensor<T>& gt_rot, const Tensor<T>& cond,
                      const Cvae<T>& params, const LossWeights& w, const Tensor<T>& eps);

/// Decoder-path loss given explicit posterior statistics (used by tests that
/// pin mu and logvar).
template <class T>
CvaeLoss<T> cvae_loss_from_posterior(const Tensor<T>& gt_pos, const Tensor<T>& gt_rot, const Tensor<T>& cond,
                                     const Cvae<T>& params, const LossWeights& w, const Tensor<T>& mu,
                                     const Tensor<T>& logvar, const Tensor<T>& eps);

// ---------------------------------------------------------------------------
// Optimiser

class Adam {
 public:
  explicit Adam(ParamList<float> params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void zero_grad();
  void step();
  std::uint64_t steps() const { return t_; }

 private:
  ParamList<float> params_;
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Gradient checking in double precision.

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int nonsmooth = 0;  // coordinates skipped because f has a kink within eps
};

/// Compares reverse-mode gradients of a scalar f with central differences on
/// up to `max_coords` randomly chosen coordinates per input. Relative error
/// is |a - n| / max(|a|, |n|, floor) with floor = 1e-3 * max |n| over the input.
GradCheckResult grad_check(const std::function<TensorD(const std::vector<TensorD>&)>& f,
                           std::vector<TensorD> inputs, double eps = 1e-3, int max_coords = 64,
                           std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Checkpoints: "DBCK" magic, u32 version, u64 header length, JSON header,
// then float32 little-endian parameter blob in header order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const nlohmann::json& header, const ParamList<float>& params);
/// Loads into preallocated parameters; shapes and names must match. When
/// `expected_config_hash` is non-empty the header hash must equal it.
nlohmann::json load_checkpoint(const std::string& path, const ParamList<float>& params,
                               const std::string& expected_config_hash = "");
/// Header only.
nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace doorbench::nets
