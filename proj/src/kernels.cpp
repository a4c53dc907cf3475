#include "doorbench/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <omp.h>

#include "doorbench/error.hpp"

namespace doorbench::kernels {

namespace {

// Work below this many multiply-adds stays on the calling thread.
constexpr long kParallelThreshold = 1L << 15;

template <typename T>
void matmul_impl(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  const bool par = static_cast<long>(m) * k * n >= kParallelThreshold && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<long>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    const T* ai = a + static_cast<long>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + static_cast<long>(p) * n;
#pragma omp simd
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
void matmul_at_impl(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  const bool par = static_cast<long>(m) * k * n >= kParallelThreshold && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<long>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<long>(p) * m + i];
      if (av == T(0)) continue;
      const T* bp = b + static_cast<long>(p) * n;
#pragma omp simd
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
void matmul_bt_impl(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  const bool par = static_cast<long>(m) * k * n >= kParallelThreshold && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<long>(i) * k;
    T* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<long>(j) * k;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

}  // namespace

void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool acc) { matmul_impl(a, b, c, m, k, n, acc); }
void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool acc) { matmul_impl(a, b, c, m, k, n, acc); }
void matmul_at(const float* a, const float* b, float* c, int m, int k, int n, bool acc) { matmul_at_impl(a, b, c, m, k, n, acc); }
void matmul_at(const double* a, const double* b, double* c, int m, int k, int n, bool acc) { matmul_at_impl(a, b, c, m, k, n, acc); }
void matmul_bt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) { matmul_bt_impl(a, b, c, m, k, n, acc); }
void matmul_bt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) { matmul_bt_impl(a, b, c, m, k, n, acc); }

// ---------------------------------------------------------------------------
// Farthest-point sampling over kd leaves. A leaf is skipped when the new
// centre cannot be nearer to its box than the leaf's current largest
// min-distance, so only leaves near the new centre are touched.

namespace {

constexpr int kLeafSize = 48;

struct Leaf {
  int begin = 0;
  int end = 0;
  float lo[3];
  float hi[3];
  float best = 0.0f;   // largest min-distance in the leaf
  int best_idx = -1;   // its lowest original index
};

void build_leaves(const std::vector<float>& xyz, std::vector<int>& order, int begin, int end,
                  std::vector<Leaf>& leaves) {
  float lo[3] = {std::numeric_limits<float>::max(), std::numeric_limits<float>::max(),
                 std::numeric_limits<float>::max()};
  float hi[3] = {std::numeric_limits<float>::lowest(), std::numeric_limits<float>::lowest(),
                 std::numeric_limits<float>::lowest()};
  for (int i = begin; i < end; ++i) {
    const float* p = &xyz[3 * static_cast<std::size_t>(order[i])];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  if (end - begin <= kLeafSize) {
    Leaf l;
    l.begin = begin;
    l.end = end;
    std::copy(lo, lo + 3, l.lo);
    std::copy(hi, hi + 3, l.hi);
    leaves.push_back(l);
    return;
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end, [&](int x, int y) {
    const float vx = xyz[3 * static_cast<std::size_t>(x) + axis];
    const float vy = xyz[3 * static_cast<std::size_t>(y) + axis];
    return vx < vy || (vx == vy && x < y);
  });
  build_leaves(xyz, order, begin, mid, leaves);
  build_leaves(xyz, order, mid, end, leaves);
}

inline float sq_dist(const float* a, const float* b) {
  const float dx = a[0] - b[0];
  const float dy = a[1] - b[1];
  const float dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

inline float box_sq_dist(const Leaf& l, const float* q) {
  float s = 0.0f;
  for (int a = 0; a < 3; ++a) {
    float g = 0.0f;
    if (q[a] < l.lo[a]) g = l.lo[a] - q[a];
    else if (q[a] > l.hi[a]) g = q[a] - l.hi[a];
    s += g * g;
  }
  return s;
}

void check_fps_args(const std::vector<float>& xyz, int count, int start) {
  const auto n = static_cast<int>(xyz.size() / 3);
  if (xyz.size() % 3 != 0) fail(ErrorKind::Shape, "point buffer is not a multiple of 3");
  if (n == 0) fail(ErrorKind::EmptyObservation, "no points to sample");
  if (count < 0 || count > n) fail(ErrorKind::InvalidArgument, "sample count out of range");
  if (start < 0 || start >= n) fail(ErrorKind::InvalidArgument, "start index out of range");
}

}  // namespace

std::vector<int> farthest_point_sample(const std::vector<float>& xyz, int count, int start) {
  check_fps_args(xyz, count, start);
  const auto n = static_cast<int>(xyz.size() / 3);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  if (count == 0) return out;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<Leaf> leaves;
  build_leaves(xyz, order, 0, n, leaves);
  std::vector<float> mind(static_cast<std::size_t>(n), std::numeric_limits<float>::infinity());
  for (auto& l : leaves) {
    l.best = std::numeric_limits<float>::infinity();
    l.best_idx = *std::min_element(order.begin() + l.begin, order.begin() + l.end);
  }
  const auto nl = static_cast<int>(leaves.size());

  int cur = start;
  for (int s = 0; s < count; ++s) {
    out.push_back(cur);
    const float* q = &xyz[3 * static_cast<std::size_t>(cur)];
#pragma omp parallel for schedule(dynamic, 8) if (n > 20000)
    for (int li = 0; li < nl; ++li) {
      Leaf& l = leaves[static_cast<std::size_t>(li)];
      if (box_sq_dist(l, q) > l.best * (1.0f + 1e-5f) + 1e-12f) continue;
      float best = -1.0f;
      int best_idx = -1;
      for (int i = l.begin; i < l.end; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        float& m = mind[static_cast<std::size_t>(idx)];
        const float d = sq_dist(&xyz[3 * static_cast<std::size_t>(idx)], q);
        if (d < m) m = d;
        if (m > best || (m == best && idx < best_idx)) {
          best = m;
          best_idx = idx;
        }
      }
      l.best = best;
      l.best_idx = best_idx;
    }
    float best = -1.0f;
    int best_idx = -1;
    for (const auto& l : leaves) {
      if (l.best > best || (l.best == best && l.best_idx < best_idx)) {
        best = l.best;
        best_idx = l.best_idx;
      }
    }
    cur = best_idx;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raycasting with per-solid screen-rectangle culling.

namespace {

struct Rect {
  int u0, u1, v0, v1;  // inclusive
};

Rect screen_rect(const RayGrid& g, const Solid& s) {
  const Mat3 w2c = g.camera_to_world.transpose();
  double u0 = std::numeric_limits<double>::infinity(), u1 = -u0, v0 = u0, v1 = -u0;
  for (const Vec3& corner : bounding_corners(s)) {
    const Vec3 c = w2c * (corner - g.origin);
    if (c.z() <= 1e-6) return {0, g.width - 1, 0, g.height - 1};
    const double u = g.fx * c.x() / c.z() + g.cx;
    const double v = g.fy * c.y() / c.z() + g.cy;
    u0 = std::min(u0, u);
    u1 = std::max(u1, u);
    v0 = std::min(v0, v);
    v1 = std::max(v1, v);
  }
  auto lo = [](double x, int lim) { return std::clamp(static_cast<int>(std::floor(x)) - 1, 0, lim); };
  auto hi = [](double x, int lim) { return std::clamp(static_cast<int>(std::ceil(x)) + 1, -1, lim); };
  Rect r{lo(u0, g.width), hi(u1, g.width - 1), lo(v0, g.height), hi(v1, g.height - 1)};
  return r;
}

inline Ray pixel_ray(const RayGrid& g, int u, int v, double& inv_norm) {
  const Vec3 d((u - g.cx) / g.fx, (v - g.cy) / g.fy, 1.0);
  const double norm = d.norm();
  inv_norm = 1.0 / norm;
  return Ray{g.origin, g.camera_to_world * (d / norm)};
}

}  // namespace

std::vector<float> raycast(const RayGrid& g, const std::vector<Solid>& solids) {
  std::vector<float> depth(static_cast<std::size_t>(g.width) * g.height, std::numeric_limits<float>::infinity());
  std::vector<Rect> rects;
  rects.reserve(solids.size());
  for (const auto& s : solids) rects.push_back(screen_rect(g, s));

#pragma omp parallel for schedule(dynamic, 4)
  for (int v = 0; v < g.height; ++v) {
    std::vector<int> active;
    for (std::size_t i = 0; i < solids.size(); ++i)
      if (rects[i].v0 <= v && v <= rects[i].v1 && rects[i].u0 <= rects[i].u1) active.push_back(static_cast<int>(i));
    if (active.empty()) continue;
    for (int u = 0; u < g.width; ++u) {
      double inv_norm = 0.0;
      Ray ray;
      bool made = false;
      double best = std::numeric_limits<double>::infinity();
      for (int i : active) {
        const Rect& r = rects[static_cast<std::size_t>(i)];
        if (u < r.u0 || u > r.u1) continue;
        if (!made) {
          ray = pixel_ray(g, u, v, inv_norm);
          made = true;
        }
        const auto t = intersect(ray, solids[static_cast<std::size_t>(i)]);
        if (t && *t < best) best = *t;
      }
      const double z = best * inv_norm;
      if (made && std::isfinite(best) && z <= g.far)
        depth[static_cast<std::size_t>(v) * g.width + u] = static_cast<float>(z);
    }
  }
  return depth;
}

// ---------------------------------------------------------------------------
// k nearest neighbours over the same kd leaves, visited nearest box first.

namespace {

void check_knn_args(const std::vector<float>& xyz, const std::vector<float>& queries, int k) {
  if (xyz.size() % 3 != 0 || queries.size() % 3 != 0) fail(ErrorKind::Shape, "point buffer is not a multiple of 3");
  if (k <= 0 || static_cast<std::size_t>(k) > xyz.size() / 3)
    fail(ErrorKind::InvalidArgument, "neighbour count out of range");
}

using Hit = std::pair<float, int>;

}  // namespace

std::vector<int> knn(const std::vector<float>& xyz, const std::vector<float>& queries, int k) {
  check_knn_args(xyz, queries, k);
  const auto n = static_cast<int>(xyz.size() / 3);
  const auto m = static_cast<int>(queries.size() / 3);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<Leaf> leaves;
  build_leaves(xyz, order, 0, n, leaves);
  std::vector<int> out(static_cast<std::size_t>(m) * k);
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n > kParallelThreshold)
  for (int qi = 0; qi < m; ++qi) {
    const float* q = &queries[3 * static_cast<std::size_t>(qi)];
    std::vector<std::pair<float, int>> boxes(leaves.size());
    for (std::size_t l = 0; l < leaves.size(); ++l) boxes[l] = {box_sq_dist(leaves[l], q), static_cast<int>(l)};
    std::sort(boxes.begin(), boxes.end());
    std::vector<Hit> best;  // sorted, at most k
    best.reserve(static_cast<std::size_t>(k) + 1);
    for (const auto& [bd, li] : boxes) {
      if (static_cast<int>(best.size()) == k && bd > best.back().first * (1.0f + 1e-5f) + 1e-12f) break;
      const Leaf& leaf = leaves[static_cast<std::size_t>(li)];
      for (int i = leaf.begin; i < leaf.end; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        const Hit h{sq_dist(&xyz[3 * static_cast<std::size_t>(idx)], q), idx};
        if (static_cast<int>(best.size()) == k && !(h < best.back())) continue;
        best.insert(std::upper_bound(best.begin(), best.end(), h), h);
        if (static_cast<int>(best.size()) > k) best.pop_back();
      }
    }
    for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(qi) * k + j] = best[static_cast<std::size_t>(j)].second;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace reference {

template <typename T>
void matmul_ref(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int p = 0; p < k; ++p) s += a[static_cast<long>(i) * k + p] * b[static_cast<long>(p) * n + j];
      c[static_cast<long>(i) * n + j] = accumulate ? c[static_cast<long>(i) * n + j] + s : s;
    }
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool acc) { matmul_ref(a, b, c, m, k, n, acc); }
void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool acc) { matmul_ref(a, b, c, m, k, n, acc); }

std::vector<int> farthest_point_sample(const std::vector<float>& xyz, int count, int start) {
  check_fps_args(xyz, count, start);
  const auto n = static_cast<int>(xyz.size() / 3);
  std::vector<float> mind(static_cast<std::size_t>(n), std::numeric_limits<float>::infinity());
  std::vector<int> out;
  int cur = start;
  for (int s = 0; s < count; ++s) {
    out.push_back(cur);
    const float* q = &xyz[3 * static_cast<std::size_t>(cur)];
    float best = -1.0f;
    int best_idx = -1;
    for (int i = 0; i < n; ++i) {
      const float d = sq_dist(&xyz[3 * static_cast<std::size_t>(i)], q);
      if (d < mind[static_cast<std::size_t>(i)]) mind[static_cast<std::size_t>(i)] = d;
      if (mind[static_cast<std::size_t>(i)] > best) {
        best = mind[static_cast<std::size_t>(i)];
        best_idx = i;
      }
    }
    cur = best_idx;
  }
  return out;
}

std::vector<int> knn(const std::vector<float>& xyz, const std::vector<float>& queries, int k) {
  check_knn_args(xyz, queries, k);
  const auto n = static_cast<int>(xyz.size() / 3);
  const auto m = static_cast<int>(queries.size() / 3);
  std::vector<int> out;
  for (int qi = 0; qi < m; ++qi) {
    std::vector<Hit> all;
    for (int i = 0; i < n; ++i) all.push_back({sq_dist(&xyz[3 * static_cast<std::size_t>(i)], &queries[3 * static_cast<std::size_t>(qi)]), i});
    std::sort(all.begin(), all.end());
    for (int j = 0; j < k; ++j) out.push_back(all[static_cast<std::size_t>(j)].second);
  }
  return out;
}

std::vector<float> raycast(const RayGrid& g, const std::vector<Solid>& solids) {
  std::vector<float> depth(static_cast<std::size_t>(g.width) * g.height, std::numeric_limits<float>::infinity());
  for (int v = 0; v < g.height; ++v)
    for (int u = 0; u < g.width; ++u) {
      double inv_norm = 0.0;
      const Ray ray = pixel_ray(g, u, v, inv_norm);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& s : solids) {
        const auto t = intersect(ray, s);
        if (t && *t < best) best = *t;
      }
      const double z = best * inv_norm;
      if (std::isfinite(best) && z <= g.far) depth[static_cast<std::size_t>(v) * g.width + u] = static_cast<float>(z);
    }
  return depth;
}

}  // namespace reference

}  // namespace doorbench::kernels
