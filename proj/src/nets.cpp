#include "doorbench/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "doorbench/error.hpp"
#include "doorbench/kernels.hpp"

namespace doorbench::nets {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
NodePtr<T> make_node(int rows, int cols, std::vector<NodePtr<T>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<std::size_t>(rows) * cols, T(0));
  if (g_grad_enabled)
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorKind::Shape, std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                               std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                               std::to_string(b.cols()));
}

template <class T>
bool wants(const NodePtr<T>& p) {
  if (!p->requires_grad) return false;
  p->ensure_grad();
  return true;
}

template <class T, class F>
Tensor<T> unary(const Tensor<T>& a, F&& f) {
  auto n = make_node<T>(a.rows(), a.cols(), {a.node()});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = f(a.values()[i]);
  return Tensor<T>(n);
}

template <class T>
Tensor<T> constant_rows(int n, const std::vector<double>& row) {
  std::vector<T> v;
  v.reserve(static_cast<std::size_t>(n) * row.size());
  for (int i = 0; i < n; ++i)
    for (double x : row) v.push_back(static_cast<T>(x));
  return Tensor<T>::from(n, static_cast<int>(row.size()), std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <class T>
Tensor<T> Tensor<T>::zeros(int rows, int cols, bool requires_grad) {
  auto n = make_node<T>(rows, cols, {});
  n->requires_grad = requires_grad;
  return Tensor(n);
}

template <class T>
Tensor<T> Tensor<T>::from(int rows, int cols, std::vector<T> values, bool requires_grad) {
  if (values.size() != static_cast<std::size_t>(rows) * cols)
    fail(ErrorKind::Shape, "tensor value count does not match its shape");
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

template <class T>
T Tensor<T>::item() const {
  if (size() != 1) fail(ErrorKind::Shape, "item() needs a 1x1 tensor");
  return node_->value[0];
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return from(rows(), cols(), node_->value, false);
}

template <class T>
void Tensor<T>::backward() const {
  if (size() != 1) fail(ErrorKind::Shape, "backward() needs a scalar");
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward && !(*it)->grad.empty()) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// Ops

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    fail(ErrorKind::Shape, "matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node<T>(m, n, {a.node(), b.node()});
  kernels::matmul(a.data(), b.data(), out->value.data(), m, k, n);
  if (out->requires_grad)
    out->backward = [m, k, n](Node<T>& self) {
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      if (wants(pa)) kernels::matmul_bt(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k, true);
      if (wants(pb)) kernels::matmul_at(pa->value.data(), self.grad.data(), pb->grad.data(), k, m, n, true);
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) fail(ErrorKind::Shape, "add_row: bias must be 1 x cols");
  const int r = a.rows(), c = a.cols();
  auto out = make_node<T>(r, c, {a.node(), bias.node()});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out->value[static_cast<std::size_t>(i) * c + j] = a.data()[static_cast<std::size_t>(i) * c + j] + bias.data()[j];
  if (out->requires_grad)
    out->backward = [r, c](Node<T>& self) {
      if (wants(self.parents[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i];
      if (wants(self.parents[1]))
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) self.parents[1]->grad[j] += self.grad[static_cast<std::size_t>(i) * c + j];
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto out = make_node<T>(a.rows(), a.cols(), {a.node(), b.node()});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.values()[i] + b.values()[i];
  if (out->requires_grad)
    out->backward = [](Node<T>& self) {
      for (int p = 0; p < 2; ++p)
        if (wants(self.parents[p]))
          for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[p]->grad[i] += self.grad[i];
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto out = make_node<T>(a.rows(), a.cols(), {a.node(), b.node()});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.values()[i] - b.values()[i];
  if (out->requires_grad)
    out->backward = [](Node<T>& self) {
      if (wants(self.parents[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i];
      if (wants(self.parents[1]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[1]->grad[i] -= self.grad[i];
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = make_node<T>(a.rows(), a.cols(), {a.node(), b.node()});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.values()[i] * b.values()[i];
  if (out->requires_grad)
    out->backward = [](Node<T>& self) {
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      if (wants(pa))
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
      if (wants(pb))
        for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = unary(a, [s](T x) { return s * x; });
  if (out.requires_grad())
    out.node()->backward = [s](Node<T>& self) {
      if (wants(self.parents[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += s * self.grad[i];
    };
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = unary(a, [](T x) { return x > T(0) ? x : T(0); });
  if (out.requires_grad())
    out.node()->backward = [](Node<T>& self) {
      const auto& p = self.parents[0];
      if (wants(p))
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (p->value[i] > T(0)) p->grad[i] += self.grad[i];
    };
  return out;
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  Tensor<T> out = unary(a, [](T x) { return std::tanh(x); });
  if (out.requires_grad())
    out.node()->backward = [](Node<T>& self) {
      if (wants(self.parents[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          self.parents[0]->grad[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
    };
  return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out = unary(a, [](T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  });
  if (out.requires_grad())
    out.node()->backward = [](Node<T>& self) {
      if (wants(self.parents[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          self.parents[0]->grad[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
    };
  return out;
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  Tensor<T> out = unary(a, [](T x) { return std::exp(x); });
  if (out.requires_grad())
    out.node()->backward = [](Node<T>& self) {
      if (wants(self.parents[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i] * self.value[i];
    };
  return out;
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  Tensor<T> out = unary(a, [](T x) { return std::abs(x); });
  if (out.requires_grad())
    out.node()->backward = [](Node<T>& self) {
      const auto& p = self.parents[0];
      if (wants(p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T x = p->value[i];
          p->grad[i] += x > T(0) ? self.grad[i] : (x < T(0) ? -self.grad[i] : T(0));
        }
    };
  return out;
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  Tensor<T> out = unary(a, [](T x) { return x * x; });
  if (out.requires_grad())
    out.node()->backward = [](Node<T>& self) {
      const auto& p = self.parents[0];
      if (wants(p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += T(2) * p->value[i] * self.grad[i];
    };
  return out;
}

template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  Tensor<T> out = unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); });
  if (out.requires_grad())
    out.node()->backward = [lo, hi](Node<T>& self) {
      const auto& p = self.parents[0];
      if (wants(p))
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (p->value[i] > lo && p->value[i] < hi) p->grad[i] += self.grad[i];
    };
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = make_node<T>(1, 1, {a.node()});
  T s = 0;
  for (T x : a.values()) s += x;
  out->value[0] = s;
  if (out->requires_grad)
    out->backward = [](Node<T>& self) {
      if (wants(self.parents[0]))
        for (auto& g : self.parents[0]->grad) g += self.grad[0];
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) fail(ErrorKind::Shape, "mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat_cols: no inputs");
  const int r = parts.front().rows();
  int c = 0;
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    if (p.rows() != r) fail(ErrorKind::Shape, "concat_cols: row counts differ");
    c += p.cols();
    nodes.push_back(p.node());
  }
  auto out = make_node<T>(r, c, nodes);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int pc = p.cols();
    for (int i = 0; i < r; ++i)
      std::copy_n(p.data() + static_cast<std::size_t>(i) * pc, pc, out->value.data() + static_cast<std::size_t>(i) * c + off);
    off += pc;
  }
  if (out->requires_grad)
    out->backward = [r, c, offsets](Node<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const auto& p = self.parents[k];
        if (!wants(p)) continue;
        const int pc = p->cols;
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < pc; ++j)
            p->grad[static_cast<std::size_t>(i) * pc + j] += self.grad[static_cast<std::size_t>(i) * c + offsets[k] + j];
      }
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > a.cols()) fail(ErrorKind::Shape, "slice_cols: range out of bounds");
  const int r = a.rows(), c = a.cols();
  auto out = make_node<T>(r, count, {a.node()});
  for (int i = 0; i < r; ++i)
    std::copy_n(a.data() + static_cast<std::size_t>(i) * c + begin, count, out->value.data() + static_cast<std::size_t>(i) * count);
  if (out->requires_grad)
    out->backward = [r, c, begin, count](Node<T>& self) {
      const auto& p = self.parents[0];
      if (wants(p))
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < count; ++j)
            p->grad[static_cast<std::size_t>(i) * c + begin + j] += self.grad[static_cast<std::size_t>(i) * count + j];
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> repeat_rows(const Tensor<T>& a, int n) {
  if (a.rows() != 1 || n <= 0) fail(ErrorKind::Shape, "repeat_rows: needs a single row and n > 0");
  const int c = a.cols();
  auto out = make_node<T>(n, c, {a.node()});
  for (int i = 0; i < n; ++i) std::copy_n(a.data(), c, out->value.data() + static_cast<std::size_t>(i) * c);
  if (out->requires_grad)
    out->backward = [n, c](Node<T>& self) {
      const auto& p = self.parents[0];
      if (wants(p))
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j) p->grad[j] += self.grad[static_cast<std::size_t>(i) * c + j];
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> max_rows(const Tensor<T>& a) {
  if (a.rows() == 0) fail(ErrorKind::Shape, "max_rows of an empty tensor");
  const int r = a.rows(), c = a.cols();
  auto out = make_node<T>(1, c, {a.node()});
  std::vector<int> arg(static_cast<std::size_t>(c), 0);
  for (int j = 0; j < c; ++j) out->value[j] = a.data()[j];
  for (int i = 1; i < r; ++i) {
    const T* row = a.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j)
      if (row[j] > out->value[j]) {
        out->value[j] = row[j];
        arg[j] = i;
      }
  }
  if (out->requires_grad)
    out->backward = [c, arg = std::move(arg)](Node<T>& self) {
      const auto& p = self.parents[0];
      if (wants(p))
        for (int j = 0; j < c; ++j) p->grad[static_cast<std::size_t>(arg[j]) * c + j] += self.grad[j];
    };
  return Tensor<T>(out);
}

namespace {

template <class T>
bool degenerate6(const T* v, double tol) {
  const double n1 = std::sqrt(double(v[0]) * v[0] + double(v[1]) * v[1] + double(v[2]) * v[2]);
  if (!(n1 > tol)) return true;
  const double a[3] = {v[0] / n1, v[1] / n1, v[2] / n1};
  const double d = a[0] * v[3] + a[1] * v[4] + a[2] * v[5];
  double u[3] = {v[3] - d * a[0], v[4] - d * a[1], v[5] - d * a[2]};
  const double n2 = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  const double nv2 = std::sqrt(double(v[3]) * v[3] + double(v[4]) * v[4] + double(v[5]) * v[5]);
  return !(n2 > tol) || !(n2 > tol * nv2);
}

template <class T>
void cross3(const T* a, const T* b, T* out) {
  out[0] = a[1] * b[2] - a[2] * b[1];
  out[1] = a[2] * b[0] - a[0] * b[2];
  out[2] = a[0] * b[1] - a[1] * b[0];
}

template <class T>
T dot3(const T* a, const T* b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

}  // namespace

bool rot6d_degenerate(const float* v, double tol) { return degenerate6(v, tol); }
bool rot6d_degenerate(const double* v, double tol) { return degenerate6(v, tol); }

template <class T>
Tensor<T> rot6d_to_matrix(const Tensor<T>& v) {
  if (v.cols() != 6) fail(ErrorKind::Shape, "rot6d_to_matrix: rows must have 6 entries");
  const int n = v.rows();
  auto out = make_node<T>(n, 9, {v.node()});
  for (int i = 0; i < n; ++i) {
    const T* x = v.data() + static_cast<std::size_t>(i) * 6;
    if (degenerate6(x, 1e-6)) fail(ErrorKind::Degeneracy, "rot6d_to_matrix: degenerate 6D input in row " + std::to_string(i));
    T a1[3], a2[3], a3[3];
    const T n1 = std::sqrt(dot3(x, x));
    for (int k = 0; k < 3; ++k) a1[k] = x[k] / n1;
    const T d = dot3(a1, x + 3);
    T u[3];
    for (int k = 0; k < 3; ++k) u[k] = x[3 + k] - d * a1[k];
    const T n2 = std::sqrt(dot3(u, u));
    for (int k = 0; k < 3; ++k) a2[k] = u[k] / n2;
    cross3(a1, a2, a3);
    T* m = out->value.data() + static_cast<std::size_t>(i) * 9;
    for (int r = 0; r < 3; ++r) {
      m[3 * r + 0] = a1[r];
      m[3 * r + 1] = a2[r];
      m[3 * r + 2] = a3[r];
    }
  }
  if (out->requires_grad)
    out->backward = [n](Node<T>& self) {
      const auto& p = self.parents[0];
      if (!wants(p)) return;
      for (int i = 0; i < n; ++i) {
        const T* x = p->value.data() + static_cast<std::size_t>(i) * 6;
        const T* m = self.value.data() + static_cast<std::size_t>(i) * 9;
        const T* g = self.grad.data() + static_cast<std::size_t>(i) * 9;
        T a1[3], a2[3], g1[3], g2[3], g3[3];
        for (int r = 0; r < 3; ++r) {
          a1[r] = m[3 * r];
          a2[r] = m[3 * r + 1];
          g1[r] = g[3 * r];
          g2[r] = g[3 * r + 1];
          g3[r] = g[3 * r + 2];
        }
        // a3 = a1 x a2
        T t[3];
        cross3(a2, g3, t);
        for (int k = 0; k < 3; ++k) g1[k] += t[k];
        cross3(g3, a1, t);
        for (int k = 0; k < 3; ++k) g2[k] += t[k];
        // a2 = u / |u|, u = v2 - (a1.v2) a1
        const T* v2 = x + 3;
        const T d = dot3(a1, v2);
        T u[3];
        for (int k = 0; k < 3; ++k) u[k] = v2[k] - d * a1[k];
        const T nu = std::sqrt(dot3(u, u));
        const T a2g2 = dot3(a2, g2);
        T gu[3];
        for (int k = 0; k < 3; ++k) gu[k] = (g2[k] - a2[k] * a2g2) / nu;
        const T a1gu = dot3(a1, gu);
        T* gx = p->grad.data() + static_cast<std::size_t>(i) * 6;
        for (int k = 0; k < 3; ++k) {
          gx[3 + k] += gu[k] - a1[k] * a1gu;
          g1[k] += -a1gu * v2[k] - d * gu[k];
        }
        // a1 = v1 / |v1|
        const T n1 = std::sqrt(dot3(x, x));
        const T a1g1 = dot3(a1, g1);
        for (int k = 0; k < 3; ++k) gx[k] += (g1[k] - a1[k] * a1g1) / n1;
      }
    };
  return Tensor<T>(out);
}

template <class T>
Tensor<T> kl_loss(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require_same_shape(mu, logvar, "kl_loss");
  const int n = mu.rows();
  if (n == 0) fail(ErrorKind::Shape, "kl_loss: empty batch");
  auto out = make_node<T>(1, 1, {mu.node(), logvar.node()});
  T total = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const T m = mu.values()[i];
    const T lv = std::clamp(logvar.values()[i], T(-10), T(10));
    total += -T(0.5) * (T(1) + lv - m * m - std::exp(lv));
  }
  out->value[0] = total / static_cast<T>(n);
  if (out->requires_grad)
    out->backward = [n](Node<T>& self) {
      const T g = self.grad[0] / static_cast<T>(n);
      const auto& pm = self.parents[0];
      const auto& pl = self.parents[1];
      if (wants(pm))
        for (std::size_t i = 0; i < pm->value.size(); ++i) pm->grad[i] += g * pm->value[i];
      if (wants(pl))
        for (std::size_t i = 0; i < pl->value.size(); ++i) {
          const T lv = pl->value[i];
          if (lv > T(-10) && lv < T(10)) pl->grad[i] += g * T(-0.5) * (T(1) - std::exp(lv));
        }
    };
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// Layers

template <class T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    switch (i + 1 < layers.size() ? hidden : last) {
      case Activation::Relu: h = relu(h); break;
      case Activation::Tanh: h = tanh(h); break;
      case Activation::None: break;
    }
  }
  return h;
}

template <class T>
Linear<T> make_linear(int in, int out, Rng& rng, Activation act) {
  const double sd = std::sqrt((act == Activation::Relu ? 2.0 : 1.0) / in);
  std::vector<T> w(static_cast<std::size_t>(in) * out);
  for (auto& x : w) x = static_cast<T>(sd * rng.normal());
  Linear<T> l;
  l.weight = Tensor<T>::from(in, out, std::move(w), true);
  l.bias = Tensor<T>::zeros(1, out, true);
  return l;
}

template <class T>
Mlp<T> make_mlp(const std::vector<int>& sizes, Rng& rng, Activation hidden, Activation last) {
  if (sizes.size() < 2) fail(ErrorKind::InvalidArgument, "an MLP needs at least input and output sizes");
  Mlp<T> m;
  m.hidden = hidden;
  m.last = last;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const Activation act = i + 2 < sizes.size() ? hidden : last;
    m.layers.push_back(make_linear<T>(sizes[i], sizes[i + 1], rng, act));
  }
  return m;
}

template <class T>
void collect(ParamList<T>& out, const std::string& prefix, Linear<T>& l) {
  out.push_back({prefix + ".weight", &l.weight});
  out.push_back({prefix + ".bias", &l.bias});
}

template <class T>
void collect(ParamList<T>& out, const std::string& prefix, Mlp<T>& m) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) collect(out, prefix + "." + std::to_string(i), m.layers[i]);
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad) {
  std::vector<To> v(t.values().begin(), t.values().end());
  return Tensor<To>::from(t.rows(), t.cols(), std::move(v), requires_grad);
}

template <class To, class From>
Linear<To> cast(const Linear<From>& l) {
  return {cast<To>(l.weight, l.weight.requires_grad()), cast<To>(l.bias, l.bias.requires_grad())};
}

template <class To, class From>
Mlp<To> cast(const Mlp<From>& m) {
  Mlp<To> out;
  out.hidden = m.hidden;
  out.last = m.last;
  for (const auto& l : m.layers) out.layers.push_back(cast<To>(l));
  return out;
}

// ---------------------------------------------------------------------------
// Point encoder

template <class T>
typename PointEncoder<T>::Output PointEncoder<T>::backbone(const Tensor<T>& cloud) const {
  if (cloud.cols() != 3) fail(ErrorKind::Shape, "point encoder expects n x 3 input");
  Output o;
  o.per_point = shared(cloud);
  o.global = max_rows(o.per_point);
  return o;
}

template <class T>
Tensor<T> PointEncoder<T>::apply_head(const Tensor<T>& local, const Tensor<T>& global) const {
  return relu(head(concat_cols<T>({local, repeat_rows(global, local.rows())})));
}

template <class T>
typename PointEncoder<T>::Output PointEncoder<T>::operator()(const Tensor<T>& cloud) const {
  Output b = backbone(cloud);
  return {apply_head(b.per_point, b.global), b.global};
}

template <class T>
PointEncoder<T> make_point_encoder(Rng& rng) {
  PointEncoder<T> e;
  e.shared = make_mlp<T>({3, 64, kFeatureDim}, rng, Activation::Relu, Activation::Relu);
  e.head = make_linear<T>(2 * kFeatureDim, kFeatureDim, rng);
  return e;
}

template <class T>
typename PointEncoder<T>::Output point_encode(const Tensor<T>& cloud, const PointEncoder<T>& params,
                                              int expected_points) {
  if (cloud.rows() != expected_points || cloud.cols() != 3)
    fail(ErrorKind::Shape, "point_encode: expected " + std::to_string(expected_points) + " x 3 cloud, got " +
                               std::to_string(cloud.rows()) + " x " + std::to_string(cloud.cols()));
  for (T x : cloud.values())
    if (!std::isfinite(x)) fail(ErrorKind::InvalidArgument, "point_encode: non-finite coordinate");
  return params(cloud);
}

// ---------------------------------------------------------------------------
// Cvae

void LossWeights::validate() const {
  if (!(kl > 0 && pos > 0 && rot > 0)) fail(ErrorKind::InvalidArgument, "loss weights must be positive");
}

nlohmann::json to_json(const LossWeights& w) { return {{"kl", w.kl}, {"pos", w.pos}, {"rot", w.rot}}; }

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.kl = j.value("kl", w.kl);
  w.pos = j.value("pos", w.pos);
  w.rot = j.value("rot", w.rot);
  w.validate();
  return w;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> Cvae<T>::encode(const Tensor<T>& action9, const Tensor<T>& cond) const {
  if (action9.cols() != kActionDim || cond.cols() != cond_dim) fail(ErrorKind::Shape, "cvae encode: bad input widths");
  const Tensor<T> h = encoder(concat_cols<T>({action9, cond}));
  return {slice_cols(h, 0, kLatentDim), slice_cols(h, kLatentDim, kLatentDim)};
}

template <class T>
Tensor<T> Cvae<T>::decode(const Tensor<T>& z, const Tensor<T>& cond) const {
  if (z.cols() != kLatentDim || cond.cols() != cond_dim) fail(ErrorKind::Shape, "cvae decode: bad input widths");
  return decoder(concat_cols<T>({z, cond}));
}

template <class T>
Tensor<T> Cvae<T>::position(const Tensor<T>& raw9) const {
  const int n = raw9.rows();
  return add_row(mul(slice_cols(raw9, 0, 3), constant_rows<T>(n, pos_scale)), constant_rows<T>(1, pos_offset));
}

template <class T>
Tensor<T> Cvae<T>::encode_position(const Tensor<T>& pos_m) const {
  std::vector<double> inv(3), neg(3);
  for (int k = 0; k < 3; ++k) {
    inv[k] = 1.0 / pos_scale[k];
    neg[k] = -pos_offset[k];
  }
  return mul(add_row(pos_m, constant_rows<T>(1, neg)), constant_rows<T>(pos_m.rows(), inv));
}

template <class T>
Cvae<T> make_cvae(int cond_dim, Rng& rng) {
  Cvae<T> c;
  c.cond_dim = cond_dim;
  c.encoder = make_mlp<T>({kActionDim + cond_dim, 128, 128, 2 * kLatentDim}, rng);
  c.decoder = make_mlp<T>({kLatentDim + cond_dim, 128, 128, kActionDim}, rng);
  return c;
}

namespace {

template <class T>
Tensor<T> rot6d_columns(const Tensor<T>& rot9) {
  const int n = rot9.rows();
  std::vector<T> v(static_cast<std::size_t>(n) * 6);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < 3; ++r) {
      v[static_cast<std::size_t>(i) * 6 + r] = rot9.at(i, 3 * r);
      v[static_cast<std::size_t>(i) * 6 + 3 + r] = rot9.at(i, 3 * r + 1);
    }
  return Tensor<T>::from(n, 6, std::move(v));
}

}  // namespace

template <class T>
CvaeLoss<T> cvae_loss_from_posterior(const Tensor<T>& gt_pos, const Tensor<T>& gt_rot, const Tensor<T>& cond,
                                     const Cvae<T>& params, const LossWeights& w, const Tensor<T>& mu,
                                     const Tensor<T>& logvar, const Tensor<T>& eps) {
  const int n = gt_pos.rows();
  if (gt_pos.cols() != 3 || gt_rot.cols() != 9 || gt_rot.rows() != n || cond.rows() != n || eps.rows() != n ||
      eps.cols() != kLatentDim || mu.rows() != n || mu.cols() != kLatentDim)
    fail(ErrorKind::Shape, "cvae_loss: inconsistent batch shapes");
  const Tensor<T> sigma = exp(scale(clamp(logvar, T(-10), T(10)), T(0.5)));
  const Tensor<T> z = add(mu, mul(sigma, eps));
  const Tensor<T> raw = params.decode(z, cond);
  CvaeLoss<T> l;
  l.pos = l1_loss(params.position(raw), gt_pos);
  l.rot = mse_loss(rot6d_to_matrix(slice_cols(raw, 3, 6)), gt_rot);
  l.kl = kl_loss(mu, logvar);
  l.total = add(add(scale(l.kl, static_cast<T>(w.kl)), scale(l.pos, static_cast<T>(w.pos))),
                scale(l.rot, static_cast<T>(w.rot)));
  return l;
}

template <class T>
CvaeLoss<T> cvae_loss(const Tensor<T>& gt_pos, const Tensor<T>& gt_rot, const Tensor<T>& cond, const Cvae<T>& params,
                      const LossWeights& w, const Tensor<T>& eps) {
  if (gt_rot.cols() != 9 || gt_pos.cols() != 3) fail(ErrorKind::Shape, "cvae_loss: bad ground-truth widths");
  const Tensor<T> action = concat_cols<T>({params.encode_position(gt_pos), rot6d_columns(gt_rot)});
  const auto [mu, logvar] = params.encode(action, cond);
  return cvae_loss_from_posterior(gt_pos, gt_rot, cond, params, w, mu, logvar, eps);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(ParamList<float> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t->size(), 0.0);
    v_.emplace_back(t->size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t->zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<float>& p = *params_[k].second;
    const auto& g = p.grad();
    if (g.empty()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    float* x = p.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = b1_ * m[i] + (1 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1 - b2_) * double(g[i]) * g[i];
      x[i] = static_cast<float>(x[i] - lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const std::function<TensorD(const std::vector<TensorD>&)>& f,
                           std::vector<TensorD> inputs, double eps, int max_coords, std::uint64_t seed) {
  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  const TensorD y = f(inputs);
  y.backward();
  const double f0 = y.item();
  Rng rng(seed);
  GradCheckResult res;
  for (auto& t : inputs) {
    std::vector<double> analytic = t.grad();
    if (analytic.empty()) analytic.assign(t.size(), 0.0);
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (static_cast<int>(coords.size()) > max_coords) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    std::vector<double> numeric(coords.size());
    std::vector<bool> smooth(coords.size(), true);
    for (std::size_t c = 0; c < coords.size(); ++c) {
      double& x = t.values()[coords[c]];
      const double x0 = x;
      x = x0 + eps;
      const double fp = f(inputs).item();
      x = x0 - eps;
      const double fm = f(inputs).item();
      x = x0;
      numeric[c] = (fp - fm) / (2 * eps);
      const double dp = (fp - f0) / eps, dm = (f0 - fm) / eps;
      if (std::abs(dp - dm) > 0.1 * std::max({std::abs(dp), std::abs(dm), 1e-6})) smooth[c] = false;
    }
    double scale_floor = 0.0;
    for (double n : numeric) scale_floor = std::max(scale_floor, std::abs(n));
    scale_floor = std::max(1e-3 * scale_floor, 1e-9);
    for (std::size_t c = 0; c < coords.size(); ++c) {
      if (!smooth[c]) {
        ++res.nonsmooth;
        continue;
      }
      const double a = analytic[coords[c]], n = numeric[c];
      res.max_rel_error = std::max(res.max_rel_error, std::abs(a - n) / std::max({std::abs(a), std::abs(n), scale_floor}));
      ++res.checked;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const nlohmann::json& header, const ParamList<float>& params) {
  nlohmann::json h = header;
  h["params"] = nlohmann::json::array();
  for (const auto& [name, t] : params) h["params"].push_back({{"name", name}, {"shape", {t->rows(), t->cols()}}});
  const std::string text = h.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path);
  out.write("DBCK", 4);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params)
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
  if (!out) fail(ErrorKind::Io, "short write to " + path);
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DBCK", 4) != 0) fail(ErrorKind::Data, path + ": not a checkpoint");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || version != kCheckpointVersion)
    fail(ErrorKind::Compatibility, path + ": unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::Data, path + ": truncated header");
  return nlohmann::json::parse(text);
}

}  // namespace

nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read checkpoint " + path);
  return read_header(in, path);
}

nlohmann::json load_checkpoint(const std::string& path, const ParamList<float>& params,
                               const std::string& expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read checkpoint " + path);
  nlohmann::json h = read_header(in, path);
  if (!expected_config_hash.empty() && h.value("config_hash", std::string{}) != expected_config_hash)
    fail(ErrorKind::Compatibility, path + ": config hash " + h.value("config_hash", std::string{"<none>"}) +
                                       " does not match " + expected_config_hash);
  const auto& listed = h.at("params");
  if (listed.size() != params.size()) fail(ErrorKind::Shape, path + ": parameter count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const auto& e = listed[i];
    if (e.at("name").get<std::string>() != name || e.at("shape")[0].get<int>() != t->rows() ||
        e.at("shape")[1].get<int>() != t->cols())
      fail(ErrorKind::Shape, path + ": parameter " + name + " does not match the checkpoint layout");
  }
  for (const auto& [name, t] : params) {
    in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    if (!in) fail(ErrorKind::Data, path + ": truncated parameter blob");
  }
  return h;
}

// ---------------------------------------------------------------------------
// Instantiations

#define DOORBENCH_NETS_INSTANTIATE(T)                                                                      \
  template class Tensor<T>;                                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> tanh(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> exp(const Tensor<T>&);                                                                \
  template Tensor<T> abs(const Tensor<T>&);                                                                \
  template Tensor<T> square(const Tensor<T>&);                                                             \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                        \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                           \
  template Tensor<T> slice_cols(const Tensor<T>&, int, int);                                               \
  template Tensor<T> repeat_rows(const Tensor<T>&, int);                                                   \
  template Tensor<T> max_rows(const Tensor<T>&);                                                           \
  template Tensor<T> rot6d_to_matrix(const Tensor<T>&);                                                    \
  template Tensor<T> kl_loss(const Tensor<T>&, const Tensor<T>&);                                          \
  template struct Mlp<T>;                                                                                  \
  template Linear<T> make_linear(int, int, Rng&, Activation);                                              \
  template Mlp<T> make_mlp(const std::vector<int>&, Rng&, Activation, Activation);                         \
  template void collect(ParamList<T>&, const std::string&, Linear<T>&);                                    \
  template void collect(ParamList<T>&, const std::string&, Mlp<T>&);                                       \
  template struct PointEncoder<T>;                                                                         \
  template PointEncoder<T> make_point_encoder(Rng&);                                                       \
  template typename PointEncoder<T>::Output point_encode(const Tensor<T>&, const PointEncoder<T>&, int);    \
  template struct Cvae<T>;                                                                                 \
  template Cvae<T> make_cvae(int, Rng&);                                                                   \
  template CvaeLoss<T> cvae_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Cvae<T>&,    \
                                 const LossWeights&, const Tensor<T>&);                                    \
  template CvaeLoss<T> cvae_loss_from_posterior(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                                const Cvae<T>&, const LossWeights&, const Tensor<T>&,      \
                                                const Tensor<T>&, const Tensor<T>&);

DOORBENCH_NETS_INSTANTIATE(float)
DOORBENCH_NETS_INSTANTIATE(double)

#undef DOORBENCH_NETS_INSTANTIATE

template Tensor<double> cast(const Tensor<float>&, bool);
template Tensor<float> cast(const Tensor<double>&, bool);
template Linear<double> cast(const Linear<float>&);
template Linear<float> cast(const Linear<double>&);
template Mlp<double> cast(const Mlp<float>&);
template Mlp<float> cast(const Mlp<double>&);

}  // namespace doorbench::nets
