// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace moelab {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

// Thread count for the numeric kernels: MOELAB_THREADS if set, else all cores.
inline int num_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("MOELAB_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) return v;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
  }();
  return n;
}

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// C[m x n] = A[m x k] * B[k x n], optionally accumulating into C.
// ikj order: each C element is a sequential sum over k, so the result is
// bitwise identical for any thread count (rows are independent).
inline void mm_nn(const float* a, const float* b, float* c, int m, int k,
                  int n, bool accumulate) {
  const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (m >= 32)
  for (int i = 0; i < m; ++i) {
    float* ci = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::memset(ci, 0, sizeof(float) * n);
    const float* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float aip = ai[p];
      const float* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

inline std::vector<float> transpose(const float* x, int rows, int cols) {
  std::vector<float> t(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      t[static_cast<size_t>(j) * rows + i] = x[static_cast<size_t>(i) * cols + j];
  return t;
}

// Top-k of one row: indices ordered by descending value, ties broken toward
// the lower index. Assumes 0 < k <= n (checked by callers).
inline void topk_row(const float* x, int n, int k, int* out_idx) {
  // n is small (tens of experts); partial selection via repeated max keeps
  // the tie rule obvious and costs k*n comparisons.
  std::vector<char> taken(n, 0);
  for (int r = 0; r < k; ++r) {
    int best = -1;
    float best_v = kNegInf;
    for (int j = 0; j < n; ++j) {
      if (taken[j]) continue;
      if (best < 0 || x[j] > best_v) {
        best = j;
        best_v = x[j];
      }
    }
    taken[best] = 1;
    out_idx[r] = best;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor: shared, reference-counted fp32 buffer with shape and optional grad.
// ---------------------------------------------------------------------------

class Tensor {
  struct Data {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty until touched by a backward pass
    bool requires_grad = false;
    bool on_tape = false;
  };

 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->value.assign(t.check_numel(), 0.0f);
    return t;
  }

  static Tensor full(std::vector<int> shape, float v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.d_->value.begin(), t.d_->value.end(), v);
    return t;
  }

  static Tensor scalar(float v) { return full({1}, v); }

  static Tensor from_values(std::vector<int> shape, std::vector<float> v) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(v);
    if (t.d_->value.size() != t.check_numel())
      throw ShapeError("from_values: " + std::to_string(t.d_->value.size()) +
                       " values for shape " + detail::shape_str(t.d_->shape));
    return t;
  }

  static Tensor randn(std::vector<int> shape, Rng& rng, float stddev) {
    Tensor t = zeros(std::move(shape));
    rng.fill_normal(t.data(), t.numel(), stddev);
    return t;
  }

  bool defined() const { return d_ != nullptr; }

  const std::vector<int>& shape() const { return d_->shape; }
  size_t numel() const { return d_->value.size(); }
  int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }

  // 2-D accessors; most of the model works on [rows x cols] matrices.
  int rows() const { return require_2d().shape[0]; }
  int cols() const { return require_2d().shape[1]; }

  float* data() { return d_->value.data(); }
  const float* data() const { return d_->value.data(); }
  std::vector<float>& values() { return d_->value; }
  const std::vector<float>& values() const { return d_->value; }

  float item() const {
    if (numel() != 1)
      throw ShapeError("item: tensor has " + std::to_string(numel()) +
                       " elements");
    return d_->value[0];
  }

  Tensor& set_requires_grad(bool b = true) {
    d_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return d_->requires_grad; }
  bool on_tape() const { return d_->on_tape; }
  void mark_on_tape() const { d_->on_tape = true; }

  bool has_grad() const { return !d_->grad.empty(); }
  float* grad() { return d_->grad.data(); }
  const float* grad() const { return d_->grad.data(); }
  std::vector<float>& grad_vec() { return d_->grad; }

  // Allocate (zeroed) grad storage if absent.
  void ensure_grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0f);
  }
  void zero_grad() { d_->grad.clear(); }

  bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }
  std::string shape_string() const { return detail::shape_str(d_->shape); }

 private:
  size_t check_numel() const {
    size_t n = 1;
    for (int s : d_->shape) {
      if (s <= 0)
        throw ShapeError("non-positive dimension in shape " +
                         detail::shape_str(d_->shape));
      n *= static_cast<size_t>(s);
    }
    return n;
  }
  const Data& require_2d() const {
    if (d_->shape.size() != 2)
      throw ShapeError("expected 2-D tensor, got " +
                       detail::shape_str(d_->shape));
    return *d_;
  }

  std::shared_ptr<Data> d_;
};

// Result of a top-k masking op: the masked tensor plus, per row, the k kept
// column indices ordered by descending score (ties toward the lower index).
struct TopkResult {
  Tensor masked;
  std::vector<int> indices;  // row-major [rows x k]
};

enum class ScoreKind { kSoftmax, kSigmoid };

// ---------------------------------------------------------------------------
// Tape: dynamic reverse-mode autograd. Every op records a closure; backward()
// replays them once in reverse and then refuses to run again.
// ---------------------------------------------------------------------------

class Tape {
 public:
  // recording=false produces a pure inference tape: values are computed,
  // nothing is recorded, backward() is an error.
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  void backward(const Tensor& loss) {
    if (!recording_) throw TapeError("backward on a non-recording tape");
    if (consumed_)
      throw TapeError(
          "tape already consumed by backward; run a fresh forward pass");
    consumed_ = true;
    if (!loss.defined() || loss.numel() != 1)
      throw ShapeError("backward: loss must be a defined scalar");
    loss.ensure_grad();
    const_cast<Tensor&>(loss).grad()[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  // --- elementwise / linear ------------------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false) {
    const int m = a.rows(), k = a.cols();
    const int bk = transpose_b ? b.cols() : b.rows();
    const int n = transpose_b ? b.rows() : b.cols();
    if (k != bk)
      throw ShapeError("matmul: inner dims " + a.shape_string() + " vs " +
                       b.shape_string() + (transpose_b ? " (transposed)" : ""));
    Tensor out = Tensor::zeros({m, n});
    if (transpose_b) {
      // out = a * b^T; materialize b^T once so the kernel stays ikj.
      const std::vector<float> bt = detail::transpose(b.data(), n, k);
      detail::mm_nn(a.data(), bt.data(), out.data(), m, k, n, false);
    } else {
      detail::mm_nn(a.data(), b.data(), out.data(), m, k, n, false);
    }
    if (!track({&a, &b})) return out;
    out.mark_on_tape();
    push([a, b, out, m, k, n, transpose_b] {
      if (!out.has_grad()) return;
      const float* dy = out.grad();
      if (a.requires_grad() || a.on_tape()) {
        a.ensure_grad();
        if (transpose_b) {  // da += dy[m x n] * b[n x k]
          detail::mm_nn(dy, b.data(), const_cast<Tensor&>(a).grad(), m, n, k,
                        true);
        } else {  // da += dy * b^T
          const std::vector<float> bt = detail::transpose(b.data(), k, n);
          detail::mm_nn(dy, bt.data(), const_cast<Tensor&>(a).grad(), m, n, k,
                        true);
        }
      }
      if (b.requires_grad() || b.on_tape()) {
        b.ensure_grad();
        if (transpose_b) {  // db += dy^T[n x m] * a[m x k]
          const std::vector<float> dyt = detail::transpose(dy, m, n);
          detail::mm_nn(dyt.data(), a.data(), const_cast<Tensor&>(b).grad(), n,
                        m, k, true);
        } else {  // db += a^T * dy
          const std::vector<float> at = detail::transpose(a.data(), m, k);
          detail::mm_nn(at.data(), dy, const_cast<Tensor&>(b).grad(), k, m, n,
                        true);
        }
      }
    });
    return out;
  }

  Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
      throw ShapeError("add: " + a.shape_string() + " vs " + b.shape_string());
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (!track({&a, &b})) return out;
    out.mark_on_tape();
    push([a, b, out] {
      if (!out.has_grad()) return;
      const float* dy = out.grad();
      const size_t n = out.numel();
      for (const Tensor* t : {&a, &b}) {
        if (!(t->requires_grad() || t->on_tape())) continue;
        t->ensure_grad();
        float* g = const_cast<Tensor*>(t)->grad();
        for (size_t i = 0; i < n; ++i) g[i] += dy[i];
      }
    });
    return out;
  }

  // Broadcast add of a row vector [1 x n] (or [n]) to every row of [m x n].
  Tensor add_row(const Tensor& x, const Tensor& row) {
    const int m = x.rows(), n = x.cols();
    if (static_cast<int>(row.numel()) != n)
      throw ShapeError("add_row: " + x.shape_string() + " vs " +
                       row.shape_string());
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out.data()[static_cast<size_t>(i) * n + j] =
            x.data()[static_cast<size_t>(i) * n + j] + row.data()[j];
    if (!track({&x, &row})) return out;
    out.mark_on_tape();
    push([x, row, out, m, n] {
      if (!out.has_grad()) return;
      const float* dy = out.grad();
      if (x.requires_grad() || x.on_tape()) {
        x.ensure_grad();
        float* g = const_cast<Tensor&>(x).grad();
        for (size_t i = 0; i < out.numel(); ++i) g[i] += dy[i];
      }
      if (row.requires_grad() || row.on_tape()) {
        row.ensure_grad();
        float* g = const_cast<Tensor&>(row).grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) g[j] += dy[static_cast<size_t>(i) * n + j];
      }
    });
    return out;
  }

  Tensor scale(const Tensor& x, float c) {
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = c * x.data()[i];
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, c] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      for (size_t i = 0; i < out.numel(); ++i) g[i] += c * dy[i];
    });
    return out;
  }

  // GELU, tanh approximation.
  Tensor gelu(const Tensor& x) {
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float kA = 0.044715f;
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
      const float v = x.data()[i];
      out.data()[i] = 0.5f * v * (1.0f + std::tanh(kC * (v + kA * v * v * v)));
    }
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      for (size_t i = 0; i < x.numel(); ++i) {
        const float v = x.data()[i];
        const float t = std::tanh(kC * (v + kA * v * v * v));
        const float du = kC * (1.0f + 3.0f * kA * v * v);
        g[i] += dy[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
      }
    });
    return out;
  }

  // Elementwise logistic. sigmoid(-inf) = 0 exactly, so masked logits yield
  // zero gates and (since s*(1-s) = 0 there) zero gradient.
  Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < x.numel(); ++i)
      out.data()[i] = sigmoid_scalar(x.data()[i]);
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      for (size_t i = 0; i < out.numel(); ++i) {
        const float s = out.data()[i];
        g[i] += dy[i] * s * (1.0f - s);
      }
    });
    return out;
  }

  // Softmax along `axis`. -inf entries get probability 0; a lane that is
  // entirely -inf becomes all zeros (and propagates zero gradient), which is
  // what the routing mask relies on.
  Tensor softmax(const Tensor& x, int axis) {
    const auto [outer, n, inner] = lane_dims(x, axis);
    Tensor out = Tensor::zeros(x.shape());
    for_each_lane(outer, n, inner, [&](size_t base, size_t stride) {
      softmax_lane(x.data(), out.data(), base, stride, n);
    });
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, outer, n = n, inner] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      const float* y = out.data();
      for_each_lane(outer, n, inner, [&](size_t base, size_t stride) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j)
          dot += static_cast<double>(dy[base + j * stride]) * y[base + j * stride];
        for (int j = 0; j < n; ++j) {
          const size_t idx = base + j * stride;
          g[idx] += y[idx] * (dy[idx] - static_cast<float>(dot));
        }
      });
    });
    return out;
  }

  Tensor softmax_rows(const Tensor& x) { return softmax(x, 1); }

  // Divide each row by its sum (gate renormalization). Rows summing to ~0
  // stay zero rather than dividing by nothing.
  Tensor renorm_rows(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    std::vector<float> sums(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += x.data()[static_cast<size_t>(i) * n + j];
      sums[static_cast<size_t>(i)] = static_cast<float>(s);
      if (std::abs(s) < 1e-12) continue;
      for (int j = 0; j < n; ++j)
        out.data()[static_cast<size_t>(i) * n + j] =
            static_cast<float>(x.data()[static_cast<size_t>(i) * n + j] / s);
    }
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, sums = std::move(sums), m, n] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      const float* y = out.data();
      for (int i = 0; i < m; ++i) {
        const float s = sums[static_cast<size_t>(i)];
        if (std::abs(s) < 1e-12) continue;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) {
          const size_t idx = static_cast<size_t>(i) * n + j;
          dot += static_cast<double>(dy[idx]) * y[idx];
        }
        for (int j = 0; j < n; ++j) {
          const size_t idx = static_cast<size_t>(i) * n + j;
          g[idx] += (dy[idx] - static_cast<float>(dot)) / s;
        }
      }
    });
    return out;
  }

  Tensor l2_normalize_rows(const Tensor& x, float eps = 1e-8f) {
    return l2_normalize(x, /*along_rows=*/true, eps);
  }
  Tensor l2_normalize_cols(const Tensor& x, float eps = 1e-8f) {
    return l2_normalize(x, /*along_rows=*/false, eps);
  }

  // y = exp(t) * x with a learnable scalar t (log-temperature).
  Tensor scale_by_exp(const Tensor& x, const Tensor& t) {
    if (t.numel() != 1) throw ShapeError("scale_by_exp: t must be a scalar");
    const float s = std::exp(t.item());
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = s * x.data()[i];
    if (!track({&x, &t})) return out;
    out.mark_on_tape();
    push([x, t, out, s] {
      if (!out.has_grad()) return;
      const float* dy = out.grad();
      if (x.requires_grad() || x.on_tape()) {
        x.ensure_grad();
        float* g = const_cast<Tensor&>(x).grad();
        for (size_t i = 0; i < out.numel(); ++i) g[i] += s * dy[i];
      }
      if (t.requires_grad() || t.on_tape()) {
        t.ensure_grad();
        double acc = 0.0;  // dL/dt = sum dy * y
        for (size_t i = 0; i < out.numel(); ++i)
          acc += static_cast<double>(dy[i]) * out.data()[i];
        const_cast<Tensor&>(t).grad()[0] += static_cast<float>(acc);
      }
    });
    return out;
  }

  // RMS norm with learnable per-channel gain: y = x / rms(x_row) * gain.
  Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps = 1e-5f) {
    const int m = x.rows(), n = x.cols();
    if (static_cast<int>(gain.numel()) != n)
      throw ShapeError("rmsnorm: gain " + gain.shape_string() + " vs cols " +
                       std::to_string(n));
    Tensor out = Tensor::zeros(x.shape());
    std::vector<float> inv_rms(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
      double ss = 0.0;
      const float* xi = x.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ss += static_cast<double>(xi[j]) * xi[j];
      const float inv = 1.0f / std::sqrt(static_cast<float>(ss / n) + eps);
      inv_rms[static_cast<size_t>(i)] = inv;
      float* oi = out.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) oi[j] = xi[j] * inv * gain.data()[j];
    }
    if (!track({&x, &gain})) return out;
    out.mark_on_tape();
    push([x, gain, out, inv_rms = std::move(inv_rms), m, n] {
      if (!out.has_grad()) return;
      const float* dy = out.grad();
      const bool need_x = x.requires_grad() || x.on_tape();
      const bool need_g = gain.requires_grad() || gain.on_tape();
      if (need_x) x.ensure_grad();
      if (need_g) gain.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const float inv = inv_rms[static_cast<size_t>(i)];
        const float* xi = x.data() + static_cast<size_t>(i) * n;
        const float* dyi = dy + static_cast<size_t>(i) * n;
        if (need_g) {
          float* gg = const_cast<Tensor&>(gain).grad();
          for (int j = 0; j < n; ++j) gg[j] += dyi[j] * xi[j] * inv;
        }
        if (need_x) {
          // dxh = dy * gain; dx = inv * (dxh - xh * mean(dxh . xh))
          double dot = 0.0;
          for (int j = 0; j < n; ++j)
            dot += static_cast<double>(dyi[j]) * gain.data()[j] * xi[j] * inv;
          const float corr = static_cast<float>(dot / n);
          float* gx = const_cast<Tensor&>(x).grad();
          for (int j = 0; j < n; ++j)
            gx[static_cast<size_t>(i) * n + j] +=
                inv * (dyi[j] * gain.data()[j] - xi[j] * inv * corr);
        }
      }
    });
    return out;
  }

  // --- gather / scatter ----------------------------------------------------

  // out[i] = table[ids[i]]; the embedding lookup. Backward scatters row
  // gradients sequentially so accumulation order is fixed.
  Tensor embed_rows(const Tensor& table, const std::vector<int32_t>& ids) {
    const int v = table.rows(), d = table.cols();
    const int m = static_cast<int>(ids.size());
    Tensor out = Tensor::zeros({m, d});
    for (int i = 0; i < m; ++i) {
      const int32_t id = ids[static_cast<size_t>(i)];
      if (id < 0 || id >= v)
        throw DataError("embed_rows: id " + std::to_string(id) +
                        " out of range [0," + std::to_string(v) + ") at row " +
                        std::to_string(i));
      std::memcpy(out.data() + static_cast<size_t>(i) * d,
                  table.data() + static_cast<size_t>(id) * d,
                  sizeof(float) * static_cast<size_t>(d));
    }
    if (!track({&table})) return out;
    out.mark_on_tape();
    push([table, out, ids, d] {
      if (!out.has_grad()) return;
      table.ensure_grad();
      float* g = const_cast<Tensor&>(table).grad();
      const float* dy = out.grad();
      for (size_t i = 0; i < ids.size(); ++i) {
        float* gi = g + static_cast<size_t>(ids[i]) * d;
        const float* dyi = dy + i * d;
        for (int j = 0; j < d; ++j) gi[j] += dyi[j];
      }
    });
    return out;
  }

  // out[m] = x[idx[m], :]. Duplicate indices allowed; backward accumulates.
  Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    const int rows = x.rows(), d = x.cols();
    const int m = static_cast<int>(idx.size());
    Tensor out = Tensor::zeros({m, d});
    for (int i = 0; i < m; ++i) {
      const int r = idx[static_cast<size_t>(i)];
      if (r < 0 || r >= rows)
        throw ShapeError("gather_rows: row " + std::to_string(r) +
                         " out of range [0," + std::to_string(rows) + ")");
      std::memcpy(out.data() + static_cast<size_t>(i) * d,
                  x.data() + static_cast<size_t>(r) * d,
                  sizeof(float) * static_cast<size_t>(d));
    }
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, idx, d] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      for (size_t i = 0; i < idx.size(); ++i) {
        float* gi = g + static_cast<size_t>(idx[i]) * d;
        for (int j = 0; j < d; ++j) gi[j] += dy[i * d + j];
      }
    });
    return out;
  }

  // out[m] = x.flat[flat_idx[m]]: picks individual entries (e.g. the gate of
  // token t for expert e out of a [T x N] gate matrix).
  Tensor gather_entries(const Tensor& x, const std::vector<size_t>& flat_idx) {
    Tensor out = Tensor::zeros({static_cast<int>(flat_idx.size())});
    for (size_t i = 0; i < flat_idx.size(); ++i) {
      if (flat_idx[i] >= x.numel())
        throw ShapeError("gather_entries: index " + std::to_string(flat_idx[i]) +
                         " out of range");
      out.data()[i] = x.data()[flat_idx[i]];
    }
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, flat_idx] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      for (size_t i = 0; i < flat_idx.size(); ++i) g[flat_idx[i]] += dy[i];
    });
    return out;
  }

  // y[idx[m]] += gates[m] * rows[m] over a fresh [n_rows x d] zero tensor:
  // the expert-combine step. Sequential over m, so duplicate destinations
  // accumulate in a fixed order.
  Tensor scatter_rows_scaled(int n_rows, const Tensor& rows,
                             const Tensor& gates, const std::vector<int>& idx) {
    const int m = rows.rows(), d = rows.cols();
    if (static_cast<int>(gates.numel()) != m ||
        static_cast<int>(idx.size()) != m)
      throw ShapeError("scatter_rows_scaled: rows/gates/idx disagree: " +
                       rows.shape_string() + ", " +
                       std::to_string(gates.numel()) + ", " +
                       std::to_string(idx.size()));
    Tensor out = Tensor::zeros({n_rows, d});
    for (int i = 0; i < m; ++i) {
      const int r = idx[static_cast<size_t>(i)];
      if (r < 0 || r >= n_rows)
        throw ShapeError("scatter_rows_scaled: dest row " + std::to_string(r) +
                         " out of range [0," + std::to_string(n_rows) + ")");
      const float gv = gates.data()[i];
      float* or_ = out.data() + static_cast<size_t>(r) * d;
      const float* ri = rows.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) or_[j] += gv * ri[j];
    }
    if (!track({&rows, &gates})) return out;
    out.mark_on_tape();
    push([rows, gates, out, idx, d] {
      if (!out.has_grad()) return;
      const float* dy = out.grad();
      const bool need_r = rows.requires_grad() || rows.on_tape();
      const bool need_g = gates.requires_grad() || gates.on_tape();
      if (need_r) rows.ensure_grad();
      if (need_g) gates.ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i) {
        const float* dyr = dy + static_cast<size_t>(idx[i]) * d;
        const float* ri = rows.data() + i * d;
        if (need_r) {
          const float gv = gates.data()[i];
          float* gr = const_cast<Tensor&>(rows).grad() + i * d;
          for (int j = 0; j < d; ++j) gr[j] += gv * dyr[j];
        }
        if (need_g) {
          double dot = 0.0;
          for (int j = 0; j < d; ++j)
            dot += static_cast<double>(dyr[j]) * ri[j];
          const_cast<Tensor&>(gates).grad()[i] += static_cast<float>(dot);
        }
      }
    });
    return out;
  }

  // --- attention -----------------------------------------------------------

  // Fused multi-head causal self-attention over packed [B*T x d] q/k/v.
  // Per (batch, head): S = Q K^T / sqrt(dh) with j>i masked to -inf,
  // P = softmax(S), O = P V. P is retained for the backward pass.
  Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          int batch, int heads) {
    const int rows = q.rows(), d = q.cols();
    if (!q.same_shape(k) || !q.same_shape(v))
      throw ShapeError("causal_attention: q/k/v shapes differ");
    if (batch <= 0 || heads <= 0 || rows % batch != 0 || d % heads != 0)
      throw ShapeError("causal_attention: rows " + std::to_string(rows) +
                       " batch " + std::to_string(batch) + " d " +
                       std::to_string(d) + " heads " + std::to_string(heads));
    const int t = rows / batch, dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Tensor out = Tensor::zeros({rows, d});
    // Saved probabilities, laid out [B*H] blocks of [T x T].
    auto probs = std::make_shared<std::vector<float>>(
        static_cast<size_t>(batch) * heads * t * t);

    const bool rec = track({&q, &k, &v});
    const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int bh = 0; bh < batch * heads; ++bh) {
      const int b = bh / heads, h = bh % heads;
      std::vector<float> qh(static_cast<size_t>(t) * dh),
          kh(static_cast<size_t>(t) * dh), vh(static_cast<size_t>(t) * dh);
      copy_head(q.data(), qh.data(), b, h, t, d, dh, /*out=*/false);
      copy_head(k.data(), kh.data(), b, h, t, d, dh, false);
      copy_head(v.data(), vh.data(), b, h, t, d, dh, false);
      float* p = probs->data() + static_cast<size_t>(bh) * t * t;
      for (int i = 0; i < t; ++i) {
        float* pi = p + static_cast<size_t>(i) * t;
        float mx = kNegInf;
        for (int j = 0; j <= i; ++j) {
          float s = 0.0f;
          const float* qi = qh.data() + static_cast<size_t>(i) * dh;
          const float* kj = kh.data() + static_cast<size_t>(j) * dh;
          for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
          pi[j] = s * scale;
          mx = std::max(mx, pi[j]);
        }
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          sum += pi[j];
        }
        for (int j = 0; j <= i; ++j) pi[j] = static_cast<float>(pi[j] / sum);
        for (int j = i + 1; j < t; ++j) pi[j] = 0.0f;
      }
      std::vector<float> oh(static_cast<size_t>(t) * dh, 0.0f);
      detail::mm_nn(p, vh.data(), oh.data(), t, t, dh, false);
      copy_head(out.data(), oh.data(), b, h, t, d, dh, /*out=*/true);
    }
    if (!rec) return out;
    out.mark_on_tape();
    push([q, k, v, out, probs, batch, heads, t, d, dh, scale] {
      if (!out.has_grad()) return;
      q.ensure_grad();
      k.ensure_grad();
      v.ensure_grad();
      const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
      for (int bh = 0; bh < batch * heads; ++bh) {
        const int b = bh / heads, h = bh % heads;
        std::vector<float> qh(static_cast<size_t>(t) * dh),
            kh(static_cast<size_t>(t) * dh), vh(static_cast<size_t>(t) * dh),
            doh(static_cast<size_t>(t) * dh);
        copy_head(q.data(), qh.data(), b, h, t, d, dh, false);
        copy_head(k.data(), kh.data(), b, h, t, d, dh, false);
        copy_head(v.data(), vh.data(), b, h, t, d, dh, false);
        copy_head(out.grad(), doh.data(), b, h, t, d, dh, false);
        const float* p = probs->data() + static_cast<size_t>(bh) * t * t;
        // dV = P^T dO
        std::vector<float> pt = detail::transpose(p, t, t);
        std::vector<float> dvh(static_cast<size_t>(t) * dh, 0.0f);
        detail::mm_nn(pt.data(), doh.data(), dvh.data(), t, t, dh, false);
        // dP = dO V^T
        std::vector<float> vt = detail::transpose(vh.data(), t, dh);
        std::vector<float> dp(static_cast<size_t>(t) * t, 0.0f);
        detail::mm_nn(doh.data(), vt.data(), dp.data(), t, dh, t, false);
        // dS = P o (dP - rowsum(dP o P)); masked entries have P = 0.
        std::vector<float> ds(static_cast<size_t>(t) * t);
        for (int i = 0; i < t; ++i) {
          double dot = 0.0;
          for (int j = 0; j < t; ++j)
            dot += static_cast<double>(dp[static_cast<size_t>(i) * t + j]) *
                   p[static_cast<size_t>(i) * t + j];
          for (int j = 0; j < t; ++j) {
            const size_t ij = static_cast<size_t>(i) * t + j;
            ds[ij] = p[ij] * (dp[ij] - static_cast<float>(dot)) * scale;
          }
        }
        // dQ = dS K, dK = dS^T Q
        std::vector<float> dqh(static_cast<size_t>(t) * dh, 0.0f),
            dkh(static_cast<size_t>(t) * dh, 0.0f);
        detail::mm_nn(ds.data(), kh.data(), dqh.data(), t, t, dh, false);
        std::vector<float> dst = detail::transpose(ds.data(), t, t);
        detail::mm_nn(dst.data(), qh.data(), dkh.data(), t, t, dh, false);
        add_head(const_cast<Tensor&>(q).grad(), dqh.data(), b, h, t, d, dh);
        add_head(const_cast<Tensor&>(k).grad(), dkh.data(), b, h, t, d, dh);
        add_head(const_cast<Tensor&>(v).grad(), dvh.data(), b, h, t, d, dh);
      }
    });
    return out;
  }

  // --- losses --------------------------------------------------------------

  // Mean token cross-entropy over [R x V] logits. Numerically stable via
  // max-subtracted logsumexp; per-row sums in double.
  Tensor cross_entropy_mean(const Tensor& logits,
                            const std::vector<int32_t>& targets) {
    const int r = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != r)
      throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) +
                       " targets for " + std::to_string(r) + " rows");
    auto lse = std::make_shared<std::vector<float>>(static_cast<size_t>(r));
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
      const int32_t tgt = targets[static_cast<size_t>(i)];
      if (tgt < 0 || tgt >= v)
        throw DataError("cross_entropy_mean: target " + std::to_string(tgt) +
                        " out of range [0," + std::to_string(v) +
                        ") at position " + std::to_string(i));
      const float* li = logits.data() + static_cast<size_t>(i) * v;
      float mx = li[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, li[j]);
      double sum = 0.0;
      for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(li[j]) - mx);
      const float row_lse = mx + static_cast<float>(std::log(sum));
      (*lse)[static_cast<size_t>(i)] = row_lse;
      total += static_cast<double>(row_lse) - li[tgt];
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / r));
    if (!track({&logits})) return out;
    out.mark_on_tape();
    push([logits, out, targets, lse, r, v] {
      if (!out.has_grad()) return;
      logits.ensure_grad();
      const float dy = out.grad()[0] / static_cast<float>(r);
      float* g = const_cast<Tensor&>(logits).grad();
      const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (r >= 32)
      for (int i = 0; i < r; ++i) {
        const float* li = logits.data() + static_cast<size_t>(i) * v;
        float* gi = g + static_cast<size_t>(i) * v;
        const float row_lse = (*lse)[static_cast<size_t>(i)];
        for (int j = 0; j < v; ++j)
          gi[j] += dy * std::exp(li[j] - row_lse);
        gi[targets[static_cast<size_t>(i)]] -= dy;
      }
    });
    return out;
  }

  // coef * mean over rows of the weighted column sum: coef/T * sum_t sum_i
  // w[i] * x[t,i]. This is the load-balance loss shape with w = usage counts.
  Tensor mean_weighted_cols(const Tensor& x, const std::vector<float>& w,
                            float coef) {
    const int m = x.rows(), n = x.cols();
    if (static_cast<int>(w.size()) != n)
      throw ShapeError("mean_weighted_cols: " + std::to_string(w.size()) +
                       " weights for " + std::to_string(n) + " cols");
    double acc = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        acc += static_cast<double>(w[static_cast<size_t>(j)]) *
               x.data()[static_cast<size_t>(i) * n + j];
    Tensor out = Tensor::scalar(static_cast<float>(coef * acc / m));
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, w, coef, m, n] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float dy = out.grad()[0] * coef / static_cast<float>(m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          g[static_cast<size_t>(i) * n + j] += dy * w[static_cast<size_t>(j)];
    });
    return out;
  }

  // Scalar projection sum_i w[i] * x.flat[i] against fixed weights. Used to
  // probe gradients in tests and to assemble weighted scalar losses.
  Tensor dot_const(const Tensor& x, const std::vector<float>& w) {
    if (w.size() != x.numel())
      throw ShapeError("dot_const: " + std::to_string(w.size()) +
                       " weights for " + std::to_string(x.numel()) +
                       " elements");
    double acc = 0.0;
    for (size_t i = 0; i < x.numel(); ++i)
      acc += static_cast<double>(w[i]) * x.data()[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, w] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float dy = out.grad()[0];
      for (size_t i = 0; i < w.size(); ++i) g[i] += dy * w[i];
    });
    return out;
  }

  // coef * mean_t (logsumexp(logits_t))^2: keeps router logits small.
  Tensor z_loss(const Tensor& logits, float coef) {
    const int m = logits.rows(), n = logits.cols();
    auto lse = std::make_shared<std::vector<float>>(static_cast<size_t>(m));
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      const float* li = logits.data() + static_cast<size_t>(i) * n;
      float mx = li[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, li[j]);
      double sum = 0.0;
      for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(li[j]) - mx);
      const float row = mx + static_cast<float>(std::log(sum));
      (*lse)[static_cast<size_t>(i)] = row;
      acc += static_cast<double>(row) * row;
    }
    Tensor out = Tensor::scalar(static_cast<float>(coef * acc / m));
    if (!track({&logits})) return out;
    out.mark_on_tape();
    push([logits, out, lse, coef, m, n] {
      if (!out.has_grad()) return;
      logits.ensure_grad();
      float* g = const_cast<Tensor&>(logits).grad();
      const float dy = out.grad()[0] * coef / static_cast<float>(m);
      for (int i = 0; i < m; ++i) {
        const float row_lse = (*lse)[static_cast<size_t>(i)];
        const float* li = logits.data() + static_cast<size_t>(i) * n;
        float* gi = g + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j)
          gi[j] += dy * 2.0f * row_lse * std::exp(li[j] - row_lse);
      }
    });
    return out;
  }

  // --- routing -------------------------------------------------------------

  // Keep only the given k columns per row (idx is row-major [rows x k]),
  // setting everything else to -inf. Gradient flows through kept entries.
  // This is the masking half of top-k selection, reused when the kept set is
  // chosen externally (e.g. perturbed routing).
  Tensor mask_rows_at(const Tensor& x, const std::vector<int>& idx, int k) {
    const int m = x.rows(), n = x.cols();
    if (k <= 0 || k > n || static_cast<int>(idx.size()) != m * k)
      throw ShapeError("mask_rows_at: " + std::to_string(idx.size()) +
                       " indices for " + std::to_string(m) + " rows with k=" +
                       std::to_string(k));
    Tensor out = Tensor::full({m, n}, kNegInf);
    for (int i = 0; i < m; ++i)
      for (int r = 0; r < k; ++r) {
        const int j = idx[static_cast<size_t>(i) * k + r];
        if (j < 0 || j >= n)
          throw ShapeError("mask_rows_at: column " + std::to_string(j) +
                           " out of range [0," + std::to_string(n) + ")");
        out.data()[static_cast<size_t>(i) * n + j] =
            x.data()[static_cast<size_t>(i) * n + j];
      }
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, idx, k, n] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      const size_t rows = idx.size() / static_cast<size_t>(k);
      for (size_t i = 0; i < rows; ++i)
        for (int r = 0; r < k; ++r) {
          const size_t j = static_cast<size_t>(idx[i * k + r]);
          g[i * n + j] += dy[i * n + j];
        }
    });
    return out;
  }

  // Per row: keep the k largest entries, set the rest to -inf. Kept indices
  // are reported ordered by descending value (ties toward the lower index).
  // Gradient flows only through kept entries.
  TopkResult topk_mask_rows(const Tensor& x, int k) {
    const int m = x.rows(), n = x.cols();
    if (k <= 0 || k > n)
      throw ConfigError("topk_mask_rows: k=" + std::to_string(k) +
                        " outside [1," + std::to_string(n) + "]");
    TopkResult res;
    res.masked = Tensor::full({m, n}, kNegInf);
    res.indices.resize(static_cast<size_t>(m) * k);
    for (int i = 0; i < m; ++i) {
      const float* xi = x.data() + static_cast<size_t>(i) * n;
      int* idx = res.indices.data() + static_cast<size_t>(i) * k;
      detail::topk_row(xi, n, k, idx);
      float* oi = res.masked.data() + static_cast<size_t>(i) * n;
      for (int r = 0; r < k; ++r) oi[idx[r]] = xi[idx[r]];
    }
    if (!track({&x})) return res;
    res.masked.mark_on_tape();
    Tensor masked = res.masked;
    push([x, masked, indices = res.indices, k, n] {
      if (!masked.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = masked.grad();
      const size_t rows = indices.size() / static_cast<size_t>(k);
      for (size_t i = 0; i < rows; ++i)
        for (int r = 0; r < k; ++r) {
          const size_t j = static_cast<size_t>(indices[i * k + r]);
          g[i * n + j] += dy[i * n + j];
        }
    });
    return res;
  }

 private:
  static float sigmoid_scalar(float x) {
    if (x >= 0.0f) {
      const float e = std::exp(-x);
      return 1.0f / (1.0f + e);
    }
    const float e = std::exp(x);  // x = -inf gives e = 0, result 0
    return e / (1.0f + e);
  }

  static std::tuple<size_t, int, size_t> lane_dims(const Tensor& x, int axis) {
    const auto& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
      throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                       x.shape_string());
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(s[i]);
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<size_t>(s[i]);
    return {outer, s[static_cast<size_t>(axis)], inner};
  }

  template <typename F>
  static void for_each_lane(size_t outer, int n, size_t inner, F&& f) {
    for (size_t o = 0; o < outer; ++o)
      for (size_t in = 0; in < inner; ++in)
        f(o * static_cast<size_t>(n) * inner + in, inner);
  }

  static void softmax_lane(const float* x, float* y, size_t base, size_t stride,
                           int n) {
    float mx = kNegInf;
    for (int j = 0; j < n; ++j) mx = std::max(mx, x[base + j * stride]);
    if (mx == kNegInf) {
      for (int j = 0; j < n; ++j) y[base + j * stride] = 0.0f;
      return;
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(x[base + j * stride]) - mx);
      y[base + j * stride] = static_cast<float>(e);
      sum += e;
    }
    for (int j = 0; j < n; ++j)
      y[base + j * stride] = static_cast<float>(y[base + j * stride] / sum);
  }

  Tensor l2_normalize(const Tensor& x, bool along_rows, float eps) {
    const int m = x.rows(), n = x.cols();
    const int lanes = along_rows ? m : n;
    const int len = along_rows ? n : m;
    auto at = [&](int lane, int j) -> size_t {
      return along_rows ? static_cast<size_t>(lane) * n + j
                        : static_cast<size_t>(j) * n + lane;
    };
    Tensor out = Tensor::zeros(x.shape());
    std::vector<float> norms(static_cast<size_t>(lanes));
    for (int l = 0; l < lanes; ++l) {
      double ss = 0.0;
      for (int j = 0; j < len; ++j) {
        const float v = x.data()[at(l, j)];
        ss += static_cast<double>(v) * v;
      }
      const float nrm = std::sqrt(static_cast<float>(ss));
      norms[static_cast<size_t>(l)] = nrm;
      const float inv = 1.0f / (nrm + eps);
      for (int j = 0; j < len; ++j) out.data()[at(l, j)] = x.data()[at(l, j)] * inv;
    }
    if (!track({&x})) return out;
    out.mark_on_tape();
    push([x, out, norms = std::move(norms), along_rows, eps, m, n] {
      if (!out.has_grad()) return;
      x.ensure_grad();
      float* g = const_cast<Tensor&>(x).grad();
      const float* dy = out.grad();
      const int lanes = along_rows ? m : n;
      const int len = along_rows ? n : m;
      auto at = [&](int lane, int j) -> size_t {
        return along_rows ? static_cast<size_t>(lane) * n + j
                          : static_cast<size_t>(j) * n + lane;
      };
      for (int l = 0; l < lanes; ++l) {
        const float nrm = norms[static_cast<size_t>(l)];
        const float inv = 1.0f / (nrm + eps);
        if (nrm < 1e-20f) {
          // Degenerate all-zero lane: treat as the linear map x/eps.
          for (int j = 0; j < len; ++j) g[at(l, j)] += dy[at(l, j)] * inv;
          continue;
        }
        double dot = 0.0;  // sum dy . x
        for (int j = 0; j < len; ++j)
          dot += static_cast<double>(dy[at(l, j)]) * x.data()[at(l, j)];
        const float corr = static_cast<float>(dot) / (nrm * (nrm + eps) * (nrm + eps));
        for (int j = 0; j < len; ++j)
          g[at(l, j)] += dy[at(l, j)] * inv - x.data()[at(l, j)] * corr;
      }
    });
    return out;
  }

  static void copy_head(const float* full, float* head, int b, int h, int t,
                        int d, int dh, bool out) {
    for (int i = 0; i < t; ++i) {
      const size_t src = (static_cast<size_t>(b) * t + i) * d +
                         static_cast<size_t>(h) * dh;
      if (out)
        std::memcpy(const_cast<float*>(full) + src, head + static_cast<size_t>(i) * dh,
                    sizeof(float) * static_cast<size_t>(dh));
      else
        std::memcpy(head + static_cast<size_t>(i) * dh, full + src,
                    sizeof(float) * static_cast<size_t>(dh));
    }
  }

  static void add_head(float* full, const float* head, int b, int h, int t,
                       int d, int dh) {
    for (int i = 0; i < t; ++i) {
      float* dst = full + (static_cast<size_t>(b) * t + i) * d +
                   static_cast<size_t>(h) * dh;
      const float* src = head + static_cast<size_t>(i) * dh;
      for (int c = 0; c < dh; ++c) dst[c] += src[c];
    }
  }

  bool track(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    for (const Tensor* t : inputs)
      if (t->requires_grad() || t->on_tape()) return true;
    return false;
  }

  void push(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::vector<std::function<void()>> nodes_;
  bool recording_;
  bool consumed_ = false;
};

// Value-only score activation used by diagnostics and tests: softmax or
// sigmoid along the chosen axis of an arbitrary tensor.
inline Tensor score_activation(const Tensor& x, ScoreKind kind, int axis) {
  Tape no_grad(false);
  return kind == ScoreKind::kSigmoid ? no_grad.sigmoid(x)
                                     : no_grad.softmax(x, axis);
}

// Value-only top-k mask over a single logit vector (convenience wrapper).
inline TopkResult topk_mask(const std::vector<float>& logits, int k) {
  Tape no_grad(false);
  Tensor x = Tensor::from_values({1, static_cast<int>(logits.size())},
                                 logits);
  return no_grad.topk_mask_rows(x, k);
}

}  // namespace moelab
