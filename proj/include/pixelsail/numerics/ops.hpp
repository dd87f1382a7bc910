#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pixelsail/numerics/tensor.hpp"

// Differentiable operator set. Every op validates shapes, computes its forward
// result eagerly and, when an input requires gradients, records a closure that
// maps the output gradient onto input gradients.

namespace pixelsail::ops {

namespace kernels {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

// C[m×n] += A[m×k] · B[k×n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
                    float* c) {
  MapM(c, m, n).noalias() += MapC(a, m, k) * MapC(b, k, n);
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
                    float* c) {
  MapM(c, m, n).noalias() += MapC(a, m, k) * MapC(b, n, k).transpose();
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
                    float* c) {
  MapM(c, m, n).noalias() += MapC(a, k, m).transpose() * MapC(b, k, n);
}

}  // namespace kernels

namespace detail_ops {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                " tensor, got " + shape_str(t.shape()));
}

inline std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace detail_ops

using pixelsail::detail::data_of;
using pixelsail::detail::grad_of;
using pixelsail::detail::make_result;
using pixelsail::detail::Node;

/// Matrix product of a[m×k] and b[k×n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail_ops::require_rank(a, 2, "matmul");
  detail_ops::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail_ops::require(b.dim(0) == k, "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                         " x " + shape_str(b.shape()));
  std::vector<float> out(m * n, 0.0f);
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
    if (float* ga = grad_of(o, 0)) kernels::gemm_nt(m, n, k, o.grad.data(), data_of(o, 1), ga);
    if (float* gb = grad_of(o, 1)) kernels::gemm_tn(k, m, n, data_of(o, 0), o.grad.data(), gb);
  }, "matmul");
}

/// a[m×k] · b[n×k]ᵀ without materialising the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail_ops::require_rank(a, 2, "matmul_nt");
  detail_ops::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  detail_ops::require(b.dim(1) == k, "matmul_nt: inner dimensions differ, " +
                                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                                         "^T");
  std::vector<float> out(m * n, 0.0f);
  kernels::gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
    if (float* ga = grad_of(o, 0)) kernels::gemm_nn(m, n, k, o.grad.data(), data_of(o, 1), ga);
    if (float* gb = grad_of(o, 1)) kernels::gemm_tn(n, m, k, o.grad.data(), data_of(o, 0), gb);
  }, "matmul_nt");
}

inline Tensor transpose(const Tensor& a) {
  detail_ops::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<float> out(r * c);
  auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  }, "transpose");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  detail_ops::require(shape_numel(shape) == a.numel(),
                      "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return make_result(std::move(shape), a.to_vector(), {a}, [](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  }, "reshape");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                                  " vs " + shape_str(b.shape()));
  std::vector<float> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (std::size_t p = 0; p < 2; ++p)
      if (float* g = grad_of(o, p))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) +
                                                  " vs " + shape_str(b.shape()));
  std::vector<float> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (float* g = grad_of(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  }, "sub");
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail_ops::require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                                  " vs " + shape_str(b.shape()));
  std::vector<float> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    const float* x = data_of(o, 0);
    const float* y = data_of(o, 1);
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i];
    if (float* g = grad_of(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x[i];
  }, "mul");
}

inline Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
  }, "scale");
}

/// x[..×n] + b[n], broadcast over leading axes.
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  detail_ops::require_rank(b, 1, "add_row_bias");
  const std::size_t n = b.dim(0);
  detail_ops::require(x.rank() >= 1 && detail_ops::last_dim(x) == n,
                      "add_row_bias: bias " + shape_str(b.shape()) + " does not match " +
                          shape_str(x.shape()));
  std::vector<float> out(x.numel());
  auto xs = x.data(), bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + bs[i % n];
  return make_result(x.shape(), std::move(out), {x, b}, [n](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (float* g = grad_of(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % n] += o.grad[i];
  }, "add_row_bias");
}

/// x[C×h×w] + b[C], broadcast over the spatial plane.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  detail_ops::require_rank(x, 3, "add_channel_bias");
  detail_ops::require_rank(b, 1, "add_channel_bias");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  detail_ops::require(b.dim(0) == c, "add_channel_bias: bias " + shape_str(b.shape()) +
                                         " does not match " + shape_str(x.shape()));
  std::vector<float> out(x.numel());
  auto xs = x.data(), bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + bs[i / plane];
  return make_result(x.shape(), std::move(out), {x, b}, [plane](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (float* g = grad_of(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i / plane] += o.grad[i];
  }, "add_channel_bias");
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<float> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-x[i]));
  return make_result(a.shape(), std::move(out), {a}, [](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const float s = o.data[i];
        g[i] += o.grad[i] * s * (1.0f - s);
      }
  }, "sigmoid");
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& a) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kA = 0.044715f;
  std::vector<float> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = x[i];
    out[i] = 0.5f * v * (1.0f + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_result(a.shape(), std::move(out), {a}, [](Node& o) {
    float* g = grad_of(o, 0);
    if (!g) return;
    const float* x = data_of(o, 0);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const float v = x[i];
      const float t = std::tanh(kC * (v + kA * v * v * v));
      const float dt = (1.0f - t * t) * kC * (1.0f + 3.0f * kA * v * v);
      g[i] += o.grad[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
    }
  }, "gelu");
}

namespace detail_ops {

// Shared row softmax; `allow` (optional, rows×n) masks entries to probability zero.
inline Tensor softmax_rows(const Tensor& x, const std::vector<std::uint8_t>* allow) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = n ? x.numel() / n : 0;
  std::vector<float> out(x.numel(), 0.0f);
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xs.data() + r * n;
    float* y = out.data() + r * n;
    const std::uint8_t* ok = allow ? allow->data() + r * n : nullptr;
    float mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j)
      if (!ok || ok[j]) mx = std::max(mx, in[j]);
    if (mx == -INFINITY) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (ok && !ok[j]) continue;
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  }
  return make_result(x.shape(), std::move(out), {x}, [n, rows](Node& o) {
    float* g = grad_of(o, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const float* y = o.data.data() + r * n;
      const float* gy = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(y[j]) * gy[j];
      const float d = static_cast<float>(dot);
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - d);
    }
  }, "softmax");
}

}  // namespace detail_ops

/// Softmax over the last axis, max-subtracted.
inline Tensor softmax(const Tensor& x) {
  detail_ops::require(x.rank() >= 1, "softmax: scalar input");
  return detail_ops::softmax_rows(x, nullptr);
}

/// Softmax over the last axis of x[r×n] restricted to entries where allow[r·n + j] != 0.
inline Tensor masked_softmax(const Tensor& x, const std::vector<std::uint8_t>& allow) {
  detail_ops::require_rank(x, 2, "masked_softmax");
  detail_ops::require(allow.size() == x.numel(), "masked_softmax: mask size " +
                                                     std::to_string(allow.size()) +
                                                     " does not match " + shape_str(x.shape()));
  return detail_ops::softmax_rows(x, &allow);
}

inline constexpr float kRmsNormEps = 1e-6f;

/// Row-wise RMS normalisation of x[..×C] followed by a per-feature gain.
inline Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps = kRmsNormEps) {
  detail_ops::require_rank(gain, 1, "rmsnorm");
  const std::size_t c = gain.dim(0);
  detail_ops::require(x.rank() >= 1 && detail_ops::last_dim(x) == c,
                      "rmsnorm: gain " + shape_str(gain.shape()) + " does not match " +
                          shape_str(x.shape()));
  const std::size_t rows = x.numel() / c;
  std::vector<float> out(x.numel());
  std::vector<float> inv(rows);
  auto xs = x.data(), gs = gain.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += static_cast<double>(xs[r * c + j]) * xs[r * c + j];
    inv[r] = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(c) + eps));
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xs[r * c + j] * inv[r] * gs[j];
  }
  return make_result(x.shape(), std::move(out), {x, gain}, [c, rows, inv = std::move(inv)](Node& o) {
    const float* xs = data_of(o, 0);
    const float* gs = data_of(o, 1);
    float* gx = grad_of(o, 0);
    float* gg = grad_of(o, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* xr = xs + r * c;
      const float* dy = o.grad.data() + r * c;
      if (gg)
        for (std::size_t j = 0; j < c; ++j) gg[j] += dy[j] * xr[j] * inv[r];
      if (gx) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += static_cast<double>(dy[j]) * gs[j] * xr[j];
        const float k = static_cast<float>(dot) * inv[r] * inv[r] * inv[r] / static_cast<float>(c);
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += inv[r] * gs[j] * dy[j] - k * xr[j];
      }
    }
  }, "rmsnorm");
}

/// Rows of table[V×C] selected by ids; the gradient scatter-adds into the table.
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail_ops::require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), c = table.dim(1);
  std::vector<float> out(ids.size() * c);
  auto ts = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail_ops::require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab,
                        "embedding: id " + std::to_string(ids[i]) + " outside table " +
                            shape_str(table.shape()));
    std::copy_n(ts.data() + static_cast<std::size_t>(ids[i]) * c, c, out.data() + i * c);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result({ids.size(), c}, std::move(out), {table}, [c, idx = std::move(idx)](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < idx.size(); ++i) {
        float* dst = g + static_cast<std::size_t>(idx[i]) * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += o.grad[i * c + j];
      }
  }, "embedding");
}

inline Tensor gather_rows(const Tensor& x, std::span<const int> rows) { return embedding(x, rows); }

/// Columns [start, start + width) of x[r×c].
inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
  detail_ops::require_rank(x, 2, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  detail_ops::require(start + width <= c, "slice_cols: range exceeds " + shape_str(x.shape()));
  std::vector<float> out(r * width);
  auto xs = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xs.data() + i * c + start, width, out.data() + i * width);
  return make_result({r, width}, std::move(out), {x}, [r, c, start, width](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < width; ++j) g[i * c + start + j] += o.grad[i * width + j];
  }, "slice_cols");
}

/// Rows [start, start + count) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  detail_ops::require_rank(x, 2, "slice_rows");
  const std::size_t c = x.dim(1);
  detail_ops::require(start + count <= x.dim(0), "slice_rows: range exceeds " + shape_str(x.shape()));
  auto xs = x.data();
  std::vector<float> out(xs.begin() + static_cast<std::ptrdiff_t>(start * c),
                         xs.begin() + static_cast<std::ptrdiff_t>((start + count) * c));
  return make_result({count, c}, std::move(out), {x}, [start, c](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[start * c + i] += o.grad[i];
  }, "slice_rows");
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  detail_ops::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].dim(0);
  std::size_t total = 0;
  for (auto& p : parts) {
    detail_ops::require_rank(p, 2, "concat_cols");
    detail_ops::require(p.dim(0) == r, "concat_cols: row count mismatch");
    total += p.dim(1);
  }
  std::vector<float> out(r * total);
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto ps = p.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(ps.data() + i * w, w, out.data() + i * total + off);
    widths.push_back(w);
    off += w;
  }
  return make_result({r, total}, std::move(out), parts, [r, total, widths](Node& o) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t w = widths[p];
      if (float* g = grad_of(o, p))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += o.grad[i * total + off + j];
      off += w;
    }
  }, "concat_cols");
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  detail_ops::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts[0].dim(1);
  std::size_t rows = 0;
  for (auto& p : parts) {
    detail_ops::require_rank(p, 2, "concat_rows");
    detail_ops::require(p.dim(1) == c, "concat_rows: column count mismatch");
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(rows * c);
  std::vector<std::size_t> sizes;
  for (auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  return make_result({rows, c}, std::move(out), parts, [sizes](Node& o) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < sizes.size(); ++p) {
      if (float* g = grad_of(o, p))
        for (std::size_t i = 0; i < sizes[p]; ++i) g[i] += o.grad[off + i];
      off += sizes[p];
    }
  }, "concat_rows");
}

/// Replace rows `positions` of base[r×c] with the rows of src[positions.size()×c].
inline Tensor overwrite_rows(const Tensor& base, std::span<const int> positions, const Tensor& src) {
  detail_ops::require_rank(base, 2, "overwrite_rows");
  detail_ops::require_rank(src, 2, "overwrite_rows");
  const std::size_t c = base.dim(1);
  detail_ops::require(src.dim(1) == c && src.dim(0) == positions.size(),
                      "overwrite_rows: source " + shape_str(src.shape()) + " does not match");
  std::vector<float> out = base.to_vector();
  std::vector<std::uint8_t> replaced(base.dim(0), 0);
  auto ss = src.data();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto p = static_cast<std::size_t>(positions[i]);
    detail_ops::require(p < base.dim(0), "overwrite_rows: position out of range");
    std::copy_n(ss.data() + i * c, c, out.data() + p * c);
    replaced[p] = 1;
  }
  std::vector<int> pos(positions.begin(), positions.end());
  return make_result(base.shape(), std::move(out), {base, src},
                     [c, pos = std::move(pos), replaced = std::move(replaced)](Node& o) {
    if (float* g = grad_of(o, 0))
      for (std::size_t r = 0; r < replaced.size(); ++r)
        if (!replaced[r])
          for (std::size_t j = 0; j < c; ++j) g[r * c + j] += o.grad[r * c + j];
    if (float* g = grad_of(o, 1))
      for (std::size_t i = 0; i < pos.size(); ++i)
        for (std::size_t j = 0; j < c; ++j)
          g[i * c + j] += o.grad[static_cast<std::size_t>(pos[i]) * c + j];
  }, "overwrite_rows");
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result({1}, {static_cast<float>(acc)}, {x}, [](Node& o) {
    if (float* g = grad_of(o, 0)) {
      const std::size_t n = o.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    }
  }, "sum");
}

inline Tensor mean(const Tensor& x) {
  detail_ops::require(x.numel() > 0, "mean: empty tensor");
  const float n = static_cast<float>(x.numel());
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result({1}, {static_cast<float>(acc / x.numel())}, {x}, [n](Node& o) {
    if (float* g = grad_of(o, 0)) {
      const std::size_t count = o.parents[0]->data.size();
      for (std::size_t i = 0; i < count; ++i) g[i] += o.grad[0] / n;
    }
  }, "mean");
}

/// Transposed 2-D convolution of x[C×h×w] with kernel[C×C'×s×s] at stride s.
/// Kernel size equals stride, so output patches never overlap.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel, std::size_t stride) {
  detail_ops::require_rank(x, 3, "conv_transpose2d");
  detail_ops::require_rank(kernel, 4, "conv_transpose2d");
  if (kernel.dim(2) != stride || kernel.dim(3) != stride) {
    throw ConfigError("conv_transpose2d: kernel " + shape_str(kernel.shape()) +
                      " must have spatial size equal to stride " + std::to_string(stride));
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  detail_ops::require(kernel.dim(0) == cin, "conv_transpose2d: kernel " +
                                                shape_str(kernel.shape()) + " vs input " +
                                                shape_str(x.shape()));
  const std::size_t cout = kernel.dim(1), s = stride, hw = h * w, taps = cout * s * s;
  const std::size_t oh = h * s, ow = w * s;
  // cols[(c', dy, dx), p] = sum_c kernel[c, (c', dy, dx)] * x[c, p]
  std::vector<float> cols(taps * hw, 0.0f);
  kernels::gemm_tn(taps, cin, hw, kernel.data().data(), x.data().data(), cols.data());
  std::vector<float> out(cout * oh * ow);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t dy = 0; dy < s; ++dy)
      for (std::size_t dx = 0; dx < s; ++dx) {
        const float* src = cols.data() + ((co * s + dy) * s + dx) * hw;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx)
            out[(co * oh + y * s + dy) * ow + xx * s + dx] = src[y * w + xx];
      }
  return make_result({cout, oh, ow}, std::move(out), {x, kernel},
                     [cin, cout, h, w, s, hw, taps, oh, ow](Node& o) {
    std::vector<float> dcols(taps * hw);
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t dy = 0; dy < s; ++dy)
        for (std::size_t dx = 0; dx < s; ++dx) {
          float* dst = dcols.data() + ((co * s + dy) * s + dx) * hw;
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              dst[y * w + xx] = o.grad[(co * oh + y * s + dy) * ow + xx * s + dx];
        }
    if (float* gx = grad_of(o, 0)) kernels::gemm_nn(cin, taps, hw, data_of(o, 1), dcols.data(), gx);
    if (float* gk = grad_of(o, 1)) kernels::gemm_nt(cin, hw, taps, data_of(o, 0), dcols.data(), gk);
  }, "conv_transpose2d");
}

/// Per-channel convolution of x[C×h×w] with kernel[C×k×k], zero "same" padding.
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  detail_ops::require_rank(x, 3, "depthwise_conv2d");
  detail_ops::require_rank(kernel, 3, "depthwise_conv2d");
  const std::size_t k = kernel.dim(1);
  if (k % 2 == 0 || kernel.dim(2) != k) {
    throw ConfigError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) +
                      " must be square with odd size");
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  detail_ops::require(kernel.dim(0) == c, "depthwise_conv2d: kernel " +
                                              shape_str(kernel.shape()) + " vs input " +
                                              shape_str(x.shape()));
  const long r = static_cast<long>(k / 2);
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  auto xs = x.data(), ks = kernel.data();
  std::vector<float> out(x.numel(), 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* xin = xs.data() + ch * h * w;
    const float* kk = ks.data() + ch * k * k;
    float* y = out.data() + ch * h * w;
    for (long i = 0; i < lh; ++i)
      for (long j = 0; j < lw; ++j) {
        float acc = 0.0f;
        for (long di = -r; di <= r; ++di) {
          const long yi = i + di;
          if (yi < 0 || yi >= lh) continue;
          for (long dj = -r; dj <= r; ++dj) {
            const long xj = j + dj;
            if (xj < 0 || xj >= lw) continue;
            acc += kk[(di + r) * static_cast<long>(k) + dj + r] * xin[yi * lw + xj];
          }
        }
        y[i * lw + j] = acc;
      }
  }
  return make_result(x.shape(), std::move(out), {x, kernel}, [c, h, w, k, r](Node& o) {
    const long lh = static_cast<long>(h), lw = static_cast<long>(w), lk = static_cast<long>(k);
    const float* xs = data_of(o, 0);
    const float* ks = data_of(o, 1);
    float* gx = grad_of(o, 0);
    float* gk = grad_of(o, 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* xin = xs + ch * h * w;
      const float* kk = ks + ch * k * k;
      const float* dy = o.grad.data() + ch * h * w;
      for (long i = 0; i < lh; ++i)
        for (long j = 0; j < lw; ++j) {
          const float g = dy[i * lw + j];
          if (g == 0.0f) continue;
          for (long di = -r; di <= r; ++di) {
            const long yi = i + di;
            if (yi < 0 || yi >= lh) continue;
            for (long dj = -r; dj <= r; ++dj) {
              const long xj = j + dj;
              if (xj < 0 || xj >= lw) continue;
              const long t = (di + r) * lk + dj + r;
              if (gx) gx[ch * h * w + static_cast<std::size_t>(yi * lw + xj)] += g * kk[t];
              if (gk) gk[ch * k * k + static_cast<std::size_t>(t)] += g * xin[yi * lw + xj];
            }
          }
        }
    }
  }, "depthwise_conv2d");
}

namespace detail_ops {

struct LerpAxis {
  std::vector<std::size_t> lo, hi;
  std::vector<float> frac;
};

// Half-pixel-centre sampling positions (the align_corners=false convention).
inline LerpAxis lerp_axis(std::size_t in, std::size_t out) {
  LerpAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = static_cast<float>(src - static_cast<double>(lo));
  }
  return a;
}

}  // namespace detail_ops

/// Bilinear resize of x[C×h×w] to [C×out_h×out_w] with half-pixel centres and edge clamping.
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  detail_ops::require_rank(x, 3, "bilinear_resize");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  detail_ops::require(h > 0 && w > 0 && out_h > 0 && out_w > 0, "bilinear_resize: empty grid");
  auto ay = detail_ops::lerp_axis(h, out_h);
  auto ax = detail_ops::lerp_axis(w, out_w);
  auto xs = x.data();
  std::vector<float> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = xs.data() + ch * h * w;
    float* dst = out.data() + ch * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const float fy = ay.frac[i];
      const float* r0 = src + ay.lo[i] * w;
      const float* r1 = src + ay.hi[i] * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const float fx = ax.frac[j];
        const float top = r0[ax.lo[j]] * (1.0f - fx) + r0[ax.hi[j]] * fx;
        const float bot = r1[ax.lo[j]] * (1.0f - fx) + r1[ax.hi[j]] * fx;
        dst[i * out_w + j] = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  return make_result({c, out_h, out_w}, std::move(out), {x},
                     [c, h, w, out_h, out_w, ay = std::move(ay), ax = std::move(ax)](Node& o) {
    float* g = grad_of(o, 0);
    if (!g) return;
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* gs = g + ch * h * w;
      const float* dy = o.grad.data() + ch * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const float fy = ay.frac[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const float fx = ax.frac[j];
          const float d = dy[i * out_w + j];
          gs[ay.lo[i] * w + ax.lo[j]] += d * (1.0f - fy) * (1.0f - fx);
          gs[ay.lo[i] * w + ax.hi[j]] += d * (1.0f - fy) * fx;
          gs[ay.hi[i] * w + ax.lo[j]] += d * fy * (1.0f - fx);
          gs[ay.hi[i] * w + ax.hi[j]] += d * fy * fx;
        }
      }
    }
  }, "bilinear_resize");
}

}  // namespace pixelsail::ops
