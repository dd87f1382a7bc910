#pragma once

// Independent reference implementations used only by tests. They share no code
// with the library and work in double precision with the most direct loops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pixelsail/numerics/rng.hpp"
#include "pixelsail/numerics/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline pixelsail::Tensor random_tensor(pixelsail::Shape shape, pixelsail::Rng& rng,
                                       bool requires_grad = false, double scale = 1.0) {
  std::vector<float> v(pixelsail::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-scale, scale));
  return pixelsail::Tensor(std::move(shape), std::move(v), requires_grad);
}

// Entries uniform in [0.5, 1.5]: O(1) inputs for finite-difference probes.
// Same-signed values keep linear ops from producing near-cancelling gradients,
// where float32 central differences have no relative precision left.
inline pixelsail::Tensor probe_tensor(pixelsail::Shape shape, pixelsail::Rng& rng,
                                      bool requires_grad = false) {
  std::vector<float> v(pixelsail::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(0.5, 1.5));
  return pixelsail::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Vec to_double(const pixelsail::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

inline Vec softmax_row(const Vec& x) {
  double mx = *std::max_element(x.begin(), x.end());
  Vec y(x.size());
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (y[i] = std::exp(x[i] - mx));
  for (auto& v : y) v /= s;
  return y;
}

inline Vec rmsnorm_row(const Vec& x, const Vec& g, double eps = 1e-6) {
  double ms = 0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / std::sqrt(ms + eps) * g[i];
  return y;
}

// Transposed convolution by scattering each input pixel's contribution.
inline Vec conv_transpose_scatter(const Vec& x, std::size_t c, std::size_t h, std::size_t w,
                                  const Vec& k, std::size_t co, std::size_t ks,
                                  std::size_t stride) {
  const std::size_t oh = (h - 1) * stride + ks, ow = (w - 1) * stride + ks;
  Vec out(co * oh * ow, 0.0);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t dy = 0; dy < ks; ++dy)
            for (std::size_t dx = 0; dx < ks; ++dx)
              out[(o * oh + y * stride + dy) * ow + xx * stride + dx] +=
                  x[(ci * h + y) * w + xx] * k[((ci * co + o) * ks + dy) * ks + dx];
  return out;
}

// Depthwise convolution by sliding a window over a zero-padded copy.
inline Vec depthwise_window(const Vec& x, std::size_t c, std::size_t h, std::size_t w,
                            const Vec& k, std::size_t ks) {
  const std::size_t pad = ks / 2, ph = h + 2 * pad, pw = w + 2 * pad;
  Vec out(c * h * w, 0.0);
  for (std::size_t ci = 0; ci < c; ++ci) {
    Vec padded(ph * pw, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) padded[(y + pad) * pw + xx + pad] = x[(ci * h + y) * w + xx];
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double s = 0;
        for (std::size_t a = 0; a < ks; ++a)
          for (std::size_t b = 0; b < ks; ++b)
            s += padded[(y + a) * pw + xx + b] * k[(ci * ks + a) * ks + b];
        out[(ci * h + y) * w + xx] = s;
      }
  }
  return out;
}

// Bilinear sampling with half-pixel centres, computed per output pixel from its
// continuous source coordinate.
inline Vec bilinear(const Vec& x, std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                    std::size_t ow) {
  auto sample = [&](std::size_t ci, double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    auto y0 = static_cast<std::size_t>(std::floor(sy));
    auto x0 = static_cast<std::size_t>(std::floor(sx));
    std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    auto at = [&](std::size_t yy, std::size_t xx) { return x[(ci * h + yy) * w + xx]; };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
           fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
  };
  Vec out(c * oh * ow);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double sy = (i + 0.5) * static_cast<double>(h) / static_cast<double>(oh) - 0.5;
        double sx = (j + 0.5) * static_cast<double>(w) / static_cast<double>(ow) - 0.5;
        out[(ci * oh + i) * ow + j] = sample(ci, sy, sx);
      }
  return out;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline double max_abs_diff(const Vec& a, const pixelsail::Tensor& t) {
  double m = 0;
  auto d = t.data();
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - d[i]));
  return a.size() == d.size() ? m : INFINITY;
}

}  // namespace oracle
