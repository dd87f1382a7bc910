#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pixelsail/data/io.hpp"
#include "pixelsail/numerics/tensor.hpp"

namespace pixelsail {

struct PcaOptions {
  std::size_t components = 3;
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

struct PcaResult {
  std::vector<std::vector<double>> axes;         // unit loadings, one per component
  std::vector<double> variances;                 // eigenvalues, non-increasing
  std::vector<std::vector<double>> projections;  // [component][pixel]
};

/// Top principal components of the per-pixel C-vectors of a [C × h × w] map,
/// by power iteration with deflation. Components past the rank come back as
/// zero axes with zero variance. Each axis is signed so its largest-magnitude
/// loading is positive.
inline PcaResult pca_project(const Tensor& features, const PcaOptions& opts = {}) {
  if (features.rank() != 3) throw ShapeError("pca: expected a [C x h x w] feature map, got " + shape_str(features.shape()));
  const std::size_t c = features.dim(0), n = features.dim(1) * features.dim(2);
  if (n < 3) throw ShapeError("pca: needs at least 3 pixels");
  const auto& x = features.data();

  std::vector<double> mean(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t p = 0; p < n; ++p) mean[k] += x[k * n + p];
    mean[k] /= static_cast<double>(n);
  }
  std::vector<double> cov(c * c, 0.0);
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = a; b < c; ++b) {
      double s = 0.0;
      for (std::size_t p = 0; p < n; ++p) s += (x[a * n + p] - mean[a]) * (x[b * n + p] - mean[b]);
      cov[a * c + b] = cov[b * c + a] = s / static_cast<double>(n);
    }
  double trace = 0.0;
  for (std::size_t k = 0; k < c; ++k) trace += cov[k * c + k];

  PcaResult r;
  for (std::size_t comp = 0; comp < opts.components; ++comp) {
    std::vector<double> v(c), next(c);
    for (std::size_t k = 0; k < c; ++k) v[k] = 1.0 + 0.5 * std::sin(static_cast<double>(k + 1));
    double lambda = 0.0;
    for (std::size_t it = 0; it < opts.max_iters; ++it) {
      for (std::size_t a = 0; a < c; ++a) {
        double s = 0.0;
        for (std::size_t b = 0; b < c; ++b) s += cov[a * c + b] * v[b];
        next[a] = s;
      }
      double norm = 0.0;
      for (double e : next) norm += e * e;
      norm = std::sqrt(norm);
      if (norm <= 1e-12 * std::max(trace, 1e-30)) {
        lambda = 0.0;
        break;
      }
      double delta = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        next[k] /= norm;
        delta += (next[k] - v[k]) * (next[k] - v[k]);
      }
      v.swap(next);
      lambda = norm;
      if (std::sqrt(delta) < opts.tol) break;
    }
    if (lambda == 0.0) std::fill(v.begin(), v.end(), 0.0);
    std::size_t big = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (std::abs(v[k]) > std::abs(v[big])) big = k;
    if (v[big] < 0)
      for (double& e : v) e = -e;
    // Rayleigh quotient is the variance along v.
    double var = 0.0;
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) var += v[a] * cov[a * c + b] * v[b];
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) cov[a * c + b] -= var * v[a] * v[b];

    std::vector<double> proj(n, 0.0);
    for (std::size_t k = 0; k < c; ++k)
      if (v[k] != 0.0)
        for (std::size_t p = 0; p < n; ++p) proj[p] += (x[k * n + p] - mean[k]) * v[k];
    r.axes.push_back(std::move(v));
    r.variances.push_back(std::max(var, 0.0));
    r.projections.push_back(std::move(proj));
  }
  return r;
}

/// RGB rendering of the top three components, each min-max scaled to
/// [0, 255]; a channel with no spread is 0.
inline RgbImage pca_feature_image(const Tensor& features, const PcaOptions& opts = {}) {
  PcaOptions o = opts;
  o.components = 3;
  const auto r = pca_project(features, o);
  RgbImage img{features.dim(1), features.dim(2), {}};
  const std::size_t n = img.h * img.w;
  img.pixels.assign(3 * n, 0);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto& p = r.projections[ch];
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    const double range = *hi - *lo;
    if (!(range > 1e-12 * std::max(1.0, std::abs(*hi) + std::abs(*lo)))) continue;
    for (std::size_t i = 0; i < n; ++i)
      img.pixels[ch * n + i] = static_cast<std::uint8_t>(std::lround((p[i] - *lo) / range * 255.0));
  }
  return img;
}

}  // namespace pixelsail
