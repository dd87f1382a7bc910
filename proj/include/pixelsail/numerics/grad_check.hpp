#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "pixelsail/numerics/tensor.hpp"

namespace pixelsail {

struct GradCheckOptions {
  float step = 1e-2f;
  /// Probe only these flat indices of x; all of them when empty.
  std::vector<std::size_t> indices;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the reverse-mode gradient of scalar f at x with central finite
/// differences. Per element the error is |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-6).
///
/// `f` is re-evaluated with x perturbed in place; x must be a requires_grad leaf.
inline GradCheckResult grad_check_detailed(const std::function<Tensor()>& f, Tensor& x,
                                           const GradCheckOptions& opts = {}) {
  x.zero_grad();
  Tensor y = f();
  y.backward();
  std::vector<float> analytic(x.grad().begin(), x.grad().end());
  if (analytic.size() != x.numel()) analytic.assign(x.numel(), 0.0f);

  std::vector<std::size_t> indices = opts.indices;
  if (indices.empty())
    for (std::size_t i = 0; i < x.numel(); ++i) indices.push_back(i);

  GradCheckResult result;
  auto data = x.mutable_data();
  for (auto i : indices) {
    const float saved = data[i];
    data[i] = saved + opts.step;
    const double up = f().item();
    data[i] = saved - opts.step;
    const double down = f().item();
    data[i] = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double ad = analytic[i];
    const double err = std::abs(ad - numeric) / (std::abs(ad) + std::abs(numeric) + 1e-6);
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = ad;
      result.numeric = numeric;
    }
  }
  x.zero_grad();
  return result;
}

inline double grad_check(const std::function<Tensor()>& f, Tensor& x,
                         const GradCheckOptions& opts = {}) {
  return grad_check_detailed(f, x, opts).max_rel_error;
}

}  // namespace pixelsail
