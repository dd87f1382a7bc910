#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "pixelsail/errors.hpp"
#include "pixelsail/numerics/tensor.hpp"

namespace pixelsail {

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

/// First and second moment buffers for one parameter.
struct AdamWState {
  std::vector<float> m;
  std::vector<float> v;
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// `step` is 1-based. With lr == 0 the parameter is left bit-identical.
inline void adamw_step(Tensor& param, AdamWState& state, const AdamWConfig& cfg, float lr,
                       long step) {
  auto p = param.mutable_data();
  if (state.m.size() != p.size()) {
    state.m.assign(p.size(), 0.0f);
    state.v.assign(p.size(), 0.0f);
  }
  if (!param.has_grad()) return;
  auto g = param.grad();
  const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(step));
  const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0f - cfg.beta1) * g[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
    const float mhat = state.m[i] / bc1;
    const float vhat = state.v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
  }
}

/// Linear warm-up over ceil(warmup_ratio * total) steps, then cosine decay to 0.
/// `step` is 0-based.
inline float cosine_lr(long step, long total, float warmup_ratio, float base) {
  if (total <= 0) throw ConfigError("cosine_lr: total steps must be positive");
  if (warmup_ratio < 0.0f || warmup_ratio >= 1.0f)
    throw ConfigError("cosine_lr: warmup_ratio must lie in [0, 1)");
  const long warmup = static_cast<long>(std::ceil(static_cast<double>(warmup_ratio) * total));
  if (step < warmup) return base * static_cast<float>(step + 1) / static_cast<float>(warmup);
  if (step >= total) return 0.0f;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(std::max(1L, total - warmup));
  return static_cast<float>(base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace pixelsail
