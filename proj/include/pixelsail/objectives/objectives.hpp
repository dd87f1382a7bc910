#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pixelsail/backbone/model.hpp"
#include "pixelsail/errors.hpp"
#include "pixelsail/grounding/mask.hpp"
#include "pixelsail/numerics/ops.hpp"
#include "pixelsail/numerics/rng.hpp"

namespace pixelsail {

struct LossWeights {
  float alpha = 0.5f;   // distillation
  float lambda = 2.0f;  // mask cross-entropy
  float beta = 0.5f;    // dice

  void validate() const {
    if (!(alpha >= 0 && lambda >= 0 && beta >= 0))
      throw ConfigError("loss weights must be non-negative (alpha " + std::to_string(alpha) +
                        ", lambda " + std::to_string(lambda) + ", beta " + std::to_string(beta) + ")");
  }
};

/// Mean next-token cross-entropy over rows with loss_mask set; 0 when none are.
/// Row t of `logits` predicts targets[t].
inline Tensor ntp_loss(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& loss_mask) {
  if (logits.rank() != 2 || targets.size() != logits.dim(0) || loss_mask.size() != logits.dim(0))
    throw ShapeError("ntp_loss: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets / " + std::to_string(loss_mask.size()) +
                     " mask entries");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!loss_mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab)
      throw DataError("ntp_loss: target id " + std::to_string(targets[r]) + " outside vocabulary");
    ++count;
  }
  if (count == 0) return detail::make_result({1}, {0.0f}, {logits}, [](detail::Node&) {}, "ntp_loss");

  auto x = logits.data();
  std::vector<float> lse(rows, 0.0f);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!loss_mask[r]) continue;
    const float* row = x.data() + r * vocab;
    float mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) s += std::exp(static_cast<double>(row[j] - mx));
    const double l = mx + std::log(s);
    lse[r] = static_cast<float>(l);
    total += l - row[targets[r]];
  }
  const float inv = 1.0f / static_cast<float>(count);
  return detail::make_result(
      {1}, {static_cast<float>(total / static_cast<double>(count))}, {logits},
      [targets, loss_mask, lse = std::move(lse), rows, vocab, inv](detail::Node& o) {
        float* g = detail::grad_of(o, 0);
        if (!g) return;
        const float* xd = detail::data_of(o, 0);
        const float scale = o.grad[0] * inv;
        for (std::size_t r = 0; r < rows; ++r) {
          if (!loss_mask[r]) continue;
          for (std::size_t j = 0; j < vocab; ++j)
            g[r * vocab + j] += scale * std::exp(xd[r * vocab + j] - lse[r]);
          g[r * vocab + static_cast<std::size_t>(targets[r])] -= scale;
        }
      },
      "ntp_loss");
}

/// Mean per-element binary cross-entropy between sigmoid(logits) and 0/1 targets.
inline Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  const std::size_t n = logits.numel();
  if (n == 0) throw ShapeError("bce_with_logits: empty input");
  auto x = logits.data(), t = targets.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    acc += std::max(v, 0.0) - v * t[i] + std::log1p(std::exp(-std::abs(v)));
  }
  return detail::make_result({1}, {static_cast<float>(acc / static_cast<double>(n))}, {logits, targets},
                             [n](detail::Node& o) {
                               float* g = detail::grad_of(o, 0);
                               if (!g) return;
                               const float* xd = detail::data_of(o, 0);
                               const float* td = detail::data_of(o, 1);
                               const float scale = o.grad[0] / static_cast<float>(n);
                               for (std::size_t i = 0; i < n; ++i)
                                 g[i] += scale * (1.0f / (1.0f + std::exp(-xd[i])) - td[i]);
                             },
                             "bce_with_logits");
}

/// Dice loss 1 − (2Σpg + 1)/(Σp + Σg + 1) with p = sigmoid(logits), computed
/// per mask over logits[K × h × w] and averaged over the K masks.
inline Tensor dice_loss(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape() || logits.rank() != 3)
    throw ShapeError("dice_loss: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  const std::size_t k = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  if (k == 0) throw ShapeError("dice_loss: no masks");
  auto x = logits.data(), t = targets.data();
  std::vector<float> p(x.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 1.0f / (1.0f + std::exp(-x[i]));
  std::vector<double> num(k), den(k);
  double acc = 0.0;
  for (std::size_t m = 0; m < k; ++m) {
    double inter = 0, sp = 0, sg = 0;
    for (std::size_t i = m * hw; i < (m + 1) * hw; ++i) {
      inter += static_cast<double>(p[i]) * t[i];
      sp += p[i];
      sg += t[i];
    }
    num[m] = 2.0 * inter + 1.0;
    den[m] = sp + sg + 1.0;
    acc += 1.0 - num[m] / den[m];
  }
  return detail::make_result(
      {1}, {static_cast<float>(acc / static_cast<double>(k))}, {logits, targets},
      [p = std::move(p), num = std::move(num), den = std::move(den), k, hw](detail::Node& o) {
        float* g = detail::grad_of(o, 0);
        if (!g) return;
        const float* td = detail::data_of(o, 1);
        const double scale = static_cast<double>(o.grad[0]) / static_cast<double>(k);
        for (std::size_t m = 0; m < k; ++m) {
          const double d2 = den[m] * den[m];
          for (std::size_t i = m * hw; i < (m + 1) * hw; ++i) {
            const double dl_dp = -(2.0 * td[i] * den[m] - num[m]) / d2;
            g[i] += static_cast<float>(scale * dl_dp * p[i] * (1.0f - p[i]));
          }
        }
      },
      "dice_loss");
}

/// 0/1 target tensor [K × h × w] from binary masks.
inline Tensor mask_targets(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw DataError("mask_targets: no masks");
  const std::size_t h = masks[0].h, w = masks[0].w;
  std::vector<float> v;
  v.reserve(masks.size() * h * w);
  for (const auto& m : masks) {
    if (m.h != h || m.w != w) throw ShapeError("mask_targets: masks differ in size");
    for (auto b : m.bits) v.push_back(b ? 1.0f : 0.0f);
  }
  return Tensor({masks.size(), h, w}, std::move(v));
}

struct SegLoss {
  Tensor ce;     // unweighted mean BCE
  Tensor dice;   // unweighted dice
  Tensor total;  // λ·ce + β·dice
};

/// Combines already computed components; terms with weight 0 are left out of
/// the graph entirely.
inline Tensor combine_terms(const std::vector<std::pair<Tensor, float>>& terms) {
  Tensor out;
  for (const auto& [t, w] : terms) {
    if (w == 0.0f) continue;
    Tensor term = w == 1.0f ? t : ops::scale(t, w);
    out = out.defined() ? ops::add(out, term) : term;
  }
  return out.defined() ? out : Tensor::scalar(0.0f);
}

/// Mask loss on logits already at ground-truth resolution.
inline SegLoss seg_loss(const Tensor& logits, const Tensor& targets, const LossWeights& w) {
  SegLoss out;
  out.ce = bce_with_logits(logits, targets);
  out.dice = dice_loss(logits, targets);
  out.total = combine_terms({{out.ce, w.lambda}, {out.dice, w.beta}});
  return out;
}

/// L = L_ntp + L_seg + α·L_distill. l_seg already carries λ and β.
inline Tensor total_loss(const Tensor& l_ntp, const Tensor& l_seg, const Tensor& l_distill,
                         const LossWeights& w) {
  std::vector<std::pair<Tensor, float>> terms = {{l_ntp, 1.0f}};
  if (l_seg.defined()) terms.push_back({l_seg, 1.0f});
  if (l_distill.defined()) terms.push_back({l_distill, w.alpha});
  return combine_terms(terms);
}

enum class TeacherKind { kM2F, kSam2 };

inline const char* teacher_key(TeacherKind k) { return k == TeacherKind::kM2F ? "m2f" : "sam2"; }

/// Frozen expert features. m2f targets the upsampled map F_h, sam2 the
/// low-resolution map F_l; either may be absent.
struct TeacherFeatures {
  Tensor m2f;   // [C_t1 × h1 × w1]
  Tensor sam2;  // [C_t2 × h2 × w2]
  std::string source = "synthetic";
};

/// Learnable student→teacher channel projections.
struct DistillAlign {
  Tensor proj_high;  // [C × C_t1]
  Tensor proj_low;   // [C × C_t2]

  static DistillAlign init(std::size_t channels, std::size_t teacher_high, std::size_t teacher_low, Rng& rng) {
    DistillAlign a;
    const double s = 1.0 / std::sqrt(static_cast<double>(channels));
    a.proj_high = init_normal({channels, teacher_high}, rng, s);
    a.proj_low = init_normal({channels, teacher_low}, rng, s);
    return a;
  }

  void collect(ParamList& out, const std::string& prefix = "distill.") const {
    out.emplace_back(prefix + "proj_high", proj_high);
    out.emplace_back(prefix + "proj_low", proj_low);
  }
};

/// MSE between the channel-projected student map [C × h × w] and the teacher
/// bilinearly resized to h × w.
inline Tensor distill_term(const Tensor& student, const Tensor& teacher, const Tensor& projection) {
  if (student.rank() != 3 || teacher.rank() != 3)
    throw ShapeError("distill_term: expected [C x h x w] feature maps");
  const std::size_t c = student.dim(0), h = student.dim(1), w = student.dim(2), ct = teacher.dim(0);
  if (projection.rank() != 2 || projection.dim(0) != c || projection.dim(1) != ct)
    throw ShapeError("distill_term: projection " + shape_str(projection.shape()) + " does not map " +
                     std::to_string(c) + " to " + std::to_string(ct) + " channels");
  Tensor target = teacher.detach();
  if (target.dim(1) != h || target.dim(2) != w) target = ops::bilinear_resize(target, h, w);
  Tensor projected = ops::matmul(ops::transpose(ops::reshape(student, {c, h * w})), projection);
  Tensor diff = ops::sub(projected, ops::transpose(ops::reshape(target, {ct, h * w})));
  return ops::mean(ops::mul(diff, diff));
}

struct DistillLoss {
  Tensor high;  // F_h vs m2f
  Tensor low;   // F_l vs sam2
  Tensor total;
};

/// Sum of the available distillation terms (α is applied in total_loss).
inline DistillLoss distill_loss(const Tensor& student_high, const Tensor& student_low,
                                const TeacherFeatures& teachers, const DistillAlign& align) {
  DistillLoss out;
  std::vector<std::pair<Tensor, float>> terms;
  if (teachers.m2f.defined()) {
    out.high = distill_term(student_high, teachers.m2f, align.proj_high);
    terms.push_back({out.high, 1.0f});
  }
  if (teachers.sam2.defined()) {
    out.low = distill_term(student_low, teachers.sam2, align.proj_low);
    terms.push_back({out.low, 1.0f});
  }
  out.total = combine_terms(terms);
  return out;
}

/// Deterministic stand-in for an expert's features: a seeded random filter bank
/// over the pixels of each grid cell, followed by tanh, plus a last channel with
/// the cell's mean gradient magnitude. image is [3 × H × W].
inline Tensor synthesize_teacher(const Tensor& image, TeacherKind kind, std::uint64_t seed, std::size_t grid_h,
                                 std::size_t grid_w, std::size_t channels) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("synthesize_teacher: expected [3xHxW] image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (grid_h == 0 || grid_w == 0 || h % grid_h || w % grid_w || channels < 2)
    throw ConfigError("synthesize_teacher: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                      " must divide the " + std::to_string(h) + "x" + std::to_string(w) +
                      " image and channels must be >= 2");
  const std::size_t ch = h / grid_h, cw = w / grid_w, dim = 3 * ch * cw, filters = channels - 1;
  Rng rng(Rng::derive(seed, kind == TeacherKind::kM2F ? 1 : 2));
  std::vector<double> bank(filters * dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& v : bank) v = rng.normal() * 2.0 * s;

  auto px = image.data();
  auto at = [&](std::size_t c, std::size_t y, std::size_t x) { return static_cast<double>(px[(c * h + y) * w + x]); };
  std::vector<float> out(channels * grid_h * grid_w, 0.0f);
  std::vector<double> cell(dim);
  for (std::size_t gy = 0; gy < grid_h; ++gy)
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      std::size_t f = 0;
      double edge = 0.0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < ch; ++dy)
          for (std::size_t dx = 0; dx < cw; ++dx, ++f) {
            const std::size_t y = gy * ch + dy, x = gx * cw + dx;
            cell[f] = at(c, y, x);
            const double ex = x + 1 < w ? at(c, y, x + 1) - at(c, y, x) : 0.0;
            const double ey = y + 1 < h ? at(c, y + 1, x) - at(c, y, x) : 0.0;
            edge += std::sqrt(ex * ex + ey * ey);
          }
      const std::size_t cell_index = gy * grid_w + gx, plane = grid_h * grid_w;
      for (std::size_t k = 0; k < filters; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) acc += bank[k * dim + i] * cell[i];
        out[k * plane + cell_index] = static_cast<float>(std::tanh(acc));
      }
      out[filters * plane + cell_index] = static_cast<float>(edge / static_cast<double>(dim));
    }
  return Tensor({channels, grid_h, grid_w}, std::move(out));
}

}  // namespace pixelsail
