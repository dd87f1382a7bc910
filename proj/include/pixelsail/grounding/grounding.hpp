#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "pixelsail/backbone/config.hpp"
#include "pixelsail/backbone/model.hpp"
#include "pixelsail/grounding/mask.hpp"
#include "pixelsail/numerics/ops.hpp"
#include "pixelsail/numerics/rng.hpp"

namespace pixelsail {

/// Mask-based visual prompt at patch-grid resolution; `index` selects <VP_index>.
struct VisualPrompt {
  std::size_t index = 1;
  BinaryMask mask;

  bool operator==(const VisualPrompt&) const = default;
};

/// Mask logits decoded from K segmentation-token hidden states.
struct MaskLogits {
  Tensor logits;                       // [K × h × w]
  std::vector<int> seg_token_positions;  // K sequence positions

  std::size_t count() const { return logits.dim(0); }
};

namespace detail {

inline void check_prompts(const std::vector<VisualPrompt>& prompts, std::size_t tokens,
                          std::size_t max_index) {
  std::set<std::size_t> seen;
  for (const auto& p : prompts) {
    if (p.index < 1 || p.index > max_index)
      throw DataError("visual prompt index " + std::to_string(p.index) + " outside [1, " +
                      std::to_string(max_index) + "]");
    if (!seen.insert(p.index).second)
      throw DataError("visual prompt index " + std::to_string(p.index) + " used twice");
    if (p.mask.h * p.mask.w != tokens)
      throw ShapeError("visual prompt " + std::to_string(p.index) + " grid " +
                       std::to_string(p.mask.h) + "x" + std::to_string(p.mask.w) +
                       " does not cover " + std::to_string(tokens) + " vision tokens");
  }
}

}  // namespace detail

/// Adds the embedding of <VP_i> onto every vision token covered by prompt i.
/// Overlapping prompts sum their embeddings. Rows no prompt covers are passed
/// through untouched; with no non-empty prompt the input handle is returned.
inline Tensor inject_visual_prompts(const Tensor& vision_tokens, const std::vector<VisualPrompt>& prompts,
                                    const Tensor& vp_embeddings) {
  if (prompts.empty()) return vision_tokens;
  const std::size_t tokens = vision_tokens.dim(0), n = vp_embeddings.dim(0);
  if (vp_embeddings.rank() != 2 || vp_embeddings.dim(1) != vision_tokens.dim(1))
    throw ShapeError("inject_visual_prompts: prompt embeddings " + shape_str(vp_embeddings.shape()) +
                     " vs vision tokens " + shape_str(vision_tokens.shape()));
  detail::check_prompts(prompts, tokens, n);
  // coverage[p, i] = 1 when prompt i covers patch p; indexed by prompt id so the
  // order of the prompt list cannot matter
  std::vector<float> coverage(tokens * n, 0.0f);
  std::vector<std::uint8_t> covered(tokens, 0);
  for (const auto& p : prompts)
    for (std::size_t t = 0; t < tokens; ++t)
      if (p.mask.bits[t]) {
        coverage[t * n + p.index - 1] = 1.0f;
        covered[t] = 1;
      }
  std::vector<int> rows;
  std::vector<float> sub;
  for (std::size_t t = 0; t < tokens; ++t)
    if (covered[t]) {
      rows.push_back(static_cast<int>(t));
      sub.insert(sub.end(), coverage.begin() + static_cast<std::ptrdiff_t>(t * n),
                 coverage.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
    }
  if (rows.empty()) return vision_tokens;
  Tensor fill = ops::matmul(Tensor({rows.size(), n}, std::move(sub)), vp_embeddings);
  return ops::overwrite_rows(vision_tokens, rows, ops::add(ops::gather_rows(vision_tokens, rows), fill));
}

/// Vision-token hidden states [(h·w) × C] in raster order to a feature map [C × h × w].
inline Tensor reshape_vision_hidden(const Tensor& hidden_vision, std::size_t grid_h, std::size_t grid_w) {
  if (hidden_vision.rank() != 2 || hidden_vision.dim(0) != grid_h * grid_w)
    throw ShapeError("reshape_vision_hidden: " + shape_str(hidden_vision.shape()) + " is not " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " tokens");
  return ops::reshape(ops::transpose(hidden_vision), {hidden_vision.dim(1), grid_h, grid_w});
}

/// Inverse of reshape_vision_hidden.
inline Tensor flatten_feature_map(const Tensor& features) {
  if (features.rank() != 3) throw ShapeError("flatten_feature_map: expected [C x h x w]");
  return ops::transpose(ops::reshape(features, {features.dim(0), features.dim(1) * features.dim(2)}));
}

/// Number of ×2 blocks taking stride-S features to one-quarter resolution.
inline std::size_t upsample_block_count(std::size_t stride) {
  if (stride < 8 || (stride & (stride - 1)))
    throw ConfigError("upsampler: feature stride " + std::to_string(stride) +
                      " must be a power of two >= 8");
  std::size_t blocks = 0;
  for (std::size_t s = stride; s > 4; s /= 2) ++blocks;
  return blocks;
}

struct UpsampleBlock {
  Tensor deconv;       // [C × C × 2 × 2]
  Tensor deconv_bias;  // [C]
  Tensor depthwise;    // [C × 3 × 3]
  Tensor depthwise_bias;
};

struct UpsamplerParams {
  std::vector<UpsampleBlock> blocks;

  static UpsamplerParams init(std::size_t channels, std::size_t stride, Rng& rng) {
    UpsamplerParams p;
    const std::size_t n = upsample_block_count(stride);
    const double std_deconv = 1.0 / std::sqrt(static_cast<double>(channels));
    for (std::size_t i = 0; i < n; ++i) {
      UpsampleBlock b;
      b.deconv = init_normal({channels, channels, 2, 2}, rng, std_deconv);
      b.deconv_bias = Tensor::zeros({channels}, true);
      // near-identity depthwise start: centre tap 1 plus a little noise
      b.depthwise = init_normal({channels, 3, 3}, rng, 0.05);
      for (std::size_t c = 0; c < channels; ++c) b.depthwise.mutable_data()[c * 9 + 4] += 1.0f;
      b.depthwise_bias = Tensor::zeros({channels}, true);
      p.blocks.push_back(std::move(b));
    }
    return p;
  }

  void collect(ParamList& out, const std::string& prefix = "upsampler.") const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string bp = prefix + std::to_string(i) + ".";
      out.emplace_back(bp + "deconv", blocks[i].deconv);
      out.emplace_back(bp + "deconv_bias", blocks[i].deconv_bias);
      out.emplace_back(bp + "depthwise", blocks[i].depthwise);
      out.emplace_back(bp + "depthwise_bias", blocks[i].depthwise_bias);
    }
  }
};

/// Learnable upsampling: each block is a stride-2 transposed convolution, a 3×3
/// depthwise convolution and GELU, taking F_l [C × H/S × W/S] to F_h [C × H/4 × W/4].
inline Tensor upsample_module(const Tensor& low_res, const UpsamplerParams& params) {
  Tensor x = low_res;
  for (const auto& b : params.blocks) {
    x = ops::add_channel_bias(ops::conv_transpose2d(x, b.deconv, 2), b.deconv_bias);
    x = ops::add_channel_bias(ops::depthwise_conv2d(x, b.depthwise), b.depthwise_bias);
    x = ops::gelu(x);
  }
  return x;
}

/// logits[k, y, x] = <Q[k], F_h[:, y, x]>.
inline MaskLogits predict_masks(const Tensor& seg_hidden, const Tensor& high_res,
                                std::vector<int> seg_positions = {}) {
  if (high_res.rank() != 3) throw ShapeError("predict_masks: expected [C x h x w] features");
  const std::size_t c = high_res.dim(0), h = high_res.dim(1), w = high_res.dim(2);
  if (seg_hidden.rank() != 2 || seg_hidden.dim(1) != c)
    throw ShapeError("predict_masks: query " + shape_str(seg_hidden.shape()) + " vs features " +
                     shape_str(high_res.shape()));
  const std::size_t k = seg_hidden.dim(0);
  MaskLogits out;
  out.seg_token_positions = std::move(seg_positions);
  if (k == 0) {
    out.logits = Tensor::zeros({0, h, w});
    return out;
  }
  out.logits = ops::reshape(ops::matmul(seg_hidden, ops::reshape(high_res, {c, h * w})), {k, h, w});
  return out;
}

/// Plain-baseline object representations: O[m] is the mean patch embedding
/// under prompt m's mask, in prompt-list order.
inline Tensor mask_pool(const Tensor& patch_embeddings, const std::vector<VisualPrompt>& prompts) {
  const std::size_t tokens = patch_embeddings.dim(0), m = prompts.size();
  std::vector<float> weights(m * tokens, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& p = prompts[i];
    if (p.mask.h * p.mask.w != tokens)
      throw ShapeError("mask_pool: prompt " + std::to_string(p.index) + " grid does not cover " +
                       std::to_string(tokens) + " patches");
    const auto area = p.mask.area();
    if (area == 0) throw DataError("mask_pool: visual prompt " + std::to_string(p.index) + " has an empty mask");
    const float inv = 1.0f / static_cast<float>(area);
    for (std::size_t t = 0; t < tokens; ++t)
      if (p.mask.bits[t]) weights[i * tokens + t] = inv;
  }
  return ops::matmul(Tensor({m, tokens}, std::move(weights)), patch_embeddings);
}

/// Thresholds mask logits at 0 (sigmoid > 0.5); ties go to background. With a
/// target size the logits are first bilinearly resized.
inline std::vector<BinaryMask> binarize_masks(const Tensor& logits, std::size_t out_h = 0,
                                              std::size_t out_w = 0) {
  if (logits.rank() != 3) throw ShapeError("binarize_masks: expected [K x h x w] logits");
  Tensor src = logits;
  if (out_h && out_w && logits.dim(0) > 0 && (out_h != logits.dim(1) || out_w != logits.dim(2)))
    src = ops::bilinear_resize(logits.detach(), out_h, out_w);
  const std::size_t k = src.dim(0), h = src.dim(1), w = src.dim(2);
  std::vector<BinaryMask> out;
  out.reserve(k);
  auto d = src.data();
  for (std::size_t i = 0; i < k; ++i) {
    BinaryMask m(h, w);
    for (std::size_t p = 0; p < h * w; ++p) m.bits[p] = d[i * h * w + p] > 0.0f ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace pixelsail
