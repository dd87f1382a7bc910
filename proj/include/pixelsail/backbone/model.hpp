#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pixelsail/backbone/config.hpp"
#include "pixelsail/backbone/sequence.hpp"
#include "pixelsail/backbone/tokenizer.hpp"
#include "pixelsail/numerics/ops.hpp"
#include "pixelsail/numerics/rng.hpp"

namespace pixelsail {

/// Named parameter handles in a fixed order (optimizer slots and checkpoint
/// manifests follow this order).
using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline Tensor init_normal(Shape shape, Rng& rng, double stddev) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor(std::move(shape), std::move(v), true);
}

struct TransformerBlock {
  Tensor attn_norm, wq, wk, wv, wo;
  Tensor mlp_norm, w1, b1, w2, b2;
};

struct BackboneParams {
  Tensor token_embedding;     // [vocab × C]; rows of <VP_i> double as prompt fill embeddings
  Tensor position_embedding;  // [max_seq_len × C]
  Tensor patch_projection;    // [3P² × C]
  std::vector<TransformerBlock> blocks;
  Tensor final_norm;
  Tensor lm_head;  // [C × vocab]
  Tensor lm_bias;  // [vocab]

  static BackboneParams init(const ModelConfig& cfg, Rng& rng) {
    const std::size_t c = cfg.channels, hidden = cfg.mlp_ratio * c;
    const double std0 = 0.02;
    const double std_out = std0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg.layers, 1)));
    BackboneParams p;
    p.token_embedding = init_normal({cfg.vocab_size, c}, rng, std0);
    p.position_embedding = init_normal({cfg.max_seq_len, c}, rng, std0);
    p.patch_projection = init_normal({3 * cfg.patch_size * cfg.patch_size, c}, rng, std0);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      TransformerBlock b;
      b.attn_norm = Tensor::full({c}, 1.0f, true);
      b.wq = init_normal({c, c}, rng, std0);
      b.wk = init_normal({c, c}, rng, std0);
      b.wv = init_normal({c, c}, rng, std0);
      b.wo = init_normal({c, c}, rng, std_out);
      b.mlp_norm = Tensor::full({c}, 1.0f, true);
      b.w1 = init_normal({c, hidden}, rng, std0);
      b.b1 = Tensor::zeros({hidden}, true);
      b.w2 = init_normal({hidden, c}, rng, std_out);
      b.b2 = Tensor::zeros({c}, true);
      p.blocks.push_back(std::move(b));
    }
    p.final_norm = Tensor::full({c}, 1.0f, true);
    p.lm_head = init_normal({c, cfg.vocab_size}, rng, std0);
    p.lm_bias = Tensor::zeros({cfg.vocab_size}, true);
    return p;
  }

  void collect(ParamList& out, const std::string& prefix = "backbone.") const {
    out.emplace_back(prefix + "token_embedding", token_embedding);
    out.emplace_back(prefix + "position_embedding", position_embedding);
    out.emplace_back(prefix + "patch_projection", patch_projection);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = blocks[l];
      const std::string bp = prefix + "blocks." + std::to_string(l) + ".";
      out.emplace_back(bp + "attn_norm", b.attn_norm);
      out.emplace_back(bp + "wq", b.wq);
      out.emplace_back(bp + "wk", b.wk);
      out.emplace_back(bp + "wv", b.wv);
      out.emplace_back(bp + "wo", b.wo);
      out.emplace_back(bp + "mlp_norm", b.mlp_norm);
      out.emplace_back(bp + "w1", b.w1);
      out.emplace_back(bp + "b1", b.b1);
      out.emplace_back(bp + "w2", b.w2);
      out.emplace_back(bp + "b2", b.b2);
    }
    out.emplace_back(prefix + "final_norm", final_norm);
    out.emplace_back(prefix + "lm_head", lm_head);
    out.emplace_back(prefix + "lm_bias", lm_bias);
  }
};

/// Non-overlapping P×P patches of image[3×H×W] in raster order over the patch
/// grid; each row is laid out (channel, dy, dx).
inline Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("patchify: expected [3xHxW] image, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch || w % patch)
    throw ConfigError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by patch size " + std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch, dim = 3 * patch * patch;
  std::vector<float> out(gh * gw * dim);
  auto px = image.data();
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      float* row = out.data() + (gy * gw + gx) * dim;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx)
            *row++ = px[(c * h + gy * patch + dy) * w + gx * patch + dx];
    }
  return Tensor({gh * gw, dim}, std::move(out));
}

/// Vision tokens [(HW/P²) × C] from a linear projection of flattened patches.
inline Tensor patchify_project(const Tensor& image, const Tensor& projection, std::size_t patch) {
  return ops::matmul(patchify(image, patch), projection);
}

/// Rows that replace the token embedding at chosen positions (used by the
/// pooled-prompt baseline).
struct RowOverride {
  std::vector<int> positions;
  Tensor rows;
};

/// Input embeddings: token embeddings for text, `vision_tokens` for the vision
/// block, plus learned absolute position embeddings.
inline Tensor assemble_embeddings(const BackboneParams& params, const TokenSequence& seq,
                                  const Tensor& vision_tokens, const RowOverride* override_rows = nullptr) {
  std::vector<Tensor> parts;
  auto text_span = [&](std::size_t begin, std::size_t end) {
    if (end > begin) {
      std::vector<int> ids(seq.ids.begin() + static_cast<std::ptrdiff_t>(begin),
                           seq.ids.begin() + static_cast<std::ptrdiff_t>(end));
      parts.push_back(ops::embedding(params.token_embedding, ids));
    }
  };
  if (seq.has_vision()) {
    if (!vision_tokens.defined() || vision_tokens.dim(0) != seq.vision_end - seq.vision_begin)
      throw ShapeError("assemble_embeddings: vision block of " +
                       std::to_string(seq.vision_end - seq.vision_begin) +
                       " positions needs as many vision tokens");
    text_span(0, seq.vision_begin);
    parts.push_back(vision_tokens);
    text_span(seq.vision_end, seq.size());
  } else {
    text_span(0, seq.size());
  }
  Tensor x = parts.size() == 1 ? parts[0] : ops::concat_rows(parts);
  if (override_rows && !override_rows->positions.empty())
    x = ops::overwrite_rows(x, override_rows->positions, override_rows->rows);
  std::vector<int> pos(seq.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  return ops::add(x, ops::gather_rows(params.position_embedding, pos));
}

struct BackboneOutput {
  Tensor hidden;                // [len × C], residual stream after the last block
  Tensor logits;                // [rows × vocab]
  std::vector<int> logit_rows;  // sequence positions of the logits rows
};

struct ForwardOptions {
  // Positions to produce logits for; all positions when empty.
  std::vector<int> logit_rows;
  bool compute_logits = true;
};

/// Runs the pre-norm transformer stack over assembled input embeddings.
inline BackboneOutput forward(const BackboneParams& params, const ModelConfig& cfg,
                              const TokenSequence& seq, const Tensor& embeddings,
                              const ForwardOptions& opts = {}) {
  if (seq.size() > cfg.max_seq_len)
    throw ConfigError("forward: sequence of " + std::to_string(seq.size()) +
                      " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len) +
                      " (truncate before the forward pass)");
  if (embeddings.rank() != 2 || embeddings.dim(0) != seq.size() || embeddings.dim(1) != cfg.channels)
    throw ShapeError("forward: embeddings " + shape_str(embeddings.shape()) + " do not match " +
                     std::to_string(seq.size()) + " tokens of width " + std::to_string(cfg.channels));
  const auto mask = build_attention_mask(seq, cfg.vision_full_attention);
  const std::size_t hd = cfg.head_dim();
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));

  Tensor x = embeddings;
  for (const auto& b : params.blocks) {
    Tensor h = ops::rmsnorm(x, b.attn_norm);
    Tensor q = ops::matmul(h, b.wq);
    Tensor k = ops::matmul(h, b.wk);
    Tensor v = ops::matmul(h, b.wv);
    std::vector<Tensor> heads;
    heads.reserve(cfg.heads);
    for (std::size_t i = 0; i < cfg.heads; ++i) {
      Tensor qh = ops::slice_cols(q, i * hd, hd);
      Tensor kh = ops::slice_cols(k, i * hd, hd);
      Tensor vh = ops::slice_cols(v, i * hd, hd);
      Tensor att = ops::masked_softmax(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt), mask.allow);
      heads.push_back(ops::matmul(att, vh));
    }
    Tensor merged = heads.size() == 1 ? heads[0] : ops::concat_cols(heads);
    x = ops::add(x, ops::matmul(merged, b.wo));
    Tensor h2 = ops::rmsnorm(x, b.mlp_norm);
    Tensor mid = ops::gelu(ops::add_row_bias(ops::matmul(h2, b.w1), b.b1));
    x = ops::add(x, ops::add_row_bias(ops::matmul(mid, b.w2), b.b2));
  }

  BackboneOutput out;
  out.hidden = x;
  if (!opts.compute_logits) return out;
  Tensor normed = ops::rmsnorm(x, params.final_norm);
  if (opts.logit_rows.empty()) {
    out.logit_rows.resize(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) out.logit_rows[i] = static_cast<int>(i);
  } else {
    out.logit_rows = opts.logit_rows;
    normed = ops::gather_rows(normed, out.logit_rows);
  }
  out.logits = ops::add_row_bias(ops::matmul(normed, params.lm_head), params.lm_bias);
  return out;
}

/// Logits of the next token after the given sequence.
using NextTokenFn = std::function<std::vector<float>(const TokenSequence&)>;

struct GenerateOptions {
  std::size_t max_new = 32;
  bool force_seg = false;
  std::size_t max_len = 0;  // 0: unbounded
};

/// Greedy decoding: appends argmax tokens (lowest id wins ties) until <eos> or
/// `max_new` tokens. <eos> itself is not appended. With force_seg, a sequence
/// that produced no [SEG] gets one appended so a mask can still be decoded.
inline TokenSequence generate(TokenSequence prefix, const Tokenizer& tok, const NextTokenFn& next,
                              const GenerateOptions& opts) {
  bool emitted_seg = false;
  for (std::size_t n = 0; n < opts.max_new; ++n) {
    if (opts.max_len && prefix.size() >= opts.max_len) break;
    const auto logits = next(prefix);
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    const int id = static_cast<int>(best);
    if (id == token::kEos) break;
    prefix.push_text(id, tok);
    emitted_seg |= id == token::kSeg;
  }
  if (opts.force_seg && !emitted_seg) {
    if (opts.max_len && prefix.size() >= opts.max_len) prefix.truncate(opts.max_len - 1);
    prefix.push_text(token::kSeg, tok);
  }
  return prefix;
}

}  // namespace pixelsail
