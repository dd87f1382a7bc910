#pragma once

#include <cstddef>
#include <string>

#include "pixelsail/errors.hpp"

namespace pixelsail {

/// Shape of the single-transformer model. Defaults are the desk configuration.
struct ModelConfig {
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t patch_size = 8;  // also the feature stride of the reshaped vision tokens
  std::size_t channels = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t vocab_size = 512;
  std::size_t max_seq_len = 512;
  std::size_t num_visual_prompts = 8;
  // Bidirectional attention inside the vision block; causal everywhere otherwise.
  bool vision_full_attention = true;

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t vision_tokens() const { return grid_h() * grid_w(); }
  std::size_t head_dim() const { return channels / heads; }
  std::size_t mask_h() const { return image_h / 4; }
  std::size_t mask_w() const { return image_w / 4; }

  // Minimum room for text after the vision block.
  static constexpr std::size_t kTextBudget = 16;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (patch_size == 0 || channels == 0 || heads == 0) fail("sizes must be positive");
    if (image_h == 0 || image_w == 0 || image_h % patch_size || image_w % patch_size)
      fail("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
           " not divisible by patch size " + std::to_string(patch_size));
    if (channels % heads)
      fail("channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
    if (patch_size < 8 || (patch_size & (patch_size - 1)))
      fail("patch size must be a power of two >= 8 (one-quarter resolution upsampling)");
    if (max_seq_len < vision_tokens() + kTextBudget)
      fail("max_seq_len " + std::to_string(max_seq_len) + " leaves no room for text after " +
           std::to_string(vision_tokens()) + " vision tokens");
    if (num_visual_prompts == 0) fail("at least one visual prompt token is required");
  }
};

}  // namespace pixelsail
