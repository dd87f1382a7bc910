#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pixelsail/backbone/config.hpp"
#include "pixelsail/backbone/tokenizer.hpp"
#include "pixelsail/errors.hpp"

namespace pixelsail {

enum class Role : std::uint8_t { kVision, kText, kSegSlot, kPromptRef };

/// Interleaved vision/text token stream. Vision positions carry the image
/// placeholder id; their embeddings come from the projected patches.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<Role> roles;
  std::size_t vision_begin = 0;
  std::size_t vision_end = 0;

  std::size_t size() const { return ids.size(); }
  bool has_vision() const { return vision_end > vision_begin; }

  void push_text(int id, const Tokenizer& tok) {
    ids.push_back(id);
    if (id == token::kSeg) roles.push_back(Role::kSegSlot);
    else if (tok.vp_index(id)) roles.push_back(Role::kPromptRef);
    else roles.push_back(Role::kText);
  }

  void push_text(const std::vector<int>& more, const Tokenizer& tok) {
    for (int id : more) push_text(id, tok);
  }

  void push_vision(std::size_t count) {
    if (has_vision()) throw DataError("token sequence already holds a vision block");
    vision_begin = ids.size();
    ids.insert(ids.end(), count, token::kImage);
    roles.insert(roles.end(), count, Role::kVision);
    vision_end = ids.size();
  }

  std::vector<int> positions_of(Role role) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == role) out.push_back(static_cast<int>(i));
    return out;
  }

  /// Drops everything from `length` on. The vision block is never cut.
  void truncate(std::size_t length) {
    if (length >= ids.size()) return;
    if (has_vision() && length < vision_end)
      throw ConfigError("truncation to " + std::to_string(length) +
                        " tokens would cut the vision block ending at " + std::to_string(vision_end));
    ids.resize(length);
    roles.resize(length);
  }

  /// Structural invariants: one contiguous vision block of the configured
  /// length (or none), and roles consistent with ids.
  void validate(const ModelConfig& cfg) const {
    if (ids.size() != roles.size()) throw DataError("token sequence: ids/roles length mismatch");
    if (has_vision() && vision_end - vision_begin != cfg.vision_tokens())
      throw DataError("token sequence: vision block has " + std::to_string(vision_end - vision_begin) +
                      " tokens, expected " + std::to_string(cfg.vision_tokens()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const bool in_block = i >= vision_begin && i < vision_end;
      if ((roles[i] == Role::kVision) != in_block)
        throw DataError("token sequence: vision role outside the vision block at " + std::to_string(i));
      if ((roles[i] == Role::kSegSlot) != (ids[i] == token::kSeg))
        throw DataError("token sequence: seg-slot role and [SEG] id disagree at " + std::to_string(i));
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.vocab_size)
        throw DataError("token sequence: id " + std::to_string(ids[i]) + " outside vocabulary");
    }
  }
};

/// Boolean attention matrix, row-major [len×len]; entry (i, j) is 1 when
/// position i may attend to position j.
struct AttentionMask {
  std::size_t size = 0;
  std::vector<std::uint8_t> allow;

  bool at(std::size_t i, std::size_t j) const { return allow[i * size + j] != 0; }
};

/// Causal everywhere, plus full attention among positions of the vision block
/// when `vision_full_attention` is set.
inline AttentionMask build_attention_mask(const TokenSequence& seq, bool vision_full_attention = true) {
  AttentionMask m;
  m.size = seq.size();
  m.allow.assign(m.size * m.size, 0);
  const auto vb = seq.vision_begin, ve = seq.vision_end;
  for (std::size_t i = 0; i < m.size; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.allow[i * m.size + j] = 1;
    if (vision_full_attention && i >= vb && i < ve)
      for (std::size_t j = vb; j < ve; ++j) m.allow[i * m.size + j] = 1;
  }
  return m;
}

}  // namespace pixelsail
