#pragma once

#include <cstdint>
#include <vector>

#include "pixelsail/backbone/config.hpp"
#include "pixelsail/backbone/sequence.hpp"
#include "pixelsail/backbone/tokenizer.hpp"
#include "pixelsail/data/io.hpp"
#include "pixelsail/data/record.hpp"

namespace pixelsail {

inline constexpr std::size_t kDefaultMaxTokens = 8192;

/// A record laid out as [bos][vision × N] then, per turn, <user> question
/// <assistant> answer <eos>. `answer[t]` marks answer tokens and their <eos>.
struct EncodedSample {
  TokenSequence seq;
  std::vector<std::uint8_t> answer;

  /// targets[t] = ids[t + 1]; the last row has no target.
  std::vector<int> targets() const {
    std::vector<int> t(seq.size(), token::kPad);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) t[i] = seq.ids[i + 1];
    return t;
  }

  /// Row t is trained when the token it predicts is part of an answer.
  std::vector<std::uint8_t> loss_mask() const {
    std::vector<std::uint8_t> m(seq.size(), 0);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) m[i] = answer[i + 1];
    return m;
  }

  std::size_t seg_count() const { return seq.positions_of(Role::kSegSlot).size(); }
};

/// Drops tokens from the tail; the vision block is never cut (ConfigError).
inline void truncate(EncodedSample& s, std::size_t max_len = kDefaultMaxTokens) {
  s.seq.truncate(max_len);
  s.answer.resize(s.seq.size());
}

inline void append_turn(EncodedSample& s, const Turn& turn, const Tokenizer& tok, bool with_answer = true) {
  auto push = [&](int id, bool ans) {
    s.seq.push_text(id, tok);
    s.answer.push_back(ans ? 1 : 0);
  };
  push(token::kUser, false);
  for (int id : tok.encode(turn.q)) push(id, false);
  push(token::kAssistant, false);
  if (!with_answer) return;
  for (int id : tok.encode(turn.a)) push(id, true);
  push(token::kEos, true);
}

inline EncodedSample encode_prefix(std::size_t vision_tokens) {
  EncodedSample s;
  s.seq.ids.push_back(token::kBos);
  s.seq.roles.push_back(Role::kText);
  s.answer.push_back(0);
  s.seq.push_vision(vision_tokens);
  s.answer.resize(s.seq.size(), 0);
  return s;
}

/// Full teacher-forced sequence for training.
inline EncodedSample encode_record(const SampleRecord& r, const Tokenizer& tok, const ModelConfig& cfg,
                                   std::size_t max_len = kDefaultMaxTokens) {
  EncodedSample s = encode_prefix(cfg.vision_tokens());
  for (const auto& t : r.conversations) append_turn(s, t, tok);
  truncate(s, std::min(max_len, cfg.max_seq_len));
  return s;
}

/// Generation prefix for turn `turn`: earlier turns with their reference
/// answers, then the question and <assistant>.
inline EncodedSample encode_question(const SampleRecord& r, std::size_t turn, const Tokenizer& tok,
                                     const ModelConfig& cfg) {
  EncodedSample s = encode_prefix(cfg.vision_tokens());
  for (std::size_t i = 0; i < turn; ++i) append_turn(s, r.conversations[i], tok);
  append_turn(s, r.conversations[turn], tok, false);
  return s;
}

/// Planar uint8 [3 × h × w] to floats in [0, 1].
inline Tensor image_tensor(const RgbImage& img) {
  std::vector<float> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return Tensor({3, img.h, img.w}, std::move(v));
}

}  // namespace pixelsail
