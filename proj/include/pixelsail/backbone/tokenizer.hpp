#pragma once

#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pixelsail/errors.hpp"

namespace pixelsail {

namespace token {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSeg = 3;
inline constexpr int kImage = 4;  // placeholder id carried by vision positions
inline constexpr int kUser = 5;
inline constexpr int kAssistant = 6;
inline constexpr int kVpBase = 7;  // <VP_i> has id kVpBase + i - 1
inline constexpr std::string_view kSegText = "[SEG]";
}  // namespace token

/// Word-level tokenizer over a closed vocabulary with byte fallback.
///
/// Layout: specials, then `num_vp` visual-prompt tokens, then 256 byte tokens,
/// then the word list. Known words are matched case-insensitively; an unknown
/// word is spelled out as byte tokens. Punctuation marks are their own tokens.
class Tokenizer {
 public:
  explicit Tokenizer(std::size_t num_vp = 8) : num_vp_(num_vp) {
    for (std::size_t i = 0; i < words().size(); ++i)
      word_ids_.emplace(std::string(words()[i]), static_cast<int>(word_base() + i));
  }

  std::size_t num_visual_prompts() const { return num_vp_; }
  int vp_id(std::size_t index) const {
    if (index < 1 || index > num_vp_)
      throw DataError("visual prompt index " + std::to_string(index) + " outside [1, " +
                      std::to_string(num_vp_) + "]");
    return token::kVpBase + static_cast<int>(index) - 1;
  }
  /// 1-based prompt index for a <VP_i> id, or 0.
  std::size_t vp_index(int id) const {
    if (id >= token::kVpBase && id < token::kVpBase + static_cast<int>(num_vp_))
      return static_cast<std::size_t>(id - token::kVpBase) + 1;
    return 0;
  }
  std::size_t byte_base() const { return static_cast<std::size_t>(token::kVpBase) + num_vp_; }
  std::size_t word_base() const { return byte_base() + 256; }
  std::size_t required_vocab() const { return word_base() + words().size(); }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    std::size_t i = 0;
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      std::string lower;
      for (char c : word) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (auto it = word_ids_.find(lower); it != word_ids_.end()) {
        out.push_back(it->second);
      } else {
        for (unsigned char c : word) out.push_back(static_cast<int>(byte_base() + c));
      }
      word.clear();
    };
    while (i < text.size()) {
      const char c = text[i];
      if (text.substr(i, token::kSegText.size()) == token::kSegText) {
        flush();
        out.push_back(token::kSeg);
        i += token::kSegText.size();
      } else if (auto vp = parse_vp(text, i)) {
        flush();
        out.push_back(vp_id(vp->first));
        i += vp->second;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        flush();
        ++i;
      } else if (is_punct(c)) {
        flush();
        out.push_back(word_ids_.at(std::string(1, c)));
        ++i;
      } else {
        word += c;
        ++i;
      }
    }
    flush();
    return out;
  }

  /// Inverse of encode up to case and whitespace normalisation. Stops at <eos>.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    bool glue = true;  // next piece attaches without a space
    std::string bytes;
    auto emit = [&](const std::string& piece, bool attach_left, bool attach_right) {
      if (!out.empty() && !glue && !attach_left) out += ' ';
      out += piece;
      glue = attach_right;
    };
    auto flush_bytes = [&] {
      if (!bytes.empty()) emit(bytes, false, false);
      bytes.clear();
    };
    for (int id : ids) {
      if (id == token::kEos) break;
      if (id >= static_cast<int>(byte_base()) && id < static_cast<int>(word_base())) {
        bytes += static_cast<char>(id - static_cast<int>(byte_base()));
        continue;
      }
      flush_bytes();
      if (id == token::kSeg) {
        emit(std::string(token::kSegText), false, false);
      } else if (auto vp = vp_index(id)) {
        emit("<VP_" + std::to_string(vp) + ">", false, false);
      } else if (id >= static_cast<int>(word_base()) &&
                 id < static_cast<int>(required_vocab())) {
        std::string w(words()[static_cast<std::size_t>(id) - word_base()]);
        if (w == "-") emit(w, true, true);
        else if (w.size() == 1 && is_punct(w[0])) emit(w, true, false);
        else emit(w, false, false);
      }
    }
    flush_bytes();
    return out;
  }

  static const std::vector<std::string_view>& words() {
    static const std::vector<std::string_view> kWords = {
        ",", ".", "?", ":", "!", ";", "-",
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10",
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "a", "b", "c", "d", "an", "the", "of", "in", "is", "it", "are", "there", "this", "that",
        "to", "and", "with", "on", "at", "by", "for", "from", "as", "be", "not", "no", "yes",
        "please", "segment", "describe", "detail", "mode", "instance", "semantic", "object",
        "objects", "region", "image", "picture", "visual", "prompt", "prompts", "does", "exist",
        "what", "which", "where", "how", "many", "color", "shape", "answer", "question", "sure",
        "left", "right", "leftmost", "rightmost", "top", "bottom", "middle", "center", "upper",
        "lower", "corner", "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
        "purple", "gray", "black", "disk", "square", "circle", "rectangle", "small", "medium",
        "large", "big", "tiny", "located", "near", "next", "option", "options", "correct",
        "choose", "select", "mask", "part", "side", "half", "cat", "dog", "person", "car", "tree",
        "sky", "background", "noisy", "shown", "see", "can", "you", "i", "its", "has", "have",
        "other", "each", "all", "only", "also", "here", "filled", "solid", "shaped",
        "textured", "plain", "area", "edge", "close", "far", "above", "below", "beside",
    };
    return kWords;
  }

 private:
  static bool is_punct(char c) {
    return c == ',' || c == '.' || c == '?' || c == ':' || c == '!' || c == ';' || c == '-';
  }

  // "<VP_12>" at position i -> {12, length}
  std::optional<std::pair<std::size_t, std::size_t>> parse_vp(std::string_view text,
                                                               std::size_t i) const {
    if (text.substr(i, 4) != "<VP_") return std::nullopt;
    std::size_t j = i + 4, value = 0;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])))
      value = value * 10 + static_cast<std::size_t>(text[j++] - '0');
    if (j == i + 4 || j >= text.size() || text[j] != '>') return std::nullopt;
    return std::make_pair(value, j + 1 - i);
  }

  std::size_t num_vp_;
  std::unordered_map<std::string, int> word_ids_;
};

}  // namespace pixelsail
