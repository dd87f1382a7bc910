#pragma once

#include <cctype>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pixelsail/errors.hpp"

namespace pixelsail {

/// Porter's 1980 suffix-stripping stemmer for lowercase ASCII words.
class PorterStemmer {
 public:
  std::string stem(std::string word) {
    if (word.size() <= 2) return word;
    b_ = std::move(word);
    step1ab();
    step1c();
    step2();
    step3();
    step4();
    step5();
    return b_;
  }

 private:
  std::string b_;

  bool cons(std::size_t i) const {
    switch (b_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 || !cons(i - 1);
      default: return true;
    }
  }

  // Number of VC sequences in b_[0, len).
  int measure(std::size_t len) const {
    int m = 0;
    std::size_t i = 0;
    while (i < len && cons(i)) ++i;
    while (i < len) {
      while (i < len && !cons(i)) ++i;
      if (i >= len) break;
      ++m;
      while (i < len && cons(i)) ++i;
    }
    return m;
  }

  bool vowel_in(std::size_t len) const {
    for (std::size_t i = 0; i < len; ++i)
      if (!cons(i)) return true;
    return false;
  }

  bool double_cons(std::size_t len) const {
    return len >= 2 && b_[len - 1] == b_[len - 2] && cons(len - 1);
  }

  // consonant-vowel-consonant ending at len - 1, last not w, x or y
  bool cvc(std::size_t len) const {
    if (len < 3 || !cons(len - 1) || cons(len - 2) || !cons(len - 3)) return false;
    const char c = b_[len - 1];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends(std::string_view s) const { return b_.size() >= s.size() && b_.compare(b_.size() - s.size(), s.size(), s) == 0; }
  std::size_t stem_len(std::string_view suffix) const { return b_.size() - suffix.size(); }
  void replace(std::string_view suffix, std::string_view with) {
    b_.resize(stem_len(suffix));
    b_ += with;
  }

  using Rule = std::pair<std::string_view, std::string_view>;

  void step1ab() {
    if (ends("sses")) replace("sses", "ss");
    else if (ends("ies")) replace("ies", "i");
    else if (ends("ss")) {
    } else if (ends("s")) replace("s", "");

    if (ends("eed")) {
      if (measure(stem_len("eed")) > 0) replace("eed", "ee");
      return;
    }
    std::string_view cut;
    if (ends("ed") && vowel_in(stem_len("ed"))) cut = "ed";
    else if (ends("ing") && vowel_in(stem_len("ing"))) cut = "ing";
    if (cut.empty()) return;
    replace(cut, "");
    if (ends("at")) replace("at", "ate");
    else if (ends("bl")) replace("bl", "ble");
    else if (ends("iz")) replace("iz", "ize");
    else if (double_cons(b_.size())) {
      const char c = b_.back();
      if (c != 'l' && c != 's' && c != 'z') b_.pop_back();
    } else if (measure(b_.size()) == 1 && cvc(b_.size())) {
      b_ += 'e';
    }
  }

  void step1c() {
    if (ends("y") && vowel_in(stem_len("y"))) b_.back() = 'i';
  }

  void step2() {
    static constexpr Rule rules[] = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},   {"izer", "ize"},
        {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},       {"ousli", "ous"},
        {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"},
        {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"},
    };
    apply_longest(rules, 0);
  }

  void step3() {
    static constexpr Rule rules[] = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""}, {"ness", ""},
    };
    apply_longest(rules, 0);
  }

  void step4() {
    static constexpr std::string_view suffixes[] = {
        "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
        "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize",
    };
    std::string_view best;
    for (auto s : suffixes)
      if (ends(s) && s.size() > best.size()) best = s;
    if (best.empty()) return;
    const std::size_t len = stem_len(best);
    if (best == "ion" && (len == 0 || (b_[len - 1] != 's' && b_[len - 1] != 't'))) return;
    if (measure(len) > 1) b_.resize(len);
  }

  void step5() {
    if (ends("e")) {
      const std::size_t len = b_.size() - 1;
      const int m = measure(len);
      if (m > 1 || (m == 1 && !cvc(len))) b_.pop_back();
    }
    if (ends("ll") && measure(b_.size()) > 1) b_.pop_back();
  }

  // Only the longest matching suffix is considered; it applies when m > min_m.
  template <std::size_t N>
  void apply_longest(const Rule (&rules)[N], int min_m) {
    const Rule* best = nullptr;
    for (const auto& r : rules)
      if (ends(r.first) && (!best || r.first.size() > best->first.size())) best = &r;
    if (best && measure(stem_len(best->first)) > min_m) replace(best->first, best->second);
  }
};

/// Lowercased alphanumeric words.
inline std::vector<std::string> meteor_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct MeteorParams {
  double alpha = 0.9;
  double gamma = 0.5;
  double theta = 3.0;
};

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  std::size_t candidate_len = 0;
  std::size_t reference_len = 0;
};

/// Exact matches first, then Porter-stem matches among the leftovers. Each
/// stage pairs every candidate word, left to right, with the leftmost unused
/// equal reference word. Chunks are maximal runs of matches adjacent in both
/// strings.
inline MeteorAlignment meteor_align(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> link(cand.size(), kNone);
  std::vector<bool> used(ref.size(), false);
  auto stage = [&](const std::vector<std::string>& c, const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (link[i] != kNone) continue;
      for (std::size_t j = 0; j < r.size(); ++j)
        if (!used[j] && c[i] == r[j]) {
          link[i] = j;
          used[j] = true;
          break;
        }
    }
  };
  stage(cand, ref);
  PorterStemmer stemmer;
  std::vector<std::string> cs, rs;
  for (const auto& w : cand) cs.push_back(stemmer.stem(w));
  for (const auto& w : ref) rs.push_back(stemmer.stem(w));
  stage(cs, rs);

  MeteorAlignment a;
  a.candidate_len = cand.size();
  a.reference_len = ref.size();
  std::size_t prev = kNone;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (link[i] == kNone) {
      prev = kNone;
      continue;
    }
    ++a.matches;
    if (prev == kNone || link[i] != prev + 1) ++a.chunks;
    prev = link[i];
  }
  return a;
}

/// METEOR with exact and stem matching (no synonym stage).
inline double meteor_lite(const std::string& candidate, const std::string& reference, const MeteorParams& p = {}) {
  const auto ref = meteor_tokens(reference);
  if (ref.empty()) throw DataError("meteor_lite: empty reference");
  const auto a = meteor_align(meteor_tokens(candidate), ref);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double precision = m / static_cast<double>(a.candidate_len);
  const double recall = m / static_cast<double>(a.reference_len);
  const double f = precision * recall / (p.alpha * precision + (1.0 - p.alpha) * recall);
  const double penalty = p.gamma * std::pow(static_cast<double>(a.chunks) / m, p.theta);
  return f * (1.0 - penalty);
}

}  // namespace pixelsail
