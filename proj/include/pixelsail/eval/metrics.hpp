#pragma once

#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pixelsail/errors.hpp"
#include "pixelsail/grounding/mask.hpp"

namespace pixelsail {

namespace detail {

inline void check_pairs(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, const char* who) {
  if (preds.size() != gts.size())
    throw ShapeError(std::string(who) + ": " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(gts.size()) + " ground truths");
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (!preds[i].same_shape(gts[i]))
      throw ShapeError(std::string(who) + ": pair " + std::to_string(i) + " has prediction " +
                       std::to_string(preds[i].h) + "x" + std::to_string(preds[i].w) + " vs ground truth " +
                       std::to_string(gts[i].h) + "x" + std::to_string(gts[i].w));
}

struct Overlap {
  std::size_t inter = 0, uni = 0;
};

inline Overlap overlap(const BinaryMask& a, const BinaryMask& b) {
  Overlap o;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    o.inter += x && y;
    o.uni += x || y;
  }
  return o;
}

}  // namespace detail

/// Cumulative IoU: total intersection over total union. Pairs that are empty
/// on both sides add nothing to either sum. 0 when every pair is empty.
inline double ciou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  detail::check_pairs(preds, gts, "ciou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto o = detail::overlap(preds[i], gts[i]);
    inter += o.inter;
    uni += o.uni;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// Mean per-sample IoU; an empty-vs-empty pair scores 1.
inline double giou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  detail::check_pairs(preds, gts, "giou");
  if (preds.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto o = detail::overlap(preds[i], gts[i]);
    sum += o.uni ? static_cast<double>(o.inter) / static_cast<double>(o.uni) : 1.0;
  }
  return sum / static_cast<double>(preds.size());
}

/// Foreground pixels within Chebyshev distance `width` of the background (or
/// of the image border): the inner contour band used by boundary IoU.
inline BinaryMask inner_boundary_band(const BinaryMask& m, std::size_t width) {
  BinaryMask band(m.h, m.w);
  const long r = static_cast<long>(width), h = static_cast<long>(m.h), w = static_cast<long>(m.w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      if (!m.at(std::size_t(y), std::size_t(x))) continue;
      bool near = false;
      for (long dy = -r; dy <= r && !near; ++dy)
        for (long dx = -r; dx <= r && !near; ++dx) {
          const long yy = y + dy, xx = x + dx;
          near = yy < 0 || xx < 0 || yy >= h || xx >= w || !m.at(std::size_t(yy), std::size_t(xx));
        }
      if (near) band.set(std::size_t(y), std::size_t(x));
    }
  return band;
}

/// Boundary IoU: IoU of the inner contour bands of prediction and ground
/// truth, averaged over pairs (empty-vs-empty scores 1).
inline double boundary_iou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts,
                           std::size_t width = 2) {
  detail::check_pairs(preds, gts, "boundary_iou");
  if (preds.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto o = detail::overlap(inner_boundary_band(preds[i], width), inner_boundary_band(gts[i], width));
    sum += o.uni ? static_cast<double>(o.inter) / static_cast<double>(o.uni) : 1.0;
  }
  return sum / static_cast<double>(preds.size());
}

/// First letter A-D standing alone as a word (case-insensitive), uppercased.
inline std::optional<char> extract_choice(const std::string& response) {
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  for (std::size_t i = 0; i < response.size(); ++i) {
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(response[i])));
    if (u < 'A' || u > 'D') continue;
    const bool left = i == 0 || !is_word(response[i - 1]);
    const bool right = i + 1 == response.size() || !is_word(response[i + 1]);
    if (left && right) return u;
  }
  return std::nullopt;
}

inline double mcq_accuracy(const std::vector<std::string>& responses, const std::vector<std::string>& keys) {
  if (keys.empty()) throw DataError("mcq_accuracy: empty key list");
  if (responses.size() != keys.size())
    throw DataError("mcq_accuracy: " + std::to_string(responses.size()) + " responses for " +
                    std::to_string(keys.size()) + " keys");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].size() != 1 || keys[i][0] < 'A' || keys[i][0] > 'D')
      throw DataError("mcq_accuracy: key " + std::to_string(i) + " is '" + keys[i] + "', expected one of A-D");
    auto c = extract_choice(responses[i]);
    correct += c && *c == keys[i][0];
  }
  return static_cast<double>(correct) / static_cast<double>(keys.size());
}

/// PerBench overall score from percentages: caption METEOR, MCQ accuracy and
/// the V-T RES pair, which enters as the mean of cIoU and gIoU.
inline double perbench_overall(double meteor_pct, double accuracy_pct, double ciou_pct, double giou_pct) {
  for (double v : {meteor_pct, accuracy_pct, ciou_pct, giou_pct})
    if (!(v >= 0.0 && v <= 100.0)) throw DataError("perbench_overall: score " + std::to_string(v) + " outside [0, 100]");
  return (meteor_pct + accuracy_pct + (ciou_pct + giou_pct) / 2.0) / 3.0;
}

}  // namespace pixelsail
