#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pixelsail/data/record.hpp"
#include "pixelsail/numerics/rng.hpp"

namespace pixelsail {

/// One object instance; `center` is (x, y), normally BinaryMask::center().
struct Instance {
  BinaryMask mask;
  std::pair<double, double> center{0.0, 0.0};

  static Instance from_mask(BinaryMask m) {
    auto c = m.center();
    return {std::move(m), c};
  }
};

/// Left-to-right order: center x ascending, then y ascending, then input order.
inline std::vector<std::size_t> order_left_to_right(const std::vector<std::pair<double, double>>& centers) {
  std::vector<std::size_t> order(centers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (centers[a].first != centers[b].first) return centers[a].first < centers[b].first;
    return centers[a].second < centers[b].second;
  });
  return order;
}

struct TemplateTurn {
  std::string question;
  std::string answer;
  std::vector<BinaryMask> masks;  // aligned with the [SEG] tokens of `answer`
};

/// "Please segment the {class} in instance mode." answered with
/// "{class}-1 [SEG], {class}-2 [SEG], ..." in left-to-right order.
inline TemplateTurn build_instance_template(const std::string& class_name, const std::vector<Instance>& instances) {
  if (instances.empty()) throw DataError("instance template for '" + class_name + "' needs at least one instance");
  std::vector<std::pair<double, double>> centers;
  for (const auto& i : instances) centers.push_back(i.center);
  TemplateTurn t;
  t.question = "Please segment the " + class_name + " in instance mode.";
  std::size_t k = 0;
  for (auto idx : order_left_to_right(centers)) {
    if (k) t.answer += ", ";
    t.answer += class_name + "-" + std::to_string(++k) + " [SEG]";
    t.masks.push_back(instances[idx].mask);
  }
  return t;
}

/// Semantic mode: one [SEG] for the union of all instances.
inline TemplateTurn build_semantic_template(const std::string& class_name, const std::vector<Instance>& instances) {
  if (instances.empty()) throw DataError("semantic template for '" + class_name + "' needs at least one instance");
  TemplateTurn t;
  t.question = "Please segment the " + class_name + " in semantic mode.";
  t.answer = class_name + " [SEG]";
  BinaryMask u = instances[0].mask;
  for (const auto& i : instances) {
    if (!i.mask.same_shape(u)) throw ShapeError("semantic template: instance masks differ in size");
    for (std::size_t p = 0; p < u.bits.size(); ++p) u.bits[p] |= i.mask.bits[p];
  }
  t.masks.push_back(std::move(u));
  return t;
}

/// The conversation turn in the quoted "Question: ... Answer: ..." form.
inline std::string render_turn(const std::string& question, const std::string& answer) {
  return "Question: " + question + " Answer: " + answer;
}

inline std::string referring_question(const std::string& expression) { return "Please segment " + expression + "."; }
inline constexpr std::string_view kReferringAnswer = "It is [SEG].";

/// An image with referring expressions, each naming one mask.
struct ReferringSource {
  std::string id;
  ImageRef image;
  std::vector<std::pair<std::string, BinaryMask>> expressions;
};

/// Picks one source and folds up to `max_turns` of its expressions (drawn
/// without replacement) into a multi-turn conversation.
inline SampleRecord sample_referring(const std::vector<ReferringSource>& pool, Rng& rng, std::size_t max_turns = 5) {
  if (pool.empty()) throw DataError("sample_referring: empty pool");
  const auto& src = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
  if (src.expressions.empty()) throw DataError("sample_referring: source '" + src.id + "' has no expressions");
  std::vector<std::size_t> picks(src.expressions.size());
  std::iota(picks.begin(), picks.end(), 0);
  rng.shuffle(picks);
  picks.resize(std::min(max_turns, picks.size()));
  SampleRecord r;
  r.id = src.id;
  r.image = src.image;
  r.task = Task::kRefSeg;
  for (auto i : picks) {
    r.conversations.push_back({referring_question(src.expressions[i].first), std::string(kReferringAnswer)});
    r.gt_masks.push_back(src.expressions[i].second);
  }
  return r;
}

/// An annotated region: a patch-grid mask and its description.
struct Region {
  BinaryMask grid_mask;
  std::string caption;
};

struct RegionSource {
  std::string id;
  ImageRef image;
  std::vector<Region> regions;
};

struct PromptSamplingOptions {
  std::size_t max_prompts = 5;
  std::size_t num_visual_prompts = 8;
  double p_nonexistent = 0.2;  // not given by the paper
  int force_nonexistent = -1;  // -1: draw, 0: never, 1: always
};

inline std::string caption_question(std::size_t index) {
  return "Please describe <VP_" + std::to_string(index) + "> in detail.";
}

/// Attaches 1..max_prompts regions as <VP_1>.. and asks for a caption of each;
/// optionally adds a question about an index that is not attached.
inline SampleRecord sample_visual_prompts(const RegionSource& src, Rng& rng, const PromptSamplingOptions& opts = {}) {
  if (src.regions.empty()) throw DataError("sample_visual_prompts: source '" + src.id + "' has no regions");
  const std::size_t cap = std::min({opts.max_prompts, src.regions.size(), opts.num_visual_prompts});
  const auto k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(cap)));
  std::vector<std::size_t> picks(src.regions.size());
  std::iota(picks.begin(), picks.end(), 0);
  rng.shuffle(picks);
  picks.resize(k);

  SampleRecord r;
  r.id = src.id;
  r.image = src.image;
  r.task = Task::kRegionCaption;
  for (std::size_t i = 0; i < k; ++i) {
    r.visual_prompts.push_back({i + 1, src.regions[picks[i]].grid_mask});
    r.conversations.push_back({caption_question(i + 1), src.regions[picks[i]].caption});
  }
  const bool ask_missing = opts.force_nonexistent < 0 ? rng.uniform() < opts.p_nonexistent : opts.force_nonexistent > 0;
  if (ask_missing && k < opts.num_visual_prompts) {
    const auto idx = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(k) + 1, static_cast<std::int64_t>(opts.num_visual_prompts)));
    const auto pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(r.conversations.size())));
    r.conversations.insert(r.conversations.begin() + static_cast<std::ptrdiff_t>(pos),
                           Turn{caption_question(idx), std::string(kNonexistentPromptAnswer)});
  }
  return r;
}

}  // namespace pixelsail
