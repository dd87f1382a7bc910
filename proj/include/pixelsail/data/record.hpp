#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pixelsail/errors.hpp"
#include "pixelsail/grounding/grounding.hpp"
#include "pixelsail/grounding/mask.hpp"

namespace pixelsail {

enum class Task { kRefSeg, kPanopticTemplate, kRegionCaption, kMcq, kVtRes, kPlainVqa };

inline constexpr Task kAllTasks[] = {Task::kRefSeg, Task::kPanopticTemplate, Task::kRegionCaption,
                                     Task::kMcq,    Task::kVtRes,            Task::kPlainVqa};

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::kRefSeg: return "refseg";
    case Task::kPanopticTemplate: return "panoptic-template";
    case Task::kRegionCaption: return "region-caption";
    case Task::kMcq: return "mcq";
    case Task::kVtRes: return "vt-res";
    case Task::kPlainVqa: return "plain-vqa";
  }
  return "?";
}

inline Task parse_task(std::string_view name) {
  for (Task t : kAllTasks)
    if (task_name(t) == name) return t;
  throw DataError("unknown task '" + std::string(name) + "'");
}

/// Tasks whose answers carry [SEG] tokens and are scored by mask metrics.
inline bool is_segmentation_task(Task t) {
  return t == Task::kRefSeg || t == Task::kPanopticTemplate || t == Task::kVtRes;
}

/// Either a file path or an inline planar uint8 grid [3 × h × w].
struct ImageRef {
  std::string path;
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> pixels;

  bool is_inline() const { return path.empty(); }
  bool operator==(const ImageRef&) const = default;
};

struct Turn {
  std::string q;
  std::string a;
  bool operator==(const Turn&) const = default;
};

struct SampleRecord {
  std::string id;
  ImageRef image;
  std::vector<Turn> conversations;
  std::vector<BinaryMask> gt_masks;  // one per [SEG] in the answers, in reading order
  std::vector<VisualPrompt> visual_prompts;
  Task task = Task::kRefSeg;

  bool operator==(const SampleRecord&) const = default;
};

inline constexpr std::string_view kNonexistentPromptAnswer = "This visual prompt does not exist.";

inline std::size_t count_seg(std::string_view text) {
  std::size_t n = 0;
  for (auto pos = text.find(token::kSegText); pos != std::string_view::npos;
       pos = text.find(token::kSegText, pos + token::kSegText.size()))
    ++n;
  return n;
}

inline std::size_t count_seg(const SampleRecord& r) {
  std::size_t n = 0;
  for (const auto& t : r.conversations) n += count_seg(t.a);
  return n;
}

/// Prompt indices named as "<VP_i>" in the text, in order of appearance.
inline std::vector<std::size_t> referenced_prompts(std::string_view text) {
  std::vector<std::size_t> out;
  for (auto pos = text.find("<VP_"); pos != std::string_view::npos; pos = text.find("<VP_", pos + 1)) {
    std::size_t j = pos + 4, v = 0;
    while (j < text.size() && text[j] >= '0' && text[j] <= '9') v = v * 10 + static_cast<std::size_t>(text[j++] - '0');
    if (j > pos + 4 && j < text.size() && text[j] == '>') out.push_back(v);
  }
  return out;
}

/// Throws DataError naming the record when a schema invariant fails.
inline void validate_record(const SampleRecord& r, std::size_t num_visual_prompts = 8) {
  auto fail = [&](const std::string& why) {
    throw DataError("record '" + r.id + "': " + why);
  };
  if (r.id.empty()) throw DataError("record with empty id");

  const auto& img = r.image;
  if (img.is_inline()) {
    if (img.h == 0 || img.w == 0) fail("inline image has no size");
    if (img.pixels.size() != 3 * img.h * img.w)
      fail("inline image holds " + std::to_string(img.pixels.size()) + " bytes, expected 3x" +
           std::to_string(img.h) + "x" + std::to_string(img.w));
  } else if (!img.pixels.empty()) {
    fail("image has both a path and inline pixels");
  }

  if (r.conversations.empty()) fail("no conversation turns");
  for (const auto& t : r.conversations)
    if (t.q.empty() || t.a.empty()) fail("empty question or answer");

  const std::size_t segs = count_seg(r);
  if (segs != r.gt_masks.size())
    fail(std::to_string(segs) + " [SEG] tokens in answers but " + std::to_string(r.gt_masks.size()) +
         " ground-truth masks");
  for (std::size_t i = 0; i < r.gt_masks.size(); ++i) {
    const auto& m = r.gt_masks[i];
    if (m.bits.size() != m.h * m.w || m.h == 0) fail("gt mask " + std::to_string(i) + " is malformed");
    if (img.is_inline() && (m.h != img.h || m.w != img.w))
      fail("gt mask " + std::to_string(i) + " is " + std::to_string(m.h) + "x" + std::to_string(m.w) +
           ", image is " + std::to_string(img.h) + "x" + std::to_string(img.w));
    if (!m.same_shape(r.gt_masks[0])) fail("gt masks differ in size");
    if (std::any_of(m.bits.begin(), m.bits.end(), [](auto b) { return b > 1; }))
      fail("gt mask " + std::to_string(i) + " has entries other than 0/1");
  }

  std::set<std::size_t> attached;
  for (const auto& p : r.visual_prompts) {
    if (p.index < 1 || p.index > num_visual_prompts)
      fail("visual prompt index " + std::to_string(p.index) + " outside [1, " +
           std::to_string(num_visual_prompts) + "]");
    if (!attached.insert(p.index).second) fail("visual prompt index " + std::to_string(p.index) + " repeated");
    if (p.mask.bits.size() != p.mask.h * p.mask.w || p.mask.h == 0)
      fail("visual prompt " + std::to_string(p.index) + " mask is malformed");
    if (!p.mask.same_shape(r.visual_prompts[0].mask)) fail("visual prompt grids differ in size");
    if (std::any_of(p.mask.bits.begin(), p.mask.bits.end(), [](auto b) { return b > 1; }))
      fail("visual prompt " + std::to_string(p.index) + " mask has entries other than 0/1");
    if (p.mask.empty()) fail("visual prompt " + std::to_string(p.index) + " has an empty mask");
  }
  // [SEG] inside a question is plain text and is not counted above
  for (const auto& t : r.conversations) {
    for (auto idx : referenced_prompts(t.q + " " + t.a))
      if (!attached.count(idx) && t.a != kNonexistentPromptAnswer)
        fail("text references <VP_" + std::to_string(idx) + "> but no such prompt is attached");
  }

  const bool needs_masks = is_segmentation_task(r.task);
  if (needs_masks && r.gt_masks.empty()) fail(std::string(task_name(r.task)) + " record without masks");
  const bool needs_prompts = r.task == Task::kRegionCaption || r.task == Task::kVtRes || r.task == Task::kMcq;
  if (needs_prompts && r.visual_prompts.empty())
    fail(std::string(task_name(r.task)) + " record without visual prompts");
}

}  // namespace pixelsail
