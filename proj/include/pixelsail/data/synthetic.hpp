#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pixelsail/data/record.hpp"
#include "pixelsail/data/templates.hpp"
#include "pixelsail/numerics/rng.hpp"

namespace pixelsail {

enum class ShapeKind { kDisk, kSquare };

inline std::string shape_word(ShapeKind s) { return s == ShapeKind::kDisk ? "disk" : "square"; }

struct NamedColor {
  const char* name;
  std::array<std::uint8_t, 3> rgb;
};

inline const std::array<NamedColor, 8>& palette() {
  static const std::array<NamedColor, 8> kPalette = {{
      {"red", {230, 40, 40}},
      {"green", {40, 200, 60}},
      {"blue", {40, 70, 230}},
      {"yellow", {240, 220, 40}},
      {"cyan", {40, 220, 230}},
      {"magenta", {220, 50, 220}},
      {"white", {245, 245, 245}},
      {"black", {15, 15, 15}},
  }};
  return kPalette;
}

inline constexpr const char* kSizeWords[] = {"small", "medium", "large"};

/// Disk: pixel (x, y) is inside iff its centre (x+0.5, y+0.5) lies within
/// distance r of (cx, cy), with cx, cy, r integers. Square: pixels
/// [x0, x0+side) × [y0, y0+side).
struct SceneObject {
  ShapeKind shape = ShapeKind::kDisk;
  std::size_t color = 0;
  std::size_t size_class = 0;
  long cx = 0, cy = 0, radius = 0;  // disk
  long x0 = 0, y0 = 0, side = 0;    // square
  BinaryMask mask;

  std::string description() const { return std::string(palette()[color].name) + " " + shape_word(shape); }
};

inline BinaryMask rasterize(const SceneObject& o, std::size_t h, std::size_t w) {
  BinaryMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      bool in;
      if (o.shape == ShapeKind::kDisk) {
        const double dx = static_cast<double>(x) + 0.5 - static_cast<double>(o.cx);
        const double dy = static_cast<double>(y) + 0.5 - static_cast<double>(o.cy);
        in = dx * dx + dy * dy <= static_cast<double>(o.radius * o.radius);
      } else {
        const auto xi = static_cast<long>(x), yi = static_cast<long>(y);
        in = xi >= o.x0 && xi < o.x0 + o.side && yi >= o.y0 && yi < o.y0 + o.side;
      }
      m.bits[y * w + x] = in ? 1 : 0;
    }
  return m;
}

/// A patch is covered when at least half of its pixels are; an object too
/// small to cover any patch that way claims the patch holding its centre.
inline BinaryMask to_patch_grid(const BinaryMask& m, std::size_t patch) {
  const std::size_t gh = m.h / patch, gw = m.w / patch;
  BinaryMask g(gh, gw);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      std::size_t n = 0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx) n += m.at(gy * patch + dy, gx * patch + dx);
      g.set(gy, gx, 2 * n >= patch * patch);
    }
  if (g.empty() && !m.empty()) {
    auto [cx, cy] = m.center();
    g.set(std::min(gh - 1, static_cast<std::size_t>(cy) / patch), std::min(gw - 1, static_cast<std::size_t>(cx) / patch));
  }
  return g;
}

struct Scene {
  ImageRef image;
  std::vector<SceneObject> objects;
};

struct SyntheticConfig {
  std::size_t image_h = 64, image_w = 64, patch_size = 8;
  std::size_t num_visual_prompts = 8;
  std::size_t min_objects = 1, max_objects = 4;
  std::vector<Task> tasks = {Task::kRefSeg, Task::kPanopticTemplate, Task::kRegionCaption, Task::kMcq, Task::kVtRes};
  bool mix_plain_vqa = true;  // every other record is plain-vqa
  double noise = 20.0;        // background noise amplitude in grey levels
  std::size_t max_turns = 5;
  double p_nonexistent = 0.2;
};

/// Non-overlapping disks and squares of distinct colors on a noisy grey
/// background.
inline Scene render_scene(const SyntheticConfig& cfg, Rng& rng, std::size_t min_objects) {
  const std::size_t h = cfg.image_h, w = cfg.image_w;
  Scene s;
  s.image.h = h;
  s.image.w = w;
  s.image.pixels.resize(3 * h * w);
  for (auto& p : s.image.pixels) p = static_cast<std::uint8_t>(std::clamp(128.0 + rng.uniform(-cfg.noise, cfg.noise), 0.0, 255.0));

  std::vector<std::size_t> colors(palette().size());
  for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = i;
  rng.shuffle(colors);
  const auto want = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(std::max(cfg.min_objects, min_objects)),
                                                             static_cast<std::int64_t>(std::max(cfg.max_objects, min_objects))));
  const long scale = static_cast<long>(std::min(h, w));
  std::vector<std::array<long, 4>> boxes;  // x0, y0, x1, y1 inclusive-exclusive
  for (int tries = 0; s.objects.size() < want && tries < 400; ++tries) {
    SceneObject o;
    o.shape = rng.uniform() < 0.5 ? ShapeKind::kDisk : ShapeKind::kSquare;
    o.size_class = static_cast<std::size_t>(rng.uniform_int(0, 2));
    std::array<long, 4> box;
    if (o.shape == ShapeKind::kDisk) {
      o.radius = std::max<long>(2, scale * static_cast<long>(5 + 3 * o.size_class) / 64);
      o.cx = rng.uniform_int(o.radius, static_cast<long>(w) - o.radius);
      o.cy = rng.uniform_int(o.radius, static_cast<long>(h) - o.radius);
      box = {o.cx - o.radius, o.cy - o.radius, o.cx + o.radius, o.cy + o.radius};
    } else {
      o.side = std::max<long>(3, scale * static_cast<long>(9 + 5 * o.size_class) / 64);
      o.x0 = rng.uniform_int(0, static_cast<long>(w) - o.side);
      o.y0 = rng.uniform_int(0, static_cast<long>(h) - o.side);
      box = {o.x0, o.y0, o.x0 + o.side, o.y0 + o.side};
    }
    const bool clash = std::any_of(boxes.begin(), boxes.end(), [&](const auto& b) {
      return box[0] < b[2] + 2 && b[0] < box[2] + 2 && box[1] < b[3] + 2 && b[1] < box[3] + 2;
    });
    if (clash) continue;
    o.color = colors[s.objects.size()];
    o.mask = rasterize(o, h, w);
    const auto& rgb = palette()[o.color].rgb;
    for (std::size_t p = 0; p < h * w; ++p)
      if (o.mask.bits[p])
        for (std::size_t c = 0; c < 3; ++c) s.image.pixels[c * h * w + p] = rgb[c];
    boxes.push_back(box);
    s.objects.push_back(std::move(o));
  }
  return s;
}

namespace detail {

inline std::string count_word(std::size_t n) {
  static const char* kWords[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
  return n <= 10 ? kWords[n] : std::to_string(n);
}

inline std::string place_phrase(const SceneObject& o, std::size_t h, std::size_t w) {
  auto [cx, cy] = o.mask.center();
  return std::string(cy < static_cast<double>(h) / 2 ? "upper" : "lower") + " " +
         (cx < static_cast<double>(w) / 2 ? "left" : "right");
}

// "the red disk", or "the leftmost square" when that object is the unique
// extreme of its shape.
inline std::string referring_expression(const Scene& s, std::size_t i, Rng& rng) {
  const auto& o = s.objects[i];
  if (rng.uniform() < 0.5) {
    std::vector<std::size_t> same;
    for (std::size_t j = 0; j < s.objects.size(); ++j)
      if (s.objects[j].shape == o.shape) same.push_back(j);
    if (same.size() >= 2) {
      auto cx = [&](std::size_t j) { return s.objects[j].mask.center().first; };
      auto [lo, hi] = std::minmax_element(same.begin(), same.end(), [&](auto a, auto b) { return cx(a) < cx(b); });
      const bool unique_lo = std::count_if(same.begin(), same.end(), [&](auto j) { return cx(j) == cx(*lo); }) == 1;
      const bool unique_hi = std::count_if(same.begin(), same.end(), [&](auto j) { return cx(j) == cx(*hi); }) == 1;
      if (*lo == i && unique_lo) return "the leftmost " + shape_word(o.shape);
      if (*hi == i && unique_hi) return "the rightmost " + shape_word(o.shape);
    }
  }
  return "the " + o.description();
}

}  // namespace detail

inline SampleRecord make_synthetic_record(Task task, const SyntheticConfig& cfg, Rng& rng, std::string id) {
  const std::size_t need = task == Task::kVtRes ? 2 : 1;
  Scene s = render_scene(cfg, rng, need);
  while (s.objects.size() < need) s = render_scene(cfg, rng, need);
  const std::size_t h = cfg.image_h, w = cfg.image_w, n = s.objects.size();
  auto pick = [&](std::size_t count) { return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(count) - 1)); };

  SampleRecord r;
  switch (task) {
    case Task::kRefSeg: {
      ReferringSource src{id, s.image, {}};
      for (std::size_t i = 0; i < n; ++i) src.expressions.emplace_back(detail::referring_expression(s, i, rng), s.objects[i].mask);
      r = sample_referring({src}, rng, cfg.max_turns);
      break;
    }
    case Task::kPanopticTemplate: {
      const ShapeKind cls = s.objects[pick(n)].shape;
      std::vector<Instance> inst;
      for (const auto& o : s.objects)
        if (o.shape == cls) inst.push_back(Instance::from_mask(o.mask));
      auto t = rng.uniform() < 0.5 ? build_instance_template(shape_word(cls), inst)
                                   : build_semantic_template(shape_word(cls), inst);
      r.conversations.push_back({t.question, t.answer});
      r.gt_masks = std::move(t.masks);
      break;
    }
    case Task::kRegionCaption: {
      RegionSource src{id, s.image, {}};
      for (const auto& o : s.objects)
        src.regions.push_back({to_patch_grid(o.mask, cfg.patch_size),
                               std::string("A ") + kSizeWords[o.size_class] + " " + o.description() + " in the " +
                                   detail::place_phrase(o, h, w) + " part of the image."});
      PromptSamplingOptions opts;
      opts.num_visual_prompts = cfg.num_visual_prompts;
      opts.p_nonexistent = cfg.p_nonexistent;
      r = sample_visual_prompts(src, rng, opts);
      break;
    }
    case Task::kMcq: {
      const std::size_t target = pick(n);
      r.visual_prompts.push_back({1, to_patch_grid(s.objects[target].mask, cfg.patch_size)});
      std::vector<std::size_t> options{s.objects[target].color};
      while (options.size() < 4) {
        const std::size_t c = pick(palette().size());
        if (std::find(options.begin(), options.end(), c) == options.end()) options.push_back(c);
      }
      rng.shuffle(options);
      std::string q = "What color is <VP_1>?";
      const char* letters = "ABCD";
      char key = 'A';
      for (std::size_t i = 0; i < 4; ++i) {
        q += std::string(i ? "," : "") + " " + letters[i] + ": " + palette()[options[i]].name;
        if (options[i] == s.objects[target].color) key = letters[i];
      }
      r.conversations.push_back({q + ".", std::string(1, key)});
      break;
    }
    case Task::kVtRes: {
      const std::size_t ref = pick(n);
      const double rx = s.objects[ref].mask.center().first;
      // nearest object on the chosen side; fall back to the other side
      auto nearest = [&](bool left) {
        long best = -1;
        double gap = 1e9;
        for (std::size_t j = 0; j < n; ++j) {
          const double d = s.objects[j].mask.center().first - rx;
          if (j == ref || (left ? d >= 0 : d <= 0)) continue;
          if (std::abs(d) < gap) gap = std::abs(d), best = static_cast<long>(j);
        }
        return best;
      };
      bool left = rng.uniform() < 0.5;
      long target = nearest(left);
      if (target < 0) target = nearest(left = !left);
      if (target < 0) {  // equal x for every other object: describe directly
        target = ref == 0 ? 1 : 0;
        left = true;
      }
      r.visual_prompts.push_back({1, to_patch_grid(s.objects[ref].mask, cfg.patch_size)});
      r.conversations.push_back({std::string("Please segment the object ") + (left ? "left" : "right") + " of <VP_1>.",
                                 std::string(kReferringAnswer)});
      r.gt_masks.push_back(s.objects[static_cast<std::size_t>(target)].mask);
      break;
    }
    case Task::kPlainVqa: {
      if (rng.uniform() < 0.5) {
        r.conversations.push_back({"How many objects are there?",
                                   n == 1 ? "There is one object." : "There are " + detail::count_word(n) + " objects."});
      } else {
        const auto& o = s.objects[pick(n)];
        const std::size_t c = rng.uniform() < 0.5 ? o.color : pick(palette().size());
        const bool present = std::any_of(s.objects.begin(), s.objects.end(),
                                         [&](const auto& x) { return x.color == c && x.shape == o.shape; });
        r.conversations.push_back({"Is there a " + std::string(palette()[c].name) + " " + shape_word(o.shape) + "?",
                                   present ? "Yes." : "No."});
      }
      break;
    }
  }
  r.id = std::move(id);
  r.image = std::move(s.image);
  r.task = task;
  return r;
}

/// Record i draws only from Rng::derive(seed, i), so any subset can be
/// regenerated independently and the output does not depend on scheduling.
inline std::vector<SampleRecord> generate_synthetic_dataset(std::size_t n, const SyntheticConfig& cfg, std::uint64_t seed) {
  if (n == 0) throw ConfigError("generate_synthetic_dataset: n must be >= 1");
  if (cfg.tasks.empty() && !cfg.mix_plain_vqa) throw ConfigError("generate_synthetic_dataset: no tasks selected");
  if (cfg.image_h % cfg.patch_size || cfg.image_w % cfg.patch_size)
    throw ConfigError("generate_synthetic_dataset: image size must be divisible by the patch size");
  std::vector<SampleRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, i);
    Task task;
    if (cfg.tasks.empty() || (cfg.mix_plain_vqa && i % 2 == 1))
      task = Task::kPlainVqa;
    else
      task = cfg.tasks[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.tasks.size()) - 1))];
    out.push_back(make_synthetic_record(task, cfg, rng, "syn" + std::to_string(seed) + "-" + std::to_string(i)));
  }
  return out;
}

}  // namespace pixelsail
