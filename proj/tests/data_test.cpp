#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "pixelsail/data/encode.hpp"
#include "pixelsail/data/io.hpp"
#include "pixelsail/data/synthetic.hpp"
#include "pixelsail/data/templates.hpp"

using namespace pixelsail;

namespace {

BinaryMask dot(std::size_t h, std::size_t w, std::size_t y, std::size_t x) {
  BinaryMask m(h, w);
  m.set(y, x);
  return m;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pixelsail_data_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Lattice-point count of the disk rule, one row at a time from the circle equation.
std::size_t disk_area_oracle(long cx, long cy, long r, long h, long w) {
  std::size_t n = 0;
  for (long y = 0; y < h; ++y) {
    const double dy = y + 0.5 - cy;
    if (dy * dy > double(r * r)) continue;
    const double half = std::sqrt(double(r * r) - dy * dy);
    const long lo = std::max<long>(0, static_cast<long>(std::ceil(cx - half - 0.5)));
    const long hi = std::min<long>(w - 1, static_cast<long>(std::floor(cx + half - 0.5)));
    if (hi >= lo) n += static_cast<std::size_t>(hi - lo + 1);
  }
  return n;
}

SampleRecord small_record() {
  SampleRecord r;
  r.id = "r1";
  r.image.h = 16;
  r.image.w = 16;
  r.image.pixels.assign(3 * 16 * 16, 7);
  r.conversations = {{"Please segment the cat in instance mode.", "cat-1 [SEG], cat-2 [SEG]"}};
  r.gt_masks = {dot(16, 16, 1, 1), dot(16, 16, 4, 9)};
  r.task = Task::kPanopticTemplate;
  return r;
}

}  // namespace

TEST(InstanceTemplate, QuotedFormatByteExact) {
  auto t = build_instance_template("cat", {Instance::from_mask(dot(8, 8, 2, 1)), Instance::from_mask(dot(8, 8, 2, 6))});
  EXPECT_EQ(t.question, "Please segment the cat in instance mode.");
  EXPECT_EQ(t.answer, "cat-1 [SEG], cat-2 [SEG]");
  EXPECT_EQ(render_turn(t.question, t.answer),
            "Question: Please segment the cat in instance mode. Answer: cat-1 [SEG], cat-2 [SEG]");
  EXPECT_EQ(t.masks.size(), 2u);
}

TEST(InstanceTemplate, OrdersByCenterX) {
  Instance a{dot(8, 8, 0, 0), {5, 2}}, b{dot(8, 8, 1, 1), {3, 7}};
  auto t = build_instance_template("cat", {a, b});
  EXPECT_EQ(t.masks[0], b.mask);
  EXPECT_EQ(t.masks[1], a.mask);
  auto single = build_instance_template("cat", {a});
  EXPECT_EQ(single.answer, "cat-1 [SEG]");
  EXPECT_EQ(single.masks.size(), 1u);
  EXPECT_THROW(build_instance_template("cat", {}), DataError);
}

TEST(InstanceTemplate, FuzzedCentersOrderLeftToRight) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 9));
    std::vector<std::pair<double, double>> centers;
    for (std::size_t i = 0; i < n; ++i)  // small integer range forces ties
      centers.emplace_back(double(rng.uniform_int(0, 4)), double(rng.uniform_int(0, 4)));
    auto order = order_left_to_right(centers);
    for (std::size_t k = 1; k < n; ++k) {
      const auto &p = centers[order[k - 1]], &q = centers[order[k]];
      ASSERT_TRUE(p.first < q.first || (p.first == q.first && p.second < q.second) ||
                  (p == q && order[k - 1] < order[k]));
    }
    std::vector<std::pair<double, double>> sorted;
    for (auto i : order) sorted.push_back(centers[i]);
    auto again = order_left_to_right(sorted);
    for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(again[k], k);  // idempotent
    auto shuffled = centers;
    rng.shuffle(shuffled);
    std::vector<std::pair<double, double>> from_shuffled;
    for (auto i : order_left_to_right(shuffled)) from_shuffled.push_back(shuffled[i]);
    EXPECT_EQ(from_shuffled, sorted);
  }
}

TEST(SemanticTemplate, UnionMask) {
  auto t = build_semantic_template("disk", {Instance::from_mask(dot(4, 4, 0, 0)), Instance::from_mask(dot(4, 4, 3, 3))});
  EXPECT_EQ(t.answer, "disk [SEG]");
  ASSERT_EQ(t.masks.size(), 1u);
  EXPECT_EQ(t.masks[0].area(), 2u);
}

TEST(SampleReferring, CapsAtFiveTurnsAndIsSeeded) {
  ReferringSource src{"img", {}, {}};
  src.image.h = src.image.w = 4;
  src.image.pixels.assign(48, 0);
  for (int i = 0; i < 7; ++i) src.expressions.emplace_back("the thing " + std::to_string(i), dot(4, 4, 0, std::size_t(i % 4)));
  Rng a(5), b(5);
  auto ra = sample_referring({src}, a);
  EXPECT_EQ(ra.conversations.size(), 5u);
  EXPECT_EQ(ra.gt_masks.size(), 5u);
  EXPECT_EQ(ra, sample_referring({src}, b));
  EXPECT_NO_THROW(validate_record(ra));
  src.expressions.resize(3);
  EXPECT_EQ(sample_referring({src}, a).conversations.size(), 3u);
}

TEST(SampleVisualPrompts, CountsAndNonexistentQuestion) {
  RegionSource src{"img", {}, {}};
  src.image.h = src.image.w = 16;
  src.image.pixels.assign(3 * 256, 0);
  src.regions.push_back({dot(2, 2, 0, 0), "A red disk."});
  Rng rng(1);
  PromptSamplingOptions never;
  never.force_nonexistent = 0;
  EXPECT_EQ(sample_visual_prompts(src, rng, never).visual_prompts.size(), 1u);

  PromptSamplingOptions always;
  always.force_nonexistent = 1;
  auto r = sample_visual_prompts(src, rng, always);
  ASSERT_EQ(r.conversations.size(), 2u);
  std::size_t missing = 0;
  for (const auto& t : r.conversations)
    if (t.a == kNonexistentPromptAnswer) {
      ++missing;
      auto idx = referenced_prompts(t.q);
      ASSERT_EQ(idx.size(), 1u);
      EXPECT_GT(idx[0], 1u);
    }
  EXPECT_EQ(missing, 1u);
  EXPECT_NO_THROW(validate_record(r));

  for (int i = 0; i < 7; ++i) src.regions.push_back({dot(2, 2, std::size_t(i % 2), 1), "A thing."});
  for (int i = 0; i < 1000; ++i) {
    auto s = sample_visual_prompts(src, rng);
    ASSERT_GE(s.visual_prompts.size(), 1u);
    ASSERT_LE(s.visual_prompts.size(), 5u);
  }
}

TEST(Truncate, KeepsVisionAndRederivesLossMask) {
  Tokenizer tok;
  auto build = [&](std::size_t text_len) {
    EncodedSample s = encode_prefix(64);
    Turn t{"what", std::string()};
    for (std::size_t i = 0; i < text_len; ++i) t.a += "red ";
    append_turn(s, t, tok);
    return s;
  };
  // 1 + 64 + 4 framing tokens + answer words
  auto s = build(8200 - 69);
  ASSERT_EQ(s.seq.size(), 8200u);
  truncate(s);
  EXPECT_EQ(s.seq.size(), 8192u);
  EXPECT_EQ(s.answer.size(), 8192u);

  auto small = build(10), copy = small;
  truncate(small, 512);
  EXPECT_EQ(small.seq.ids, copy.seq.ids);
  EXPECT_EQ(small.answer, copy.answer);

  auto desk = build(600 - 69);
  truncate(desk, 512);
  ASSERT_EQ(desk.seq.size(), 512u);
  auto mask = desk.loss_mask();
  // rows predicting answer tokens: from the <assistant> row up to the second-to-last row
  std::size_t expect = 0;
  for (std::size_t t = 0; t + 1 < 512; ++t) expect += desk.answer[t + 1];
  EXPECT_EQ(std::size_t(std::count(mask.begin(), mask.end(), 1)), expect);
  EXPECT_EQ(expect, 512u - 68u);  // answer words 68..511 are predicted by rows 67..510
  EXPECT_EQ(mask.back(), 0);
  EXPECT_THROW(truncate(desk, 40), ConfigError);
}

TEST(Encode, LayoutTargetsAndMask) {
  Tokenizer tok;
  ModelConfig cfg;
  SampleRecord r = small_record();
  r.image.h = r.image.w = 64;
  auto s = encode_record(r, tok, cfg);
  EXPECT_EQ(s.seq.ids[0], token::kBos);
  EXPECT_EQ(s.seq.vision_begin, 1u);
  EXPECT_EQ(s.seq.vision_end, 65u);
  EXPECT_EQ(s.seq.ids[65], token::kUser);
  EXPECT_EQ(s.seq.ids.back(), token::kEos);
  EXPECT_EQ(s.seg_count(), 2u);
  auto targets = s.targets();
  auto mask = s.loss_mask();
  std::vector<int> trained;
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) trained.push_back(targets[t]);
  auto expect = tok.encode("cat-1 [SEG], cat-2 [SEG]");
  expect.push_back(token::kEos);
  EXPECT_EQ(trained, expect);

  auto q = encode_question(r, 0, tok, cfg);
  EXPECT_EQ(q.seq.ids.back(), token::kAssistant);
  EXPECT_EQ(q.seq.size() + expect.size(), s.seq.size());
}

TEST(Synthetic, DeterministicAndValid) {
  SyntheticConfig cfg;
  auto a = generate_synthetic_dataset(8, cfg, 1);
  auto b = generate_synthetic_dataset(8, cfg, 1);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(record_to_json(a[i]).dump(), record_to_json(b[i]).dump());
  EXPECT_NE(record_to_json(generate_synthetic_dataset(8, cfg, 2)[0]).dump(), record_to_json(a[0]).dump());

  Tokenizer tok;
  std::map<Task, int> seen;
  for (const auto& r : generate_synthetic_dataset(300, cfg, 7)) {
    ASSERT_NO_THROW(validate_record(r)) << r.id;
    ++seen[r.task];
    // the closed word list covers every generated string
    for (const auto& t : r.conversations)
      for (int id : tok.encode(t.q + " " + t.a))
        ASSERT_FALSE(id >= int(tok.byte_base()) && id < int(tok.word_base())) << r.id << ": " << t.q << " / " << t.a;
  }
  EXPECT_EQ(seen[Task::kPlainVqa], 150);
  for (Task t : {Task::kRefSeg, Task::kPanopticTemplate, Task::kRegionCaption, Task::kMcq, Task::kVtRes})
    EXPECT_GT(seen[t], 0) << task_name(t);
}

TEST(Synthetic, RasterizedAreasMatchOracle) {
  for (long r = 2; r <= 12; ++r)
    for (long cx : {r, r + 3, 30L}) {
      SceneObject o;
      o.shape = ShapeKind::kDisk;
      o.cx = cx;
      o.cy = 20;
      o.radius = r;
      EXPECT_EQ(rasterize(o, 64, 64).area(), disk_area_oracle(cx, 20, r, 64, 64)) << r << " " << cx;
    }
  SceneObject sq;
  sq.shape = ShapeKind::kSquare;
  sq.x0 = 3;
  sq.y0 = 50;
  sq.side = 14;
  EXPECT_EQ(rasterize(sq, 64, 64).area(), 196u);

  // generated masks are exactly the rasterization of their objects
  SyntheticConfig cfg;
  for (int s = 0; s < 20; ++s) {
    Rng rng(s);
    auto scene = render_scene(cfg, rng, 1);
    for (const auto& o : scene.objects) {
      EXPECT_EQ(o.mask, rasterize(o, 64, 64));
      const std::size_t analytic = o.shape == ShapeKind::kSquare ? std::size_t(o.side * o.side)
                                                                 : disk_area_oracle(o.cx, o.cy, o.radius, 64, 64);
      EXPECT_EQ(o.mask.area(), analytic);
    }
  }
}

TEST(Jsonl, RoundTripBothMaskEncodings) {
  auto dir = temp_dir("roundtrip");
  SyntheticConfig cfg;
  auto records = generate_synthetic_dataset(12, cfg, 4);
  for (bool rle : {true, false}) {
    save_jsonl(dir / "d.jsonl", records, {rle});
    EXPECT_EQ(load_jsonl(dir / "d.jsonl"), records);
  }
}

TEST(Jsonl, ImageFilesAndErrors) {
  auto dir = temp_dir("errors");
  auto r = small_record();
  write_ppm(dir / "img.ppm", {r.image.h, r.image.w, r.image.pixels});
  auto on_disk = r;
  on_disk.image = ImageRef{"img.ppm", 0, 0, {}};
  save_jsonl(dir / "d.jsonl", {on_disk});
  auto loaded = load_jsonl(dir / "d.jsonl");
  auto img = load_image(loaded[0].image, dir);
  EXPECT_EQ(img.pixels, r.image.pixels);

  {
    std::ofstream out(dir / "bad.jsonl");
    out << record_to_json(r).dump() << "\n{not json\n";
  }
  try {
    load_jsonl(dir / "bad.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }

  auto missing = r;
  missing.gt_masks.pop_back();
  try {
    validate_record(missing);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'r1'"), std::string::npos);
  }

  auto literal = r;
  literal.conversations.push_back({"What does [SEG] mean?", "It is a token."});
  EXPECT_EQ(count_seg(literal), 2u);
  EXPECT_NO_THROW(validate_record(literal));
}

TEST(Validator, RejectsEveryMutationClass) {
  SyntheticConfig cfg;
  cfg.mix_plain_vqa = false;
  auto pool = generate_synthetic_dataset(40, cfg, 11);
  Rng rng(99);
  using Mutation = std::function<bool(SampleRecord&)>;  // false when not applicable
  const std::vector<std::pair<std::string, Mutation>> mutations = {
      {"empty id", [](SampleRecord& r) { r.id.clear(); return true; }},
      {"drop pixels", [](SampleRecord& r) { r.image.pixels.pop_back(); return true; }},
      {"zero height", [](SampleRecord& r) { r.image.h = 0; return true; }},
      {"path and pixels", [](SampleRecord& r) { r.image.path = "x.ppm"; return true; }},
      {"no turns", [](SampleRecord& r) { r.conversations.clear(); return true; }},
      {"empty answer", [](SampleRecord& r) { r.conversations[0].a.clear(); return true; }},
      {"extra mask", [](SampleRecord& r) { r.gt_masks.push_back(BinaryMask(r.image.h, r.image.w)); return true; }},
      {"missing mask", [](SampleRecord& r) {
         if (r.gt_masks.empty()) return false;
         r.gt_masks.pop_back();
         return true;
       }},
      {"mask size", [](SampleRecord& r) {
         if (r.gt_masks.empty()) return false;
         r.gt_masks[0] = BinaryMask(r.image.h + 1, r.image.w);
         return true;
       }},
      {"mask value", [](SampleRecord& r) {
         if (r.gt_masks.empty()) return false;
         r.gt_masks[0].bits[0] = 2;
         return true;
       }},
      {"prompt index zero", [](SampleRecord& r) {
         if (r.visual_prompts.empty()) return false;
         r.visual_prompts[0].index = 0;
         return true;
       }},
      {"prompt index too large", [](SampleRecord& r) {
         if (r.visual_prompts.empty()) return false;
         r.visual_prompts[0].index = 9;
         return true;
       }},
      {"duplicate prompt", [](SampleRecord& r) {
         if (r.visual_prompts.empty()) return false;
         r.visual_prompts.push_back(r.visual_prompts[0]);
         return true;
       }},
      {"empty prompt mask", [](SampleRecord& r) {
         if (r.visual_prompts.empty()) return false;
         auto& m = r.visual_prompts[0].mask;
         std::fill(m.bits.begin(), m.bits.end(), 0);
         return true;
       }},
      {"dangling prompt reference", [](SampleRecord& r) {
         r.conversations[0].q += " <VP_8>";
         return std::none_of(r.visual_prompts.begin(), r.visual_prompts.end(), [](auto& p) { return p.index == 8; });
       }},
      {"detached prompts", [](SampleRecord& r) {
         if (r.visual_prompts.empty()) return false;
         r.visual_prompts.clear();
         return true;
       }},
  };
  std::map<std::string, int> applied;
  int done = 0;
  while (done < 200) {
    auto r = pool[static_cast<std::size_t>(rng.uniform_int(0, 39))];
    ASSERT_NO_THROW(validate_record(r));
    const auto& [name, mutate] = mutations[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(mutations.size()) - 1))];
    if (!mutate(r)) continue;
    ++done;
    ++applied[name];
    EXPECT_THROW(validate_record(r), DataError) << name << " on " << r.id;
  }
  EXPECT_EQ(applied.size(), mutations.size());
}
