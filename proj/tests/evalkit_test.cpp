#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pixelsail/data/synthetic.hpp"
#include "pixelsail/eval/benchmark.hpp"
#include "pixelsail/eval/pca.hpp"

using namespace pixelsail;

namespace {

BinaryMask from_rows(const std::vector<std::string>& rows) {
  BinaryMask m(rows.size(), rows[0].size());
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) m.set(y, x, rows[y][x] == '#');
  return m;
}

BinaryMask random_mask(Rng& rng, std::size_t h, std::size_t w, double p) {
  BinaryMask m(h, w);
  for (auto& b : m.bits) b = rng.uniform() < p;
  return m;
}

using PixelSet = std::set<std::pair<std::size_t, std::size_t>>;

PixelSet pixels(const BinaryMask& m) {
  PixelSet s;
  for (std::size_t y = 0; y < m.h; ++y)
    for (std::size_t x = 0; x < m.w; ++x)
      if (m.at(y, x)) s.insert({y, x});
  return s;
}

// Brute-force set arithmetic over coordinate sets.
std::pair<std::size_t, std::size_t> set_overlap(const BinaryMask& a, const BinaryMask& b) {
  PixelSet pa = pixels(a), pb = pixels(b), inter, uni;
  std::set_intersection(pa.begin(), pa.end(), pb.begin(), pb.end(), std::inserter(inter, inter.begin()));
  std::set_union(pa.begin(), pa.end(), pb.begin(), pb.end(), std::inserter(uni, uni.begin()));
  return {inter.size(), uni.size()};
}

}  // namespace

TEST(Iou, DistinguishingExample) {
  // A: intersection 1, union 4. B: intersection 3, union 3.
  std::vector<BinaryMask> preds = {from_rows({"##..", "#..."}), from_rows({"###."})};
  std::vector<BinaryMask> gts = {from_rows({"#...", ".#.."}), from_rows({"###."})};
  EXPECT_EQ(ciou(preds, gts), 4.0 / 7.0);
  EXPECT_EQ(giou(preds, gts), 0.625);
}

TEST(Iou, SimpleCases) {
  auto a = from_rows({"##", ".."}), b = from_rows({"..", "##"}), e = from_rows({"..", ".."});
  EXPECT_EQ(ciou({a}, {a}), 1.0);
  EXPECT_EQ(giou({a}, {a}), 1.0);
  EXPECT_EQ(ciou({a}, {b}), 0.0);
  EXPECT_EQ(giou({a}, {b}), 0.0);
  auto c = from_rows({"#.", ".."});
  EXPECT_EQ(giou({a}, {c}), ciou({a}, {c}));
  // empty-vs-empty: skipped by cIoU, perfect for gIoU
  EXPECT_EQ(ciou({e, a}, {e, c}), 0.5);
  EXPECT_EQ(giou({e, a}, {e, c}), 0.75);
  EXPECT_EQ(ciou({e}, {e}), 0.0);
  EXPECT_EQ(giou({e}, {e}), 1.0);
}

TEST(Iou, ShapeMismatchNamesPair) {
  BinaryMask a(2, 2), b(2, 3);
  try {
    ciou({a, a}, {a, b});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("pair 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(giou({a}, {a, a}), ShapeError);
}

TEST(Iou, MatchesPixelCountingOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 6));
    std::vector<BinaryMask> preds, gts;
    std::size_t inter = 0, uni = 0;
    double per = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(random_mask(rng, 16, 16, rng.uniform() * 0.6));
      gts.push_back(random_mask(rng, 16, 16, rng.uniform() * 0.6));
      auto [in, un] = set_overlap(preds.back(), gts.back());
      inter += in;
      uni += un;
      per += un ? double(in) / double(un) : 1.0;
    }
    ASSERT_NEAR(ciou(preds, gts), uni ? double(inter) / double(uni) : 0.0, 1e-9);
    ASSERT_NEAR(giou(preds, gts), per / double(n), 1e-9);
    // order of samples does not matter
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<BinaryMask> p2, g2;
    for (auto i : perm) {
      p2.push_back(preds[i]);
      g2.push_back(gts[i]);
    }
    ASSERT_NEAR(ciou(p2, g2), ciou(preds, gts), 1e-12);
    ASSERT_NEAR(giou(p2, g2), giou(preds, gts), 1e-12);
  }
}

TEST(BoundaryIou, BandOfSquare) {
  BinaryMask sq(10, 10);
  for (std::size_t y = 2; y < 8; ++y)
    for (std::size_t x = 2; x < 8; ++x) sq.set(y, x);
  // 6x6 square, width-1 inner band is its 20-pixel ring
  EXPECT_EQ(inner_boundary_band(sq, 1).area(), 20u);
  EXPECT_EQ(inner_boundary_band(sq, 3).area(), 36u);
  EXPECT_EQ(boundary_iou({sq}, {sq}, 1), 1.0);
  auto shifted = sq;
  for (std::size_t y = 2; y < 8; ++y) {
    shifted.set(y, 2, false);
    shifted.set(y, 8);
  }
  const double b = boundary_iou({shifted}, {sq}, 1);
  EXPECT_GT(b, 0.0);
  EXPECT_LT(b, giou({shifted}, {sq}));  // boundaries punish a shift harder than area
}

TEST(Mcq, ExtractionRule) {
  EXPECT_EQ(mcq_accuracy({"The answer is B."}, {"B"}), 1.0);
  EXPECT_EQ(mcq_accuracy({"banana"}, {"A"}), 0.0);
  EXPECT_EQ(mcq_accuracy({"A", "B", "C", "D"}, {"A", "B", "C", "D"}), 1.0);
  EXPECT_EQ(mcq_accuracy({"c", "(d) it is", "BAD"}, {"C", "D", "B"}), 2.0 / 3.0);
  EXPECT_EQ(extract_choice("Choice: d, not a"), 'D');
  EXPECT_THROW(mcq_accuracy({}, {}), DataError);
  EXPECT_THROW(mcq_accuracy({"A"}, {"E"}), DataError);
}

TEST(Porter, MatchesReferenceImplementation) {
  std::ifstream in(std::string(PIXELSAIL_FIXTURE_DIR) + "/porter_reference.tsv");
  ASSERT_TRUE(in) << "missing fixture";
  PorterStemmer stemmer;
  std::string line;
  std::size_t n = 0, bad = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    const auto word = line.substr(0, tab), expect = line.substr(tab + 1);
    ++n;
    if (stemmer.stem(word) != expect) {
      ++bad;
      ADD_FAILURE() << word << ": got " << stemmer.stem(word) << ", reference " << expect;
    }
  }
  EXPECT_GT(n, 1000u);
  EXPECT_EQ(bad, 0u);
}

TEST(Meteor, ClosedFormsAndStems) {
  for (std::size_t m = 1; m <= 6; ++m) {
    std::string s;
    for (std::size_t i = 0; i < m; ++i) s += (i ? " w" : "w") + std::to_string(i);
    EXPECT_DOUBLE_EQ(meteor_lite(s, s), 1.0 - 0.5 * std::pow(1.0 / double(m), 3));
  }
  EXPECT_EQ(meteor_lite("green square", "red disk"), 0.0);
  EXPECT_EQ(meteor_lite("", "red disk"), 0.0);
  EXPECT_THROW(meteor_lite("red", " . "), DataError);
  // stems from the reference fixture: cats->cat, sleeping->sleep, sleeps->sleep
  EXPECT_DOUBLE_EQ(meteor_lite("cats sleeping", "cat sleeps"), 1.0 - 0.5 * std::pow(1.0 / 2.0, 3));
  // two matches of three candidate words against four reference words, two chunks
  const double p = 2.0 / 3.0, r = 2.0 / 4.0;
  const double f = p * r / (0.9 * p + 0.1 * r);
  EXPECT_DOUBLE_EQ(meteor_lite("red big disk", "the red small disk"), f * (1.0 - 0.5 * std::pow(2.0 / 2.0, 3)));
}

TEST(Meteor, FewerMatchesScoreLower) {
  const std::string ref = "a small red disk in the upper left part of the image";
  const auto words = meteor_tokens(ref);
  double prev = meteor_lite(ref, ref);
  // replace words one at a time with unmatched fillers
  auto cand = words;
  for (std::size_t i = 0; i < words.size(); ++i) {
    cand[i] = "zz" + std::to_string(i);
    std::string s;
    for (const auto& w : cand) s += w + " ";
    const double score = meteor_lite(s, ref);
    EXPECT_LT(score, prev) << i;
    prev = score;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(PerBench, PublishedRows) {
  struct Row {
    double meteor, acc, c, g, overall;
  };
  for (const Row& r : {Row{24.2, 74, 33.4, 23.5, 42.2}, Row{21.4, 69, 29.7, 19.8, 38.4}, Row{19.2, 71, 31.9, 21.9, 39.0},
                       Row{12.6, 14, 24.3, 14.6, 15.3}, Row{13.4, 12, 0, 0, 8.5}, Row{0, 0, 0, 0, 0}})
    EXPECT_NEAR(perbench_overall(r.meteor, r.acc, r.c, r.g), r.overall, 0.05);
  EXPECT_THROW(perbench_overall(101, 0, 0, 0), DataError);
  EXPECT_THROW(perbench_overall(0, -1, 0, 0), DataError);
  EXPECT_THROW(perbench_overall(0, 0, NAN, 0), DataError);
}

namespace {

Tensor feature_map(std::size_t c, std::size_t h, std::size_t w, const std::function<float(std::size_t, std::size_t)>& f) {
  std::vector<float> v(c * h * w);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < h * w; ++p) v[k * h * w + p] = f(k, p);
  return Tensor({c, h, w}, std::move(v));
}

Eigen::MatrixXd covariance(const Tensor& t) {
  const std::size_t c = t.dim(0), n = t.dim(1) * t.dim(2);
  Eigen::MatrixXd x(n, c);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < n; ++p) x(Eigen::Index(p), Eigen::Index(k)) = t.data()[k * n + p];
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / double(n);
}

}  // namespace

TEST(Pca, ConstantFieldIsBlack) {
  auto img = pca_feature_image(feature_map(5, 4, 4, [](std::size_t k, std::size_t) { return float(k); }));
  EXPECT_EQ(img.h, 4u);
  EXPECT_TRUE(std::all_of(img.pixels.begin(), img.pixels.end(), [](auto v) { return v == 0; }));
  EXPECT_THROW(pca_feature_image(Tensor::zeros({3, 1, 2})), ShapeError);
}

TEST(Pca, MatchesEigenDecomposition) {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    // anisotropic random features so the spectrum is well separated
    auto t = feature_map(8, 6, 7, [&](std::size_t k, std::size_t) { return float(rng.normal() * (8.0 - double(k))); });
    auto r = pca_project(t);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance(t));
    for (std::size_t i = 0; i < 3; ++i) {
      const auto col = Eigen::Index(7 - i);  // eigenvalues ascend
      EXPECT_NEAR(r.variances[i], es.eigenvalues()(col), 1e-6 * es.eigenvalues()(7));
      double dot = 0.0;
      for (std::size_t k = 0; k < 8; ++k) dot += r.axes[i][k] * es.eigenvectors()(Eigen::Index(k), col);
      EXPECT_NEAR(std::abs(dot), 1.0, 1e-5);
      if (i) {
        EXPECT_GE(r.variances[i - 1], r.variances[i]);
      }
    }
  }
}

TEST(Pca, OrthogonalAxesGivePermutedChannels) {
  // three uncorrelated channels with variances 9 > 4 > 1 listed out of order
  const std::vector<double> scale = {2.0, 1.0, 3.0};
  const std::size_t h = 4, w = 4;
  auto t = feature_map(3, h, w, [&](std::size_t k, std::size_t p) {
    // Walsh-like patterns over 16 pixels are mutually orthogonal and zero-mean
    const int bits[] = {1, 2, 4};
    return float(scale[k] * ((p & std::size_t(bits[k])) ? 1.0 : -1.0));
  });
  auto img = pca_feature_image(t);
  const std::size_t order[] = {2, 0, 1};
  const std::size_t n = h * w;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto src = order[ch];
    bool same = true, flipped = true;
    for (std::size_t p = 0; p < n; ++p) {
      const std::uint8_t expect = t.data()[src * n + p] > 0 ? 255 : 0;
      same &= img.pixels[ch * n + p] == expect;
      flipped &= img.pixels[ch * n + p] == 255 - expect;
    }
    EXPECT_TRUE(same || flipped) << ch;
  }
}

TEST(Pca, DeterministicAndChannelPermutationInvariant) {
  Rng rng(21);
  auto t = feature_map(6, 5, 5, [&](std::size_t k, std::size_t) { return float(rng.normal() * (1.0 + double(k))); });
  const std::size_t perm[] = {3, 0, 5, 1, 4, 2};
  auto permuted = feature_map(6, 5, 5, [&](std::size_t k, std::size_t p) { return t.data()[perm[k] * 25 + p]; });
  auto a = pca_feature_image(t), b = pca_feature_image(t), c = pca_feature_image(permuted);
  EXPECT_EQ(a.pixels, b.pixels);
  auto ra = pca_project(t), rc = pca_project(permuted);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(ra.variances[i], rc.variances[i], 1e-6 * ra.variances[0]);
  // output covariance spectra agree
  auto spectrum = [](const RgbImage& img) {
    auto f = feature_map(3, img.h, img.w, [&](std::size_t k, std::size_t p) { return float(img.pixels[k * img.h * img.w + p]); });
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance(f));
    return es.eigenvalues();
  };
  EXPECT_LT((spectrum(a) - spectrum(c)).norm(), 1e-3 * spectrum(a).norm());
}

TEST(Pca, RankDeficientPadsZeros) {
  auto t = feature_map(2, 4, 4, [](std::size_t k, std::size_t p) { return float(k == 0 ? p : (p % 3)); });
  auto r = pca_project(t);
  EXPECT_GT(r.variances[1], 0.0);
  EXPECT_EQ(r.variances[2], 0.0);
  auto img = pca_feature_image(t);
  EXPECT_TRUE(std::all_of(img.pixels.begin() + 32, img.pixels.end(), [](auto v) { return v == 0; }));
}

namespace {

// Records what the benchmark asks of an inner model.
class Spy : public BenchmarkModel {
 public:
  explicit Spy(BenchmarkModel& inner) : inner_(inner) {}
  const ModelConfig& config() const override { return inner_.config(); }
  void begin_turn(const SampleRecord& r, std::size_t t) override { inner_.begin_turn(r, t); }
  std::vector<float> next_token_logits(const TokenSequence& s) override { return inner_.next_token_logits(s); }
  std::vector<BinaryMask> decode_masks(const TokenSequence& s, const std::vector<int>& pos) override {
    calls.push_back(pos.size());
    auto out = inner_.decode_masks(s, pos);
    returned.push_back(out.size());
    return out;
  }
  std::vector<std::size_t> calls, returned;

 private:
  BenchmarkModel& inner_;
};

std::vector<SampleRecord> bench_records() {
  SyntheticConfig cfg;
  cfg.mix_plain_vqa = false;
  return generate_synthetic_dataset(40, cfg, 5);
}

const std::vector<Task> kBenchTasks = {Task::kRefSeg, Task::kPanopticTemplate, Task::kRegionCaption, Task::kMcq,
                                       Task::kVtRes};

}  // namespace

TEST(Benchmark, OracleIsPerfect) {
  Tokenizer tok;
  ModelConfig cfg;
  OracleModel oracle(cfg, tok);
  auto records = bench_records();
  auto rep = run_benchmark(oracle, records, kBenchTasks, tok);
  ASSERT_TRUE(rep.ciou && rep.giou && rep.mcq_accuracy && rep.meteor && rep.overall);
  EXPECT_EQ(*rep.ciou, 1.0);
  EXPECT_EQ(*rep.giou, 1.0);
  EXPECT_EQ(*rep.boundary_iou, 1.0);
  EXPECT_EQ(*rep.mcq_accuracy, 1.0);
  for (const auto& s : rep.samples)
    if (s.metric == "meteor") {
      const auto& ref = records[0].id == s.id ? records[0] : *std::find_if(records.begin(), records.end(), [&](auto& r) { return r.id == s.id; });
      const double m = double(meteor_tokens(ref.conversations[s.turn].a).size());
      EXPECT_DOUBLE_EQ(s.value, 1.0 - 0.5 * std::pow(1.0 / m, 3)) << s.response;
    }
  EXPECT_NEAR(*rep.overall,
              (*rep.meteor * 100 + *rep.mcq_accuracy * 100 + (*rep.ciou * 100 + *rep.giou * 100) / 2) / 3, 1e-6);
  std::size_t turns = 0;
  for (const auto& r : records) turns += r.conversations.size();
  EXPECT_EQ(rep.samples.size(), turns);
  EXPECT_EQ(rep.per_task.size(), 5u);
}

TEST(Benchmark, ForcedSegYieldsOneMaskPerQuery) {
  Tokenizer tok;
  ModelConfig cfg;
  SilentModel silent(cfg, 64, 64);
  Spy spy(silent);
  auto records = bench_records();
  auto rep = run_benchmark(spy, records, kBenchTasks, tok);
  std::size_t seg_queries = 0;
  for (const auto& r : records)
    if (is_segmentation_task(r.task))
      for (const auto& t : r.conversations) seg_queries += count_seg(t.a) > 0;
  ASSERT_GT(seg_queries, 0u);
  EXPECT_EQ(spy.calls.size(), seg_queries);
  EXPECT_TRUE(std::all_of(spy.calls.begin(), spy.calls.end(), [](auto n) { return n == 1; }));
  EXPECT_TRUE(std::all_of(spy.returned.begin(), spy.returned.end(), [](auto n) { return n == 1; }));
  for (const auto& s : rep.samples)
    if (s.metric == "iou") {
      EXPECT_EQ(s.response, "[SEG]");
    }
  ASSERT_TRUE(rep.ciou);
  EXPECT_GE(*rep.ciou, 0.0);
  EXPECT_LE(*rep.ciou, 1.0);

  BenchmarkOptions off;
  off.force_seg = false;
  Spy quiet(silent);
  auto rep_off = run_benchmark(quiet, records, kBenchTasks, tok, off);
  EXPECT_TRUE(quiet.calls.empty());
  EXPECT_EQ(*rep_off.ciou, 0.0);
}

TEST(Benchmark, EmptyTaskListAndSkips) {
  Tokenizer tok;
  ModelConfig cfg;
  OracleModel oracle(cfg, tok);
  auto records = bench_records();
  auto empty = run_benchmark(oracle, records, {}, tok);
  EXPECT_FALSE(empty.ciou || empty.meteor || empty.mcq_accuracy || empty.overall);
  EXPECT_TRUE(empty.samples.empty());
  EXPECT_EQ(empty.skipped_records, records.size());

  auto only_mcq = run_benchmark(oracle, records, {Task::kMcq}, tok);
  EXPECT_TRUE(only_mcq.mcq_accuracy);
  EXPECT_FALSE(only_mcq.overall);
  EXPECT_EQ(only_mcq.per_task.size(), 1u);
  EXPECT_GT(only_mcq.skipped_records, 0u);
  EXPECT_THROW(run_benchmark(oracle, records, {Task::kPlainVqa}, tok), ConfigError);
}

TEST(Benchmark, ReportSerialisation) {
  Tokenizer tok;
  ModelConfig cfg;
  OracleModel a(cfg, tok), b(cfg, tok);
  auto records = bench_records();
  auto ja = report_to_json(run_benchmark(a, records, kBenchTasks, tok)).dump(2);
  auto jb = report_to_json(run_benchmark(b, records, kBenchTasks, tok)).dump(2);
  EXPECT_EQ(ja, jb);
  auto parsed = nlohmann::json::parse(ja);
  EXPECT_EQ(parsed["ciou"].get<double>(), 1.0);
  EXPECT_TRUE(parsed["per_task"].contains("vt-res"));
  auto table = format_report(run_benchmark(a, records, kBenchTasks, tok));
  EXPECT_NE(table.find("vt-res"), std::string::npos);
  EXPECT_NE(table.find("overall:"), std::string::npos);
  auto none = report_to_json(run_benchmark(a, records, {}, tok));
  EXPECT_TRUE(none["overall"].is_null());
}
