#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck_cases.hpp"
#include "oracles.hpp"
#include "pixelsail/objectives/objectives.hpp"

using namespace pixelsail;

namespace {

double ce_oracle(const oracle::Vec& logits, std::size_t vocab, const std::vector<int>& targets,
                 const std::vector<std::uint8_t>& mask) {
  double total = 0;
  int n = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (!mask[r]) continue;
    oracle::Vec row(logits.begin() + r * vocab, logits.begin() + (r + 1) * vocab);
    total -= std::log(oracle::softmax_row(row)[targets[r]]);
    ++n;
  }
  return n ? total / n : 0.0;
}

double bce_oracle(const oracle::Vec& x, const oracle::Vec& t) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-x[i]));
    s -= t[i] * std::log(p) + (1 - t[i]) * std::log(1 - p);
  }
  return s / double(x.size());
}

double dice_oracle(const oracle::Vec& x, const oracle::Vec& t, std::size_t k) {
  const std::size_t hw = x.size() / k;
  double s = 0;
  for (std::size_t m = 0; m < k; ++m) {
    double pg = 0, p = 0, g = 0;
    for (std::size_t i = m * hw; i < (m + 1) * hw; ++i) {
      const double pi = 1.0 / (1.0 + std::exp(-x[i]));
      pg += pi * t[i];
      p += pi;
      g += t[i];
    }
    s += 1.0 - (2 * pg + 1) / (p + g + 1);
  }
  return s / double(k);
}

Tensor random_targets(Shape shape, Rng& rng) { return gradcases::binary_targets(std::move(shape), rng); }

}  // namespace

TEST(NtpLoss, PerfectPredictionIsZero) {
  std::vector<float> l(3 * 6, 0.0f);
  std::vector<int> targets{2, 5, 0};
  for (int r = 0; r < 3; ++r) l[r * 6 + targets[r]] = 100.0f;
  auto loss = ntp_loss(Tensor({3, 6}, l), targets, {1, 1, 1});
  EXPECT_LT(loss.item(), 1e-6);
}

TEST(NtpLoss, UniformLogitsGiveLogVocab) {
  auto loss = ntp_loss(Tensor::zeros({4, 512}), {1, 2, 3, 4}, {0, 1, 1, 1});
  EXPECT_NEAR(loss.item(), std::log(512.0), 1e-5);
}

TEST(NtpLoss, MatchesLogSoftmaxOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    auto logits = oracle::random_tensor({6, 11}, rng, false, 4.0);
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
    for (int i = 0; i < 6; ++i) {
      targets.push_back(static_cast<int>(rng.uniform_int(0, 10)));
      mask.push_back(rng.uniform() < 0.6);
    }
    mask[0] = 1;
    EXPECT_NEAR(ntp_loss(logits, targets, mask).item(), ce_oracle(oracle::to_double(logits), 11, targets, mask),
                1e-5);
  }
}

TEST(NtpLoss, NoMaskedPositionsIsZeroWithZeroGradient) {
  Rng rng(2);
  auto logits = oracle::random_tensor({3, 5}, rng, true);
  auto loss = ntp_loss(logits, {1, 2, 3}, {0, 0, 0});
  EXPECT_EQ(loss.item(), 0.0f);
  loss.backward();
  for (float g : logits.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(SegLoss, SaturatedPerfectPredictionIsNearZero) {
  Rng rng(3);
  auto t = random_targets({2, 5, 5}, rng);
  std::vector<float> l;
  for (float v : t.data()) l.push_back(v > 0 ? 20.0f : -20.0f);
  auto loss = seg_loss(Tensor({2, 5, 5}, l), t, LossWeights{});
  EXPECT_LT(loss.total.item(), 1e-4);
}

TEST(SegLoss, HalfForegroundAtProbabilityHalf) {
  std::vector<float> g(16, 0.0f);
  for (int i = 0; i < 8; ++i) g[i] = 1.0f;
  LossWeights w;
  auto loss = seg_loss(Tensor::zeros({1, 4, 4}), Tensor({1, 4, 4}, g), w);
  // sum p = 8, sum g = 8, sum pg = 4
  const double dice = 1.0 - 9.0 / 17.0;
  EXPECT_NEAR(loss.ce.item(), std::log(2.0), 1e-6);
  EXPECT_NEAR(loss.dice.item(), dice, 1e-6);
  EXPECT_NEAR(loss.total.item(), 2.0 * std::log(2.0) + 0.5 * dice, 1e-6);
}

TEST(SegLoss, MatchesOracleAndStaysInRange) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto l = oracle::random_tensor({3, 6, 5}, rng, false, 5.0);
    auto t = random_targets({3, 6, 5}, rng);
    LossWeights w{0.5f, 1.3f, 0.7f};
    auto loss = seg_loss(l, t, w);
    const double ce = bce_oracle(oracle::to_double(l), oracle::to_double(t));
    const double dice = dice_oracle(oracle::to_double(l), oracle::to_double(t), 3);
    EXPECT_NEAR(loss.ce.item(), ce, 1e-5);
    EXPECT_NEAR(loss.dice.item(), dice, 1e-5);
    EXPECT_NEAR(loss.total.item(), 1.3 * ce + 0.7 * dice, 1e-5);
    EXPECT_GE(loss.ce.item(), 0.0f);
    EXPECT_GE(loss.dice.item(), 0.0f);
    EXPECT_LE(loss.dice.item(), 1.0f);
  }
  EXPECT_THROW(seg_loss(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 4, 5}), LossWeights{}), ShapeError);
}

TEST(SegLoss, ZeroWeightsCutGradientsExactly) {
  Rng rng(5);
  auto l = oracle::random_tensor({2, 3, 3}, rng, true);
  auto t = random_targets({2, 3, 3}, rng);
  seg_loss(l, t, LossWeights{0.5f, 0.0f, 0.0f}).total.backward();
  for (float g : l.grad()) EXPECT_EQ(g, 0.0f);

  // with only the dice weight set, the gradient is exactly β times the dice gradient
  auto l2 = Tensor(l.shape(), l.to_vector(), true);
  seg_loss(l2, t, LossWeights{0.5f, 0.0f, 0.5f}).total.backward();
  auto l3 = Tensor(l.shape(), l.to_vector(), true);
  dice_loss(l3, t).backward();
  for (std::size_t i = 0; i < l2.numel(); ++i) EXPECT_FLOAT_EQ(l2.grad()[i], 0.5f * l3.grad()[i]);
}

TEST(DistillLoss, ExactMatchIsZero) {
  Rng rng(6);
  auto student = oracle::random_tensor({3, 4, 4}, rng);
  auto proj = oracle::random_tensor({3, 2}, rng);
  // teacher = projection of the student, channel-major
  auto flat = ops::matmul(ops::transpose(ops::reshape(student, {3, 16})), proj);
  TeacherFeatures t;
  t.m2f = ops::reshape(ops::transpose(flat), {2, 4, 4});
  DistillAlign align{proj, oracle::random_tensor({3, 2}, rng)};
  EXPECT_EQ(distill_loss(student, Tensor(), t, align).total.item(), 0.0f);
}

TEST(DistillLoss, ConstantOffsetGivesOne) {
  Rng rng(7);
  auto student = oracle::random_tensor({3, 4, 4}, rng);
  std::vector<float> eye(9, 0.0f);
  eye[0] = eye[4] = eye[8] = 1.0f;
  std::vector<float> shifted = student.to_vector();
  for (auto& v : shifted) v += 1.0f;
  TeacherFeatures t;
  t.m2f = Tensor({3, 4, 4}, shifted);
  DistillAlign align{Tensor({3, 3}, eye), Tensor({3, 3}, eye)};
  EXPECT_NEAR(distill_loss(student, Tensor(), t, align).total.item(), 1.0, 1e-6);
  // the same pair on both maps sums the two terms
  t.sam2 = t.m2f;
  EXPECT_NEAR(distill_loss(student, student, t, align).total.item(), 2.0, 1e-6);
}

TEST(DistillLoss, MismatchedGridsMatchResizeThenMseOracle) {
  Rng rng(8);
  auto high = oracle::random_tensor({4, 6, 8}, rng);
  auto low = oracle::random_tensor({4, 3, 4}, rng);
  TeacherFeatures t;
  t.m2f = oracle::random_tensor({5, 3, 3}, rng);
  t.sam2 = oracle::random_tensor({2, 5, 2}, rng);
  DistillAlign align{oracle::random_tensor({4, 5}, rng), oracle::random_tensor({4, 2}, rng)};

  auto term = [](const Tensor& s, const Tensor& teacher, const Tensor& proj) {
    const std::size_t c = s.dim(0), h = s.dim(1), w = s.dim(2), ct = teacher.dim(0);
    auto tr = oracle::bilinear(oracle::to_double(teacher), ct, teacher.dim(1), teacher.dim(2), h, w);
    auto sd = oracle::to_double(s), pd = oracle::to_double(proj);
    double acc = 0;
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t o = 0; o < ct; ++o) {
        double v = 0;
        for (std::size_t ci = 0; ci < c; ++ci) v += sd[ci * h * w + p] * pd[ci * ct + o];
        const double d = v - tr[o * h * w + p];
        acc += d * d;
      }
    return acc / double(h * w * ct);
  };
  auto loss = distill_loss(high, low, t, align);
  const double eh = term(high, t.m2f, align.proj_high), el = term(low, t.sam2, align.proj_low);
  EXPECT_NEAR(loss.high.item(), eh, 1e-5);
  EXPECT_NEAR(loss.low.item(), el, 1e-5);
  EXPECT_NEAR(loss.total.item(), eh + el, 1e-5);
}

TEST(TotalLoss, EquationConstants) {
  LossWeights w;
  auto one = [] { return Tensor::scalar(1.0f); };
  auto seg = combine_terms({{one(), w.lambda}, {one(), w.beta}});
  EXPECT_EQ(total_loss(one(), seg, one(), w).item(), 4.0f);
  auto zero = [] { return Tensor::scalar(0.0f); };
  EXPECT_EQ(total_loss(zero(), combine_terms({{zero(), w.lambda}, {zero(), w.beta}}), zero(), w).item(), 0.0f);
}

TEST(TotalLoss, AffineInEachComponent) {
  LossWeights w{0.5f, 2.0f, 0.5f};
  auto eval = [&](float ntp, float ce, float dice, float distill) {
    auto seg = combine_terms({{Tensor::scalar(ce), w.lambda}, {Tensor::scalar(dice), w.beta}});
    return double(total_loss(Tensor::scalar(ntp), seg, Tensor::scalar(distill), w).item());
  };
  const double base = eval(0.3f, 0.4f, 0.2f, 0.6f);
  EXPECT_NEAR(eval(1.3f, 0.4f, 0.2f, 0.6f) - base, 1.0, 1e-6);
  EXPECT_NEAR(eval(0.3f, 1.4f, 0.2f, 0.6f) - base, 2.0, 1e-6);
  EXPECT_NEAR(eval(0.3f, 0.4f, 1.2f, 0.6f) - base, 0.5, 1e-6);
  EXPECT_NEAR(eval(0.3f, 0.4f, 0.2f, 1.6f) - base, 0.5, 1e-6);
}

TEST(TotalLoss, ZeroAlphaKillsDistillGradients) {
  Rng rng(9);
  auto high = oracle::random_tensor({3, 4, 4}, rng);
  TeacherFeatures t;
  t.m2f = oracle::random_tensor({2, 4, 4}, rng);
  DistillAlign align{oracle::random_tensor({3, 2}, rng, true), oracle::random_tensor({3, 2}, rng, true)};
  auto logits = oracle::random_tensor({2, 6}, rng, true);
  LossWeights w;
  w.alpha = 0.0f;
  auto f = [&] {
    auto ntp = ntp_loss(logits, {1, 2}, {1, 1});
    return total_loss(ntp, Tensor(), distill_loss(high, Tensor(), t, align).total, w);
  };
  f().backward();
  for (float g : align.proj_high.grad()) EXPECT_EQ(g, 0.0f);
  // finite differences see no dependence either
  auto data = align.proj_high.mutable_data();
  const float before = f().item();
  data[0] += 0.5f;
  EXPECT_EQ(f().item(), before);
}

TEST(SynthesizeTeacher, DeterministicAndEdgeChannel) {
  Rng rng(10);
  auto img = oracle::random_tensor({3, 16, 16}, rng);
  auto a = synthesize_teacher(img, TeacherKind::kM2F, 5, 4, 4, 6);
  auto b = synthesize_teacher(img, TeacherKind::kM2F, 5, 4, 4, 6);
  EXPECT_EQ(a.shape(), (Shape{6, 4, 4}));
  EXPECT_EQ(a.to_vector(), b.to_vector());
  EXPECT_NE(synthesize_teacher(img, TeacherKind::kM2F, 6, 4, 4, 6).to_vector(), a.to_vector());
  EXPECT_NE(synthesize_teacher(img, TeacherKind::kSam2, 5, 4, 4, 6).to_vector(), a.to_vector());

  auto flat = synthesize_teacher(Tensor::full({3, 16, 16}, 0.3f), TeacherKind::kSam2, 1, 2, 2, 3);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(flat.data()[2 * 4 + i], 0.0f);
  EXPECT_THROW(synthesize_teacher(img, TeacherKind::kM2F, 1, 5, 4, 6), ConfigError);
}

TEST(GradCheck, EveryLossOnTenSeeds) {
  for (const auto& c : gradcases::objective_cases())
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      EXPECT_LE(c.run(rng), 1e-2) << c.name << " seed " << seed;
    }
}
