#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pixelsail/backbone/model.hpp"
#include "pixelsail/data/encode.hpp"
#include "pixelsail/eval/meteor.hpp"
#include "pixelsail/eval/metrics.hpp"

namespace pixelsail {

/// What the benchmark needs from a model. begin_turn is called before the
/// decoding of every turn, so implementations can cache per-image work.
class BenchmarkModel {
 public:
  virtual ~BenchmarkModel() = default;
  virtual const ModelConfig& config() const = 0;
  virtual void begin_turn(const SampleRecord& record, std::size_t turn) = 0;
  virtual std::vector<float> next_token_logits(const TokenSequence& seq) = 0;
  /// One mask at image resolution for each position in `seg_positions`.
  virtual std::vector<BinaryMask> decode_masks(const TokenSequence& seq, const std::vector<int>& seg_positions) = 0;
};

struct BenchmarkOptions {
  std::size_t max_new_tokens = 32;
  bool force_seg = true;
  std::size_t boundary_width = 2;
};

struct SampleScore {
  std::string id;
  Task task = Task::kRefSeg;
  std::size_t turn = 0;
  std::string response;
  std::string metric;  // "iou", "meteor" or "correct"
  double value = 0.0;
};

struct TaskMetrics {
  std::size_t queries = 0;
  std::optional<double> ciou, giou, boundary_iou, meteor, accuracy;
};

/// Scores in [0, 1]; `overall` is on the 0-100 scale and present only when
/// captions, multiple choice and segmentation were all evaluated.
struct MetricReport {
  std::optional<double> meteor, mcq_accuracy, ciou, giou, boundary_iou, overall;
  std::map<std::string, TaskMetrics> per_task;
  std::vector<SampleScore> samples;
  std::size_t skipped_records = 0;  // task not requested
  std::size_t skipped_turns = 0;    // question alone exceeds the context
};

inline bool is_benchmark_task(Task t) { return t != Task::kPlainVqa; }

namespace detail {

struct SegPairs {
  std::vector<BinaryMask> preds, gts;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Greedy decoding over every turn of every record whose task is listed.
/// Turns that expect masks are decoded with forced [SEG] (when enabled), and
/// predicted masks pair with ground truth in [SEG] order; a missing
/// prediction counts as an empty mask.
inline MetricReport run_benchmark(BenchmarkModel& model, const std::vector<SampleRecord>& records,
                                  const std::vector<Task>& tasks, const Tokenizer& tok,
                                  const BenchmarkOptions& opts = {}) {
  for (Task t : tasks)
    if (!is_benchmark_task(t)) throw ConfigError("task '" + std::string(task_name(t)) + "' has no benchmark metric");
  const std::set<Task> wanted(tasks.begin(), tasks.end());
  const ModelConfig& cfg = model.config();
  MetricReport report;
  std::map<Task, detail::SegPairs> seg;
  std::map<Task, std::vector<double>> meteor;
  std::map<Task, std::pair<std::vector<std::string>, std::vector<std::string>>> mcq;
  std::map<Task, std::size_t> queries;

  for (const auto& r : records) {
    if (!wanted.count(r.task)) {
      ++report.skipped_records;
      continue;
    }
    std::size_t gt_offset = 0;
    for (std::size_t turn = 0; turn < r.conversations.size(); ++turn) {
      const auto& ref = r.conversations[turn];
      const std::size_t expected = count_seg(ref.a);
      const std::size_t first_gt = gt_offset;
      gt_offset += expected;
      auto prefix = encode_question(r, turn, tok, cfg);
      if (prefix.seq.size() >= cfg.max_seq_len) {
        ++report.skipped_turns;
        continue;
      }
      model.begin_turn(r, turn);
      GenerateOptions g;
      g.max_new = opts.max_new_tokens;
      g.max_len = cfg.max_seq_len;
      g.force_seg = opts.force_seg && is_segmentation_task(r.task) && expected > 0;
      auto out = generate(prefix.seq, tok, [&](const TokenSequence& s) { return model.next_token_logits(s); }, g);
      const std::vector<int> generated(out.ids.begin() + static_cast<std::ptrdiff_t>(prefix.seq.size()), out.ids.end());
      SampleScore score{r.id, r.task, turn, tok.decode(generated), "", 0.0};
      ++queries[r.task];

      if (is_segmentation_task(r.task) && expected > 0) {
        std::vector<int> positions;
        for (int p : out.positions_of(Role::kSegSlot))
          if (static_cast<std::size_t>(p) >= prefix.seq.size()) positions.push_back(p);
        auto preds = positions.empty() ? std::vector<BinaryMask>{} : model.decode_masks(out, positions);
        auto& pairs = seg[r.task];
        std::vector<BinaryMask> mine, theirs;
        for (std::size_t k = 0; k < expected; ++k) {
          const auto& gt = r.gt_masks[first_gt + k];
          mine.push_back(k < preds.size() ? preds[k] : BinaryMask(gt.h, gt.w));
          theirs.push_back(gt);
        }
        score.metric = "iou";
        score.value = giou(mine, theirs);
        pairs.preds.insert(pairs.preds.end(), mine.begin(), mine.end());
        pairs.gts.insert(pairs.gts.end(), theirs.begin(), theirs.end());
      } else if (r.task == Task::kMcq) {
        mcq[r.task].first.push_back(score.response);
        mcq[r.task].second.push_back(ref.a);
        score.metric = "correct";
        score.value = mcq_accuracy({score.response}, {ref.a});
      } else {
        score.metric = "meteor";
        score.value = meteor_lite(score.response, ref.a);
        meteor[r.task].push_back(score.value);
      }
      report.samples.push_back(std::move(score));
    }
  }

  detail::SegPairs all_seg;
  std::vector<double> all_meteor;
  std::vector<std::string> all_responses, all_keys;
  for (Task t : kAllTasks) {
    if (!queries.count(t)) continue;
    TaskMetrics m;
    m.queries = queries[t];
    if (auto it = seg.find(t); it != seg.end() && !it->second.preds.empty()) {
      m.ciou = ciou(it->second.preds, it->second.gts);
      m.giou = giou(it->second.preds, it->second.gts);
      m.boundary_iou = boundary_iou(it->second.preds, it->second.gts, opts.boundary_width);
      all_seg.preds.insert(all_seg.preds.end(), it->second.preds.begin(), it->second.preds.end());
      all_seg.gts.insert(all_seg.gts.end(), it->second.gts.begin(), it->second.gts.end());
    }
    if (auto it = meteor.find(t); it != meteor.end()) {
      m.meteor = detail::mean_of(it->second);
      all_meteor.insert(all_meteor.end(), it->second.begin(), it->second.end());
    }
    if (auto it = mcq.find(t); it != mcq.end()) {
      m.accuracy = mcq_accuracy(it->second.first, it->second.second);
      all_responses.insert(all_responses.end(), it->second.first.begin(), it->second.first.end());
      all_keys.insert(all_keys.end(), it->second.second.begin(), it->second.second.end());
    }
    report.per_task[std::string(task_name(t))] = m;
  }
  if (!all_seg.preds.empty()) {
    report.ciou = ciou(all_seg.preds, all_seg.gts);
    report.giou = giou(all_seg.preds, all_seg.gts);
    report.boundary_iou = boundary_iou(all_seg.preds, all_seg.gts, opts.boundary_width);
  }
  if (!all_meteor.empty()) report.meteor = detail::mean_of(all_meteor);
  if (!all_keys.empty()) report.mcq_accuracy = mcq_accuracy(all_responses, all_keys);
  if (report.meteor && report.mcq_accuracy && report.ciou)
    report.overall = perbench_overall(*report.meteor * 100, *report.mcq_accuracy * 100, *report.ciou * 100,
                                      *report.giou * 100);
  return report;
}

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace detail

inline nlohmann::json report_to_json(const MetricReport& r) {
  using nlohmann::json;
  json j;
  j["meteor"] = detail::opt_json(r.meteor);
  j["mcq_accuracy"] = detail::opt_json(r.mcq_accuracy);
  j["ciou"] = detail::opt_json(r.ciou);
  j["giou"] = detail::opt_json(r.giou);
  j["boundary_iou"] = detail::opt_json(r.boundary_iou);
  j["overall"] = detail::opt_json(r.overall);
  j["skipped_records"] = r.skipped_records;
  j["skipped_turns"] = r.skipped_turns;
  j["per_task"] = json::object();
  for (const auto& [name, m] : r.per_task)
    j["per_task"][name] = {{"queries", m.queries},
                           {"ciou", detail::opt_json(m.ciou)},
                           {"giou", detail::opt_json(m.giou)},
                           {"boundary_iou", detail::opt_json(m.boundary_iou)},
                           {"meteor", detail::opt_json(m.meteor)},
                           {"accuracy", detail::opt_json(m.accuracy)}};
  j["samples"] = json::array();
  for (const auto& s : r.samples)
    j["samples"].push_back({{"id", s.id},
                            {"task", std::string(task_name(s.task))},
                            {"turn", s.turn},
                            {"response", s.response},
                            {"metric", s.metric},
                            {"value", s.value}});
  return j;
}

/// Percentages (meteor, accuracy, IoUs) in a fixed-width table.
inline std::string format_report(const MetricReport& r) {
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream o;
    o << std::fixed << std::setprecision(1) << *v * 100.0;
    return o.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(18) << "task" << std::right << std::setw(8) << "queries" << std::setw(8) << "cIoU"
      << std::setw(8) << "gIoU" << std::setw(8) << "bIoU" << std::setw(8) << "METEOR" << std::setw(8) << "Acc" << "\n";
  for (const auto& [name, m] : r.per_task)
    out << std::left << std::setw(18) << name << std::right << std::setw(8) << m.queries << std::setw(8) << pct(m.ciou)
        << std::setw(8) << pct(m.giou) << std::setw(8) << pct(m.boundary_iou) << std::setw(8) << pct(m.meteor)
        << std::setw(8) << pct(m.accuracy) << "\n";
  std::ostringstream overall;
  if (r.overall) overall << std::fixed << std::setprecision(1) << *r.overall;
  out << "overall: " << (r.overall ? overall.str() : std::string("-"));
  if (r.skipped_records || r.skipped_turns)
    out << "  (skipped " << r.skipped_records << " records, " << r.skipped_turns << " turns)";
  out << "\n";
  return out.str();
}

/// Replays the reference answers and returns the ground-truth masks.
class OracleModel : public BenchmarkModel {
 public:
  OracleModel(ModelConfig cfg, const Tokenizer& tok) : cfg_(std::move(cfg)), tok_(tok) {}
  const ModelConfig& config() const override { return cfg_; }

  void begin_turn(const SampleRecord& r, std::size_t turn) override {
    answer_ = tok_.encode(r.conversations[turn].a);
    answer_.push_back(token::kEos);
    start_ = 0;
    masks_.clear();
    std::size_t offset = 0;
    for (std::size_t t = 0; t < turn; ++t) offset += count_seg(r.conversations[t].a);
    const std::size_t k = count_seg(r.conversations[turn].a);
    for (std::size_t i = 0; i < k; ++i) masks_.push_back(r.gt_masks[offset + i]);
    first_call_ = true;
  }

  std::vector<float> next_token_logits(const TokenSequence& seq) override {
    if (first_call_) {
      start_ = seq.size();
      first_call_ = false;
    }
    std::vector<float> logits(cfg_.vocab_size, 0.0f);
    const std::size_t i = seq.size() - start_;
    logits[static_cast<std::size_t>(i < answer_.size() ? answer_[i] : token::kEos)] = 1.0f;
    return logits;
  }

  std::vector<BinaryMask> decode_masks(const TokenSequence&, const std::vector<int>& positions) override {
    std::vector<BinaryMask> out;
    for (std::size_t i = 0; i < positions.size() && i < masks_.size(); ++i) out.push_back(masks_[i]);
    return out;
  }

 private:
  ModelConfig cfg_;
  const Tokenizer& tok_;
  std::vector<int> answer_;
  std::vector<BinaryMask> masks_;
  std::size_t start_ = 0;
  bool first_call_ = true;
};

/// Ends every answer at once and paints a fixed mask for any [SEG] it is given.
class SilentModel : public BenchmarkModel {
 public:
  SilentModel(ModelConfig cfg, std::size_t image_h, std::size_t image_w)
      : cfg_(std::move(cfg)), h_(image_h), w_(image_w) {}
  const ModelConfig& config() const override { return cfg_; }
  void begin_turn(const SampleRecord&, std::size_t) override {}
  std::vector<float> next_token_logits(const TokenSequence&) override {
    std::vector<float> logits(cfg_.vocab_size, 0.0f);
    logits[token::kEos] = 1.0f;
    return logits;
  }
  std::vector<BinaryMask> decode_masks(const TokenSequence&, const std::vector<int>& positions) override {
    BinaryMask m(h_, w_);
    for (std::size_t y = 0; y < h_ / 2; ++y)
      for (std::size_t x = 0; x < w_ / 2; ++x) m.set(y, x);
    return std::vector<BinaryMask>(positions.size(), m);
  }

 private:
  ModelConfig cfg_;
  std::size_t h_, w_;
};

}  // namespace pixelsail
