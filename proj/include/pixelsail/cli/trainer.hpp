#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "pixelsail/cli/checkpoint.hpp"
#include "pixelsail/cli/config.hpp"
#include "pixelsail/cli/model.hpp"
#include "pixelsail/data/synthetic.hpp"
#include "pixelsail/numerics/optim.hpp"

namespace pixelsail {

struct Dataset {
  std::vector<SampleRecord> records;
  std::filesystem::path base_dir;  // resolves relative image paths
};

inline SyntheticConfig synthetic_config(const RunConfig& cfg) {
  SyntheticConfig s;
  s.image_h = cfg.model.image_h;
  s.image_w = cfg.model.image_w;
  s.patch_size = cfg.model.patch_size;
  s.num_visual_prompts = cfg.model.num_visual_prompts;
  s.tasks.clear();
  for (Task t : cfg.data.tasks)
    if (t != Task::kPlainVqa) s.tasks.push_back(t);
  s.mix_plain_vqa = cfg.data.mix_plain_vqa;
  s.max_turns = cfg.data.max_turns;
  return s;
}

/// JSONL records of the configured tasks, or the synthetic set.
inline Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  if (cfg.data.path.empty()) {
    d.records = generate_synthetic_dataset(cfg.data.synthetic_n, synthetic_config(cfg), cfg.data.synthetic_seed);
    return d;
  }
  const std::filesystem::path p(cfg.data.path);
  d.base_dir = p.parent_path();
  for (auto& r : load_jsonl(p, cfg.model.num_visual_prompts))
    if (std::find(cfg.data.tasks.begin(), cfg.data.tasks.end(), r.task) != cfg.data.tasks.end())
      d.records.push_back(std::move(r));
  if (d.records.empty()) throw DataError(p.string() + ": no records of the configured tasks");
  return d;
}

struct TrainState {
  PixelSailParams params;
  std::vector<AdamWState> opt;
  std::size_t step = 0;  // completed optimisation steps
  Rng rng;               // batch sampling
};

inline TrainState init_train_state(const RunConfig& cfg) {
  TrainState s;
  Rng init = Rng::derive(cfg.train.seed, 0);
  s.params = PixelSailParams::init(cfg.model, cfg.train, init);
  s.opt.resize(s.params.params().size());
  s.rng = Rng::derive(cfg.train.seed, 1);
  return s;
}

inline Checkpoint to_checkpoint(const TrainState& s, const RunConfig& cfg) {
  Checkpoint ck;
  std::istringstream lines(serialize_config(cfg));
  for (std::string l; std::getline(lines, l);) ck.config_lines.push_back(l);
  ck.meta["step"] = std::to_string(s.step);
  ck.meta["rng"] = s.rng.state();
  const auto params = s.params.params();
  for (const auto& [name, t] : params) ck.arrays.push_back({name, t.shape(), t.to_vector()});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const auto& st = i < s.opt.size() ? s.opt[i] : AdamWState{};
    auto pad = [&](const std::vector<float>& v) { return v.empty() ? std::vector<float>(t.numel(), 0.0f) : v; };
    ck.arrays.push_back({"adam.m." + name, t.shape(), pad(st.m)});
    ck.arrays.push_back({"adam.v." + name, t.shape(), pad(st.v)});
  }
  return ck;
}

inline RunConfig config_from_checkpoint(const Checkpoint& ck) {
  std::string text;
  for (const auto& l : ck.config_lines) text += l + "\n";
  try {
    auto cfg = parse_config(text, "checkpoint config");
    cfg.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
}

/// Copies checkpoint arrays into `s` after checking every name and shape.
inline void restore_state(TrainState& s, const Checkpoint& ck) {
  const auto params = s.params.params();
  std::vector<std::pair<std::string, Shape>> expected;
  for (const auto& [name, t] : params) expected.emplace_back(name, t.shape());
  for (const auto& [name, t] : params) {
    expected.emplace_back("adam.m." + name, t.shape());
    expected.emplace_back("adam.v." + name, t.shape());
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    if (i >= ck.arrays.size()) throw CheckpointError("checkpoint is missing '" + name + "'");
    const auto& a = ck.arrays[i];
    if (a.name != name) throw CheckpointError("checkpoint key '" + a.name + "' where the model expects '" + name + "'");
    if (a.shape != shape)
      throw CheckpointError("shape mismatch at '" + name + "': checkpoint " + shape_str(a.shape) + ", model " +
                            shape_str(shape));
  }
  if (ck.arrays.size() != expected.size())
    throw CheckpointError("checkpoint has unexpected key '" + ck.arrays[expected.size()].name + "'");

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    auto dst = t.mutable_data();
    std::copy(ck.arrays[i].values.begin(), ck.arrays[i].values.end(), dst.begin());
    s.opt[i].m = ck.arrays[params.size() + 2 * i].values;
    s.opt[i].v = ck.arrays[params.size() + 2 * i + 1].values;
  }
  try {
    s.step = static_cast<std::size_t>(std::stoull(ck.meta.at("step")));
    s.rng.set_state(ck.meta.at("rng"));
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint meta lacks a valid 'step' or 'rng' entry");
  }
}

struct StepLog {
  std::size_t step = 0;  // 1-based
  double ntp = 0, ce = 0, dice = 0, distill = 0, total = 0;
  float lr = 0;

  static std::string csv_header() { return "step,l_ntp,l_ce,l_dice,l_distill,lr"; }
  std::string csv() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", step, ntp, ce, dice, distill, static_cast<double>(lr));
    return buf;
  }
};

class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<TrainingExample> examples) : cfg_(std::move(cfg)), examples_(std::move(examples)) {
    if (examples_.empty()) throw DataError("trainer: no training examples");
  }

  static Trainer from_dataset(const RunConfig& cfg, const Dataset& d) {
    Tokenizer tok(cfg.model.num_visual_prompts);
    std::vector<TrainingExample> ex;
    ex.reserve(d.records.size());
    for (const auto& r : d.records) ex.push_back(make_example(r, cfg, tok, d.base_dir));
    return Trainer(cfg, std::move(ex));
  }

  const RunConfig& config() const { return cfg_; }
  const std::vector<TrainingExample>& examples() const { return examples_; }

  /// The whole set in order when it fits in a batch, else distinct draws.
  std::vector<std::size_t> next_batch(Rng& rng) const {
    const std::size_t n = examples_.size(), b = cfg_.train.batch_size;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (b >= n) return idx;
    for (std::size_t i = 0; i < b; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(b);
    return idx;
  }

  StepLog step(TrainState& s) const {
    const auto& tc = cfg_.train;
    StepLog log;
    log.step = s.step + 1;
    log.lr = cosine_lr(static_cast<long>(s.step), static_cast<long>(tc.steps), tc.warmup_ratio, tc.lr);
    const auto batch = next_batch(s.rng);
    const bool distill = tc.distill != DistillMode::kOff;
    Tensor sum;
    std::size_t n_ce = 0, n_distill = 0;
    for (auto i : batch) {
      auto t = example_loss(s.params, cfg_.model, examples_[i], tc.weights, distill);
      sum = sum.defined() ? ops::add(sum, t.total) : t.total;
      log.ntp += t.ntp.item();
      if (t.ce.defined()) {
        log.ce += t.ce.item();
        log.dice += t.dice.item();
        ++n_ce;
      }
      if (t.distill.defined()) {
        log.distill += t.distill.item();
        ++n_distill;
      }
    }
    log.ntp /= static_cast<double>(batch.size());
    if (n_ce) {
      log.ce /= static_cast<double>(n_ce);
      log.dice /= static_cast<double>(n_ce);
    }
    if (n_distill) log.distill /= static_cast<double>(n_distill);
    Tensor loss = ops::scale(sum, 1.0f / static_cast<float>(batch.size()));
    log.total = loss.item();
    if (loss.requires_grad()) loss.backward();

    AdamWConfig acfg;
    acfg.weight_decay = tc.weight_decay;
    auto params = s.params.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      adamw_step(params[i].second, s.opt[i], acfg, log.lr, static_cast<long>(s.step) + 1);
      params[i].second.zero_grad();
    }
    ++s.step;
    return log;
  }

  /// Steps until `until` (or the configured total); `on_step` sees every log line.
  void run(TrainState& s, std::size_t until, const std::function<void(const StepLog&, const TrainState&)>& on_step) const {
    until = std::min(until, cfg_.train.steps);
    while (s.step < until) {
      auto log = step(s);
      if (on_step) on_step(log, s);
    }
  }

 private:
  RunConfig cfg_;
  std::vector<TrainingExample> examples_;
};

}  // namespace pixelsail
