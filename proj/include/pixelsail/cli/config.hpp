#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pixelsail/backbone/config.hpp"
#include "pixelsail/backbone/tokenizer.hpp"
#include "pixelsail/data/record.hpp"
#include "pixelsail/objectives/objectives.hpp"

namespace pixelsail {

enum class DistillMode { kOn, kOff, kFromFile };

struct TrainConfig {
  float lr = 4e-5f;
  float warmup_ratio = 0.03f;
  float weight_decay = 0.0f;
  std::size_t batch_size = 8;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  LossWeights weights;
  DistillMode distill = DistillMode::kOn;
  std::string teacher_dir;  // from-file: <dir>/<record id>.<m2f|sam2>.json
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t teacher_high_channels = 16;
  std::size_t teacher_low_channels = 32;
};

struct DataConfig {
  std::string path;  // JSONL; synthetic data when empty
  std::size_t synthetic_n = 64;
  std::uint64_t synthetic_seed = 1;
  std::vector<Task> tasks = {Task::kRefSeg, Task::kPanopticTemplate, Task::kRegionCaption, Task::kMcq, Task::kVtRes};
  bool mix_plain_vqa = true;
  std::size_t max_turns = 5;
};

struct EvalConfig {
  std::vector<Task> tasks = {Task::kRegionCaption, Task::kMcq, Task::kVtRes};
  bool force_seg = true;
  std::size_t max_new_tokens = 32;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  void validate() const {
    model.validate();
    train.weights.validate();
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    // lr = 0 is allowed: it freezes every parameter, which the tests rely on.
    if (!(train.lr >= 0.0f) || !std::isfinite(train.lr)) fail("train.lr must be >= 0");
    if (!(train.warmup_ratio >= 0.0f && train.warmup_ratio < 1.0f)) fail("train.warmup_ratio must lie in [0, 1)");
    if (train.batch_size < 1) fail("train.batch_size must be >= 1");
    if (train.steps < 1) fail("train.steps must be >= 1");
    if (!(train.weight_decay >= 0.0f)) fail("train.weight_decay must be >= 0");
    if (train.distill == DistillMode::kFromFile && train.teacher_dir.empty())
      fail("train.distill = from-file needs train.teacher_dir");
    if (train.teacher_high_channels < 2 || train.teacher_low_channels < 2) fail("teacher channel counts must be >= 2");
    if (data.path.empty() && data.synthetic_n == 0) fail("data.synthetic_n must be >= 1");
    if (data.tasks.empty()) fail("data.tasks is empty");
    if (data.max_turns < 1) fail("data.max_turns must be >= 1");
    if (eval.max_new_tokens < 1) fail("eval.max_new_tokens must be >= 1");
    if (const auto need = Tokenizer(model.num_visual_prompts).required_vocab(); model.vocab_size < need)
      fail("model.vocab_size " + std::to_string(model.vocab_size) + " is below the tokenizer's " + std::to_string(need));
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: " + key + " = '" + v + "' is not a valid number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("config: " + key + " = '" + v + "' is not a boolean");
}

inline std::vector<Task> parse_tasks(const std::string& v) {
  std::vector<Task> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_task(item));
  }
  return out;
}

inline std::string join_tasks(const std::vector<Task>& tasks) {
  std::string s;
  for (std::size_t i = 0; i < tasks.size(); ++i) s += (i ? "," : "") + std::string(task_name(tasks[i]));
  return s;
}

inline std::string format_float(double v) {
  std::ostringstream o;
  o.precision(9);
  o << v;
  return o.str();
}

struct ConfigKey {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::map<std::string, ConfigKey>& config_keys() {
  static const std::map<std::string, ConfigKey> keys = [] {
    std::map<std::string, ConfigKey> k;
    auto size = [&](const std::string& name, auto member) {
      k[name] = {[=](RunConfig& c, const std::string& v) { member(c) = parse_number<std::size_t>(name, v); },
                 [=](const RunConfig& c) { return std::to_string(member(c)); }};
    };
    auto real = [&](const std::string& name, auto member) {
      k[name] = {[=](RunConfig& c, const std::string& v) {
                   try {
                     std::size_t used = 0;
                     member(c) = std::stof(v, &used);
                     if (used != v.size()) throw std::invalid_argument(v);
                   } catch (const std::logic_error&) {
                     throw ConfigError("config: " + name + " = '" + v + "' is not a valid number");
                   }
                 },
                 [=](const RunConfig& c) { return format_float(member(c)); }};
    };
    size("model.image_h", [](auto& c) -> auto& { return c.model.image_h; });
    size("model.image_w", [](auto& c) -> auto& { return c.model.image_w; });
    size("model.patch_size", [](auto& c) -> auto& { return c.model.patch_size; });
    size("model.channels", [](auto& c) -> auto& { return c.model.channels; });
    size("model.layers", [](auto& c) -> auto& { return c.model.layers; });
    size("model.heads", [](auto& c) -> auto& { return c.model.heads; });
    size("model.mlp_ratio", [](auto& c) -> auto& { return c.model.mlp_ratio; });
    size("model.vocab_size", [](auto& c) -> auto& { return c.model.vocab_size; });
    size("model.max_seq_len", [](auto& c) -> auto& { return c.model.max_seq_len; });
    size("model.num_visual_prompts", [](auto& c) -> auto& { return c.model.num_visual_prompts; });
    k["model.vision_full_attention"] = {
        [](RunConfig& c, const std::string& v) { c.model.vision_full_attention = parse_bool("model.vision_full_attention", v); },
        [](const RunConfig& c) { return std::string(c.model.vision_full_attention ? "true" : "false"); }};

    real("train.lr", [](auto& c) -> auto& { return c.train.lr; });
    real("train.warmup_ratio", [](auto& c) -> auto& { return c.train.warmup_ratio; });
    real("train.weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; });
    real("train.alpha", [](auto& c) -> auto& { return c.train.weights.alpha; });
    real("train.lambda", [](auto& c) -> auto& { return c.train.weights.lambda; });
    real("train.beta", [](auto& c) -> auto& { return c.train.weights.beta; });
    size("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    size("train.steps", [](auto& c) -> auto& { return c.train.steps; });
    size("train.checkpoint_every", [](auto& c) -> auto& { return c.train.checkpoint_every; });
    size("train.teacher_high_channels", [](auto& c) -> auto& { return c.train.teacher_high_channels; });
    size("train.teacher_low_channels", [](auto& c) -> auto& { return c.train.teacher_low_channels; });
    k["train.seed"] = {[](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("train.seed", v); },
                       [](const RunConfig& c) { return std::to_string(c.train.seed); }};
    k["train.distill"] = {[](RunConfig& c, const std::string& v) {
                            if (v == "on") c.train.distill = DistillMode::kOn;
                            else if (v == "off") c.train.distill = DistillMode::kOff;
                            else if (v == "from-file") c.train.distill = DistillMode::kFromFile;
                            else throw ConfigError("config: train.distill must be on, off or from-file, got '" + v + "'");
                          },
                          [](const RunConfig& c) {
                            return std::string(c.train.distill == DistillMode::kOn    ? "on"
                                               : c.train.distill == DistillMode::kOff ? "off"
                                                                                      : "from-file");
                          }};
    k["train.teacher_dir"] = {[](RunConfig& c, const std::string& v) { c.train.teacher_dir = v; },
                              [](const RunConfig& c) { return c.train.teacher_dir; }};

    k["data.path"] = {[](RunConfig& c, const std::string& v) { c.data.path = v; },
                      [](const RunConfig& c) { return c.data.path; }};
    size("data.synthetic_n", [](auto& c) -> auto& { return c.data.synthetic_n; });
    size("data.max_turns", [](auto& c) -> auto& { return c.data.max_turns; });
    k["data.synthetic_seed"] = {
        [](RunConfig& c, const std::string& v) { c.data.synthetic_seed = parse_number<std::uint64_t>("data.synthetic_seed", v); },
        [](const RunConfig& c) { return std::to_string(c.data.synthetic_seed); }};
    k["data.tasks"] = {[](RunConfig& c, const std::string& v) { c.data.tasks = parse_tasks(v); },
                       [](const RunConfig& c) { return join_tasks(c.data.tasks); }};
    k["data.mix_plain_vqa"] = {[](RunConfig& c, const std::string& v) { c.data.mix_plain_vqa = parse_bool("data.mix_plain_vqa", v); },
                               [](const RunConfig& c) { return std::string(c.data.mix_plain_vqa ? "true" : "false"); }};

    k["eval.tasks"] = {[](RunConfig& c, const std::string& v) { c.eval.tasks = parse_tasks(v); },
                       [](const RunConfig& c) { return join_tasks(c.eval.tasks); }};
    k["eval.force_seg"] = {[](RunConfig& c, const std::string& v) { c.eval.force_seg = parse_bool("eval.force_seg", v); },
                           [](const RunConfig& c) { return std::string(c.eval.force_seg ? "true" : "false"); }};
    size("eval.max_new_tokens", [](auto& c) -> auto& { return c.eval.max_new_tokens; });
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies one `key = value` (or `key=value`) assignment.
inline void apply_setting(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config: expected key = value, got '" + assignment + "'");
  const std::string key = detail::trim(assignment.substr(0, eq)), value = detail::trim(assignment.substr(eq + 1));
  const auto& keys = detail::config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("config: unknown key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const DataError& e) {
    throw ConfigError("config: " + key + ": " + e.what());
  }
}

/// Flat `key = value` text; '#' starts a comment.
inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_setting(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// Config file, then --set overrides, then PIXELSAIL_SEED; validated.
inline RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& o : overrides) apply_setting(cfg, o);
  if (const char* seed = std::getenv("PIXELSAIL_SEED"); seed && *seed) apply_setting(cfg, std::string("train.seed=") + seed);
  cfg.validate();
  return cfg;
}

/// Every key in sorted order, one `key = value` per line.
inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, k] : detail::config_keys()) out += key + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace pixelsail
