#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pixelsail/cli/trainer.hpp"
#include "pixelsail/eval/pca.hpp"

namespace pixelsail::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigExit = 2, kCheckpointExit = 3, kDataExit = 4 };

/// Parameters plus the config they were built from.
struct LoadedModel {
  RunConfig cfg;
  TrainState state;
};

/// Loads a checkpoint. With `expected`, the checkpoint must match that
/// config's shapes; otherwise its own config snapshot is used.
inline LoadedModel load_model(const fs::path& path, const std::optional<RunConfig>& expected = std::nullopt) {
  const auto ck = load_checkpoint(path);
  LoadedModel m;
  m.cfg = expected ? *expected : config_from_checkpoint(ck);
  m.state = init_train_state(m.cfg);
  restore_state(m.state, ck);
  return m;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string config;
  std::vector<std::string> sets;
  fs::path out_dir;
  std::string resume;          // checkpoint to continue from
  std::size_t until = 0;       // stop after this step (0: train.steps)
};

inline std::string checkpoint_name(std::size_t step) { return "step-" + std::to_string(step) + ".ckpt"; }

/// Header plus the lines of an earlier run up to `step`.
inline std::vector<std::string> kept_csv_lines(const fs::path& csv, std::size_t step) {
  std::vector<std::string> lines{StepLog::csv_header()};
  std::ifstream in(csv);
  std::string line;
  if (!std::getline(in, line)) return lines;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stoull(line.substr(0, comma)) > step) break;
    lines.push_back(line);
  }
  return lines;
}

/// Returns the path of the last checkpoint written.
inline fs::path cmd_train(const TrainOptions& o, std::ostream& log) {
  RunConfig cfg;
  std::optional<Checkpoint> ck;
  if (!o.resume.empty()) {
    if (!o.config.empty()) throw ConfigError("--resume takes its config from the checkpoint; use --set to change it");
    ck = load_checkpoint(o.resume);
    cfg = config_from_checkpoint(*ck);
    for (const auto& s : o.sets) apply_setting(cfg, s);
    cfg.validate();
  } else {
    cfg = resolve_config(o.config, o.sets);
  }
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out_dir);

  const auto data = load_dataset(cfg);
  const auto trainer = Trainer::from_dataset(cfg, data);
  auto state = init_train_state(cfg);
  if (ck) restore_state(state, *ck);

  const fs::path csv_path = o.out_dir / "loss.csv";
  {
    const auto kept = kept_csv_lines(ck ? csv_path : fs::path{}, state.step);
    std::ofstream csv(csv_path, std::ios::trunc);
    for (const auto& l : kept) csv << l << "\n";
  }
  std::ofstream csv(csv_path, std::ios::app);
  if (!csv) throw DataError("cannot write " + csv_path.string());
  {
    std::ofstream snap(o.out_dir / "config.txt");
    snap << serialize_config(cfg);
  }

  const std::size_t until = o.until ? std::min(o.until, cfg.train.steps) : cfg.train.steps;
  fs::path last;
  trainer.run(state, until, [&](const StepLog& l, const TrainState& s) {
    csv << l.csv() << "\n";
    log << l.csv() << "\n";
    if (cfg.train.checkpoint_every && s.step % cfg.train.checkpoint_every == 0) {
      last = o.out_dir / checkpoint_name(s.step);
      save_checkpoint(last, to_checkpoint(s, cfg));
    }
  });
  csv.flush();
  last = o.out_dir / "model.ckpt";
  save_checkpoint(last, to_checkpoint(state, cfg));
  log << "checkpoint " << last.string() << " at step " << state.step << "\n";
  return last;
}

// ---------------------------------------------------------------- eval / bench

struct EvalOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string fixture;  // "oracle" or "silent" instead of a checkpoint
  std::string data;
  fs::path out_dir;
  bool bench = false;  // region-caption, mcq and vt-res on the configured data
};

inline const std::vector<Task>& perbench_tasks() {
  static const std::vector<Task> t{Task::kRegionCaption, Task::kMcq, Task::kVtRes};
  return t;
}

/// The evaluation records: the JSONL at data.path, or a synthetic set of the
/// evaluated tasks.
inline Dataset eval_dataset(RunConfig cfg, const std::vector<Task>& tasks) {
  cfg.data.tasks = tasks;
  cfg.data.mix_plain_vqa = false;
  return load_dataset(cfg);
}

inline MetricReport cmd_eval(const EvalOptions& o, std::ostream& log) {
  if (o.checkpoint.empty() == o.fixture.empty()) throw ConfigError("give exactly one of --checkpoint and --fixture");
  std::optional<RunConfig> given;
  if (!o.config.empty() || o.checkpoint.empty()) given = resolve_config(o.config, o.sets);

  std::optional<LoadedModel> loaded;
  RunConfig cfg;
  if (!o.checkpoint.empty()) {
    loaded = load_model(o.checkpoint, given);
    cfg = loaded->cfg;
    if (!given) {
      for (const auto& s : o.sets) apply_setting(cfg, s);
      cfg.validate();
    }
  } else {
    cfg = *given;
  }
  if (!o.data.empty()) cfg.data.path = o.data;
  const auto tasks = o.bench ? perbench_tasks() : cfg.eval.tasks;
  const auto data = eval_dataset(cfg, tasks);

  Tokenizer tok(cfg.model.num_visual_prompts);
  BenchmarkOptions bo;
  bo.force_seg = cfg.eval.force_seg;
  bo.max_new_tokens = cfg.eval.max_new_tokens;
  MetricReport report;
  if (loaded) {
    PixelSailSession session(loaded->state.params, cfg.model, data.base_dir);
    report = run_benchmark(session, data.records, tasks, tok, bo);
  } else if (o.fixture == "oracle") {
    OracleModel m(cfg.model, tok);
    report = run_benchmark(m, data.records, tasks, tok, bo);
  } else if (o.fixture == "silent") {
    SilentModel m(cfg.model, cfg.model.image_h, cfg.model.image_w);
    report = run_benchmark(m, data.records, tasks, tok, bo);
  } else {
    throw ConfigError("unknown fixture '" + o.fixture + "' (oracle, silent)");
  }

  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    std::ofstream out(o.out_dir / "report.json");
    // generated text may hold byte tokens that are not valid UTF-8
    out << report_to_json(report).dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
  }
  log << format_report(report);
  return report;
}

// ---------------------------------------------------------------- infer / viz

/// Nearest positive multiple of `p`.
inline std::size_t nearest_multiple(std::size_t v, std::size_t p) {
  return std::max(p, (v + p / 2) / p * p);
}

/// Reads an image the model can take: divisible by the patch size and of the
/// configured resolution.
inline Tensor model_image(const fs::path& path, const ModelConfig& cfg) {
  const auto img = read_ppm(path);
  const std::size_t p = cfg.patch_size;
  if (img.h % p || img.w % p)
    throw DataError(path.string() + ": image is " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                    ", not divisible by the patch size " + std::to_string(p) + "; nearest valid size is " +
                    std::to_string(nearest_multiple(img.h, p)) + "x" + std::to_string(nearest_multiple(img.w, p)));
  if (img.h != cfg.image_h || img.w != cfg.image_w)
    throw DataError(path.string() + ": image is " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                    ", the checkpoint was trained at " + std::to_string(cfg.image_h) + "x" +
                    std::to_string(cfg.image_w));
  return image_tensor(img);
}

/// A JSON array of {"index", "h", "w", "rle" | "bits"}; masks may be given at
/// image or patch-grid resolution.
inline std::vector<VisualPrompt> load_prompts(const fs::path& path, const ModelConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read prompts file " + path.string());
  std::vector<VisualPrompt> out;
  try {
    const auto j = nlohmann::json::parse(in);
    if (!j.is_array()) throw DataError("expected a JSON array of prompts");
    for (const auto& pj : j) {
      VisualPrompt vp;
      vp.index = pj.at("index").get<std::size_t>();
      if (vp.index < 1 || vp.index > cfg.num_visual_prompts)
        throw DataError("prompt index " + std::to_string(vp.index) + " outside 1.." + std::to_string(cfg.num_visual_prompts));
      auto m = detail::mask_from_json(pj);
      if (m.h == cfg.image_h && m.w == cfg.image_w)
        m = to_patch_grid(m, cfg.patch_size);
      else if (m.h != cfg.grid_h() || m.w != cfg.grid_w())
        throw DataError("prompt " + std::to_string(vp.index) + " mask is " + std::to_string(m.h) + "x" +
                        std::to_string(m.w) + ", expected the image or the patch grid size");
      vp.mask = std::move(m);
      out.push_back(std::move(vp));
    }
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

inline RgbImage mask_image(const BinaryMask& m) {
  RgbImage img{m.h, m.w, std::vector<std::uint8_t>(3 * m.h * m.w)};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < m.h * m.w; ++i) img.pixels[c * m.h * m.w + i] = m.bits[i] ? 255 : 0;
  return img;
}

struct InferOptions {
  std::string checkpoint;
  std::string image;
  std::string instruction;
  std::string prompts;
  bool force_seg = false;
  std::size_t max_new_tokens = 32;
  fs::path out_dir;
};

struct InferResult {
  std::string answer;
  std::vector<int> ids;  // generated tokens
  std::vector<fs::path> masks;
};

inline InferResult cmd_infer(const InferOptions& o, std::ostream& log, std::ostream& warn) {
  auto m = load_model(o.checkpoint);
  const auto& cfg = m.cfg.model;
  Tensor image = model_image(o.image, cfg);
  std::vector<VisualPrompt> prompts;
  if (!o.prompts.empty()) prompts = load_prompts(o.prompts, cfg);
  for (std::size_t i : referenced_prompts(o.instruction)) {
    const bool have = std::any_of(prompts.begin(), prompts.end(), [&](const VisualPrompt& p) { return p.index == i; });
    if (!have)
      warn << "warning: the instruction refers to <VP_" << i << "> but no such prompt was given; proceeding without it\n";
  }

  Tokenizer tok(cfg.num_visual_prompts);
  SampleRecord r;
  r.conversations = {{o.instruction, ""}};
  const auto prefix = encode_question(r, 0, tok, cfg);
  if (prefix.seq.size() >= cfg.max_seq_len)
    throw DataError("instruction does not fit in model.max_seq_len " + std::to_string(cfg.max_seq_len));

  PixelSailSession session(m.state.params, cfg);
  session.set_input(image, prompts);
  GenerateOptions g;
  g.max_new = o.max_new_tokens;
  g.max_len = cfg.max_seq_len;
  g.force_seg = o.force_seg;
  const auto seq = generate(prefix.seq, tok, [&](const TokenSequence& s) { return session.next_token_logits(s); }, g);

  InferResult res;
  res.ids.assign(seq.ids.begin() + static_cast<std::ptrdiff_t>(prefix.seq.size()), seq.ids.end());
  res.answer = tok.decode(res.ids);
  std::vector<int> positions;
  for (int p : seq.positions_of(Role::kSegSlot))
    if (static_cast<std::size_t>(p) >= prefix.seq.size()) positions.push_back(p);
  if (!o.out_dir.empty()) fs::create_directories(o.out_dir);
  if (!positions.empty()) {
    const auto masks = session.decode_masks(seq, positions);
    for (std::size_t k = 0; k < masks.size(); ++k) {
      res.masks.push_back(o.out_dir / ("mask_" + std::to_string(k + 1) + ".ppm"));
      write_ppm(res.masks.back(), mask_image(masks[k]));
    }
  }
  log << res.answer << "\n";
  for (const auto& p : res.masks) log << "mask " << p.string() << "\n";
  return res;
}

struct VizOptions {
  std::string checkpoint;
  std::string image;
  fs::path out_dir;
};

/// Writes F.ppm (backbone vision features) and F_h.ppm (upsampled features).
inline std::pair<fs::path, fs::path> cmd_viz(const VizOptions& o, std::ostream& log) {
  auto m = load_model(o.checkpoint);
  const auto& cfg = m.cfg.model;
  PixelSailSession session(m.state.params, cfg);
  session.set_input(model_image(o.image, cfg), {});
  const auto [low, high] = session.features(encode_prefix(cfg.vision_tokens()).seq);
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out_dir);
  const auto f = o.out_dir / "F.ppm", fh = o.out_dir / "F_h.ppm";
  write_ppm(f, pca_feature_image(low));
  write_ppm(fh, pca_feature_image(high));
  log << f.string() << "\n" << fh.string() << "\n";
  return {f, fh};
}

// ---------------------------------------------------------------- entry point

/// Parses the command line, runs the command and maps errors to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Pixel-SAIL at desk scale: a single transformer for pixel-grounded understanding"};
  app.require_subcommand(1);

  TrainOptions to;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train from a config, writing loss.csv and checkpoints");
  train->add_option("--config", to.config, "flat key = value config file");
  train->add_option("--set", to.sets, "override a config key (key=value)");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", to.resume, "continue from a checkpoint");
  train->add_option("--until", to.until, "stop after this step");

  EvalOptions eo;
  std::string eval_out;
  auto add_eval = [&](CLI::App* c) {
    c->add_option("--config", eo.config, "config file (shapes must match the checkpoint)");
    c->add_option("--set", eo.sets, "override a config key (key=value)");
    c->add_option("--checkpoint", eo.checkpoint, "trained checkpoint");
    c->add_option("--fixture", eo.fixture, "built-in model instead of a checkpoint: oracle or silent");
    c->add_option("--data", eo.data, "JSONL dataset (synthetic data when omitted)");
    c->add_option("--out", eval_out, "directory for report.json");
  };
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the configured tasks");
  add_eval(eval);
  auto* bench = app.add_subcommand("bench", "score region captions, multiple choice and V-T RES");
  add_eval(bench);

  InferOptions io;
  std::string infer_out;
  auto* infer = app.add_subcommand("infer", "answer one instruction about one image");
  infer->add_option("--checkpoint", io.checkpoint)->required();
  infer->add_option("--image", io.image, "PPM (P6) image")->required();
  infer->add_option("--instruction", io.instruction)->required();
  infer->add_option("--prompts", io.prompts, "JSON visual prompts");
  infer->add_flag("--force-seg", io.force_seg, "append [SEG] when the answer has none");
  infer->add_option("--max-new-tokens", io.max_new_tokens);
  infer->add_option("--out", infer_out, "directory for mask_<k>.ppm")->required();

  VizOptions vo;
  std::string viz_out;
  auto* viz = app.add_subcommand("viz", "PCA images of the backbone and upsampled features");
  viz->add_option("--checkpoint", vo.checkpoint)->required();
  viz->add_option("--image", vo.image)->required();
  viz->add_option("--out", viz_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (train->parsed()) {
      to.out_dir = train_out;
      cmd_train(to, out);
    } else if (eval->parsed() || bench->parsed()) {
      eo.out_dir = eval_out;
      eo.bench = bench->parsed();
      cmd_eval(eo, out);
    } else if (infer->parsed()) {
      io.out_dir = infer_out;
      cmd_infer(io, out, err);
    } else if (viz->parsed()) {
      vo.out_dir = viz_out;
      cmd_viz(vo, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kCheckpointExit;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataExit;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataExit;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace pixelsail::cli
