#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pixelsail/backbone/model.hpp"
#include "pixelsail/cli/config.hpp"
#include "pixelsail/data/encode.hpp"
#include "pixelsail/eval/benchmark.hpp"
#include "pixelsail/grounding/grounding.hpp"
#include "pixelsail/objectives/objectives.hpp"

namespace pixelsail {

struct PixelSailParams {
  BackboneParams backbone;
  UpsamplerParams upsampler;
  DistillAlign distill;

  static PixelSailParams init(const ModelConfig& cfg, const TrainConfig& train, Rng& rng) {
    cfg.validate();
    PixelSailParams p;
    p.backbone = BackboneParams::init(cfg, rng);
    p.upsampler = UpsamplerParams::init(cfg.channels, cfg.patch_size, rng);
    p.distill = DistillAlign::init(cfg.channels, train.teacher_high_channels, train.teacher_low_channels, rng);
    return p;
  }

  ParamList params() const {
    ParamList out;
    backbone.collect(out);
    upsampler.collect(out);
    distill.collect(out);
    return out;
  }
};

/// The <VP_i> rows of the token embedding table, [N × C].
inline Tensor vp_embeddings(const BackboneParams& p, const ModelConfig& cfg) {
  std::vector<int> ids(cfg.num_visual_prompts);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = token::kVpBase + static_cast<int>(i);
  return ops::gather_rows(p.token_embedding, ids);
}

struct ModelOutput {
  BackboneOutput backbone;
  Tensor low_res;   // F_l [C × H/P × W/P]
  Tensor high_res;  // F_h [C × H/4 × W/4]
};

/// Patch projection, prompt injection, the transformer and (optionally) the
/// upsampled feature maps.
inline ModelOutput run_model(const PixelSailParams& p, const ModelConfig& cfg, const TokenSequence& seq,
                             const Tensor& image, const std::vector<VisualPrompt>& prompts,
                             const ForwardOptions& fo, bool features) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg.image_h || image.dim(2) != cfg.image_w)
    throw ShapeError("model expects a 3x" + std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) +
                     " image, got " + shape_str(image.shape()));
  Tensor vision = patchify_project(image, p.backbone.patch_projection, cfg.patch_size);
  vision = inject_visual_prompts(vision, prompts, vp_embeddings(p.backbone, cfg));
  ModelOutput out;
  out.backbone = forward(p.backbone, cfg, seq, assemble_embeddings(p.backbone, seq, vision), fo);
  if (features) {
    Tensor rows = ops::slice_rows(out.backbone.hidden, seq.vision_begin, seq.vision_end - seq.vision_begin);
    out.low_res = reshape_vision_hidden(rows, cfg.grid_h(), cfg.grid_w());
    out.high_res = upsample_module(out.low_res, p.upsampler);
  }
  return out;
}

/// Mask logits for the given sequence positions, [K × H/4 × W/4].
inline Tensor mask_logits_at(const ModelOutput& out, const std::vector<int>& positions) {
  return predict_masks(ops::gather_rows(out.backbone.hidden, positions), out.high_res, positions).logits;
}

/// One training example ready for the loss: encoded sequence, image tensor,
/// prompts, the masks for its [SEG] slots and (optionally) teacher features.
struct TrainingExample {
  std::string id;
  EncodedSample encoded;
  Tensor image;
  std::vector<VisualPrompt> prompts;
  std::vector<BinaryMask> masks;
  TeacherFeatures teachers;
};

struct LossTerms {
  Tensor ntp, ce, dice, distill, total;
};

inline LossTerms example_loss(const PixelSailParams& p, const ModelConfig& cfg, const TrainingExample& ex,
                              const LossWeights& w, bool use_distill) {
  const auto mask = ex.encoded.loss_mask();
  const auto targets = ex.encoded.targets();
  ForwardOptions fo;
  std::vector<int> rows_targets;
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) {
      fo.logit_rows.push_back(static_cast<int>(t));
      rows_targets.push_back(targets[t]);
    }
  const auto seg_positions = ex.encoded.seq.positions_of(Role::kSegSlot);
  const std::size_t k = std::min(seg_positions.size(), ex.masks.size());
  const bool need_features = k > 0 || use_distill;
  if (fo.logit_rows.empty()) fo.compute_logits = false;
  const auto out = run_model(p, cfg, ex.encoded.seq, ex.image, ex.prompts, fo, need_features);

  LossTerms t;
  t.ntp = fo.compute_logits ? ntp_loss(out.backbone.logits, rows_targets, std::vector<std::uint8_t>(rows_targets.size(), 1))
                            : Tensor::scalar(0.0f);
  Tensor seg;
  if (k > 0) {
    std::vector<int> pos(seg_positions.begin(), seg_positions.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<BinaryMask> gt(ex.masks.begin(), ex.masks.begin() + static_cast<std::ptrdiff_t>(k));
    Tensor logits = mask_logits_at(out, pos);
    // the loss lives at ground-truth resolution
    if (logits.dim(1) != gt[0].h || logits.dim(2) != gt[0].w) logits = ops::bilinear_resize(logits, gt[0].h, gt[0].w);
    auto s = seg_loss(logits, mask_targets(gt), w);
    t.ce = s.ce;
    t.dice = s.dice;
    seg = s.total;
  }
  if (use_distill && (ex.teachers.m2f.defined() || ex.teachers.sam2.defined()))
    t.distill = distill_loss(out.high_res, out.low_res, ex.teachers, p.distill).total;
  t.total = total_loss(t.ntp, seg, t.distill, w);
  return t;
}

/// Teacher grids: the high-resolution teacher sits on the H/4 grid, the
/// low-resolution one on the H/16 grid (H/P when 16 does not divide H).
inline TeacherFeatures synthetic_teachers(const Tensor& image, const ModelConfig& cfg, const TrainConfig& train,
                                          std::uint64_t seed) {
  TeacherFeatures t;
  t.m2f = synthesize_teacher(image, TeacherKind::kM2F, seed, cfg.mask_h(), cfg.mask_w(), train.teacher_high_channels);
  const bool by16 = cfg.image_h % 16 == 0 && cfg.image_w % 16 == 0;
  t.sam2 = synthesize_teacher(image, TeacherKind::kSam2, seed, by16 ? cfg.image_h / 16 : cfg.grid_h(),
                              by16 ? cfg.image_w / 16 : cfg.grid_w(), train.teacher_low_channels);
  return t;
}

/// Teacher features stored as {"shape": [c, h, w], "data": [...]}. A missing
/// file means the teacher is absent for that record.
inline Tensor load_teacher_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  try {
    auto j = nlohmann::json::parse(in);
    auto shape = j.at("shape").get<std::vector<std::size_t>>();
    auto data = j.at("data").get<std::vector<float>>();
    if (shape.size() != 3 || shape_numel(shape) != data.size())
      throw DataError("shape " + j.at("shape").dump() + " does not match " + std::to_string(data.size()) + " values");
    return Tensor(shape, std::move(data));
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline TeacherFeatures file_teachers(const std::filesystem::path& dir, const std::string& id) {
  TeacherFeatures t;
  t.source = dir.string();
  t.m2f = load_teacher_file(dir / (id + ".m2f.json"));
  t.sam2 = load_teacher_file(dir / (id + ".sam2.json"));
  return t;
}

inline TrainingExample make_example(const SampleRecord& r, const RunConfig& cfg, const Tokenizer& tok,
                                    const std::filesystem::path& base_dir = {}) {
  TrainingExample ex;
  ex.id = r.id;
  ex.encoded = encode_record(r, tok, cfg.model);
  const auto img = load_image(r.image, base_dir);
  if (img.h != cfg.model.image_h || img.w != cfg.model.image_w)
    throw DataError("record '" + r.id + "': image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                    " does not match model.image_h/w " + std::to_string(cfg.model.image_h) + "x" +
                    std::to_string(cfg.model.image_w));
  ex.image = image_tensor(img);
  ex.prompts = r.visual_prompts;
  ex.masks = r.gt_masks;
  if (cfg.train.distill == DistillMode::kOn)
    ex.teachers = synthetic_teachers(ex.image, cfg.model, cfg.train, cfg.train.seed);
  else if (cfg.train.distill == DistillMode::kFromFile)
    ex.teachers = file_teachers(cfg.train.teacher_dir, r.id);
  return ex;
}

/// Greedy decoding and mask decoding with a trained model, one turn at a time.
class PixelSailSession : public BenchmarkModel {
 public:
  PixelSailSession(const PixelSailParams& params, const ModelConfig& cfg, std::filesystem::path base_dir = {})
      : params_(params), cfg_(cfg), base_dir_(std::move(base_dir)) {}

  const ModelConfig& config() const override { return cfg_; }

  void begin_turn(const SampleRecord& r, std::size_t) override {
    if (current_ && *current_ == r.id) return;
    set_input(image_tensor(load_image(r.image, base_dir_)), r.visual_prompts);
    current_ = r.id;
  }

  void set_input(Tensor image, std::vector<VisualPrompt> prompts) {
    image_ = std::move(image);
    prompts_ = std::move(prompts);
    current_.reset();
  }

  std::vector<float> next_token_logits(const TokenSequence& seq) override {
    ForwardOptions fo;
    fo.logit_rows = {static_cast<int>(seq.size()) - 1};
    auto out = run_model(params_, cfg_, seq, image_, prompts_, fo, false);
    return out.backbone.logits.to_vector();
  }

  /// Mask logits at H/4 resolution for the given positions.
  Tensor mask_logits(const TokenSequence& seq, const std::vector<int>& positions) {
    ForwardOptions fo;
    fo.compute_logits = false;
    return mask_logits_at(run_model(params_, cfg_, seq, image_, prompts_, fo, true), positions);
  }

  std::vector<BinaryMask> decode_masks(const TokenSequence& seq, const std::vector<int>& positions) override {
    return binarize_masks(mask_logits(seq, positions), cfg_.image_h, cfg_.image_w);
  }

  /// F_l and F_h for the current input.
  std::pair<Tensor, Tensor> features(const TokenSequence& seq) {
    ForwardOptions fo;
    fo.compute_logits = false;
    auto out = run_model(params_, cfg_, seq, image_, prompts_, fo, true);
    return {out.low_res, out.high_res};
  }

 private:
  const PixelSailParams& params_;
  ModelConfig cfg_;
  std::filesystem::path base_dir_;
  Tensor image_;
  std::vector<VisualPrompt> prompts_;
  std::optional<std::string> current_;
};

}  // namespace pixelsail
