#pragma once

#include <sodium.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pixelsail/data/record.hpp"

namespace pixelsail {

using Json = nlohmann::json;

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  constexpr int kVariant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_encoded_len(bytes.size(), kVariant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), kVariant);
  out.resize(out.size() - 1);  // drop the terminator
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0)
    throw DataError("invalid base64 payload");
  out.resize(len);
  return out;
}

namespace detail {

inline Json mask_to_json(const BinaryMask& m, bool rle) {
  Json j{{"h", m.h}, {"w", m.w}};
  if (rle) {
    j["rle"] = encode_rle(m);
  } else {
    Json rows = Json::array();
    for (std::size_t y = 0; y < m.h; ++y) {
      Json row = Json::array();
      for (std::size_t x = 0; x < m.w; ++x) row.push_back(m.at(y, x));
      rows.push_back(std::move(row));
    }
    j["bits"] = std::move(rows);
  }
  return j;
}

inline BinaryMask mask_from_json(const Json& j, const char* hkey = "h", const char* wkey = "w") {
  const auto h = j.at(hkey).get<std::size_t>(), w = j.at(wkey).get<std::size_t>();
  if (j.contains("rle")) return decode_rle(h, w, j.at("rle").get<std::vector<std::uint32_t>>());
  if (!j.contains("bits")) throw DataError("mask needs 'rle' or 'bits'");
  const auto& rows = j.at("bits");
  if (rows.size() != h) throw DataError("mask 'bits' has " + std::to_string(rows.size()) + " rows, expected " + std::to_string(h));
  BinaryMask m(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    if (rows[y].size() != w) throw DataError("mask row " + std::to_string(y) + " has wrong width");
    for (std::size_t x = 0; x < w; ++x) m.bits[y * w + x] = rows[y][x].get<std::uint8_t>();
  }
  return m;
}

}  // namespace detail

struct JsonlOptions {
  bool rle_masks = true;
};

inline Json record_to_json(const SampleRecord& r, const JsonlOptions& opts = {}) {
  Json j;
  j["id"] = r.id;
  if (r.image.is_inline())
    j["image"] = {{"inline", {{"h", r.image.h}, {"w", r.image.w}, {"data", base64_encode(r.image.pixels)}}}};
  else
    j["image"] = {{"path", r.image.path}};
  j["conversations"] = Json::array();
  for (const auto& t : r.conversations) j["conversations"].push_back({{"q", t.q}, {"a", t.a}});
  j["gt_masks"] = Json::array();
  for (const auto& m : r.gt_masks) j["gt_masks"].push_back(detail::mask_to_json(m, opts.rle_masks));
  j["visual_prompts"] = Json::array();
  for (const auto& p : r.visual_prompts) {
    Json pj = detail::mask_to_json(p.mask, opts.rle_masks);
    pj["grid_h"] = pj["h"];
    pj["grid_w"] = pj["w"];
    pj.erase("h");
    pj.erase("w");
    pj["index"] = p.index;
    j["visual_prompts"].push_back(std::move(pj));
  }
  j["task"] = std::string(task_name(r.task));
  return j;
}

inline SampleRecord record_from_json(const Json& j) {
  SampleRecord r;
  r.id = j.at("id").get<std::string>();
  const auto& img = j.at("image");
  if (img.contains("path")) {
    r.image.path = img.at("path").get<std::string>();
    if (r.image.path.empty()) throw DataError("image path is empty");
  } else {
    const auto& in = img.at("inline");
    r.image.h = in.at("h").get<std::size_t>();
    r.image.w = in.at("w").get<std::size_t>();
    r.image.pixels = base64_decode(in.at("data").get<std::string>());
  }
  for (const auto& t : j.at("conversations")) r.conversations.push_back({t.at("q").get<std::string>(), t.at("a").get<std::string>()});
  for (const auto& m : j.at("gt_masks")) r.gt_masks.push_back(detail::mask_from_json(m));
  for (const auto& p : j.at("visual_prompts"))
    r.visual_prompts.push_back({p.at("index").get<std::size_t>(), detail::mask_from_json(p, "grid_h", "grid_w")});
  r.task = parse_task(j.at("task").get<std::string>());
  return r;
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<SampleRecord>& records,
                       const JsonlOptions& opts = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r, opts).dump() << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

/// Parses and validates every line; errors carry the 1-based line number.
inline std::vector<SampleRecord> load_jsonl(const std::filesystem::path& path, std::size_t num_visual_prompts = 8) {
  if (sodium_init() < 0) throw DataError("libsodium failed to initialise");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(Json::parse(line)));
      validate_record(out.back(), num_visual_prompts);
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

/// Planar RGB image [3 × h × w].
struct RgbImage {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> pixels;
};

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  const std::size_t plane = img.h * img.w;
  std::vector<char> row(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) row[3 * p + c] = static_cast<char>(img.pixels[c * plane + p]);
  out.write(row.data(), static_cast<std::streamsize>(row.size()));
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  auto next_number = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    long v = -1;
    in >> v;
    if (!in || v <= 0) throw DataError(path.string() + ": bad PPM header");
    return static_cast<std::size_t>(v);
  };
  RgbImage img;
  img.w = next_number();
  img.h = next_number();
  if (next_number() != 255) throw DataError(path.string() + ": only 8-bit PPM is supported");
  in.get();
  const std::size_t plane = img.h * img.w;
  std::vector<char> raw(3 * plane);
  if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) throw DataError(path.string() + ": truncated PPM payload");
  img.pixels.resize(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[c * plane + p] = static_cast<std::uint8_t>(raw[3 * p + c]);
  return img;
}

/// Pixels of a record's image; relative paths resolve against `base_dir`.
inline RgbImage load_image(const ImageRef& ref, const std::filesystem::path& base_dir = {}) {
  if (ref.is_inline()) return {ref.h, ref.w, ref.pixels};
  std::filesystem::path p(ref.path);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return read_ppm(p);
}

}  // namespace pixelsail
