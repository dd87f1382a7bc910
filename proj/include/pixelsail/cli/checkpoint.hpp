#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pixelsail/errors.hpp"
#include "pixelsail/numerics/tensor.hpp"

namespace pixelsail {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "pixelsail-checkpoint";

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Keyed tensor archive. Text header, one item per line:
///   pixelsail-checkpoint <version>
///   @config <key = value>      (config snapshot, in order)
///   @meta <key> <value>
///   <name> <d0xd1x...> <byte offset>
/// then a blank line and the raw little-endian float32 payload.
struct Checkpoint {
  std::vector<std::string> config_lines;
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

namespace detail {

inline std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

inline Shape parse_shape_token(const std::string& t) {
  Shape s;
  if (t == "scalar") return s;
  std::stringstream ss(t);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw CheckpointError("bad shape '" + t + "'");
    s.push_back(static_cast<std::size_t>(std::stoull(part)));
  }
  return s;
}

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ostringstream header;
  header << kCheckpointMagic << " " << kCheckpointVersion << "\n";
  for (const auto& line : ck.config_lines) header << "@config " << line << "\n";
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("meta entry '" + k + "' must be a single line without spaces in the key");
    header << "@meta " << k << " " << v << "\n";
  }
  std::size_t offset = 0;
  for (const auto& a : ck.arrays) {
    if (a.name.empty() || a.name[0] == '@' || a.name.find_first_of(" \n") != std::string::npos)
      throw CheckpointError("invalid array name '" + a.name + "'");
    if (shape_numel(a.shape) != a.values.size())
      throw CheckpointError("array '" + a.name + "' has " + std::to_string(a.values.size()) + " values for shape " +
                            detail::shape_token(a.shape));
    header << a.name << " " << detail::shape_token(a.shape) << " " << offset << "\n";
    offset += a.values.size() * sizeof(float);
  }
  header << "\n";

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    std::vector<std::uint32_t> buf;
    for (const auto& a : ck.arrays) {
      buf.resize(a.values.size());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = detail::to_le(std::bit_cast<std::uint32_t>(a.values[i]));
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    }
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  auto fail = [&](const std::string& m) -> void { throw CheckpointError(path.string() + ": " + m); };

  std::string line;
  if (!std::getline(in, line)) fail("empty file");
  {
    std::istringstream first(line);
    std::string magic;
    int version = -1;
    first >> magic >> version;
    if (magic != kCheckpointMagic) fail("not a pixelsail checkpoint");
    if (version != kCheckpointVersion)
      fail("checkpoint version " + std::to_string(version) + ", this build reads version " +
           std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  std::vector<std::size_t> offsets;
  bool blank = false;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) {
      blank = true;
      break;
    }
    const std::string where = "header line " + std::to_string(n) + ": ";
    if (line.rfind("@config ", 0) == 0) {
      ck.config_lines.push_back(line.substr(8));
    } else if (line.rfind("@meta ", 0) == 0) {
      const auto rest = line.substr(6);
      const auto sp = rest.find(' ');
      if (sp == std::string::npos) fail(where + "meta entry without value");
      ck.meta[rest.substr(0, sp)] = rest.substr(sp + 1);
    } else {
      std::istringstream ls(line);
      std::string name, shape, off, extra;
      if (!(ls >> name >> shape >> off) || (ls >> extra)) fail(where + "expected 'name shape offset', got '" + line + "'");
      NamedArray a;
      a.name = name;
      try {
        a.shape = detail::parse_shape_token(shape);
      } catch (const CheckpointError& e) {
        fail(where + e.what());
      }
      if (off.find_first_not_of("0123456789") != std::string::npos) fail(where + "bad offset '" + off + "'");
      ck.arrays.push_back(std::move(a));
      offsets.push_back(static_cast<std::size_t>(std::stoull(off)));
    }
  }
  if (!blank) fail("header is not terminated by a blank line");

  const auto payload_start = static_cast<std::size_t>(in.tellg());
  const auto file_size = static_cast<std::size_t>(std::filesystem::file_size(path));
  std::size_t expect = 0;
  for (std::size_t i = 0; i < ck.arrays.size(); ++i) {
    if (offsets[i] != expect)
      fail("array '" + ck.arrays[i].name + "' claims offset " + std::to_string(offsets[i]) + ", expected " +
           std::to_string(expect));
    expect += shape_numel(ck.arrays[i].shape) * sizeof(float);
  }
  if (file_size - payload_start != expect)
    fail("payload is " + std::to_string(file_size - payload_start) + " bytes at offset " +
         std::to_string(payload_start) + ", manifest needs " + std::to_string(expect));

  std::vector<std::uint32_t> buf;
  for (auto& a : ck.arrays) {
    buf.resize(shape_numel(a.shape));
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4)))
      fail("truncated payload in '" + a.name + "'");
    a.values.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) a.values[i] = std::bit_cast<float>(detail::to_le(buf[i]));
  }
  return ck;
}

}  // namespace pixelsail
