#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pixelsail/errors.hpp"

namespace pixelsail {

/// Row-major binary grid; entries are 0 or 1.
struct BinaryMask {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width)
      : h(height), w(width), bits(height * width, 0) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * w + x]; }
  void set(std::size_t y, std::size_t x, bool v = true) { bits[y * w + x] = v ? 1 : 0; }

  std::size_t area() const {
    std::size_t a = 0;
    for (auto b : bits) a += b != 0;
    return a;
  }
  bool empty() const { return area() == 0; }
  bool same_shape(const BinaryMask& o) const { return h == o.h && w == o.w; }

  /// Centroid (x, y) of the foreground in pixel-centre coordinates.
  std::pair<double, double> center() const {
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (at(y, x)) {
          sx += static_cast<double>(x) + 0.5;
          sy += static_cast<double>(y) + 0.5;
          ++n;
        }
    if (n == 0) return {0.0, 0.0};
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
  }

  bool operator==(const BinaryMask&) const = default;
};

/// Row-major run lengths alternating background/foreground, starting with a
/// (possibly zero-length) background run.
inline std::vector<std::uint32_t> encode_rle(const BinaryMask& m) {
  std::vector<std::uint32_t> counts;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto b : m.bits) {
    if ((b != 0) != (current != 0)) {
      counts.push_back(run);
      run = 0;
      current = b ? 1 : 0;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

inline BinaryMask decode_rle(std::size_t h, std::size_t w, const std::vector<std::uint32_t>& counts) {
  BinaryMask m(h, w);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto c : counts) {
    if (pos + c > m.bits.size())
      throw DataError("RLE counts exceed mask size " + std::to_string(h) + "x" + std::to_string(w));
    std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), c, value);
    pos += c;
    value ^= 1;
  }
  if (pos != m.bits.size())
    throw DataError("RLE counts cover " + std::to_string(pos) + " of " +
                    std::to_string(m.bits.size()) + " pixels");
  return m;
}

}  // namespace pixelsail
