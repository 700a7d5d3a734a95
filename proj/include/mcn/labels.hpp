#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

inline constexpr std::int32_t kIgnoreLabel = 255;

// Per-pixel class indices, (n, h, w) row-major.
struct LabelMap {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(n_ * h_ * w_, fill) {}

  std::int32_t& at(std::size_t b, std::size_t y, std::size_t x) { return data[(b * h + y) * w + x]; }
  std::int32_t at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * h + y) * w + x]; }
  bool operator==(const LabelMap&) const = default;
};

// Per-pixel argmax over channels.
template <typename T>
LabelMap argmax_channels(const Tensor<T>& scores) {
  const Shape& s = scores.shape();
  LabelMap out(s.n, s.h, s.w);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        std::size_t best = 0;
        T best_v = scores.at(b, 0, y, x);
        for (std::size_t c = 1; c < s.c; ++c)
          if (scores.at(b, c, y, x) > best_v) {
            best_v = scores.at(b, c, y, x);
            best = c;
          }
        out.at(b, y, x) = static_cast<std::int32_t>(best);
      }
  return out;
}

}  // namespace mcn
