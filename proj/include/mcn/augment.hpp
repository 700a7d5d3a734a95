#pragma once

// Flip / scale / crop augmentation. Image resampling is bilinear, labels
// use nearest neighbour; regions outside the scaled image are padded with
// zeros and the ignore label.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>

#include "mcn/resample.hpp"
#include "mcn/synth.hpp"

namespace mcn {

struct AugmentConfig {
  bool flip = true;
  double scale_min = 0.5;
  double scale_max = 1.5;
  std::size_t crop = 64;
};

struct AugmentDecision {
  bool flip = false;
  double scale = 1.0;
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
};

inline std::size_t scaled_extent(std::size_t n, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * scale)));
}

inline LabelMap resize_nearest(const LabelMap& m, std::size_t out_h, std::size_t out_w) {
  LabelMap out(m.n, out_h, out_w);
  for (std::size_t b = 0; b < m.n; ++b)
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = std::min(m.h - 1, (2 * y + 1) * m.h / (2 * out_h));
      for (std::size_t x = 0; x < out_w; ++x) {
        const std::size_t sx = std::min(m.w - 1, (2 * x + 1) * m.w / (2 * out_w));
        out.at(b, y, x) = m.at(b, sy, sx);
      }
    }
  return out;
}

inline SynthSample flip_horizontal(const SynthSample& s) {
  SynthSample out = s;
  const Shape sh = s.image.shape();
  for (std::size_t c = 0; c < sh.c; ++c)
    for (std::size_t y = 0; y < sh.h; ++y)
      for (std::size_t x = 0; x < sh.w; ++x) out.image.at(0, c, y, x) = s.image.at(0, c, y, sh.w - 1 - x);
  for (std::size_t y = 0; y < sh.h; ++y)
    for (std::size_t x = 0; x < sh.w; ++x) out.label.at(0, y, x) = s.label.at(0, y, sh.w - 1 - x);
  return out;
}

inline SynthSample apply_augment(const SynthSample& in, const AugmentDecision& d, std::size_t crop) {
  SynthSample s = d.flip ? flip_horizontal(in) : in;
  const Shape sh = s.image.shape();
  const std::size_t h = scaled_extent(sh.h, d.scale), w = scaled_extent(sh.w, d.scale);
  const Tensor<float> img = resize_bilinear(s.image, h, w);
  const LabelMap lab = resize_nearest(s.label, h, w);

  SynthSample out;
  out.seed = s.seed;
  out.image = Tensor<float>(Shape{1, sh.c, crop, crop});
  out.label = LabelMap(1, crop, crop, kIgnoreLabel);
  // Along each axis either crop out of the scaled image or place it inside
  // the padded canvas.
  auto span = [&](std::size_t scaled, std::size_t off, std::size_t& src, std::size_t& dst, std::size_t& len) {
    if (scaled >= crop) {
      src = std::min(off, scaled - crop);
      dst = 0;
      len = crop;
    } else {
      src = 0;
      dst = std::min(off, crop - scaled);
      len = scaled;
    }
  };
  std::size_t sy, dy, ly, sx, dx, lx;
  span(h, d.offset_y, sy, dy, ly);
  span(w, d.offset_x, sx, dx, lx);
  for (std::size_t y = 0; y < ly; ++y)
    for (std::size_t x = 0; x < lx; ++x) {
      for (std::size_t c = 0; c < sh.c; ++c) out.image.at(0, c, dy + y, dx + x) = img.at(0, c, sy + y, sx + x);
      out.label.at(0, dy + y, dx + x) = lab.at(0, sy + y, sx + x);
    }
  return out;
}

template <typename Rng>
AugmentDecision draw_augment(const AugmentConfig& cfg, std::size_t h, std::size_t w, Rng& rng) {
  AugmentDecision d;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  d.flip = cfg.flip && u01(rng) < 0.5;
  d.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u01(rng);
  auto range = [&](std::size_t n) {
    const std::size_t scaled = scaled_extent(n, d.scale);
    const std::size_t slack = scaled > cfg.crop ? scaled - cfg.crop : cfg.crop - scaled;
    return std::uniform_int_distribution<std::size_t>(0, slack)(rng);
  };
  d.offset_y = range(h);
  d.offset_x = range(w);
  return d;
}

template <typename Rng>
SynthSample augment(const SynthSample& s, const AugmentConfig& cfg, Rng& rng) {
  const Shape sh = s.image.shape();
  return apply_augment(s, draw_augment(cfg, sh.h, sh.w, rng), cfg.crop);
}

}  // namespace mcn
