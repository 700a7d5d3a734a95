#pragma once

// Synthetic segmentation data: colored geometric shapes on a textured
// background. Class 0 is background; class k >= 1 fixes the shape type.
// Shape colors are random unless class_colors ties a base color to each
// class, which makes the task much easier.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "mcn/labels.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

struct SynthSample {
  Tensor<float> image;  // (1, 3, h, w) in [0, 1]
  LabelMap label;       // (1, h, w)
  std::uint64_t seed = 0;
};

struct SynthOptions {
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  double color_jitter = 0.08;
  double texture = 0.06;
  bool class_colors = false;
};

enum class ShapeKind { Rectangle, Ellipse, Triangle, Diamond, Cross };
inline constexpr std::size_t kShapeKinds = 5;

inline ShapeKind shape_for_class(std::size_t k) { return static_cast<ShapeKind>((k - 1) % kShapeKinds); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace detail {

inline std::array<double, 3> class_color(std::size_t k) {
  static constexpr std::array<std::array<double, 3>, 8> palette{{{0.85, 0.20, 0.20},
                                                                 {0.20, 0.75, 0.25},
                                                                 {0.20, 0.35, 0.90},
                                                                 {0.90, 0.80, 0.15},
                                                                 {0.75, 0.25, 0.80},
                                                                 {0.15, 0.80, 0.80},
                                                                 {0.95, 0.55, 0.15},
                                                                 {0.55, 0.55, 0.55}}};
  return palette[(k - 1) % palette.size()];
}

// Point test in shape-local coordinates u, v in [-1, 1].
inline bool inside(ShapeKind kind, double u, double v) {
  switch (kind) {
    case ShapeKind::Rectangle: return std::abs(u) <= 1 && std::abs(v) <= 1;
    case ShapeKind::Ellipse: return u * u + v * v <= 1;
    case ShapeKind::Triangle: return v <= 1 && v >= 2 * std::abs(u) - 1;
    case ShapeKind::Diamond: return std::abs(u) + std::abs(v) <= 1;
    case ShapeKind::Cross: return (std::abs(u) <= 1 && std::abs(v) <= 0.35) || (std::abs(v) <= 1 && std::abs(u) <= 0.35);
  }
  return false;
}

}  // namespace detail

inline SynthSample synth_sample(std::uint64_t seed, std::size_t classes, std::size_t h, std::size_t w,
                                const SynthOptions& opt = {}) {
  if (classes < 2) throw ConfigError("synth_dataset: need at least 2 classes");
  if (h < 4 || w < 4) throw ConfigError("synth_dataset: image must be at least 4x4");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SynthSample s;
  s.seed = seed;
  s.image = Tensor<float>(Shape{1, 3, h, w});
  s.label = LabelMap(1, h, w, 0);

  // Background: a dim base tone with a low-frequency ripple and grain.
  std::array<double, 3> bg{};
  for (auto& c : bg) c = 0.30 + 0.25 * u01(rng);
  const double fy = 1.0 + 3.0 * u01(rng), fx = 1.0 + 3.0 * u01(rng), phase = 6.283 * u01(rng);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double ripple =
          0.08 * std::sin(6.283 * (fy * double(y) / double(h) + fx * double(x) / double(w)) + phase);
      for (std::size_t c = 0; c < 3; ++c)
        s.image.at(0, c, y, x) = static_cast<float>(bg[c] + ripple + opt.texture * noise(rng));
    }

  std::uniform_int_distribution<std::size_t> count(opt.min_shapes, std::max(opt.min_shapes, opt.max_shapes));
  std::uniform_int_distribution<std::size_t> cls(1, classes - 1);
  const std::size_t shapes = count(rng);
  const double side = double(std::min(h, w));
  for (std::size_t i = 0; i < shapes; ++i) {
    const std::size_t k = cls(rng);
    const ShapeKind kind = shape_for_class(k);
    const double ry = side * (0.12 + 0.18 * u01(rng)), rx = side * (0.12 + 0.18 * u01(rng));
    const double cy = double(h) * (0.15 + 0.7 * u01(rng)), cx = double(w) * (0.15 + 0.7 * u01(rng));
    auto color = detail::class_color(k);
    if (!opt.class_colors)
      for (auto& c : color) c = 0.1 + 0.8 * u01(rng);
    for (auto& c : color) c += opt.color_jitter * (2.0 * u01(rng) - 1.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double u = (double(x) + 0.5 - cx) / rx, v = (double(y) + 0.5 - cy) / ry;
        if (!detail::inside(kind, u, v)) continue;
        s.label.at(0, y, x) = static_cast<std::int32_t>(k);
        for (std::size_t c = 0; c < 3; ++c)
          s.image.at(0, c, y, x) = static_cast<float>(color[c] + 0.5 * opt.texture * noise(rng));
      }
  }
  for (auto& v : s.image.data()) v = std::clamp(v, 0.f, 1.f);
  return s;
}

inline std::vector<SynthSample> synth_dataset(std::uint64_t seed, std::size_t count, std::size_t classes,
                                              std::size_t h, std::size_t w, const SynthOptions& opt = {}) {
  std::vector<SynthSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(synth_sample(splitmix64(seed * 0x100000001b3ULL + i), classes, h, w, opt));
  return out;
}

}  // namespace mcn
