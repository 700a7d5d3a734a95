#pragma once

// Bilinear resampling with half-pixel centers (align_corners = false).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mcn/tape.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

namespace detail {

struct AxisTap {
  std::size_t i0;
  std::size_t i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline std::vector<AxisTap> bilinear_axis(std::size_t in, std::size_t out) {
  std::vector<AxisTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  if (out_h == s.h && out_w == s.w) return x;
  if (s.h == 0 || s.w == 0 || out_h == 0 || out_w == 0)
    throw ShapeError("resize_bilinear: empty spatial extent " + s.str());
  const auto ty = detail::bilinear_axis(s.h, out_h);
  const auto tx = detail::bilinear_axis(s.w, out_w);
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const auto& a = ty[y];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const auto& b = tx[xx];
          const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
          dst[y * out_w + xx] = wy0 * (wx0 * src[a.i0 * s.w + b.i0] + wx1 * src[a.i0 * s.w + b.i1]) +
                                wy1 * (wx0 * src[a.i1 * s.w + b.i0] + wx1 * src[a.i1 * s.w + b.i1]);
        }
      }
    }
  return out;
}

template <typename T>
Var<T> resize_bilinear(Var<T> x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  if (out_h == s.h && out_w == s.w) {
    const std::size_t ix = x.id();
    return x.tape().record(x.value(), {x}, [=](Tape<T>& tape, const Tensor<T>& g) { tape.accumulate(ix, g); });
  }
  Tensor<T> out = resize_bilinear(x.value(), out_h, out_w);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    const auto ty = detail::bilinear_axis(s.h, out_h);
    const auto tx = detail::bilinear_axis(s.w, out_w);
    Tensor<T>& gx = tape.grad_buffer(ix);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        auto src = g.plane(n, c);
        auto dst = gx.plane(n, c);
        for (std::size_t y = 0; y < out_h; ++y) {
          const auto& a = ty[y];
          const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
          for (std::size_t xx = 0; xx < out_w; ++xx) {
            const auto& b = tx[xx];
            const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
            const T v = src[y * out_w + xx];
            dst[a.i0 * s.w + b.i0] += wy0 * wx0 * v;
            dst[a.i0 * s.w + b.i1] += wy0 * wx1 * v;
            dst[a.i1 * s.w + b.i0] += wy1 * wx0 * v;
            dst[a.i1 * s.w + b.i1] += wy1 * wx1 * v;
          }
        }
      }
  });
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t factor) {
  if (factor == 0) throw ShapeError("bilinear_upsample: factor must be >= 1");
  return resize_bilinear(x, x.shape().h * factor, x.shape().w * factor);
}

template <typename T>
Var<T> bilinear_upsample(Var<T> x, std::size_t factor) {
  if (factor == 0) throw ShapeError("bilinear_upsample: factor must be >= 1");
  return resize_bilinear(x, x.shape().h * factor, x.shape().w * factor);
}

}  // namespace mcn
