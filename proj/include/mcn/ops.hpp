#pragma once

// Differentiable elementwise and shape operations recorded on a Tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "mcn/labels.hpp"
#include "mcn/tape.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: shape mismatch " + sa.str() + " vs " + sb.str());
  const Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
  Tensor<T> out(so);
  const std::size_t ca = sa.c * sa.plane(), cb = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::ranges::copy(a.value().item(n), out.item(n).begin());
    std::ranges::copy(b.value().item(n), out.item(n).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(ia)) {
      Tensor<T>& ga = tape.grad_buffer(ia);
      for (std::size_t n = 0; n < sa.n; ++n) {
        auto src = g.item(n);
        auto dst = ga.item(n);
        for (std::size_t i = 0; i < ca; ++i) dst[i] += src[i];
      }
    }
    if (tape.requires_grad(ib)) {
      Tensor<T>& gb = tape.grad_buffer(ib);
      for (std::size_t n = 0; n < sa.n; ++n) {
        auto src = g.item(n);
        auto dst = gb.item(n);
        for (std::size_t i = 0; i < cb; ++i) dst[i] += src[ca + i];
      }
    }
  });
}

// Channels [begin, begin + count).
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.c)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + s.str());
  const Shape so{s.n, count, s.h, s.w};
  Tensor<T> out(so);
  const std::size_t off = begin * s.plane(), len = count * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = x.value().item(n);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(off), src.begin() + static_cast<std::ptrdiff_t>(off + len),
              out.item(n).begin());
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad_buffer(ix);
    for (std::size_t n = 0; n < s.n; ++n) {
      auto src = g.item(n);
      auto dst = gx.item(n);
      for (std::size_t i = 0; i < len; ++i) dst[off + i] += src[i];
    }
  });
}

// a + sign_b * b
template <typename T>
Var<T> add_scaled(Var<T> a, Var<T> b, T sign_b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign_b * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tape, const Tensor<T>& g) {
    tape.accumulate(ia, g);
    if (tape.requires_grad(ib)) {
      Tensor<T>& gb = tape.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign_b * g[i];
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return add_scaled(a, b, T(1));
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return add_scaled(a, b, T(-1));
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    const Tensor<T>& in = tape.value(ix);
    Tensor<T>& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  const std::size_t hw = s.plane();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) m = std::max(m, x.item(n)[c * hw + p]);
      T sum = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const T e = std::exp(x.item(n)[c * hw + p] - m);
        out.item(n)[c * hw + p] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) out.item(n)[c * hw + p] /= sum;
    }
  return out;
}

template <typename T>
Var<T> softmax_channels(Var<T> x) {
  Tensor<T> out = softmax_channels(x.value());
  const Shape s = out.shape();
  const std::size_t ix = x.id();
  Tape<T>& tape0 = x.tape();
  const std::size_t iy = tape0.size();  // id the output will get
  return tape0.record(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    const Tensor<T>& y = tape.value(iy);
    Tensor<T>& gx = tape.grad_buffer(ix);
    const std::size_t hw = s.plane();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t p = 0; p < hw; ++p) {
        T dot = 0;
        for (std::size_t c = 0; c < s.c; ++c) dot += g.item(n)[c * hw + p] * y.item(n)[c * hw + p];
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t k = c * hw + p;
          gx.item(n)[k] += y.item(n)[k] * (g.item(n)[k] - dot);
        }
      }
  });
}

// Non-overlapping factor x factor mean pooling.
template <typename T>
Var<T> avg_pool(Var<T> x, std::size_t factor) {
  const Shape s = x.shape();
  if (factor == 0 || s.h % factor != 0 || s.w % factor != 0)
    throw ShapeError("avg_pool: spatial size of " + s.str() + " not divisible by " + std::to_string(factor));
  const Shape so{s.n, s.c, s.h / factor, s.w / factor};
  Tensor<T> out(so);
  const T inv = T(1) / static_cast<T>(factor * factor);
  const Tensor<T>& in = x.value();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < so.h; ++y)
        for (std::size_t xx = 0; xx < so.w; ++xx) {
          T acc = 0;
          for (std::size_t dy = 0; dy < factor; ++dy)
            for (std::size_t dx = 0; dx < factor; ++dx) acc += in.at(n, c, y * factor + dy, xx * factor + dx);
          out.at(n, c, y, xx) = acc * inv;
        }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad_buffer(ix);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t y = 0; y < so.h; ++y)
          for (std::size_t xx = 0; xx < so.w; ++xx) {
            const T v = g.at(n, c, y, xx) * inv;
            for (std::size_t dy = 0; dy < factor; ++dy)
              for (std::size_t dx = 0; dx < factor; ++dx) gx.at(n, c, y * factor + dy, xx * factor + dx) += v;
          }
  });
}

// Scalar <x, weights>; used to project tensors to a loss in gradient checks.
template <typename T>
Var<T> dot(Var<T> x, const Tensor<T>& weights) {
  x.value().require_same_shape(weights, "dot");
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
  const std::size_t ix = x.id();
  return x.tape().record(Tensor<T>(Shape{1, 1, 1, 1}, acc), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += g[0] * weights[i];
  });
}

// Mean per-pixel cross-entropy of softmax(logits) against labels; pixels
// labelled kIgnoreLabel are skipped. Returns a (1,1,1,1) scalar.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const LabelMap& labels) {
  const Shape s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w)
    throw ShapeError("softmax_cross_entropy: labels (" + std::to_string(labels.n) + "," + std::to_string(labels.h) +
                     "," + std::to_string(labels.w) + ") vs logits " + s.str());
  Tensor<T> prob = softmax_channels(logits.value());
  const std::size_t hw = s.plane();
  double loss = 0;
  std::size_t counted = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::int32_t l = labels.data[n * hw + p];
      if (l == kIgnoreLabel) continue;
      if (l < 0 || static_cast<std::size_t>(l) >= s.c)
        throw ShapeError("softmax_cross_entropy: label " + std::to_string(l) + " outside " + std::to_string(s.c) +
                         " classes");
      const T pr = std::max(prob.item(n)[static_cast<std::size_t>(l) * hw + p], std::numeric_limits<T>::min());
      loss -= std::log(static_cast<double>(pr));
      ++counted;
    }
  const T inv = counted ? T(1) / static_cast<T>(counted) : T(0);
  const std::size_t ix = logits.id();
  return logits.tape().record(
      Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(loss) * inv), {logits},
      [=, prob = std::move(prob)](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>& gx = tape.grad_buffer(ix);
        const T scale_g = g[0] * inv;
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t p = 0; p < hw; ++p) {
            const std::int32_t l = labels.data[n * hw + p];
            if (l == kIgnoreLabel) continue;
            for (std::size_t c = 0; c < s.c; ++c) {
              const std::size_t k = c * hw + p;
              const T target = static_cast<std::size_t>(l) == c ? T(1) : T(0);
              gx.item(n)[k] += scale_g * (prob.item(n)[k] - target);
            }
          }
      });
}

}  // namespace mcn
