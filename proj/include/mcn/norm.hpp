#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mcn/tape.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

enum class NormMode { Train, Eval };

// Per-channel batch normalization over (n, h, w).
template <typename T>
struct ChannelNorm {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  Parameter<T> gamma;
  Parameter<T> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool has_statistics = false;

  ChannelNorm() = default;
  ChannelNorm(std::string name, std::size_t channels)
      : gamma(name + ".gamma", Tensor<T>(Shape{1, channels, 1, 1}, T(1))),
        beta(name + ".beta", Tensor<T>(Shape{1, channels, 1, 1})),
        running_mean(channels, 0.0),
        running_var(channels, 1.0) {}

  std::size_t channels() const { return gamma.value.size(); }

  Var<T> operator()(Tape<T>& tape, Var<T> x, NormMode mode) {
    const Shape s = x.shape();
    if (s.c != channels())
      throw ShapeError("channel_norm: input " + s.str() + " vs " + std::to_string(channels()) + " channels");
    if (mode == NormMode::Eval && !has_statistics)
      throw NumericError("channel_norm: eval mode requested before any training step accumulated statistics");

    const std::size_t hw = s.plane(), count = s.n * hw;
    std::vector<T> mean(s.c), inv_std(s.c);
    const Tensor<T>& in = x.value();
    for (std::size_t c = 0; c < s.c; ++c) {
      if (mode == NormMode::Train) {
        double m = 0, v = 0;
        for (std::size_t n = 0; n < s.n; ++n)
          for (T val : in.plane(n, c)) m += static_cast<double>(val);
        m /= static_cast<double>(count);
        for (std::size_t n = 0; n < s.n; ++n)
          for (T val : in.plane(n, c)) v += (static_cast<double>(val) - m) * (static_cast<double>(val) - m);
        v /= static_cast<double>(count);
        mean[c] = static_cast<T>(m);
        inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + kEps));
        running_mean[c] = kMomentum * running_mean[c] + (1.0 - kMomentum) * m;
        running_var[c] = kMomentum * running_var[c] + (1.0 - kMomentum) * v;
      } else {
        mean[c] = static_cast<T>(running_mean[c]);
        inv_std[c] = static_cast<T>(1.0 / std::sqrt(running_var[c] + kEps));
      }
    }
    if (mode == NormMode::Train) has_statistics = true;

    Tensor<T> xhat(s), out(s);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        auto src = in.plane(n, c);
        auto xh = xhat.plane(n, c);
        auto dst = out.plane(n, c);
        for (std::size_t p = 0; p < hw; ++p) {
          xh[p] = (src[p] - mean[c]) * inv_std[c];
          dst[p] = gamma.value[c] * xh[p] + beta.value[c];
        }
      }

    Var<T> g = tape.param(gamma), b = tape.param(beta);
    const std::size_t ix = x.id(), ig = g.id(), ib = b.id();
    const bool train = mode == NormMode::Train;
    return tape.record(std::move(out), {x, g, b},
                       [=, xhat = std::move(xhat)](Tape<T>& tp, const Tensor<T>& grad) {
                         const Tensor<T>& gam = tp.value(ig);
                         std::vector<T> sum_g(s.c, T(0)), sum_gx(s.c, T(0));
                         for (std::size_t n = 0; n < s.n; ++n)
                           for (std::size_t c = 0; c < s.c; ++c) {
                             auto gp = grad.plane(n, c);
                             auto xh = xhat.plane(n, c);
                             for (std::size_t p = 0; p < hw; ++p) {
                               sum_g[c] += gp[p];
                               sum_gx[c] += gp[p] * xh[p];
                             }
                           }
                         if (tp.requires_grad(ib)) {
                           Tensor<T>& gb = tp.grad_buffer(ib);
                           for (std::size_t c = 0; c < s.c; ++c) gb[c] += sum_g[c];
                         }
                         if (tp.requires_grad(ig)) {
                           Tensor<T>& gg = tp.grad_buffer(ig);
                           for (std::size_t c = 0; c < s.c; ++c) gg[c] += sum_gx[c];
                         }
                         if (!tp.requires_grad(ix)) return;
                         Tensor<T>& gx = tp.grad_buffer(ix);
                         const T m = static_cast<T>(count);
                         for (std::size_t n = 0; n < s.n; ++n)
                           for (std::size_t c = 0; c < s.c; ++c) {
                             auto gp = grad.plane(n, c);
                             auto xh = xhat.plane(n, c);
                             auto dst = gx.plane(n, c);
                             const T k = gam[c] * inv_std[c];
                             for (std::size_t p = 0; p < hw; ++p) {
                               if (train)
                                 dst[p] += k * (gp[p] - sum_g[c] / m - xh[p] * sum_gx[c] / m);
                               else
                                 dst[p] += k * gp[p];
                             }
                           }
                       });
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    fn(gamma);
    fn(beta);
  }
};

}  // namespace mcn
