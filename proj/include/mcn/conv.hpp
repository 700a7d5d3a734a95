#pragma once

// Stride-1 "same" convolution with dilation, k in {1, 3}. Per-sample
// im2col + GEMM; GEMMs go through Eigen.

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mcn/parallel.hpp"
#include "mcn/tape.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Fills col (c*k*k rows, h*w cols) for one sample.
template <typename T>
void im2col(std::span<const T> in, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t r,
            std::vector<T>& col) {
  const std::size_t hw = h * w;
  col.assign(c * k * k * hw, T(0));
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col.data() + ((ci * k + ky) * k + kx) * hw;
        const auto oy = (static_cast<std::ptrdiff_t>(ky) - half) * static_cast<std::ptrdiff_t>(r);
        const auto ox = (static_cast<std::ptrdiff_t>(kx) - half) * static_cast<std::ptrdiff_t>(r);
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y) + oy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = in.data() + ci * hw + static_cast<std::size_t>(sy) * w;
          T* dst = row + y * w;
          const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -ox);
          const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                               static_cast<std::ptrdiff_t>(w) - ox);
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[x] = src[x + ox];
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t r,
                std::span<T> out) {
  const std::size_t hw = h * w;
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ci * k + ky) * k + kx) * hw;
        const auto oy = (static_cast<std::ptrdiff_t>(ky) - half) * static_cast<std::ptrdiff_t>(r);
        const auto ox = (static_cast<std::ptrdiff_t>(kx) - half) * static_cast<std::ptrdiff_t>(r);
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y) + oy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = out.data() + ci * hw + static_cast<std::size_t>(sy) * w;
          const T* src = row + y * w;
          const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -ox);
          const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                               static_cast<std::ptrdiff_t>(w) - ox);
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[x + ox] += src[x];
        }
      }
}

inline void check_conv_shapes(const Shape& x, const Shape& w, const Shape& b) {
  if (w.h != w.w || (w.h != 1 && w.h != 3))
    throw ShapeError("conv2d: unsupported kernel " + std::to_string(w.h) + "x" + std::to_string(w.w) +
                     " (supported: 1x1, 3x3)");
  if (x.c != w.c)
    throw ShapeError("conv2d: input channels " + std::to_string(x.c) + " do not match layer c_in " +
                     std::to_string(w.c) + " (input " + x.str() + ", weights " + w.str() + ")");
  if (b.size() != w.n) throw ShapeError("conv2d: bias " + b.str() + " does not match c_out " + std::to_string(w.n));
}

}  // namespace detail

// weights (c_out, c_in, k, k); bias (1, c_out, 1, 1).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t dilation) {
  const Shape sx = x.shape(), sw = weights.shape();
  detail::check_conv_shapes(sx, sw, bias.shape());
  if (dilation == 0) throw ShapeError("conv2d: dilation must be >= 1");
  const std::size_t k = sw.h, cout = sw.n, cin = sw.c, hw = sx.plane();
  Tensor<T> out(Shape{sx.n, cout, sx.h, sx.w});
  detail::ConstMapMat<T> wm(weights.data().data(), static_cast<Eigen::Index>(cout),
                            static_cast<Eigen::Index>(cin * k * k));
  parallel_for(sx.n, [&](std::size_t n) {
    std::vector<T> col;
    const T* colp = x.item(n).data();
    if (k != 1) {
      detail::im2col(x.item(n), cin, sx.h, sx.w, k, dilation, col);
      colp = col.data();
    }
    detail::ConstMapMat<T> cm(colp, static_cast<Eigen::Index>(cin * k * k), static_cast<Eigen::Index>(hw));
    detail::MapMat<T> om(out.item(n).data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
    om.noalias() = wm * cm;
    for (std::size_t o = 0; o < cout; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  });
  return out;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weights, Var<T> bias, std::size_t dilation) {
  Tensor<T> out = conv2d_forward(x.value(), weights.value(), bias.value(), dilation);
  const Shape sx = x.shape(), sw = weights.shape();
  const std::size_t ix = x.id(), iw = weights.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, weights, bias}, [=](Tape<T>& tape, const Tensor<T>& g) {
    const std::size_t k = sw.h, cout = sw.n, cin = sw.c, hw = sx.plane(), ck = cin * k * k;
    const Tensor<T>& xin = tape.value(ix);
    const Tensor<T>& wv = tape.value(iw);
    const bool need_x = tape.requires_grad(ix), need_w = tape.requires_grad(iw), need_b = tape.requires_grad(ib);
    detail::ConstMapMat<T> wm(wv.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ck));

    // Per-sample weight partials are reduced in sample order.
    std::vector<detail::RowMat<T>> gw_parts(need_w ? sx.n : 0);
    Tensor<T>* gx = need_x ? &tape.grad_buffer(ix) : nullptr;
    parallel_for(sx.n, [&](std::size_t n) {
      detail::ConstMapMat<T> gm(g.item(n).data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
      if (need_w) {
        std::vector<T> col;
        const T* colp = xin.item(n).data();
        if (k != 1) {
          detail::im2col(xin.item(n), cin, sx.h, sx.w, k, dilation, col);
          colp = col.data();
        }
        detail::ConstMapMat<T> cm(colp, static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(hw));
        gw_parts[n].noalias() = gm * cm.transpose();
      }
      if (need_x) {
        if (k == 1) {
          detail::MapMat<T> gxm(gx->item(n).data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
          gxm.noalias() += wm.transpose() * gm;
        } else {
          detail::RowMat<T> dcol = wm.transpose() * gm;
          detail::col2im_add(dcol.data(), cin, sx.h, sx.w, k, dilation, gx->item(n));
        }
      }
    });
    if (need_w) {
      Tensor<T>& gw = tape.grad_buffer(iw);
      detail::MapMat<T> gwm(gw.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ck));
      for (const auto& part : gw_parts) gwm += part;
    }
    if (need_b) {
      Tensor<T>& gb = tape.grad_buffer(ib);
      for (std::size_t n = 0; n < sx.n; ++n)
        for (std::size_t o = 0; o < cout; ++o) {
          T acc = 0;
          for (T v : g.plane(n, o)) acc += v;
          gb[o] += acc;
        }
    }
  });
}

// Learnable convolution: weights, bias, dilation. Same padding, stride 1.
template <typename T>
struct ConvLayer {
  Parameter<T> weight;
  Parameter<T> bias;
  std::size_t dilation = 1;

  ConvLayer() = default;

  // He-normal weights, zero bias.
  template <typename Rng>
  ConvLayer(std::string name, std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t rate, Rng& rng)
      : dilation(rate) {
    if (kernel != 1 && kernel != 3)
      throw ShapeError("ConvLayer " + name + ": unsupported kernel size " + std::to_string(kernel));
    if (rate == 0) throw ShapeError("ConvLayer " + name + ": dilation must be >= 1");
    const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(c_in * kernel * kernel)));
    weight = Parameter<T>(name + ".weight", Tensor<T>::normal(Shape{c_out, c_in, kernel, kernel}, stddev, rng));
    bias = Parameter<T>(name + ".bias", Tensor<T>(Shape{1, c_out, 1, 1}));
  }

  std::size_t c_in() const { return weight.value.shape().c; }
  std::size_t c_out() const { return weight.value.shape().n; }
  std::size_t kernel() const { return weight.value.shape().h; }
  std::size_t parameter_count() const { return weight.value.size() + bias.value.size(); }

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    return conv2d(x, tape.param(weight), tape.param(bias), dilation);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d_forward(x, weight.value, bias.value, dilation); }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    fn(weight);
    fn(bias);
  }

  void set_zero() {
    weight.value.fill(T(0));
    bias.value.fill(T(0));
  }
};

}  // namespace mcn
