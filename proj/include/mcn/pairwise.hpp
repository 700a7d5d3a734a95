#pragma once

// Bilateral Gaussian filtering of (n, c, h, w) maps as a tape operation.
// One filter per batch item, built from that item's image.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mcn/permutohedral.hpp"
#include "mcn/tape.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

enum class FilterBackend { Lattice, Exact };

class BilateralFilterBank {
 public:
  template <typename T>
  static std::shared_ptr<const BilateralFilterBank> build(const Tensor<T>& image, BilateralBandwidth bw,
                                                          FilterBackend backend = FilterBackend::Lattice) {
    auto bank = std::make_shared<BilateralFilterBank>();
    const Shape s = image.shape();
    bank->h_ = s.h;
    bank->w_ = s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
      FeaturePoints pts = bilateral_features(image, n, bw);
      if (backend == FilterBackend::Lattice)
        bank->filters_.emplace_back(PermutohedralLattice::build(pts));
      else
        bank->filters_.emplace_back(ExactGaussian(std::move(pts)));
    }
    return bank;
  }

  std::size_t items() const { return filters_.size(); }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  // Unnormalized filter of one item's point-major values.
  template <typename T>
  std::vector<T> apply(std::size_t item, std::span<const T> values, std::size_t channels, bool transpose) const {
    return std::visit([&](const auto& f) { return f.template filter<T>(values, channels, transpose); },
                      filters_.at(item));
  }

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<std::variant<PermutohedralLattice, ExactGaussian>> filters_;
};

namespace detail {

template <typename T>
std::vector<T> to_point_major(std::span<const T> item, std::size_t c, std::size_t hw) {
  std::vector<T> out(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = item[ch * hw + p];
  return out;
}

}  // namespace detail

// Filters every channel of x with the bank's per-item bilateral kernel.
// With `normalize`, divides by the filtered ones so constants are kept.
template <typename T>
Var<T> pairwise_filter(Var<T> x, std::shared_ptr<const BilateralFilterBank> bank, bool normalize) {
  const Shape s = x.shape();
  if (bank->items() != s.n || bank->height() != s.h || bank->width() != s.w)
    throw ShapeError("pairwise_filter: input " + s.str() + " does not match filter bank (" +
                     std::to_string(bank->items()) + " items, " + std::to_string(bank->height()) + "x" +
                     std::to_string(bank->width()) + ")");
  const std::size_t hw = s.plane(), c = s.c;
  Tensor<T> out(s);
  std::vector<std::vector<T>> norms(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto pm = detail::to_point_major(x.value().item(n), c, hw);
    auto filtered = bank->apply<T>(n, std::span<const T>(pm), c, false);
    if (normalize) {
      const std::vector<T> ones(hw, T(1));
      norms[n] = bank->apply<T>(n, std::span<const T>(ones), 1, false);
    }
    auto dst = out.item(n);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p)
        dst[ch * hw + p] = normalize ? filtered[p * c + ch] / norms[n][p] : filtered[p * c + ch];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad_buffer(ix);
    for (std::size_t n = 0; n < s.n; ++n) {
      auto pm = detail::to_point_major(g.item(n), c, hw);
      if (normalize)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t ch = 0; ch < c; ++ch) pm[p * c + ch] /= norms[n][p];
      const auto back = bank->apply<T>(n, std::span<const T>(pm), c, true);
      auto dst = gx.item(n);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) dst[ch * hw + p] += back[p * c + ch];
    }
  });
}

}  // namespace mcn
