#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mcn/conv.hpp"
#include "mcn/tape.hpp"

namespace mcn {

struct LayerSpec {
  std::size_t kernel = 3;
  std::size_t dilation = 1;
  std::size_t width = 1;
};

using LayerStackSpec = std::vector<LayerSpec>;

inline void validate(const LayerStackSpec& spec) {
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (spec[i].dilation < 1) throw ConfigError("layer " + std::to_string(i) + ": dilation must be >= 1");
    if (spec[i].width < 1) throw ConfigError("layer " + std::to_string(i) + ": width must be >= 1");
    if (spec[i].kernel != 1 && spec[i].kernel != 3)
      throw ConfigError("layer " + std::to_string(i) + ": kernel must be 1 or 3");
  }
}

// Side length of the input region one output pixel sees, stride-1 stack.
inline std::size_t receptive_field(const LayerStackSpec& spec) {
  validate(spec);
  std::size_t rf = 1;
  for (const auto& l : spec) rf += (l.kernel - 1) * l.dilation;
  return rf;
}

inline LayerStackSpec dilated_stack(const std::vector<std::size_t>& rates, std::size_t kernel = 3,
                                    std::size_t width = 1) {
  LayerStackSpec spec;
  for (std::size_t r : rates) spec.push_back({kernel, r, width});
  return spec;
}

struct SupportExtent {
  std::size_t height = 0;
  std::size_t width = 0;
};

// Empirical receptive field: run the stack (all-ones single-channel weights)
// on a size x size input, backprop a unit gradient from the center output
// pixel and measure the bounding box of nonzero input gradient.
inline SupportExtent measure_gradient_support(const LayerStackSpec& spec, std::size_t size) {
  validate(spec);
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>(Shape{1, 1, size, size}, 1.0));
  std::vector<Parameter<double>> weights, biases;
  weights.reserve(spec.size());
  biases.reserve(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    weights.emplace_back("w", Tensor<double>(Shape{1, 1, spec[i].kernel, spec[i].kernel}, 1.0));
    biases.emplace_back("b", Tensor<double>(Shape{1, 1, 1, 1}));
  }
  Var<double> h = x;
  for (std::size_t i = 0; i < spec.size(); ++i)
    h = conv2d(h, tape.param(weights[i]), tape.param(biases[i]), spec[i].dilation);
  Tensor<double> seed(h.shape());
  seed.at(0, 0, size / 2, size / 2) = 1.0;
  tape.backward(h, std::move(seed));
  const Tensor<double>* g = tape.grad(x);
  SupportExtent ext;
  if (!g) return ext;
  std::size_t y_lo = size, y_hi = 0, x_lo = size, x_hi = 0;
  bool any = false;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t xx = 0; xx < size; ++xx)
      if (g->at(0, 0, y, xx) != 0.0) {
        any = true;
        y_lo = std::min(y_lo, y);
        y_hi = std::max(y_hi, y);
        x_lo = std::min(x_lo, xx);
        x_hi = std::max(x_hi, xx);
      }
  if (any) ext = {y_hi - y_lo + 1, x_hi - x_lo + 1};
  return ext;
}

}  // namespace mcn
