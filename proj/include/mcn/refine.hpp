#pragma once

// Refinement tower: each stage upsamples the coarse features by 2 and merges
// them with a reduced trunk tap at the finer resolution.

#include <cstddef>
#include <string>
#include <vector>

#include "mcn/conv.hpp"
#include "mcn/ops.hpp"
#include "mcn/resample.hpp"
#include "mcn/trunk.hpp"

namespace mcn {

template <typename T>
struct RefineStage {
  ConvLayer<T> reduce;  // tap -> r
  ConvLayer<T> merge;   // coarse + r -> r

  RefineStage() = default;

  template <typename Rng>
  RefineStage(const std::string& name, std::size_t coarse_channels, std::size_t skip_channels, std::size_t r,
              Rng& rng)
      : reduce(name + ".reduce", skip_channels, r, 1, 1, rng), merge(name + ".merge", coarse_channels + r, r, 3, 1, rng) {}

  std::size_t width() const { return merge.c_out(); }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    reduce.visit_parameters(fn);
    merge.visit_parameters(fn);
  }
};

template <typename T>
Var<T> refinement_step(Tape<T>& tape, Var<T> coarse, Var<T> skip, RefineStage<T>& stage) {
  const Shape c = coarse.shape(), s = skip.shape();
  if (s.n != c.n || s.h != 2 * c.h || s.w != 2 * c.w)
    throw ShapeError("refinement_step: skip " + s.str() + " must be twice the resolution of coarse " + c.str());
  Var<T> up = bilinear_upsample(coarse, 2);
  return relu(stage.merge(tape, concat_channels(up, stage.reduce(tape, skip))));
}

template <typename T>
class RefinePipeline {
 public:
  RefinePipeline() = default;

  // `taps` lists (name, channels) of the skip taps, coarse to fine.
  template <typename Rng>
  RefinePipeline(std::size_t coarse_channels, const std::vector<std::pair<std::string, std::size_t>>& taps,
                 std::size_t r, std::size_t num_classes, Rng& rng) {
    std::size_t c = coarse_channels;
    for (const auto& [name, channels] : taps) {
      names_.push_back(name);
      stages_.emplace_back("refine." + name, c, channels, r, rng);
      c = r;
    }
    if (!stages_.empty()) head_ = ConvLayer<T>("refine.head", r, num_classes, 1, 1, rng);
  }

  std::size_t stage_count() const { return stages_.size(); }
  RefineStage<T>& stage(std::size_t i) { return stages_.at(i); }
  const std::vector<std::string>& tap_names() const { return names_; }
  ConvLayer<T>& head() { return head_; }

  // With no stages the input passes through unchanged.
  Var<T> operator()(Tape<T>& tape, Var<T> score, const TapSet<T>& taps) {
    if (stages_.empty()) return score;
    Var<T> h = score;
    for (std::size_t i = 0; i < stages_.size(); ++i) h = refinement_step(tape, h, taps.at(names_[i]), stages_[i]);
    return head_(tape, h);
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    for (auto& s : stages_) s.visit_parameters(fn);
    if (!stages_.empty()) head_.visit_parameters(fn);
  }

 private:
  std::vector<std::string> names_;
  std::vector<RefineStage<T>> stages_;
  ConvLayer<T> head_;
};

}  // namespace mcn
