#pragma once

// Full segmentation pipeline: trunk -> tap fusion -> context module ->
// refinement -> optional message passing.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mcn/config.hpp"
#include "mcn/metrics.hpp"
#include "mcn/refine.hpp"

namespace mcn {

template <typename T>
class SegmentationModel {
 public:
  explicit SegmentationModel(const PipelineConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(splitmix64(cfg_.seed));
    trunk_ = Trunk<T>(cfg_.trunk, rng);

    const auto taps = trunk_.tap_channels();
    const std::size_t per_tap = cfg_.fuse_mode == FuseMode::Sum ? cfg_.arch.input_channels
                                                                : cfg_.arch.input_channels / cfg_.fuse_taps.size();
    fuse_ = TapFusion<T>(taps, cfg_.fuse_taps, per_tap, cfg_.fuse_mode, rng);

    // With refinement the context head emits refine_width features and the
    // class projection happens at full resolution.
    ArchitectureConfig arch = cfg_.arch;
    if (cfg_.refine) arch.num_classes = cfg_.refine_width;
    context_ = ContextNet<T>(arch, rng);

    if (cfg_.refine) {
      // Every trunk stage finer than the fused grid, coarse to fine.
      std::size_t level = 0;
      for (const auto& name : cfg_.fuse_taps) level = std::max(level, tap_level(name));
      std::vector<std::pair<std::string, std::size_t>> skips;
      for (std::size_t l = level; l-- > 0;) skips.push_back(taps[l]);
      refine_ = RefinePipeline<T>(cfg_.refine_width, skips, cfg_.refine_width, cfg_.arch.num_classes, rng);
    }
    if (cfg_.mpn) {
      MessagePassingConfig m = cfg_.mpn_cfg;
      m.classes = cfg_.arch.num_classes;
      mpn_.emplace(m, rng);
    }
  }

  const PipelineConfig& config() const { return cfg_; }
  Trunk<T>& trunk() { return trunk_; }
  ContextNet<T>& context() { return context_; }
  RefinePipeline<T>& refine() { return refine_; }

  // Logits at the input resolution.
  Var<T> operator()(Tape<T>& tape, const Tensor<T>& image, NormMode mode) {
    const Shape s = image.shape();
    TapSet<T> taps = trunk_(tape, tape.constant(image), mode);
    Var<T> h = context_(tape, fuse_(tape, taps));
    h = cfg_.refine ? refine_(tape, h, taps) : h;
    if (h.shape().h != s.h || h.shape().w != s.w) h = resize_bilinear(h, s.h, s.w);
    if (mpn_) h = mpn_run(tape, h, image, *mpn_);
    return h;
  }

  Tensor<T> predict(const Tensor<T>& image) {
    Tape<T> tape;
    return (*this)(tape, image, cfg_.trunk.norm ? NormMode::Eval : NormMode::Train).value();
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    trunk_.visit_parameters(fn);
    fuse_.visit_parameters(fn);
    context_.visit_parameters(fn);
    refine_.visit_parameters(fn);
    if (mpn_) mpn_->visit_parameters(fn);
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    visit_parameters([&](Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit_parameters([&](Parameter<T>& p) { n += p.value.size(); });
    return n;
  }

  std::size_t tap_level(const std::string& name) const {
    if (name == kFcTap) return cfg_.trunk.stages();
    for (std::size_t s = 0; s < cfg_.trunk.stages(); ++s)
      if (name == tap_name(s)) return s;
    throw ConfigError("unknown tap " + name);
  }

 private:
  PipelineConfig cfg_;
  Trunk<T> trunk_;
  TapFusion<T> fuse_;
  ContextNet<T> context_;
  RefinePipeline<T> refine_;
  std::optional<MpnParams<T>> mpn_;
};

// Runs `predict` at every scale (sizes rounded to a multiple of `divisor`),
// resizes the scores back to the input grid and averages them.
template <typename T, typename Predict>
Tensor<T> multiscale_infer(Predict&& predict, const Tensor<T>& image, const std::vector<double>& scales,
                           std::size_t divisor = 1) {
  if (scales.empty()) throw ConfigError("multiscale_infer: no scales given");
  const Shape s = image.shape();
  auto fit = [&](std::size_t n, double scale) {
    const auto units = std::lround(static_cast<double>(n) * scale / static_cast<double>(divisor));
    return static_cast<std::size_t>(std::max<long>(1, units)) * divisor;
  };
  Tensor<T> sum;
  for (double sc : scales) {
    const Tensor<T> scaled = resize_bilinear(image, fit(s.h, sc), fit(s.w, sc));
    Tensor<T> scores = resize_bilinear(predict(scaled), s.h, s.w);
    if (sum.size() == 0)
      sum = std::move(scores);
    else
      sum += scores;
  }
  if (scales.size() > 1) {
    const T inv = T(1) / static_cast<T>(scales.size());
    for (auto& v : sum.data()) v *= inv;
  }
  return sum;
}

// Stacks samples [begin, end) into one batch.
inline std::pair<Tensor<float>, LabelMap> make_batch(const std::vector<SynthSample>& samples,
                                                     const std::vector<std::size_t>& idx) {
  const Shape s0 = samples.at(idx.at(0)).image.shape();
  Tensor<float> img(Shape{idx.size(), s0.c, s0.h, s0.w});
  LabelMap lab(idx.size(), s0.h, s0.w);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = samples[idx[b]];
    s.image.require_same_shape(Tensor<float>(s0), "make_batch");
    std::copy(s.image.data().begin(), s.image.data().end(), img.item(b).begin());
    std::copy(s.label.data.begin(), s.label.data.end(), lab.data.begin() + b * s0.h * s0.w);
  }
  return {std::move(img), std::move(lab)};
}

template <typename T>
ConfusionMatrix evaluate(SegmentationModel<T>& model, const std::vector<SynthSample>& samples,
                         const std::vector<double>& scales = {1.0}, std::size_t chunk = 8) {
  ConfusionMatrix conf(model.config().arch.num_classes);
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + chunk); ++i) idx.push_back(i);
    auto [img, lab] = make_batch(samples, idx);
    const auto scores = multiscale_infer<T>([&](const Tensor<T>& x) { return model.predict(x); }, img.cast<T>(),
                                            scales, model.config().trunk.divisor());
    conf.accumulate(argmax_channels(scores), lab);
  }
  return conf;
}

}  // namespace mcn
