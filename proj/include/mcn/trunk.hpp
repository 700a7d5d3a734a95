#pragma once

// Small fully-convolutional backbone with one tap per pooling level, plus
// the tap fusion that feeds the context module.

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mcn/conv.hpp"
#include "mcn/norm.hpp"
#include "mcn/ops.hpp"
#include "mcn/resample.hpp"

namespace mcn {

struct TrunkConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t convs_per_stage = 2;
  std::size_t fc_width = 64;
  bool norm = false;
  // Stage indices whose parameters are frozen; index widths.size() is fc.
  std::vector<std::size_t> frozen;

  std::size_t stages() const { return widths.size(); }
  std::size_t divisor() const { return std::size_t{1} << stages(); }

  void validate() const {
    if (widths.empty()) throw ConfigError("trunk: at least one stage required");
    if (convs_per_stage == 0) throw ConfigError("trunk: convs_per_stage must be >= 1");
    if (in_channels == 0 || fc_width == 0) throw ConfigError("trunk: channel counts must be positive");
    for (auto w : widths)
      if (w == 0) throw ConfigError("trunk: stage widths must be positive");
    for (auto f : frozen)
      if (f > stages()) throw ConfigError("trunk: frozen stage " + std::to_string(f) + " out of range");
  }
};

inline std::string tap_name(std::size_t stage) { return "stage" + std::to_string(stage); }
inline const std::string kFcTap = "fc";

// Named feature maps in recording order, finest first.
template <typename T>
class TapSet {
 public:
  void add(std::string name, Var<T> v) {
    if (contains(name)) throw ConfigError("tap set: duplicate tap " + name);
    taps_.emplace_back(std::move(name), v);
  }
  bool contains(const std::string& name) const {
    return std::ranges::any_of(taps_, [&](const auto& t) { return t.first == name; });
  }
  Var<T> at(const std::string& name) const {
    for (const auto& t : taps_)
      if (t.first == name) return t.second;
    throw ConfigError("tap set: unknown tap " + name);
  }
  std::size_t size() const { return taps_.size(); }
  const auto& entries() const { return taps_; }

 private:
  std::vector<std::pair<std::string, Var<T>>> taps_;
};

template <typename T>
class Trunk {
 public:
  Trunk() = default;

  template <typename Rng>
  Trunk(const TrunkConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t c = cfg_.in_channels;
    for (std::size_t s = 0; s < cfg_.stages(); ++s) {
      stages_.emplace_back();
      norms_.emplace_back();
      for (std::size_t i = 0; i < cfg_.convs_per_stage; ++i) {
        const std::string name = "trunk." + tap_name(s) + ".conv" + std::to_string(i);
        stages_[s].emplace_back(name, c, cfg_.widths[s], 3, 1, rng);
        if (cfg_.norm) norms_[s].emplace_back(name + ".norm", cfg_.widths[s]);
        c = cfg_.widths[s];
      }
    }
    fc_ = ConvLayer<T>("trunk.fc", c, cfg_.fc_width, 1, 1, rng);
    for (auto f : cfg_.frozen) set_stage_frozen(f, true);
  }

  const TrunkConfig& config() const { return cfg_; }

  // Channel count of every tap, finest first.
  std::vector<std::pair<std::string, std::size_t>> tap_channels() const {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (std::size_t s = 0; s < cfg_.stages(); ++s) out.emplace_back(tap_name(s), cfg_.widths[s]);
    out.emplace_back(kFcTap, cfg_.fc_width);
    return out;
  }

  TapSet<T> operator()(Tape<T>& tape, Var<T> x, NormMode mode) {
    const Shape s = x.shape();
    if (s.c != cfg_.in_channels)
      throw ShapeError("trunk_forward: input " + s.str() + " needs " + std::to_string(cfg_.in_channels) +
                       " channels");
    if (s.h % cfg_.divisor() != 0 || s.w % cfg_.divisor() != 0)
      throw ShapeError("trunk_forward: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                       " must be divisible by " + std::to_string(cfg_.divisor()));
    TapSet<T> taps;
    Var<T> h = x;
    for (std::size_t st = 0; st < stages_.size(); ++st) {
      for (std::size_t i = 0; i < stages_[st].size(); ++i) {
        h = stages_[st][i](tape, h);
        if (cfg_.norm) h = norms_[st][i](tape, h, mode);
        h = relu(h);
      }
      taps.add(tap_name(st), h);
      h = avg_pool(h, 2);
    }
    taps.add(kFcTap, relu(fc_(tape, h)));
    return taps;
  }

  void set_stage_frozen(std::size_t stage, bool frozen) {
    auto mark = [&](Parameter<T>& p) { p.frozen = frozen; };
    if (stage == stages_.size()) {
      fc_.visit_parameters(mark);
      return;
    }
    for (auto& conv : stages_.at(stage)) conv.visit_parameters(mark);
    for (auto& n : norms_.at(stage)) n.visit_parameters(mark);
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (auto& conv : stages_[s]) conv.visit_parameters(fn);
      for (auto& n : norms_[s]) n.visit_parameters(fn);
    }
    fc_.visit_parameters(fn);
  }

  template <typename Fn>
  void visit_norms(Fn&& fn) {
    for (auto& stage : norms_)
      for (auto& n : stage) fn(n);
  }

 private:
  TrunkConfig cfg_;
  std::vector<std::vector<ConvLayer<T>>> stages_;
  std::vector<std::vector<ChannelNorm<T>>> norms_;
  ConvLayer<T> fc_;
};

enum class FuseMode { Sum, Concat };

// Reduces each selected tap with a 1x1 conv and brings it to the coarsest
// selected resolution: finer taps are average-pooled, coarser ones (if a
// caller orders things oddly) bilinearly resized.
template <typename T>
class TapFusion {
 public:
  TapFusion() = default;

  template <typename Rng>
  TapFusion(const std::vector<std::pair<std::string, std::size_t>>& available, std::vector<std::string> selection,
            std::size_t target_channels, FuseMode mode, Rng& rng)
      : selection_(std::move(selection)), mode_(mode), target_(target_channels) {
    if (selection_.empty()) throw ConfigError("fuse_taps: empty tap selection");
    for (const auto& name : selection_) {
      auto it = std::ranges::find_if(available, [&](const auto& a) { return a.first == name; });
      if (it == available.end()) throw ConfigError("fuse_taps: unknown tap " + name);
      reduce_.emplace_back("fuse." + name, it->second, target_channels, 1, 1, rng);
    }
  }

  const std::vector<std::string>& selection() const { return selection_; }
  std::size_t output_channels() const { return mode_ == FuseMode::Sum ? target_ : target_ * selection_.size(); }
  ConvLayer<T>& reduce(std::size_t i) { return reduce_.at(i); }

  Var<T> operator()(Tape<T>& tape, const TapSet<T>& taps) {
    std::size_t h = 0, w = 0;
    for (const auto& name : selection_) {
      const Shape s = taps.at(name).shape();
      if (h == 0 || s.h < h) {
        h = s.h;
        w = s.w;
      }
    }
    Var<T> out;
    for (std::size_t i = 0; i < selection_.size(); ++i) {
      Var<T> r = reduce_[i](tape, taps.at(selection_[i]));
      const Shape s = r.shape();
      if (s.h > h && s.h % h == 0 && s.w % w == 0 && s.h / h == s.w / w)
        r = avg_pool(r, s.h / h);
      else
        r = resize_bilinear(r, h, w);
      if (i == 0)
        out = r;
      else
        out = mode_ == FuseMode::Sum ? add(out, r) : concat_channels(out, r);
    }
    return out;
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    for (auto& r : reduce_) r.visit_parameters(fn);
  }

 private:
  std::vector<std::string> selection_;
  FuseMode mode_ = FuseMode::Sum;
  std::size_t target_ = 0;
  std::vector<ConvLayer<T>> reduce_;
};

}  // namespace mcn
