#pragma once

// Context modules appended to the trunk: a plain dilated stack, its long-
// and short-skip variants, and the mixed context network (dilated 3x3 and
// 1x1 in parallel, merged by a 1x1), with or without a long skip.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mcn/conv.hpp"
#include "mcn/ops.hpp"
#include "mcn/receptive_field.hpp"

namespace mcn {

enum class Variant { PlainContext, LongSkip, ShortSkip, MCN, MCNLongSkip };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::PlainContext, Variant::LongSkip, Variant::ShortSkip,
                                                     Variant::MCN, Variant::MCNLongSkip};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::PlainContext: return "plain";
    case Variant::LongSkip: return "long-skip";
    case Variant::ShortSkip: return "short-skip";
    case Variant::MCN: return "mcn";
    case Variant::MCNLongSkip: return "mcn-long-skip";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : kAllVariants)
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (expected plain, long-skip, short-skip, mcn, mcn-long-skip)");
}

inline bool has_long_skip(Variant v) { return v == Variant::LongSkip || v == Variant::MCNLongSkip; }
inline bool is_mixed(Variant v) { return v == Variant::MCN || v == Variant::MCNLongSkip; }

struct ArchitectureConfig {
  Variant variant = Variant::MCN;
  std::size_t input_channels = 16;
  std::vector<std::size_t> widths{16, 16, 32, 32, 64, 64};
  std::vector<std::size_t> rates{1, 2, 4, 8, 16, 32};
  std::size_t num_classes = 3;

  void validate() const {
    if (widths.empty()) throw ConfigError("architecture: widths must not be empty");
    if (widths.size() != rates.size())
      throw ConfigError("architecture: " + std::to_string(widths.size()) + " widths vs " +
                        std::to_string(rates.size()) + " rates");
    if (input_channels == 0 || num_classes == 0) throw ConfigError("architecture: channel counts must be positive");
    for (auto w : widths)
      if (w == 0) throw ConfigError("architecture: widths must be positive");
    if (rates[0] == 0) throw ConfigError("architecture: rates must be positive");
    for (std::size_t i = 1; i < rates.size(); ++i)
      if (rates[i] != 2 * rates[i - 1])
        throw ConfigError("architecture: rates must double layer over layer (got " + std::to_string(rates[i - 1]) +
                          " then " + std::to_string(rates[i]) + ")");
  }

  bool operator==(const ArchitectureConfig&) const = default;
};

// One mixed-context stage.
template <typename T>
struct McnBlock {
  ConvLayer<T> dilated;
  ConvLayer<T> parallel;
  ConvLayer<T> merge;

  McnBlock() = default;

  template <typename Rng>
  McnBlock(const std::string& name, std::size_t c_in, std::size_t width, std::size_t rate, Rng& rng)
      : dilated(name + ".dilated", c_in, width, 3, rate, rng),
        parallel(name + ".parallel", c_in, width, 1, 1, rng),
        merge(name + ".merge", 2 * width, width, 1, 1, rng) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    Var<T> a = relu(dilated(tape, x));
    Var<T> b = relu(parallel(tape, x));
    return relu(merge(tape, concat_channels(a, b)));
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    dilated.visit_parameters(fn);
    parallel.visit_parameters(fn);
    merge.visit_parameters(fn);
  }
};

struct LayerReport {
  std::string name;
  std::size_t kernel;
  std::size_t rate;
  std::size_t receptive_field;  // cumulative, through this layer
  std::size_t parameters;
};

template <typename T>
class ContextNet {
 public:
  ContextNet() = default;

  template <typename Rng>
  ContextNet(const ArchitectureConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t c = cfg_.input_channels;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      const std::string name = "context.layer" + std::to_string(i);
      const std::size_t w = cfg_.widths[i], r = cfg_.rates[i];
      if (is_mixed(cfg_.variant)) {
        blocks_.emplace_back(name, c, w, r, rng);
      } else {
        dilated_.emplace_back(name + ".dilated", c, w, 3, r, rng);
        if (cfg_.variant == Variant::ShortSkip) adjust_.emplace_back(name + ".adjust", c + w, w, 1, 1, rng);
      }
      c = w;
    }
    classifier_ = ConvLayer<T>("context.classifier", feature_channels(), cfg_.num_classes, 1, 1, rng);
  }

  const ArchitectureConfig& config() const { return cfg_; }

  // Channels entering the classifier.
  std::size_t feature_channels() const {
    return cfg_.widths.back() + (has_long_skip(cfg_.variant) ? cfg_.input_channels : 0);
  }

  Var<T> features(Tape<T>& tape, Var<T> x) {
    if (x.shape().c != cfg_.input_channels)
      throw ShapeError("context forward: input " + x.shape().str() + " needs " +
                       std::to_string(cfg_.input_channels) + " channels");
    Var<T> h = x;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      if (is_mixed(cfg_.variant)) {
        h = blocks_[i](tape, h);
      } else if (cfg_.variant == Variant::ShortSkip) {
        Var<T> d = relu(dilated_[i](tape, h));
        h = relu(adjust_[i](tape, concat_channels(h, d)));
      } else {
        h = relu(dilated_[i](tape, h));
      }
    }
    if (has_long_skip(cfg_.variant)) h = concat_channels(x, h);
    return h;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) { return classifier_(tape, features(tape, x)); }

  std::size_t parameter_count() {
    std::size_t total = 0;
    visit_parameters([&](Parameter<T>& p) { total += p.value.size(); });
    return total;
  }

  // Analytic receptive field over the module (1x1 convs add nothing).
  std::size_t receptive_field() const { return mcn::receptive_field(dilated_stack(cfg_.rates)); }

  std::vector<LayerReport> layer_report() {
    std::vector<LayerReport> out;
    std::size_t rf = 1;
    auto row = [&](const std::string& name, ConvLayer<T>& conv) {
      rf += (conv.kernel() - 1) * conv.dilation;
      out.push_back({name, conv.kernel(), conv.dilation, rf, conv.parameter_count()});
    };
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      const std::string name = "layer" + std::to_string(i);
      if (is_mixed(cfg_.variant)) {
        row(name + ".dilated", blocks_[i].dilated);
        row(name + ".parallel", blocks_[i].parallel);
        row(name + ".merge", blocks_[i].merge);
      } else {
        row(name + ".dilated", dilated_[i]);
        if (cfg_.variant == Variant::ShortSkip) row(name + ".adjust", adjust_[i]);
      }
    }
    row("classifier", classifier_);
    return out;
  }

  McnBlock<T>& block(std::size_t i) { return blocks_.at(i); }
  ConvLayer<T>& dilated(std::size_t i) { return dilated_.at(i); }
  ConvLayer<T>& adjust(std::size_t i) { return adjust_.at(i); }
  ConvLayer<T>& classifier() { return classifier_; }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    for (auto& b : blocks_) b.visit_parameters(fn);
    for (std::size_t i = 0; i < dilated_.size(); ++i) {
      dilated_[i].visit_parameters(fn);
      if (i < adjust_.size()) adjust_[i].visit_parameters(fn);
    }
    classifier_.visit_parameters(fn);
  }

 private:
  ArchitectureConfig cfg_;
  std::vector<McnBlock<T>> blocks_;
  std::vector<ConvLayer<T>> dilated_;
  std::vector<ConvLayer<T>> adjust_;
  ConvLayer<T> classifier_;
};

template <typename T, typename Rng>
ContextNet<T> build_architecture(const ArchitectureConfig& cfg, Rng& rng) {
  return ContextNet<T>(cfg, rng);
}

}  // namespace mcn
