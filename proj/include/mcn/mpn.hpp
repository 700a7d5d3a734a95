#pragma once

// Message passing on score maps. MPN compresses the score map to Ns
// channels, filters that with the bilateral kernel and expands back as a
// residual on S0. The CRF-RNN baseline filters all N softmax channels and
// merges weighting and compatibility into one 1x1 conv.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "mcn/conv.hpp"
#include "mcn/ops.hpp"
#include "mcn/pairwise.hpp"

namespace mcn {

struct MessagePassingConfig {
  std::size_t classes = 3;  // N
  std::size_t reduced = 2;  // Ns
  std::size_t iterations = 3;
  BilateralBandwidth bandwidth{};
  FilterBackend backend = FilterBackend::Lattice;
};

template <typename T>
struct MpnParams {
  MessagePassingConfig cfg;
  ConvLayer<T> reduce;  // 1x1, N -> Ns
  ConvLayer<T> expand;  // 3x3, 2 Ns -> N

  MpnParams() = default;

  template <typename Rng>
  MpnParams(const MessagePassingConfig& c, Rng& rng) : cfg(c) {
    if (cfg.reduced == 0 || cfg.reduced >= cfg.classes)
      throw ConfigError("mpn: reduced channels " + std::to_string(cfg.reduced) + " must be in [1, " +
                        std::to_string(cfg.classes) + ")");
    reduce = ConvLayer<T>("mpn.reduce", cfg.classes, cfg.reduced, 1, 1, rng);
    expand = ConvLayer<T>("mpn.expand", 2 * cfg.reduced, cfg.classes, 3, 1, rng);
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    reduce.visit_parameters(fn);
    expand.visit_parameters(fn);
  }
};

template <typename T>
std::shared_ptr<const BilateralFilterBank> build_bank(const Tensor<T>& image, const MessagePassingConfig& cfg) {
  return BilateralFilterBank::build(image, cfg.bandwidth, cfg.backend);
}

namespace detail {

inline void check_score(const Shape& s, std::size_t classes, const char* what) {
  if (s.c != classes)
    throw ShapeError(std::string(what) + ": score map " + s.str() + " should have " + std::to_string(classes) +
                     " channels");
}

}  // namespace detail

template <typename T>
Var<T> mpn_iteration(Tape<T>& tape, Var<T> s_i, Var<T> s_0, const std::shared_ptr<const BilateralFilterBank>& bank,
                     MpnParams<T>& p) {
  detail::check_score(s_i.shape(), p.cfg.classes, "mpn_iteration");
  detail::check_score(s_0.shape(), p.cfg.classes, "mpn_iteration");
  s_0.value().require_same_shape(s_i.value(), "mpn_iteration S0 vs Si");
  Var<T> r = p.reduce(tape, s_i);
  Var<T> f = pairwise_filter(r, bank, true);
  return add(s_0, p.expand(tape, concat_channels(r, f)));
}

template <typename T>
Var<T> mpn_iteration(Tape<T>& tape, Var<T> s_i, Var<T> s_0, const Tensor<T>& image, MpnParams<T>& p) {
  return mpn_iteration(tape, s_i, s_0, build_bank(image, p.cfg), p);
}

// T iterations with shared parameters; the filter is built once.
template <typename T>
Var<T> mpn_run(Tape<T>& tape, Var<T> s_0, const Tensor<T>& image, MpnParams<T>& p) {
  if (p.cfg.iterations == 0) return s_0;
  const auto bank = build_bank(image, p.cfg);
  Var<T> s = s_0;
  for (std::size_t i = 0; i < p.cfg.iterations; ++i) s = mpn_iteration(tape, s, s_0, bank, p);
  return s;
}

template <typename T>
struct CrfRnnParams {
  MessagePassingConfig cfg;
  ConvLayer<T> merged;  // 1x1, N -> N

  CrfRnnParams() = default;

  template <typename Rng>
  CrfRnnParams(const MessagePassingConfig& c, Rng& rng) : cfg(c) {
    merged = ConvLayer<T>("crf.merged", cfg.classes, cfg.classes, 1, 1, rng);
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    merged.visit_parameters(fn);
  }
};

template <typename T>
Var<T> crf_rnn_step(Tape<T>& tape, Var<T> s_i, Var<T> unary, const std::shared_ptr<const BilateralFilterBank>& bank,
                    CrfRnnParams<T>& p) {
  detail::check_score(s_i.shape(), p.cfg.classes, "crf_rnn_step");
  detail::check_score(unary.shape(), p.cfg.classes, "crf_rnn_step");
  unary.value().require_same_shape(s_i.value(), "crf_rnn_step U vs Si");
  Var<T> m = pairwise_filter(softmax_channels(s_i), bank, true);
  return sub(unary, p.merged(tape, m));
}

template <typename T>
Var<T> crf_rnn_run(Tape<T>& tape, Var<T> unary, const Tensor<T>& image, CrfRnnParams<T>& p) {
  if (p.cfg.iterations == 0) return unary;
  const auto bank = build_bank(image, p.cfg);
  Var<T> s = unary;
  for (std::size_t i = 0; i < p.cfg.iterations; ++i) s = crf_rnn_step(tape, s, unary, bank, p);
  return s;
}

enum class PassingVariant { Mpn, CrfRnn };

// Activation bytes (float32) kept alive for backward across T iterations.
// `filtered` is the tensor that goes through the bilateral filter, the term
// the two designs differ on.
struct MemoryEstimate {
  std::uint64_t filtered_channels = 0;
  std::uint64_t filtered_bytes = 0;
  std::uint64_t other_bytes = 0;
  std::uint64_t total() const { return filtered_bytes + other_bytes; }
};

inline MemoryEstimate memory_estimate(std::uint64_t n, std::uint64_t ns, std::uint64_t h, std::uint64_t w,
                                      std::uint64_t iterations, PassingVariant variant) {
  const std::uint64_t plane = h * w * iterations * 4;
  MemoryEstimate e;
  if (variant == PassingVariant::Mpn) {
    // reduced R, filtered F, concat(R, F), output S
    e.filtered_channels = ns;
    e.other_bytes = (ns + 2 * ns + n) * plane;
  } else {
    // softmax Q, filtered M, merged output, S
    e.filtered_channels = n;
    e.other_bytes = (n + n + n) * plane;
  }
  e.filtered_bytes = e.filtered_channels * plane;
  return e;
}

}  // namespace mcn
