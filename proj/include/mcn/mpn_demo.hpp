#pragma once

// Hand-parameterized MPN on noisy ground-truth scores. The reduce conv
// projects onto an orthonormal basis of the zero-sum subspace (Ns = N - 1),
// and the expand conv maps the filtered part back with its transpose through
// the centre tap only. One iteration is then
//   S' = S0 + alpha * P filter(S)
// with P the centring projection, so the argmax moves toward what the
// bilateral neighbourhood agrees on.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "mcn/metrics.hpp"
#include "mcn/mpn.hpp"
#include "mcn/synth.hpp"

namespace mcn {

struct MpnDemoConfig {
  std::uint64_t seed = 1;
  std::size_t classes = 3;
  std::size_t size = 64;
  std::size_t iterations = 3;
  double alpha = 1.0;
  double target_input_miu = 0.65;  // noise is calibrated to this input meanIU
  BilateralBandwidth bandwidth{};
  FilterBackend backend = FilterBackend::Lattice;
};

struct MpnDemoResult {
  SynthSample sample;
  double sigma = 0;
  Tensor<float> input_scores;
  Tensor<float> output_scores;
  std::vector<double> mean_iu;  // index 0 is the input, then one per iteration
  std::vector<double> pixel_acc;
};

// Rows of the (N-1) x N Helmert matrix: orthonormal and orthogonal to 1.
inline std::vector<std::vector<double>> helmert_basis(std::size_t n) {
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 1; k < n; ++k) {
    std::vector<double> r(n, 0.0);
    const double norm = std::sqrt(double(k) * double(k + 1));
    for (std::size_t j = 0; j < k; ++j) r[j] = 1.0 / norm;
    r[k] = -double(k) / norm;
    rows.push_back(r);
  }
  return rows;
}

template <typename T>
MpnParams<T> hand_mpn_params(const MessagePassingConfig& cfg, double alpha) {
  if (cfg.reduced + 1 != cfg.classes) throw ConfigError("hand MPN needs reduced = classes - 1");
  std::mt19937_64 rng(0);
  MpnParams<T> p(cfg, rng);
  const auto basis = helmert_basis(cfg.classes);
  const std::size_t n = cfg.classes, ns = cfg.reduced;
  p.reduce.weight.value.fill(T(0));
  p.reduce.bias.value.fill(T(0));
  p.expand.weight.value.fill(T(0));
  p.expand.bias.value.fill(T(0));
  for (std::size_t k = 0; k < ns; ++k)
    for (std::size_t j = 0; j < n; ++j) {
      p.reduce.weight.value.at(k, j, 0, 0) = static_cast<T>(basis[k][j]);
      // Concat order is (R, F); only F feeds back.
      p.expand.weight.value.at(j, ns + k, 1, 1) = static_cast<T>(alpha * basis[k][j]);
    }
  return p;
}

inline Tensor<float> one_hot_scores(const LabelMap& labels, std::size_t classes) {
  Tensor<float> out(Shape{labels.n, classes, labels.h, labels.w});
  for (std::size_t b = 0; b < labels.n; ++b)
    for (std::size_t y = 0; y < labels.h; ++y)
      for (std::size_t x = 0; x < labels.w; ++x) out.at(b, static_cast<std::size_t>(labels.at(b, y, x)), y, x) = 1.f;
  return out;
}

inline ConfusionMatrix score_confusion(const Tensor<float>& scores, const LabelMap& labels) {
  ConfusionMatrix c(scores.shape().c);
  c.accumulate(argmax_channels(scores), labels);
  return c;
}

// Fixed unit-normal noise scaled by sigma; sigma is bisected so the input
// meanIU lands near the target.
inline double calibrate_noise(const Tensor<float>& clean, const Tensor<float>& unit_noise, const LabelMap& labels,
                              double target) {
  auto miu = [&](double sigma) {
    Tensor<float> s = clean;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += static_cast<float>(sigma) * unit_noise[i];
    return score_confusion(s, labels).mean_iu();
  };
  double lo = 0.0, hi = 8.0;
  for (int i = 0; i < 40; ++i) {
    const double mid = 0.5 * (lo + hi);
    (miu(mid) > target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline MpnDemoResult run_mpn_demo(const MpnDemoConfig& cfg) {
  MpnDemoResult res;
  SynthOptions opt;
  opt.min_shapes = 2;
  opt.max_shapes = 4;
  res.sample = synth_sample(splitmix64(cfg.seed), cfg.classes, cfg.size, cfg.size, opt);
  const Tensor<float> clean = one_hot_scores(res.sample.label, cfg.classes);
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x6e6f697365ULL));
  const auto unit = Tensor<float>::normal(clean.shape(), 1.f, rng);
  res.sigma = calibrate_noise(clean, unit, res.sample.label, cfg.target_input_miu);
  res.input_scores = clean;
  for (std::size_t i = 0; i < clean.size(); ++i) res.input_scores[i] += static_cast<float>(res.sigma) * unit[i];

  MessagePassingConfig m;
  m.classes = cfg.classes;
  m.reduced = cfg.classes - 1;
  m.iterations = cfg.iterations;
  m.bandwidth = cfg.bandwidth;
  m.backend = cfg.backend;
  auto params = hand_mpn_params<float>(m, cfg.alpha);

  Tape<float> tape;
  const Var<float> s0 = tape.constant(res.input_scores);
  const auto bank = build_bank(res.sample.image, m);
  auto record = [&](const Tensor<float>& s) {
    const auto c = score_confusion(s, res.sample.label);
    res.mean_iu.push_back(c.mean_iu());
    res.pixel_acc.push_back(c.pixel_acc());
  };
  record(res.input_scores);
  Var<float> s = s0;
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    s = mpn_iteration(tape, s, s0, bank, params);
    record(s.value());
  }
  res.output_scores = s.value();
  return res;
}

}  // namespace mcn
