#pragma once

// Release-gate gradient checks over every differentiable op, in double.
// Each row reports the worst relative error over the input and all
// parameters involved.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mcn/context.hpp"
#include "mcn/gradcheck.hpp"
#include "mcn/mpn.hpp"
#include "mcn/refine.hpp"

namespace mcn {

inline constexpr double kGradCheckEps = 1e-3;
inline constexpr double kGradCheckTolerance = 1e-3;
inline constexpr double kLatticeGradTolerance = 5e-2;

struct GradCheckRow {
  std::string op;
  double max_rel_error = 0;
  double tolerance = 0;
  bool pass() const { return max_rel_error < tolerance; }
};

struct GradCheckCase {
  std::string op;
  double tolerance;
  std::function<double()> run;
};

namespace detail {

using D = double;

inline double worst_over_parameters(const std::function<Var<D>(Tape<D>&)>& build,
                                    const std::vector<Parameter<D>*>& params, std::uint64_t seed) {
  double worst = 0;
  for (auto* p : params)
    worst = std::max(worst, finite_diff_check_parameter(build, *p, kGradCheckEps, seed++).max_rel_error);
  return worst;
}

template <typename Module>
std::vector<Parameter<D>*> params_of(Module& m) {
  std::vector<Parameter<D>*> out;
  m.visit_parameters([&](Parameter<D>& p) { out.push_back(&p); });
  return out;
}

// Random nonzero biases so that relu kinks are not sitting at zero.
inline void jitter_biases(const std::vector<Parameter<D>*>& params, std::mt19937_64& rng) {
  for (auto* p : params)
    if (p->name.ends_with(".bias")) p->value = Tensor<D>::normal(p->value.shape(), 0.3, rng);
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_cases(std::uint64_t seed = 1) {
  using detail::D;
  std::vector<GradCheckCase> cases;

  auto conv_case = [seed](std::size_t k, std::size_t rate) {
    return [=] {
      std::mt19937_64 rng(seed + 10 * k + rate);
      ConvLayer<D> layer("conv", 3, 4, k, rate, rng);
      layer.bias.value = Tensor<D>::normal(layer.bias.value.shape(), 0.5, rng);
      const auto x = Tensor<D>::normal(Shape{2, 3, 6, 6}, 1.0, rng);
      auto op = [&](Tape<D>& t, Var<D> v) { return layer(t, v); };
      auto build = [&](Tape<D>& t) { return layer(t, t.constant(x)); };
      return std::max(finite_diff_check(op, x, kGradCheckEps, seed).max_rel_error,
                      detail::worst_over_parameters(build, {&layer.weight, &layer.bias}, seed));
    };
  };
  cases.push_back({"conv1x1", kGradCheckTolerance, conv_case(1, 1)});
  cases.push_back({"conv3x3", kGradCheckTolerance, conv_case(3, 1)});
  cases.push_back({"conv3x3_dilated", kGradCheckTolerance, conv_case(3, 2)});

  cases.push_back({"norm", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 100);
                     ChannelNorm<D> norm("bn", 3);
                     norm.gamma.value = Tensor<D>::uniform(norm.gamma.value.shape(), 0.5, 2.0, rng);
                     norm.beta.value = Tensor<D>::normal(norm.beta.value.shape(), 1.0, rng);
                     const auto x = Tensor<D>::normal(Shape{2, 3, 4, 4}, 1.0, rng);
                     double worst = 0;
                     for (NormMode mode : {NormMode::Train, NormMode::Eval}) {
                       auto op = [&](Tape<D>& t, Var<D> v) { return norm(t, v, mode); };
                       auto build = [&](Tape<D>& t) { return norm(t, t.constant(x), mode); };
                       worst = std::max({worst, finite_diff_check(op, x, kGradCheckEps, seed).max_rel_error,
                                         detail::worst_over_parameters(build, {&norm.gamma, &norm.beta}, seed)});
                     }
                     return worst;
                   }});

  cases.push_back({"upsample", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 200);
                     const auto x = Tensor<D>::normal(Shape{2, 2, 3, 4}, 1.0, rng);
                     auto up = [](Tape<D>&, Var<D> v) { return bilinear_upsample(v, 2); };
                     auto resize = [](Tape<D>&, Var<D> v) { return resize_bilinear(v, 5, 7); };
                     return std::max(finite_diff_check(up, x, kGradCheckEps, seed).max_rel_error,
                                     finite_diff_check(resize, x, kGradCheckEps, seed).max_rel_error);
                   }});

  cases.push_back({"concat", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 300);
                     const auto x = Tensor<D>::normal(Shape{2, 2, 3, 3}, 1.0, rng);
                     const auto other = Tensor<D>::normal(Shape{2, 3, 3, 3}, 1.0, rng);
                     auto left = [&](Tape<D>& t, Var<D> v) { return concat_channels(v, t.constant(other)); };
                     auto right = [&](Tape<D>& t, Var<D> v) { return concat_channels(t.constant(other), v); };
                     return std::max(finite_diff_check(left, x, kGradCheckEps, seed).max_rel_error,
                                     finite_diff_check(right, x, kGradCheckEps, seed).max_rel_error);
                   }});

  cases.push_back({"add", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 400);
                     const auto x = Tensor<D>::normal(Shape{2, 3, 3, 3}, 1.0, rng);
                     const auto other = Tensor<D>::normal(x.shape(), 1.0, rng);
                     auto plus = [&](Tape<D>& t, Var<D> v) { return add(v, t.constant(other)); };
                     auto minus = [&](Tape<D>& t, Var<D> v) { return sub(t.constant(other), v); };
                     auto twice = [](Tape<D>&, Var<D> v) { return add(v, v); };
                     return std::max({finite_diff_check(plus, x, kGradCheckEps, seed).max_rel_error,
                                      finite_diff_check(minus, x, kGradCheckEps, seed).max_rel_error,
                                      finite_diff_check(twice, x, kGradCheckEps, seed).max_rel_error});
                   }});

  cases.push_back({"softmax", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 500);
                     const auto x = Tensor<D>::normal(Shape{2, 4, 3, 3}, 1.5, rng);
                     LabelMap labels(2, 3, 3);
                     std::uniform_int_distribution<int> cls(0, 3);
                     for (auto& l : labels.data) l = cls(rng);
                     labels.data[4] = kIgnoreLabel;
                     auto sm = [](Tape<D>&, Var<D> v) { return softmax_channels(v); };
                     auto xent = [&](Tape<D>&, Var<D> v) { return softmax_cross_entropy(v, labels); };
                     return std::max(finite_diff_check(sm, x, kGradCheckEps, seed).max_rel_error,
                                     finite_diff_check(xent, x, kGradCheckEps, seed).max_rel_error);
                   }});

  cases.push_back({"mcn_block", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 600);
                     McnBlock<D> block("b", 3, 4, 2, rng);
                     const auto params = detail::params_of(block);
                     detail::jitter_biases(params, rng);
                     const auto x = Tensor<D>::normal(Shape{1, 3, 7, 7}, 1.0, rng);
                     auto op = [&](Tape<D>& t, Var<D> v) { return block(t, v); };
                     auto build = [&](Tape<D>& t) { return block(t, t.constant(x)); };
                     return std::max(finite_diff_check(op, x, kGradCheckEps, seed).max_rel_error,
                                     detail::worst_over_parameters(build, params, seed));
                   }});

  cases.push_back({"refinement_step", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 700);
                     RefineStage<D> stage("r", 3, 2, 3, rng);
                     const auto params = detail::params_of(stage);
                     detail::jitter_biases(params, rng);
                     const auto coarse = Tensor<D>::normal(Shape{1, 3, 3, 3}, 1.0, rng);
                     const auto skip = Tensor<D>::normal(Shape{1, 2, 6, 6}, 1.0, rng);
                     auto via_coarse = [&](Tape<D>& t, Var<D> v) {
                       return refinement_step(t, v, t.constant(skip), stage);
                     };
                     auto via_skip = [&](Tape<D>& t, Var<D> v) {
                       return refinement_step(t, t.constant(coarse), v, stage);
                     };
                     auto build = [&](Tape<D>& t) {
                       return refinement_step(t, t.constant(coarse), t.constant(skip), stage);
                     };
                     return std::max({finite_diff_check(via_coarse, coarse, kGradCheckEps, seed).max_rel_error,
                                      finite_diff_check(via_skip, skip, kGradCheckEps, seed).max_rel_error,
                                      detail::worst_over_parameters(build, params, seed)});
                   }});

  cases.push_back({"mpn_iteration_oracle", kGradCheckTolerance, [seed] {
                     std::mt19937_64 rng(seed + 800);
                     MessagePassingConfig cfg;
                     cfg.classes = 4;
                     cfg.reduced = 2;
                     cfg.iterations = 1;
                     cfg.bandwidth = {2.0, 40.0};
                     cfg.backend = FilterBackend::Exact;
                     MpnParams<D> p(cfg, rng);
                     const auto image = Tensor<D>::uniform(Shape{1, 3, 5, 5}, 0.0, 1.0, rng);
                     const auto bank = build_bank(image, p.cfg);
                     const auto s0 = Tensor<D>::normal(Shape{1, 4, 5, 5}, 1.0, rng);
                     const auto si = Tensor<D>::normal(s0.shape(), 1.0, rng);
                     auto op = [&](Tape<D>& t, Var<D> v) { return mpn_iteration(t, v, t.constant(s0), bank, p); };
                     auto build = [&](Tape<D>& t) {
                       return mpn_iteration(t, t.constant(si), t.constant(s0), bank, p);
                     };
                     return std::max(finite_diff_check(op, si, kGradCheckEps, seed).max_rel_error,
                                     detail::worst_over_parameters(build, detail::params_of(p), seed));
                   }});

  cases.push_back({"lattice_filter", kLatticeGradTolerance, [seed] {
                     std::mt19937_64 rng(seed + 900);
                     const auto image = Tensor<D>::uniform(Shape{1, 3, 8, 8}, 0.0, 1.0, rng);
                     const auto bank = BilateralFilterBank::build(image, {3.0, 60.0}, FilterBackend::Lattice);
                     const auto x = Tensor<D>::normal(Shape{1, 2, 8, 8}, 1.0, rng);
                     double worst = 0;
                     for (bool normalize : {false, true}) {
                       auto op = [&](Tape<D>&, Var<D> v) { return pairwise_filter(v, bank, normalize); };
                       worst = std::max(worst, finite_diff_check(op, x, kGradCheckEps, seed).max_rel_error);
                     }
                     return worst;
                   }});
  return cases;
}

inline std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed = 1) {
  std::vector<GradCheckRow> rows;
  for (auto& c : gradcheck_cases(seed)) rows.push_back({c.op, c.run(), c.tolerance});
  return rows;
}

}  // namespace mcn
