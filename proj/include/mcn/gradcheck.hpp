#pragma once

// Central-difference verification of tape gradients, run in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mcn/ops.hpp"
#include "mcn/tape.hpp"

namespace mcn {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

inline constexpr std::size_t kGradCheckSamples = 64;

namespace detail {

inline std::vector<std::size_t> sample_coordinates(std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size <= kGradCheckSamples) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < kGradCheckSamples; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(kGradCheckSamples);
  return idx;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// `loss(tape)` builds the scalar objective reading `target`; `target` is
// perturbed in place and restored.
template <typename Loss>
GradCheckResult central_difference(Tensor<double>& target, const Tensor<double>& analytic, Loss&& loss, double eps,
                                   std::uint64_t seed) {
  GradCheckResult res;
  for (std::size_t i : sample_coordinates(target.size(), seed)) {
    const double orig = target[i];
    target[i] = orig + eps;
    const double plus = loss();
    target[i] = orig - eps;
    const double minus = loss();
    target[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus))
      throw NumericError("finite_diff_check: non-finite loss at coordinate " + std::to_string(i));
    const double numeric = (plus - minus) / (2 * eps);
    const double err = relative_error(analytic[i], numeric);
    if (err > res.max_rel_error || res.checked == 0) {
      res.max_rel_error = err;
      res.worst_index = i;
    }
    ++res.checked;
  }
  return res;
}

inline Tensor<double> projection(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  return Tensor<double>::normal(s, 1.0, rng);
}

}  // namespace detail

// Checks d<op(x), r>/dx for a fixed random projection r.
// op: (Tape<double>&, Var<double>) -> Var<double>.
template <typename Op>
GradCheckResult finite_diff_check(Op&& op, const Tensor<double>& input, double eps, std::uint64_t seed = 0) {
  if (!(eps > 0)) throw NumericError("finite_diff_check: eps must be positive");
  Tensor<double> x = input;
  Tensor<double> proj;
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> xv = tape.leaf(x);
    Var<double> out = op(tape, xv);
    if (!out.value().all_finite()) throw NumericError("finite_diff_check: non-finite forward output");
    proj = detail::projection(out.shape(), seed);
    tape.backward(dot(out, proj));
    const Tensor<double>* g = tape.grad(xv);
    analytic = g ? *g : Tensor<double>(x.shape());
  }
  auto loss = [&] {
    Tape<double> tape;
    return dot(op(tape, tape.constant(x)), proj).value()[0];
  };
  return detail::central_difference(x, analytic, loss, eps, seed);
}

// Same check against one parameter of a module.
// build: (Tape<double>&) -> Var<double>, must read `param` via tape.param.
template <typename Build>
GradCheckResult finite_diff_check_parameter(Build&& build, Parameter<double>& param, double eps,
                                            std::uint64_t seed = 0) {
  if (!(eps > 0)) throw NumericError("finite_diff_check: eps must be positive");
  Tensor<double> proj;
  Tensor<double> analytic;
  {
    const bool was_frozen = param.frozen;
    param.frozen = false;
    param.zero_grad();
    Tape<double> tape;
    Var<double> out = build(tape);
    proj = detail::projection(out.shape(), seed);
    tape.backward(dot(out, proj));
    analytic = param.grad;
    param.frozen = was_frozen;
  }
  auto loss = [&] {
    Tape<double> tape;
    return dot(build(tape), proj).value()[0];
  };
  return detail::central_difference(param.value, analytic, loss, eps, seed);
}

}  // namespace mcn
