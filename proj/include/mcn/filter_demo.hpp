#pragma once

// Lattice vs brute-force Gaussian filtering on random points, with timings.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "mcn/permutohedral.hpp"

namespace mcn {

struct FilterDemoResult {
  std::size_t m = 0;
  std::size_t d = 0;
  std::size_t vertices = 0;
  double build_ms = 0;
  double filter_ms = 0;
  double oracle_ms = 0;
  double rel_l2 = 0;           // normalized lattice vs normalized oracle
  double constant_error = 0;   // max |filter(c) - c|
  double linearity_error = 0;  // relative L2 of filter(a v + w) vs a filter(v) + filter(w)
};

// Coordinates uniform in [0, scale)^d, values uniform in [0, 1).
inline FeaturePoints uniform_points(std::size_t m, std::size_t d, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeaturePoints pts(m, d);
  for (auto& c : pts.coords) c = static_cast<float>(scale * u(rng));
  return pts;
}

inline FilterDemoResult run_filter_demo(std::size_t m, std::size_t d, std::uint64_t seed, double scale = 1.0,
                                        std::size_t channels = 3) {
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  std::mt19937_64 rng(seed);
  const FeaturePoints pts = uniform_points(m, d, scale, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(m * channels), w(m * channels);
  for (auto& x : v) x = u(rng);
  for (auto& x : w) x = u(rng);

  FilterDemoResult r;
  r.m = m;
  r.d = d;
  const auto t0 = clock::now();
  const auto lat = PermutohedralLattice::build(pts);
  const auto t1 = clock::now();
  const auto approx = lattice_filter<double>(lat, v, channels, true);
  const auto t2 = clock::now();
  const auto exact = gaussian_filter_bruteforce<double>(pts, v, channels, true);
  const auto t3 = clock::now();
  r.vertices = lat.vertex_count();
  r.build_ms = ms(t0, t1);
  r.filter_ms = ms(t1, t2);
  r.oracle_ms = ms(t2, t3);
  r.rel_l2 = relative_l2<double>(approx, exact);

  const std::vector<double> c(m * channels, 2.5);
  for (double x : lattice_filter<double>(lat, c, channels, true)) r.constant_error = std::max(r.constant_error, std::abs(x - 2.5));

  const double a = -1.75;
  std::vector<double> mix(m * channels);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * v[i] + w[i];
  const auto lhs = lattice_filter<double>(lat, mix, channels, false);
  const auto fv = lattice_filter<double>(lat, v, channels, false), fw = lattice_filter<double>(lat, w, channels, false);
  std::vector<double> rhs(m * channels);
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * fv[i] + fw[i];
  r.linearity_error = relative_l2<double>(lhs, rhs);
  return r;
}

}  // namespace mcn
