#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "mcn/gradcheck.hpp"
#include "mcn/pairwise.hpp"
#include "mcn/permutohedral.hpp"

using namespace mcn;

namespace {

FeaturePoints random_points(std::size_t m, std::size_t d, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeaturePoints pts(m, d);
  for (auto& c : pts.coords) c = static_cast<float>(scale * u(rng));
  return pts;
}

std::vector<double> random_values(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(count);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST(LatticeBuild, SinglePointTouchesSimplex) {
  FeaturePoints pts(1, 5);
  pts.coords = {0.3f, -1.2f, 0.7f, 2.0f, 0.1f};
  const auto lat = PermutohedralLattice::build(pts);
  const auto verts = lat.vertices(0);
  EXPECT_EQ(std::set<std::int32_t>(verts.begin(), verts.end()).size(), 6u);
  EXPECT_EQ(lat.vertex_count(), 6u);
  double sum = 0;
  for (float w : lat.weights(0)) sum += w;
  EXPECT_NEAR(sum, 1.0, 1e-5);
}

TEST(LatticeBuild, IdenticalPointsShareSimplex) {
  FeaturePoints pts(2, 3);
  pts.coords = {0.4f, 1.5f, -0.25f, 0.4f, 1.5f, -0.25f};
  const auto lat = PermutohedralLattice::build(pts);
  EXPECT_TRUE(std::ranges::equal(lat.vertices(0), lat.vertices(1)));
  EXPECT_TRUE(std::ranges::equal(lat.weights(0), lat.weights(1)));
}

TEST(LatticeBuild, RebuildIsBitwiseIdentical) {
  const auto pts = random_points(100, 5, 1.0, 3);
  EXPECT_TRUE(PermutohedralLattice::build(pts) == PermutohedralLattice::build(pts));
}

TEST(LatticeBuild, RejectsNonFiniteWithIndex) {
  auto pts = random_points(10, 3, 1.0, 4);
  pts.point(7)[1] = std::nanf("");
  try {
    PermutohedralLattice::build(pts);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("point 7"), std::string::npos);
  }
}

TEST(LatticeBuild, BarycentricWeightsAreConvex) {
  for (std::size_t d : {1u, 2u, 3u, 5u, 7u}) {
    const auto pts = random_points(300, d, 6.0, 10 + d);
    const auto lat = PermutohedralLattice::build(pts);
    for (std::size_t p = 0; p < pts.count; ++p) {
      double sum = 0;
      for (float w : lat.weights(p)) {
        EXPECT_GE(w, -1e-6f);
        sum += w;
      }
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(LatticeBuild, KeysLieOnTheZeroSumLattice) {
  // All d+1 coordinates of a lattice key (the last is minus the sum of the
  // stored d) share one remainder modulo d+1.
  const std::size_t d = 5;
  const auto lat = PermutohedralLattice::build(random_points(200, d, 4.0, 5));
  for (std::size_t v = 0; v < lat.vertex_count(); ++v) {
    const auto k = lat.key(v);
    int sum = 0;
    for (auto c : k) sum += c;
    const int last = -sum;
    const int rem = ((last % 6) + 6) % 6;
    for (auto c : k) EXPECT_EQ(((c % 6) + 6) % 6, rem);
  }
}

TEST(LatticeFilter, CoincidentPointsAverage) {
  FeaturePoints pts(4, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 5; ++k) pts.point(i)[k] = 0.37f * static_cast<float>(k);
  const std::vector<double> v{1, 10, 2, 20, 3, 30, 6, 60};
  const auto out = lattice_filter<double>(PermutohedralLattice::build(pts), v, 2, true);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(out[i * 2], 3.0, 1e-9);
    EXPECT_NEAR(out[i * 2 + 1], 30.0, 1e-9);
  }
}

TEST(LatticeFilter, NormalizedPreservesConstants) {
  for (std::size_t m : {50u, 400u}) {
    const auto lat = PermutohedralLattice::build(random_points(m, 5, 3.0, m));
    const std::vector<float> v(m * 2, 4.25f);
    for (float x : lattice_filter<float>(lat, v, 2, true)) EXPECT_NEAR(x, 4.25f, 1e-4);
  }
}

TEST(LatticeFilter, IsLinear) {
  const std::size_t m = 300, c = 3;
  const auto lat = PermutohedralLattice::build(random_points(m, 5, 2.0, 6));
  const auto v = random_values(m * c, 7), w = random_values(m * c, 8);
  std::vector<double> combo(m * c);
  const double a = -2.5;
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * v[i] + w[i];
  for (bool normalize : {false, true}) {
    const auto fc = lattice_filter<double>(lat, combo, c, normalize);
    const auto fv = lattice_filter<double>(lat, v, c, normalize);
    const auto fw = lattice_filter<double>(lat, w, c, normalize);
    std::vector<double> expect(m * c);
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = a * fv[i] + fw[i];
    EXPECT_LT(relative_l2<double>(fc, expect), 1e-4);
  }
}

TEST(LatticeFilter, MatchesBruteForceOracle) {
  for (std::size_t m : {100u, 400u, 1000u}) {
    const auto pts = random_points(m, 5, 1.0, 100 + m);
    const auto v = random_values(m * 3, 200 + m);
    const auto approx = lattice_filter<double>(PermutohedralLattice::build(pts), v, 3, true);
    const auto exact = gaussian_filter_bruteforce<double>(pts, v, 3, true);
    EXPECT_LT(relative_l2<double>(approx, exact), 0.1) << "m=" << m;
  }
}

TEST(LatticeFilter, ErrorShrinksWithFeatureScale) {
  auto mean_error = [](double scale) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto pts = random_points(400, 5, scale, 300 + seed);
      const auto v = random_values(400 * 3, 400 + seed);
      total += relative_l2<double>(lattice_filter<double>(PermutohedralLattice::build(pts), v, 3, true),
                                   gaussian_filter_bruteforce<double>(pts, v, 3, true));
    }
    return total / 4;
  };
  const double coarse = mean_error(4.0), unit = mean_error(1.0), fine = mean_error(0.25);
  EXPECT_LT(unit, coarse);
  EXPECT_LT(fine, unit);
}

namespace {

double asymmetry(const PermutohedralLattice& lat) {
  const std::size_t m = lat.point_count();
  std::vector<double> A(m * m);
  std::vector<double> e(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    e[j] = 1.0;
    const auto col = lat.filter<double>(e, 1);
    for (std::size_t i = 0; i < m; ++i) A[i * m + j] = col[i];
    e[j] = 0.0;
  }
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      diff += (A[i * m + j] - A[j * m + i]) * (A[i * m + j] - A[j * m + i]);
      norm += A[i * m + j] * A[i * m + j];
    }
  return std::sqrt(diff / norm);
}

}  // namespace

TEST(LatticeFilter, OperatorIsNearlySymmetric) {
  std::mt19937_64 rng(9);
  const auto image = Tensor<float>::uniform(Shape{1, 3, 14, 14}, 0.f, 1.f, rng);
  for (std::size_t m : {50u, 200u}) {
    EXPECT_LT(asymmetry(PermutohedralLattice::build(random_points(m, 5, 1.5, 9))), 0.05);
    EXPECT_LT(asymmetry(PermutohedralLattice::build(bilateral_features(image, 0, {}))), 0.05);
  }
}

TEST(LatticeFilter, OrderedBlurIsOnlyApproximatelySymmetric) {
  const double a = asymmetry(PermutohedralLattice::build(random_points(200, 5, 0.25, 9), false));
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 0.05);
}

TEST(LatticeFilter, ReverseBlurIsTheAdjoint) {
  const std::size_t m = 250, c = 2;
  const auto lat = PermutohedralLattice::build(random_points(m, 4, 2.0, 11), false);
  const auto v = random_values(m * c, 12), u = random_values(m * c, 13);
  const auto av = lat.filter<double>(v, c, false);
  const auto atu = lat.filter<double>(u, c, true);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < m * c; ++i) {
    lhs += av[i] * u[i];
    rhs += v[i] * atu[i];
  }
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(LatticeFilter, RowCountMismatch) {
  const auto lat = PermutohedralLattice::build(random_points(10, 2, 1.0, 1));
  EXPECT_THROW(lat.filter<float>(std::vector<float>(11), 1), ShapeError);
}

TEST(BruteForce, SinglePointIsIdentity) {
  FeaturePoints pts(1, 3);
  const std::vector<double> v{2.5, -1.0};
  EXPECT_EQ(gaussian_filter_bruteforce<double>(pts, v, 2, false), v);
}

TEST(BruteForce, DistantPointsKeepOwnValues) {
  FeaturePoints pts(2, 2);
  pts.coords = {0.f, 0.f, 1e4f, 0.f};
  const std::vector<double> v{1.0, 7.0};
  const auto out = gaussian_filter_bruteforce<double>(pts, v, 1, false);
  EXPECT_NEAR(out[0], 1.0, 1e-12);
  EXPECT_NEAR(out[1], 7.0, 1e-12);
}

TEST(BruteForce, SwapSymmetry) {
  FeaturePoints pts(3, 2);
  pts.coords = {-1.f, 0.f, 1.f, 0.f, 0.f, 5.f};
  const std::vector<double> v{3.0, 3.0, -2.0};
  const auto out = gaussian_filter_bruteforce<double>(pts, v, 1, true);
  EXPECT_NEAR(out[0], out[1], 1e-12);
}

TEST(BruteForce, SizeGate) {
  FeaturePoints pts(5001, 1);
  EXPECT_THROW(ExactGaussian{pts}, NumericError);
}

TEST(PairwiseFilter, GradientExactBackend) {
  std::mt19937_64 rng(21);
  const auto image = Tensor<double>::uniform(Shape{2, 3, 5, 4}, 0.0, 1.0, rng);
  const auto bank = BilateralFilterBank::build(image, {2.0, 40.0}, FilterBackend::Exact);
  const auto x = Tensor<double>::normal(Shape{2, 3, 5, 4}, 1.0, rng);
  for (bool normalize : {false, true}) {
    auto op = [&](Tape<double>&, Var<double> v) { return pairwise_filter(v, bank, normalize); };
    EXPECT_LT(finite_diff_check(op, x, 1e-3).max_rel_error, 1e-3);
  }
}

TEST(PairwiseFilter, GradientLatticeBackend) {
  std::mt19937_64 rng(22);
  const auto image = Tensor<double>::uniform(Shape{1, 3, 8, 8}, 0.0, 1.0, rng);
  const auto bank = BilateralFilterBank::build(image, {3.0, 60.0}, FilterBackend::Lattice);
  const auto x = Tensor<double>::normal(Shape{1, 2, 8, 8}, 1.0, rng);
  for (bool normalize : {false, true}) {
    auto op = [&](Tape<double>&, Var<double> v) { return pairwise_filter(v, bank, normalize); };
    EXPECT_LT(finite_diff_check(op, x, 1e-3).max_rel_error, 5e-2);
  }
}

TEST(PairwiseFilter, RejectsResolutionMismatch) {
  const auto bank = BilateralFilterBank::build(Tensor<float>(Shape{1, 3, 4, 4}), {});
  Tape<float> tape;
  EXPECT_THROW(pairwise_filter(tape.constant(Tensor<float>(Shape{1, 2, 4, 5})), bank, true), ShapeError);
}
