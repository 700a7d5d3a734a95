#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mcn/gradcheck.hpp"
#include "mcn/mpn.hpp"

using namespace mcn;

namespace {

MessagePassingConfig exact_cfg(std::size_t n, std::size_t ns, std::size_t t = 3) {
  MessagePassingConfig c;
  c.classes = n;
  c.reduced = ns;
  c.iterations = t;
  c.backend = FilterBackend::Exact;
  return c;
}

// Normalized bilateral filter of one item, evaluated pixel by pixel.
std::vector<double> hand_filter(const Tensor<double>& image, const std::vector<double>& values, std::size_t h,
                                std::size_t w, BilateralBandwidth bw) {
  const std::size_t m = h * w;
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double num = 0, den = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double dy = (double(i / w) - double(j / w)) / bw.spatial;
      const double dx = (double(i % w) - double(j % w)) / bw.spatial;
      double d2 = dx * dx + dy * dy;
      for (std::size_t c = 0; c < 3; ++c) {
        const double dc = 255.0 * (image.at(0, c, i / w, i % w) - image.at(0, c, j / w, j % w)) / bw.color;
        d2 += dc * dc;
      }
      const double k = std::exp(-0.5 * d2);
      num += k * values[j];
      den += k;
    }
    out[i] = num / den;
  }
  return out;
}

}  // namespace

TEST(Mpn, ZeroExpandIsResidualIdentity) {
  std::mt19937_64 rng(1);
  MpnParams<float> p(exact_cfg(4, 2), rng);
  p.expand.set_zero();
  const auto image = Tensor<float>::uniform(Shape{1, 3, 6, 6}, 0.f, 1.f, rng);
  const auto s0 = Tensor<float>::normal(Shape{1, 4, 6, 6}, 1.f, rng);
  Tape<float> tape;
  auto si = tape.constant(Tensor<float>::normal(Shape{1, 4, 6, 6}, 3.f, rng));
  EXPECT_EQ(mpn_iteration(tape, si, tape.constant(s0), image, p).value(), s0);
  for (std::size_t t : {1u, 2u, 3u}) {
    p.cfg.iterations = t;
    EXPECT_EQ(mpn_run(tape, tape.constant(s0), image, p).value(), s0);
  }
}

TEST(Mpn, HandEvaluatedTwoClassStep) {
  std::mt19937_64 rng(2);
  MpnParams<double> p(exact_cfg(2, 1), rng);
  p.reduce.weight.value = Tensor<double>(Shape{1, 2, 1, 1}, std::vector<double>{1.0, -1.0});
  p.reduce.bias.value = Tensor<double>(Shape{1, 1, 1, 1}, 0.5);
  p.expand.set_zero();
  // Center taps only, plus one off-center tap to exercise the 3x3 wiring.
  p.expand.weight.value.at(0, 0, 1, 1) = 2.0;   // R -> class 0
  p.expand.weight.value.at(1, 1, 1, 1) = -1.0;  // F -> class 1
  p.expand.weight.value.at(0, 1, 1, 2) = 0.25;  // F right neighbor -> class 0
  p.expand.bias.value = Tensor<double>(Shape{1, 2, 1, 1}, std::vector<double>{0.1, -0.2});

  const Tensor<double> image(Shape{1, 3, 2, 2}, std::vector<double>{0.1, 0.9, 0.1, 0.8, 0.2, 0.7, 0.2, 0.9, 0.3,
                                                                     0.6, 0.3, 0.5});
  const Tensor<double> s0(Shape{1, 2, 2, 2}, std::vector<double>{1, 0, 0, 1, 0, 1, 1, 0});
  const Tensor<double> si(Shape{1, 2, 2, 2}, std::vector<double>{0.3, -0.2, 1.5, 0.7, -0.4, 0.9, 0.0, 0.2});

  std::vector<double> r(4);
  for (std::size_t q = 0; q < 4; ++q) r[q] = si[q] - si[4 + q] + 0.5;
  const auto f = hand_filter(image, r, 2, 2, p.cfg.bandwidth);
  std::vector<double> expect(8);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) {
      const std::size_t q = y * 2 + x;
      const double right = x + 1 < 2 ? f[q + 1] : 0.0;
      expect[q] = s0[q] + 0.1 + 2.0 * r[q] + 0.25 * right;
      expect[4 + q] = s0[4 + q] - 0.2 - f[q];
    }

  Tape<double> tape;
  const auto out = mpn_iteration(tape, tape.constant(si), tape.constant(s0), image, p).value();
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[i], expect[i], 1e-9) << i;
}

TEST(Mpn, AdeScaleChannelCounts) {
  std::mt19937_64 rng(3);
  MessagePassingConfig cfg;
  cfg.classes = 150;
  cfg.reduced = 32;
  MpnParams<float> p(cfg, rng);
  EXPECT_EQ(p.reduce.c_out(), 32u);
  EXPECT_EQ(p.expand.c_in(), 64u);
  const auto image = Tensor<float>::uniform(Shape{1, 3, 4, 4}, 0.f, 1.f, rng);
  Tape<float> tape;
  auto out = mpn_run(tape, tape.constant(Tensor<float>::normal(Shape{1, 150, 4, 4}, 1.f, rng)), image, p);
  EXPECT_EQ(out.shape(), (Shape{1, 150, 4, 4}));
  EXPECT_EQ(cfg.iterations, 3u);
}

TEST(Mpn, ZeroIterationsReturnsInputBitwise) {
  std::mt19937_64 rng(4);
  MpnParams<float> p(exact_cfg(3, 2, 0), rng);
  const auto s0 = Tensor<float>::normal(Shape{2, 3, 5, 5}, 1.f, rng);
  Tape<float> tape;
  EXPECT_EQ(mpn_run(tape, tape.constant(s0), Tensor<float>(Shape{2, 3, 5, 5}), p).value(), s0);
}

TEST(Mpn, OneIterationEqualsSingleStep) {
  std::mt19937_64 rng(5);
  MpnParams<float> p(exact_cfg(3, 2, 1), rng);
  const auto image = Tensor<float>::uniform(Shape{1, 3, 5, 5}, 0.f, 1.f, rng);
  Tape<float> tape;
  auto s0 = tape.constant(Tensor<float>::normal(Shape{1, 3, 5, 5}, 1.f, rng));
  EXPECT_EQ(mpn_run(tape, s0, image, p).value(), mpn_iteration(tape, s0, s0, image, p).value());
}

TEST(Mpn, LatticePathAgreesWithOracle) {
  std::mt19937_64 rng(6);
  auto cfg = exact_cfg(5, 3, 3);
  MpnParams<double> p(cfg, rng);
  // Two-region image with mild noise, the kind of input the filter sees.
  Tensor<double> image(Shape{1, 3, 20, 20});
  std::normal_distribution<double> noise(0.0, 0.03);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = (x < 10) != (y < 7) ? 0.2 + 0.3 * double(c) : 0.8 - 0.2 * double(c);
        image.at(0, c, y, x) = std::clamp(base + noise(rng), 0.0, 1.0);
      }
  const auto s0 = Tensor<double>::normal(Shape{1, 5, 20, 20}, 1.0, rng);
  Tape<double> tape;
  const auto exact = mpn_run(tape, tape.constant(s0), image, p).value();
  p.cfg.backend = FilterBackend::Lattice;
  const auto approx = mpn_run(tape, tape.constant(s0), image, p).value();
  EXPECT_LT(relative_l2<double>(approx.data(), exact.data()), 0.1);
}

TEST(Mpn, Errors) {
  std::mt19937_64 rng(7);
  EXPECT_THROW(MpnParams<float>(exact_cfg(3, 3), rng), ConfigError);
  EXPECT_THROW(MpnParams<float>(exact_cfg(3, 0), rng), ConfigError);
  MpnParams<float> p(exact_cfg(3, 2), rng);
  Tape<float> tape;
  auto bad = tape.constant(Tensor<float>(Shape{1, 4, 4, 4}));
  auto good = tape.constant(Tensor<float>(Shape{1, 3, 4, 4}));
  EXPECT_THROW(mpn_iteration(tape, bad, bad, Tensor<float>(Shape{1, 3, 4, 4}), p), ShapeError);
  EXPECT_THROW(mpn_iteration(tape, good, good, Tensor<float>(Shape{1, 3, 4, 5}), p), ShapeError);
}

TEST(Mpn, GradientThroughOneIterationWithOracle) {
  std::mt19937_64 rng(8);
  MpnParams<double> p(exact_cfg(4, 2, 1), rng);
  const auto image = Tensor<double>::uniform(Shape{1, 3, 5, 5}, 0.0, 1.0, rng);
  const auto bank = build_bank(image, p.cfg);
  const auto s0 = Tensor<double>::normal(Shape{1, 4, 5, 5}, 1.0, rng);
  auto op = [&](Tape<double>& t, Var<double> v) { return mpn_iteration(t, v, t.constant(s0), bank, p); };
  EXPECT_LT(finite_diff_check(op, Tensor<double>::normal(s0.shape(), 1.0, rng), 1e-3).max_rel_error, 1e-3);
  const auto si = Tensor<double>::normal(s0.shape(), 1.0, rng);
  auto build = [&](Tape<double>& t) { return mpn_iteration(t, t.constant(si), t.constant(s0), bank, p); };
  EXPECT_LT(finite_diff_check_parameter(build, p.reduce.weight, 1e-3).max_rel_error, 1e-3);
  EXPECT_LT(finite_diff_check_parameter(build, p.expand.weight, 1e-3).max_rel_error, 1e-3);
}

TEST(Mpn, GradientThroughOneIterationWithLattice) {
  std::mt19937_64 rng(9);
  auto cfg = exact_cfg(4, 2, 1);
  cfg.backend = FilterBackend::Lattice;
  MpnParams<double> p(cfg, rng);
  const auto image = Tensor<double>::uniform(Shape{1, 3, 6, 6}, 0.0, 1.0, rng);
  const auto bank = build_bank(image, p.cfg);
  const auto s0 = Tensor<double>::normal(Shape{1, 4, 6, 6}, 1.0, rng);
  auto op = [&](Tape<double>& t, Var<double> v) { return mpn_iteration(t, v, t.constant(s0), bank, p); };
  EXPECT_LT(finite_diff_check(op, Tensor<double>::normal(s0.shape(), 1.0, rng), 1e-3).max_rel_error, 5e-2);
}

TEST(CrfRnn, ZeroMergedReturnsUnary) {
  std::mt19937_64 rng(10);
  CrfRnnParams<float> p(exact_cfg(3, 2), rng);
  p.merged.set_zero();
  const auto image = Tensor<float>::uniform(Shape{1, 3, 4, 4}, 0.f, 1.f, rng);
  const auto u = Tensor<float>::normal(Shape{1, 3, 4, 4}, 1.f, rng);
  Tape<float> tape;
  auto si = tape.constant(Tensor<float>::normal(u.shape(), 1.f, rng));
  EXPECT_EQ(crf_rnn_step(tape, si, tape.constant(u), build_bank(image, p.cfg), p).value(), u);
}

TEST(CrfRnn, UniformBeliefsShiftByPerClassConstant) {
  std::mt19937_64 rng(11);
  CrfRnnParams<double> p(exact_cfg(3, 2), rng);
  const Tensor<double> image(Shape{1, 3, 4, 4}, 0.5);
  const auto u = Tensor<double>::normal(Shape{1, 3, 4, 4}, 1.0, rng);
  Tape<double> tape;
  const auto out = crf_rnn_step(tape, tape.constant(Tensor<double>(u.shape(), 2.0)), tape.constant(u),
                                build_bank(image, p.cfg), p)
                       .value();
  for (std::size_t c = 0; c < 3; ++c) {
    const double d0 = out.at(0, c, 0, 0) - u.at(0, c, 0, 0);
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(out.at(0, c, y, x) - u.at(0, c, y, x), d0, 1e-12);
  }
}

TEST(CrfRnn, FlippedPixelMovesTowardNeighbors) {
  std::mt19937_64 rng(12);
  CrfRnnParams<double> p(exact_cfg(2, 1), rng);
  p.merged.set_zero();
  p.merged.weight.value.at(0, 0, 0, 0) = -1.0;
  p.merged.weight.value.at(1, 1, 0, 0) = -1.0;
  const Tensor<double> image(Shape{1, 3, 3, 3}, 0.4);
  Tensor<double> u(Shape{1, 2, 3, 3});
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) u.at(0, 0, y, x) = 2.0;
  u.at(0, 0, 1, 1) = 0.0;
  u.at(0, 1, 1, 1) = 2.0;
  Tape<double> tape;
  const auto out = crf_rnn_step(tape, tape.constant(u), tape.constant(u), build_bank(image, p.cfg), p).value();

  const auto q = softmax_channels(u);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> plane(q.plane(0, c).begin(), q.plane(0, c).end());
    const auto m = hand_filter(image, plane, 3, 3, p.cfg.bandwidth);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(out.at(0, c, i / 3, i % 3), u.at(0, c, i / 3, i % 3) + m[i], 1e-9);
  }
  const double before = u.at(0, 1, 1, 1) - u.at(0, 0, 1, 1);
  const double after = out.at(0, 1, 1, 1) - out.at(0, 0, 1, 1);
  EXPECT_LT(after, before);
}

TEST(MemoryEstimate, FilteredTermScalesWithReducedChannels) {
  const auto same_m = memory_estimate(21, 21, 64, 64, 3, PassingVariant::Mpn);
  const auto same_c = memory_estimate(21, 21, 64, 64, 3, PassingVariant::CrfRnn);
  EXPECT_EQ(same_m.filtered_bytes, same_c.filtered_bytes);

  const auto mpn = memory_estimate(150, 32, 64, 64, 3, PassingVariant::Mpn);
  const auto crf = memory_estimate(150, 32, 64, 64, 3, PassingVariant::CrfRnn);
  EXPECT_EQ(mpn.filtered_channels, 32u);
  EXPECT_EQ(crf.filtered_channels, 150u);
  EXPECT_EQ(mpn.filtered_bytes * 150, crf.filtered_bytes * 32);

  for (auto v : {PassingVariant::Mpn, PassingVariant::CrfRnn}) {
    const auto small = memory_estimate(150, 32, 32, 32, 3, v);
    const auto big = memory_estimate(150, 32, 64, 64, 3, v);
    EXPECT_EQ(big.total(), 4 * small.total());
  }
}
