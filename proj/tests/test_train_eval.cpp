#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "mcn/checkpoint.hpp"
#include "mcn/image_io.hpp"
#include "mcn/train.hpp"

using namespace mcn;

namespace {

const std::filesystem::path kConfigDir = MCN_CONFIG_DIR;

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mcn_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Small enough to run a few steps in well under a second.
PipelineConfig tiny_config() {
  PipelineConfig c;
  c.trunk.widths = {4, 8, 8};
  c.trunk.fc_width = 8;
  c.arch.input_channels = 4;
  c.arch.widths = {4, 4, 4, 4, 4, 4};
  c.refine_width = 4;
  c.data_count = 4;
  c.image_size = 32;
  c.aug.crop = 32;
  c.batch = 2;
  c.steps = 3;
  return c;
}

Parameter<double> scalar_param(double v) {
  Tensor<double> t(Shape{1, 1, 1, 1});
  t[0] = v;
  return Parameter<double>("x", t);
}

}  // namespace

// ---- optimizer ----

TEST(LrSchedule, StepDecay) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 0.01, 0.1, 50000), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule(49999, 0.01, 0.1, 50000), 0.01);
  EXPECT_NEAR(lr_schedule(50000, 0.01, 0.1, 50000), 0.001, 1e-15);
  EXPECT_NEAR(lr_schedule(149999, 0.01, 0.1, 50000), 1e-4, 1e-16);
  EXPECT_DOUBLE_EQ(lr_schedule(123, 0.5, 0.1, 0), 0.5);
}

TEST(Nesterov, ZeroMomentumIsPlainSgd) {
  Nesterov<double> opt(SgdConfig{0.1, 0.1, 1000, 0.0});
  auto p = scalar_param(2.0);
  double x = 2.0;
  for (int i = 0; i < 4; ++i) {
    p.grad[0] = 3.0 * p.value[0];
    opt.step({&p}, i);
    x -= 0.1 * 3.0 * x;
    EXPECT_DOUBLE_EQ(p.value[0], x);
  }
}

TEST(Nesterov, MatchesClassicalLookaheadOnQuadratic) {
  // f(x) = a x^2 / 2. Classical form: v' = mu v - lr f'(x + mu v), x' = x + v'.
  // The stored parameter corresponds to x + mu v.
  const double a = 1.7, lr = 0.1, mu = 0.9;
  Nesterov<double> opt(SgdConfig{lr, 0.1, 1000, mu});
  auto p = scalar_param(1.5);
  double x = 1.5, v = 0.0;
  for (int i = 0; i < 5; ++i) {
    p.grad[0] = a * p.value[0];
    opt.step({&p}, i);
    const double vn = mu * v - lr * a * (x + mu * v);
    x += vn;
    v = vn;
    EXPECT_NEAR(p.value[0], x + mu * v, 1e-12) << "step " << i;
  }
}

TEST(Nesterov, SkipsFrozenParametersAndDecaysVelocity) {
  Nesterov<double> opt(SgdConfig{0.1, 0.1, 1000, 0.5});
  auto p = scalar_param(1.0), q = scalar_param(1.0);
  q.frozen = true;
  p.grad[0] = 1.0;
  q.grad[0] = 1.0;
  opt.step({&p, &q}, 0);
  EXPECT_EQ(q.value[0], 1.0);
  const double v0 = opt.velocity()[0][0];
  p.grad[0] = 0.0;
  opt.step({&p, &q}, 1);
  EXPECT_DOUBLE_EQ(opt.velocity()[0][0], 0.5 * v0);
}

// ---- metrics ----

TEST(Metrics, PerfectPrediction) {
  LabelMap gt(1, 2, 3);
  gt.data = {0, 1, 2, 2, 1, 0};
  ConfusionMatrix c(3);
  c.accumulate(gt, gt);
  EXPECT_DOUBLE_EQ(c.pixel_acc(), 1.0);
  EXPECT_DOUBLE_EQ(c.mean_iu(), 1.0);
}

TEST(Metrics, HandComputedConfusion) {
  // gt 0: predicted 0 three times, 1 once; gt 1: 0 once, 1 three times.
  ConfusionMatrix c(2);
  c.at(0, 0) = 3;
  c.at(0, 1) = 1;
  c.at(1, 0) = 1;
  c.at(1, 1) = 3;
  EXPECT_DOUBLE_EQ(c.pixel_acc(), 0.75);
  EXPECT_DOUBLE_EQ(c.mean_iu(), 0.6);
}

TEST(Metrics, ConstantPredictionOnBalancedClasses) {
  LabelMap gt(1, 1, 4), pred(1, 1, 4, 0);
  gt.data = {0, 0, 1, 1};
  ConfusionMatrix c(2);
  c.accumulate(pred, gt);
  EXPECT_DOUBLE_EQ(c.pixel_acc(), 0.5);
  EXPECT_DOUBLE_EQ(c.mean_iu(), 0.25);
}

TEST(Metrics, AbsentClassesAreLeftOut) {
  LabelMap gt(1, 1, 2);
  gt.data = {0, 1};
  ConfusionMatrix c(4);
  c.accumulate(gt, gt);
  EXPECT_DOUBLE_EQ(c.mean_iu(), 1.0);
}

TEST(Metrics, IgnoreLabelAndOrderIndependence) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> cls(0, 2);
  std::vector<LabelMap> preds, gts;
  for (int i = 0; i < 5; ++i) {
    LabelMap p(1, 4, 4), g(1, 4, 4);
    for (auto& v : p.data) v = cls(rng);
    for (auto& v : g.data) v = cls(rng);
    g.data[0] = kIgnoreLabel;
    preds.push_back(p);
    gts.push_back(g);
  }
  ConfusionMatrix fwd(3), rev(3), split(3);
  for (int i = 0; i < 5; ++i) fwd.accumulate(preds[i], gts[i]);
  for (int i = 4; i >= 0; --i) rev.accumulate(preds[i], gts[i]);
  ConfusionMatrix half(3);
  for (int i = 0; i < 2; ++i) split.accumulate(preds[i], gts[i]);
  for (int i = 2; i < 5; ++i) half.accumulate(preds[i], gts[i]);
  split += half;
  EXPECT_EQ(fwd, rev);
  EXPECT_EQ(fwd, split);
  EXPECT_EQ(fwd.total(), 5u * 15u);
}

TEST(Metrics, Errors) {
  ConfusionMatrix c(2);
  EXPECT_THROW(c.pixel_acc(), NumericError);
  EXPECT_THROW(c.mean_iu(), NumericError);
  LabelMap a(1, 2, 2), b(1, 2, 3);
  EXPECT_THROW(c.accumulate(a, b), ShapeError);
  LabelMap bad(1, 2, 2, 5);
  EXPECT_THROW(c.accumulate(a, bad), ConfigError);
}

// ---- synthetic data ----

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth_dataset(7, 3, 3, 32, 32), b = synth_dataset(7, 3, 3, 32, 32);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(max_abs_diff(a[i].image, b[i].image), 0.0);
  }
  const auto c = synth_dataset(8, 1, 3, 32, 32);
  EXPECT_GT(max_abs_diff(a[0].image, c[0].image), 0.0);
}

TEST(Synth, LabelsAndRange) {
  SynthOptions opt;
  opt.min_shapes = opt.max_shapes = 1;
  const auto s = synth_sample(11, 2, 32, 32, opt);
  std::set<int> seen(s.label.data.begin(), s.label.data.end());
  EXPECT_EQ(seen, (std::set<int>{0, 1}));
  for (float v : s.image.data()) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
  EXPECT_THROW(synth_sample(1, 1, 32, 32), ConfigError);
}

// ---- augmentation ----

TEST(Augment, IdentityDecision) {
  const auto s = synth_sample(5, 3, 32, 32);
  const auto out = apply_augment(s, AugmentDecision{false, 1.0, 0, 0}, 32);
  EXPECT_EQ(out.label, s.label);
  EXPECT_LT(max_abs_diff(out.image, s.image), 1e-6);
}

TEST(Augment, FlipIsAnInvolution) {
  const auto s = synth_sample(6, 3, 16, 24);
  const auto f = flip_horizontal(s);
  EXPECT_EQ(f.label.at(0, 3, 0), s.label.at(0, 3, 23));
  const auto ff = flip_horizontal(f);
  EXPECT_EQ(ff.label, s.label);
  EXPECT_EQ(max_abs_diff(ff.image, s.image), 0.0);
}

TEST(Augment, KeepsLabelAlphabetAndPads) {
  const auto s = synth_sample(9, 4, 64, 64);
  std::set<int> alphabet(s.label.data.begin(), s.label.data.end());
  alphabet.insert(kIgnoreLabel);

  const auto shrunk = apply_augment(s, AugmentDecision{true, 0.5, 5, 7}, 64);
  EXPECT_EQ(shrunk.image.shape(), (Shape{1, 3, 64, 64}));
  std::size_t ignored = 0;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const int l = shrunk.label.at(0, y, x);
      EXPECT_TRUE(alphabet.count(l));
      const bool inside = y >= 5 && y < 37 && x >= 7 && x < 39;
      EXPECT_EQ(l == kIgnoreLabel, !inside);
      if (!inside) {
        ++ignored;
        EXPECT_EQ(shrunk.image.at(0, 0, y, x), 0.f);
      }
    }
  EXPECT_EQ(ignored, 64u * 64u - 32u * 32u);

  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto a = augment(s, AugmentConfig{}, rng);
    for (int l : a.label.data) EXPECT_TRUE(alphabet.count(l));
  }
}

// ---- config ----

TEST(Config, RoundTrip) {
  PipelineConfig c;
  c.seed = 42;
  c.arch.variant = Variant::ShortSkip;
  c.mpn = true;
  c.mpn_cfg.backend = FilterBackend::Exact;
  c.aug.scale_min = 0.6;
  c.eval_scales = {0.75, 1.0, 1.25};
  c.trunk.frozen = {0, 3};
  const PipelineConfig back = PipelineConfig::from_key_values(parse_key_values(to_string(c)));
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.arch, c.arch);
  EXPECT_EQ(to_string(back), to_string(c));
}

TEST(Config, ParserErrors) {
  EXPECT_THROW(parse_key_values("seed=1\nnot a pair\n"), ConfigError);
  try {
    parse_key_values("a=1\n\n# note\nbroken\n", "x.cfg");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:4"), std::string::npos);
  }
  EXPECT_THROW(PipelineConfig::from_key_values({{"no_such_key", "1"}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_key_values({{"steps", "-3"}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_key_values({{"variant", "dense"}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_key_values({{"rates", "1,2,3,8,16,32"}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_key_values({{"image_size", "60"}}), ConfigError);
}

TEST(Config, CommentsAndOverrides) {
  const auto kvs = parse_key_values("  seed = 3 # first\nseed=4\n\n");
  ASSERT_EQ(kvs.size(), 2u);
  EXPECT_EQ(kvs[0].second, "3");
  EXPECT_EQ(PipelineConfig::from_key_values(kvs).seed, 4u);
}

TEST(Config, ShippedDeskConfigLoads) {
  const auto c = load_config((kConfigDir / "desk.cfg").string());
  EXPECT_EQ(c.arch.variant, Variant::MCN);
  EXPECT_EQ(c.image_size, 64u);
  EXPECT_EQ(c.arch.num_classes, 3u);
  EXPECT_FALSE(c.synth.class_colors);
  SegmentationModel<float> model(c);
  EXPECT_GT(model.parameter_count(), 0u);
}

TEST(Config, FullScaleConstants) {
  const auto c = load_config((kConfigDir / "full_scale.cfg").string());
  EXPECT_DOUBLE_EQ(c.sgd.lr(0), 0.01);
  EXPECT_NEAR(c.sgd.lr(50000), 0.001, 1e-15);
  EXPECT_DOUBLE_EQ(c.sgd.momentum, 0.9);
  EXPECT_EQ(c.arch.widths, (std::vector<std::size_t>{256, 256, 512, 512, 1024, 1024}));
  EXPECT_EQ(c.arch.rates, (std::vector<std::size_t>{1, 2, 4, 8, 16, 32}));
  EXPECT_DOUBLE_EQ(c.aug.scale_min, 0.5);
  EXPECT_DOUBLE_EQ(c.aug.scale_max, 1.5);
  EXPECT_EQ(c.aug.crop, 448u);
  EXPECT_EQ(c.batch, 20u);
  EXPECT_EQ(c.mpn_cfg.iterations, 3u);
  EXPECT_EQ(c.mpn_cfg.reduced, 32u);
  EXPECT_EQ(c.arch.num_classes, 150u);
  EXPECT_EQ(PipelineConfig::from_key_values(parse_key_values(to_string(c))), c);
}

// ---- inference, training, persistence ----

TEST(Multiscale, SingleUnitScaleIsPlainInference) {
  SegmentationModel<float> model(tiny_config());
  const auto s = synth_sample(3, 3, 32, 32);
  const auto direct = model.predict(s.image);
  auto predict = [&](const Tensor<float>& x) { return model.predict(x); };
  EXPECT_LT(max_abs_diff(multiscale_infer<float>(predict, s.image, {1.0}, 8), direct), 1e-6);
  EXPECT_LT(max_abs_diff(multiscale_infer<float>(predict, s.image, {1.0, 1.0}, 8), direct), 1e-6);
  const auto multi = multiscale_infer<float>(predict, s.image, {0.5, 1.0, 1.5}, 8);
  EXPECT_EQ(multi.shape(), direct.shape());
  EXPECT_THROW(multiscale_infer<float>(predict, s.image, {}, 8), ConfigError);
}

TEST(Train, DeterministicRowsAndLogFormat) {
  const auto cfg = tiny_config();
  const auto data = training_set(cfg);
  SegmentationModel<float> a(cfg), b(cfg);
  const auto ra = train(a, data), rb = train(b, data);
  ASSERT_EQ(ra.rows.size(), 3u);
  for (std::size_t i = 0; i < ra.rows.size(); ++i) {
    EXPECT_EQ(ra.rows[i].iter, i);
    EXPECT_TRUE(std::isfinite(ra.rows[i].loss));
    EXPECT_EQ(format_row(ra.rows[i]), format_row(rb.rows[i]));
  }
  EXPECT_EQ(format_row(TrainRow{7, 0.01, 1.5, 0.25, 0.125}), "7\t0.01\t1.50000000\t0.250000\t0.125000\n");
  EXPECT_EQ(kTrainLogHeader, "iter\tlr\tloss\tpixelAcc\tmeanIU\n");
}

TEST(Train, NonFiniteLossNamesTheIteration) {
  const auto cfg = tiny_config();
  const auto data = training_set(cfg);
  SegmentationModel<float> model(cfg);
  for (auto* p : model.parameters()) p->value.fill(std::nanf(""));
  try {
    train(model, data);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripReproducesPredictions) {
  auto cfg = tiny_config();
  cfg.trunk.norm = true;
  const auto data = training_set(cfg);
  SegmentationModel<float> model(cfg);
  train(model, data);
  const auto dir = scratch("ckpt");
  save_checkpoint(dir, model);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.txt"));
  auto loaded = load_checkpoint(dir);
  EXPECT_EQ(loaded.config(), cfg);
  const auto saved = model.parameters(), restored = loaded.parameters();
  ASSERT_EQ(saved.size(), restored.size());
  for (std::size_t i = 0; i < saved.size(); ++i) EXPECT_EQ(max_abs_diff(saved[i]->value, restored[i]->value), 0.0);
  // Norm statistics are kept in double but stored as f32.
  EXPECT_LT(max_abs_diff(loaded.predict(data[0].image), model.predict(data[0].image)), 1e-5);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, Errors) {
  EXPECT_THROW(load_checkpoint(scratch("missing")), IoError);
  auto cfg = tiny_config();
  SegmentationModel<float> model(cfg);
  const auto dir = scratch("ckpt_bad");
  save_checkpoint(dir, model);
  const auto* p = model.parameters().front();
  save_tensor(dir / (p->name + ".mcnt"), Tensor<float>(Shape{1, 1, 1, 1}));
  EXPECT_THROW(load_checkpoint(dir), IoError);
  std::filesystem::remove_all(dir);
}

TEST(ImageIo, PnmRoundTrip) {
  const auto s = synth_sample(4, 3, 16, 20);
  const auto dir = scratch("pnm");
  std::filesystem::create_directories(dir);
  write_ppm(dir / "a.ppm", s.image);
  write_pgm(dir / "a.pgm", s.label);
  EXPECT_EQ(read_pgm(dir / "a.pgm"), s.label);
  EXPECT_LE(max_abs_diff(read_ppm(dir / "a.ppm"), s.image), 0.5 / 255 + 1e-6);
  EXPECT_THROW(read_pgm(dir / "a.ppm"), IoError);
  std::filesystem::remove_all(dir);
}
