// Command-line front end: train, eval, analyze-rf, filter-demo, gradcheck,
// mpn-demo. Exit codes: 0 ok, 1 usage or config error, 2 numerical failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mcn/checkpoint.hpp"
#include "mcn/filter_demo.hpp"
#include "mcn/gradcheck_suite.hpp"
#include "mcn/image_io.hpp"
#include "mcn/mpn_demo.hpp"
#include "mcn/train.hpp"

namespace fs = std::filesystem;
using namespace mcn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::optional<std::string> variant;
  std::optional<std::size_t> steps;
  std::optional<bool> deterministic;
};

// Config file (or built-in defaults), then flag overrides.
PipelineConfig resolve_config(const CommonFlags& f) {
  KeyValues kvs;
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw ConfigError("config file not found: " + f.config);
    kvs = read_key_values(f.config);
  }
  if (f.seed) kvs.emplace_back("seed", std::to_string(*f.seed));
  if (f.variant) kvs.emplace_back("variant", *f.variant);
  if (f.steps) kvs.emplace_back("steps", std::to_string(*f.steps));
  if (f.deterministic) kvs.emplace_back("deterministic", *f.deterministic ? "true" : "false");
  return PipelineConfig::from_key_values(kvs);
}

// <out>/<YYYYmmdd-HHMMSS>, with -1, -2, ... appended on collision.
fs::path make_run_dir(const fs::path& out) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::create_directories(out);
  fs::path dir = out / stamp;
  for (int i = 1; fs::exists(dir); ++i) dir = out / (std::string(stamp) + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool with_training) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--seed", f.seed, "override the seed");
  cmd->add_option("--variant", f.variant, "plain, long-skip, short-skip, mcn or mcn-long-skip")
      ->check(CLI::IsMember({"plain", "long-skip", "short-skip", "mcn", "mcn-long-skip"}));
  if (with_training) {
    cmd->add_option("--out", f.out, "directory that receives the run directory");
    cmd->add_option("--steps", f.steps, "override the number of training steps");
    cmd->add_option("--deterministic", f.deterministic, "true or false");
  }
}

int cmd_train(const CommonFlags& f) {
  const PipelineConfig cfg = resolve_config(f);
  const fs::path dir = make_run_dir(f.out);
  write_text(dir / "config.cfg", to_string(cfg));

  SegmentationModel<float> model(cfg);
  const auto data = training_set(cfg);
  std::ofstream log(dir / "train_log.tsv", std::ios::binary);
  if (!log) throw IoError("cannot write " + (dir / "train_log.tsv").string());
  log << kTrainLogHeader;
  const std::size_t report = std::max<std::size_t>(1, cfg.eval_every);
  const auto result = train(model, data, [&](const TrainRow& row) {
    log << format_row(row);
    if ((row.iter + 1) % report == 0) std::cerr << format_row(row);
  });
  log.close();
  save_checkpoint(dir / "checkpoint", model);

  const auto conf = evaluate(model, data, cfg.eval_scales);
  std::cout << "run_dir\t" << dir.string() << "\n"
            << "steps\t" << result.rows.size() << "\n"
            << "train_meanIU\t" << conf.mean_iu() << "\n"
            << "train_pixelAcc\t" << conf.pixel_acc() << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, std::size_t count) {
  if (!fs::exists(fs::path(checkpoint) / kManifestName))
    throw ConfigError("checkpoint not found: " + checkpoint);
  auto model = load_checkpoint(checkpoint);
  PipelineConfig cfg = model.config();
  if (!f.config.empty() || f.seed) {
    // Data and evaluation keys may be overridden; the architecture comes from the checkpoint.
    const PipelineConfig o = resolve_config(f);
    cfg.seed = o.seed;
    cfg.eval_scales = o.eval_scales;
  }
  if (count == 0) count = cfg.data_count;
  const auto train_set = synth_dataset(cfg.seed, cfg.data_count, cfg.arch.num_classes, cfg.image_size,
                                       cfg.image_size, cfg.synth);
  const auto held_out = synth_dataset(splitmix64(cfg.seed ^ 0x76616cULL), count, cfg.arch.num_classes,
                                      cfg.image_size, cfg.image_size, cfg.synth);
  std::printf("split\tvariant\tmeanIU\tpixelAcc\n");
  for (const auto& [name, set] : {std::pair{"train", &train_set}, std::pair{"held-out", &held_out}}) {
    const auto conf = evaluate(model, *set, cfg.eval_scales);
    std::printf("%s\t%s\t%.4f\t%.2f%%\n", name, variant_name(cfg.arch.variant).c_str(), conf.mean_iu(),
                100.0 * conf.pixel_acc());
  }
  return 0;
}

int cmd_analyze_rf(const CommonFlags& f) {
  const PipelineConfig cfg = resolve_config(f);
  std::mt19937_64 rng(cfg.seed);
  auto net = build_architecture<float>(cfg.arch, rng);
  std::printf("layer\tkernel\trate\treceptive_field\tparameters\n");
  std::size_t total = 0;
  for (const auto& r : net.layer_report()) {
    std::printf("%s\t%zu\t%zu\t%zu\t%zu\n", r.name.c_str(), r.kernel, r.rate, r.receptive_field, r.parameters);
    total += r.parameters;
  }
  std::printf("total\t-\t-\t%zu\t%zu\n", net.receptive_field(), total);
  return 0;
}

int cmd_filter_demo(std::size_t m, std::size_t d, std::uint64_t seed, double scale) {
  const auto r = run_filter_demo(m, d, seed, scale);
  std::printf("m\td\tvertices\tbuild_ms\tfilter_ms\toracle_ms\trel_l2\tconstant_err\tlinearity_err\n");
  std::printf("%zu\t%zu\t%zu\t%.3f\t%.3f\t%.3f\t%.6f\t%.3g\t%.3g\n", r.m, r.d, r.vertices, r.build_ms, r.filter_ms,
              r.oracle_ms, r.rel_l2, r.constant_error, r.linearity_error);
  return r.rel_l2 < 0.1 ? 0 : kExitNumeric;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed) {
  bool any = false, ok = true;
  std::printf("op\tmax_rel_error\ttolerance\tstatus\n");
  for (auto& c : gradcheck_cases(seed)) {
    if (scope != "all" && scope != c.op) continue;
    any = true;
    const GradCheckRow row{c.op, c.run(), c.tolerance};
    ok = ok && row.pass();
    std::printf("%s\t%.3g\t%.0e\t%s\n", row.op.c_str(), row.max_rel_error, row.tolerance,
                row.pass() ? "pass" : "fail");
  }
  if (!any) throw ConfigError("gradcheck: unknown scope '" + scope + "'");
  return ok ? 0 : kExitNumeric;
}

int cmd_mpn_demo(const MpnDemoConfig& cfg, const std::string& out) {
  const auto r = run_mpn_demo(cfg);
  std::printf("# sigma=%.4f classes=%zu iterations=%zu\n", r.sigma, cfg.classes, cfg.iterations);
  std::printf("iteration\tmeanIU\tpixelAcc\n");
  for (std::size_t i = 0; i < r.mean_iu.size(); ++i) std::printf("%zu\t%.6f\t%.6f\n", i, r.mean_iu[i], r.pixel_acc[i]);
  if (!out.empty()) {
    const fs::path dir(out);
    fs::create_directories(dir);
    write_ppm(dir / "image.ppm", r.sample.image);
    write_pgm(dir / "truth.pgm", r.sample.label);
    write_pgm(dir / "before.pgm", argmax_channels(r.input_scores));
    write_pgm(dir / "after.pgm", argmax_channels(r.output_scores));
    save_tensor(dir / "before_scores.mcnt", r.input_scores);
    save_tensor(dir / "after_scores.mcnt", r.output_scores);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed context networks for semantic segmentation"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, rf_flags;
  auto* train = app.add_subcommand("train", "train a pipeline on synthetic shapes");
  add_common(train, train_flags, true);

  std::string checkpoint;
  std::size_t eval_count = 0;
  auto* eval = app.add_subcommand("eval", "meanIU and pixel accuracy of a checkpoint");
  add_common(eval, eval_flags, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--count", eval_count, "held-out images (default: data_count)");

  auto* rf = app.add_subcommand("analyze-rf", "per-layer receptive field and parameter counts");
  add_common(rf, rf_flags, false);

  std::size_t fm = 400, fd = 5;
  std::uint64_t fseed = 1;
  double fscale = 1.0;
  auto* filter = app.add_subcommand("filter-demo", "permutohedral lattice vs brute-force Gaussian filter");
  filter->add_option("--m", fm, "number of points")->check(CLI::Range(std::size_t{1}, ExactGaussian::kMaxPoints));
  filter->add_option("--d", fd, "feature dimension")->check(CLI::Range(1, 16));
  filter->add_option("--seed", fseed, "random seed");
  filter->add_option("--scale", fscale, "feature scale")->check(CLI::PositiveNumber);

  std::string scope = "all";
  std::uint64_t gseed = 1;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  grad->add_option("--scope", scope, "'all' or one op name");
  grad->add_option("--seed", gseed, "random seed");

  MpnDemoConfig demo;
  std::string demo_out;
  auto* mpn = app.add_subcommand("mpn-demo", "hand-set MPN cleaning noisy ground-truth scores");
  mpn->add_option("--seed", demo.seed, "random seed");
  mpn->add_option("--classes", demo.classes, "number of classes")->check(CLI::Range(2, 64));
  mpn->add_option("--iterations", demo.iterations, "message passing iterations");
  mpn->add_option("--alpha", demo.alpha, "feedback gain");
  mpn->add_option("--out", demo_out, "directory for PPM/PGM and score dumps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_flags, checkpoint, eval_count);
    if (*rf) return cmd_analyze_rf(rf_flags);
    if (*filter) return cmd_filter_demo(fm, fd, fseed, fscale);
    if (*grad) return cmd_gradcheck(scope, gseed);
    if (*mpn) return cmd_mpn_demo(demo, demo_out);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
