#pragma once

// Flat UTF-8 key=value configuration. '#' starts a comment, blank lines are
// skipped, later keys override earlier ones.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mcn/augment.hpp"
#include "mcn/context.hpp"
#include "mcn/mpn.hpp"
#include "mcn/optim.hpp"
#include "mcn/synth.hpp"
#include "mcn/trunk.hpp"

namespace mcn {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline KeyValues parse_key_values(std::string_view text, const std::string& origin = "config") {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) +
                        "'");
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(detail::trim(line.substr(eq + 1))));
  }
  return out;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

// Scalar and list conversions. Errors name the key.
namespace kv {

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end || v.empty()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> to_strings(const std::string& v) {
  std::vector<std::string> out;
  std::string_view rest = v;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = detail::trim(rest.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

inline std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : to_strings(v)) out.push_back(static_cast<std::size_t>(to_uint(key, s)));
  return out;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : to_strings(v)) out.push_back(to_double(key, s));
  return out;
}

// Shortest representation that parses back to the same double.
inline std::string str(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}
inline std::string str(std::uint64_t v) { return std::to_string(v); }
inline std::string str(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>)
      out += xs[i];
    else
      out += str(xs[i]);
  }
  return out;
}

}  // namespace kv

inline std::string fuse_mode_name(FuseMode m) { return m == FuseMode::Sum ? "sum" : "concat"; }
inline FuseMode parse_fuse_mode(const std::string& s) {
  if (s == "sum") return FuseMode::Sum;
  if (s == "concat") return FuseMode::Concat;
  throw ConfigError("fuse_mode: expected sum or concat, got '" + s + "'");
}
inline std::string backend_name(FilterBackend b) { return b == FilterBackend::Lattice ? "lattice" : "exact"; }
inline FilterBackend parse_backend(const std::string& s) {
  if (s == "lattice") return FilterBackend::Lattice;
  if (s == "exact") return FilterBackend::Exact;
  throw ConfigError("mpn_backend: expected lattice or exact, got '" + s + "'");
}

// Everything needed to build, train and evaluate one pipeline.
struct PipelineConfig {
  std::uint64_t seed = 1;

  TrunkConfig trunk;
  std::vector<std::string> fuse_taps{"stage1", "stage2", "fc"};
  FuseMode fuse_mode = FuseMode::Sum;
  ArchitectureConfig arch;
  bool refine = true;
  std::size_t refine_width = 32;

  bool mpn = false;
  MessagePassingConfig mpn_cfg{};

  std::size_t data_count = 16;
  std::size_t image_size = 64;
  SynthOptions synth;

  bool augment = true;
  AugmentConfig aug;

  SgdConfig sgd{0.01, 0.1, 500, 0.9};
  std::size_t batch = 4;
  std::size_t steps = 2000;
  std::size_t eval_every = 100;
  double target_pixel_acc = 0.0;  // 0 disables early stopping
  std::vector<double> eval_scales{1.0};
  bool deterministic = true;

  KeyValues to_key_values() const {
    using namespace kv;
    return {
        {"seed", str(seed)},
        {"trunk_widths", join(std::vector<std::uint64_t>(trunk.widths.begin(), trunk.widths.end()))},
        {"trunk_convs", str(std::uint64_t{trunk.convs_per_stage})},
        {"trunk_fc_width", str(std::uint64_t{trunk.fc_width})},
        {"trunk_norm", str(trunk.norm)},
        {"trunk_frozen", join(std::vector<std::uint64_t>(trunk.frozen.begin(), trunk.frozen.end()))},
        {"fuse_taps", join(fuse_taps)},
        {"fuse_mode", fuse_mode_name(fuse_mode)},
        {"variant", variant_name(arch.variant)},
        {"input_channels", str(std::uint64_t{arch.input_channels})},
        {"widths", join(std::vector<std::uint64_t>(arch.widths.begin(), arch.widths.end()))},
        {"rates", join(std::vector<std::uint64_t>(arch.rates.begin(), arch.rates.end()))},
        {"num_classes", str(std::uint64_t{arch.num_classes})},
        {"refine", str(refine)},
        {"refine_width", str(std::uint64_t{refine_width})},
        {"mpn", str(mpn)},
        {"mpn_reduced", str(std::uint64_t{mpn_cfg.reduced})},
        {"mpn_iterations", str(std::uint64_t{mpn_cfg.iterations})},
        {"theta_alpha", str(mpn_cfg.bandwidth.spatial)},
        {"theta_beta", str(mpn_cfg.bandwidth.color)},
        {"mpn_backend", backend_name(mpn_cfg.backend)},
        {"data_count", str(std::uint64_t{data_count})},
        {"image_size", str(std::uint64_t{image_size})},
        {"shapes_min", str(std::uint64_t{synth.min_shapes})},
        {"shapes_max", str(std::uint64_t{synth.max_shapes})},
        {"class_colors", str(synth.class_colors)},
        {"augment", str(augment)},
        {"flip", str(aug.flip)},
        {"scale_min", str(aug.scale_min)},
        {"scale_max", str(aug.scale_max)},
        {"crop", str(std::uint64_t{aug.crop})},
        {"lr", str(sgd.base_lr)},
        {"lr_factor", str(sgd.factor)},
        {"lr_period", str(sgd.period)},
        {"momentum", str(sgd.momentum)},
        {"batch", str(std::uint64_t{batch})},
        {"steps", str(std::uint64_t{steps})},
        {"eval_every", str(std::uint64_t{eval_every})},
        {"target_pixel_acc", str(target_pixel_acc)},
        {"eval_scales", join(eval_scales)},
        {"deterministic", str(deterministic)},
    };
  }

  void set(const std::string& k, const std::string& v) {
    using namespace kv;
    auto sz = [&] { return static_cast<std::size_t>(to_uint(k, v)); };
    if (k == "seed") seed = to_uint(k, v);
    else if (k == "trunk_widths") trunk.widths = to_sizes(k, v);
    else if (k == "trunk_convs") trunk.convs_per_stage = sz();
    else if (k == "trunk_fc_width") trunk.fc_width = sz();
    else if (k == "trunk_norm") trunk.norm = to_bool(k, v);
    else if (k == "trunk_frozen") trunk.frozen = to_sizes(k, v);
    else if (k == "fuse_taps") fuse_taps = to_strings(v);
    else if (k == "fuse_mode") fuse_mode = parse_fuse_mode(v);
    else if (k == "variant") arch.variant = parse_variant(v);
    else if (k == "input_channels") arch.input_channels = sz();
    else if (k == "widths") arch.widths = to_sizes(k, v);
    else if (k == "rates") arch.rates = to_sizes(k, v);
    else if (k == "num_classes") arch.num_classes = sz();
    else if (k == "refine") refine = to_bool(k, v);
    else if (k == "refine_width") refine_width = sz();
    else if (k == "mpn") mpn = to_bool(k, v);
    else if (k == "mpn_reduced") mpn_cfg.reduced = sz();
    else if (k == "mpn_iterations") mpn_cfg.iterations = sz();
    else if (k == "theta_alpha") mpn_cfg.bandwidth.spatial = to_double(k, v);
    else if (k == "theta_beta") mpn_cfg.bandwidth.color = to_double(k, v);
    else if (k == "mpn_backend") mpn_cfg.backend = parse_backend(v);
    else if (k == "data_count") data_count = sz();
    else if (k == "image_size") image_size = sz();
    else if (k == "shapes_min") synth.min_shapes = sz();
    else if (k == "shapes_max") synth.max_shapes = sz();
    else if (k == "class_colors") synth.class_colors = to_bool(k, v);
    else if (k == "augment") augment = to_bool(k, v);
    else if (k == "flip") aug.flip = to_bool(k, v);
    else if (k == "scale_min") aug.scale_min = to_double(k, v);
    else if (k == "scale_max") aug.scale_max = to_double(k, v);
    else if (k == "crop") aug.crop = sz();
    else if (k == "lr") sgd.base_lr = to_double(k, v);
    else if (k == "lr_factor") sgd.factor = to_double(k, v);
    else if (k == "lr_period") sgd.period = to_uint(k, v);
    else if (k == "momentum") sgd.momentum = to_double(k, v);
    else if (k == "batch") batch = sz();
    else if (k == "steps") steps = sz();
    else if (k == "eval_every") eval_every = sz();
    else if (k == "target_pixel_acc") target_pixel_acc = to_double(k, v);
    else if (k == "eval_scales") eval_scales = to_doubles(k, v);
    else if (k == "deterministic") deterministic = to_bool(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }

  static PipelineConfig from_key_values(const KeyValues& kvs) {
    PipelineConfig c;
    for (const auto& [k, v] : kvs) c.set(k, v);
    c.validate();
    return c;
  }

  void validate() const {
    trunk.validate();
    arch.validate();
    if (fuse_taps.empty()) throw ConfigError("fuse_taps: empty selection");
    if (fuse_mode == FuseMode::Concat && arch.input_channels % fuse_taps.size() != 0)
      throw ConfigError("input_channels " + std::to_string(arch.input_channels) + " not divisible by " +
                        std::to_string(fuse_taps.size()) + " concatenated taps");
    if (refine_width == 0) throw ConfigError("refine_width must be positive");
    if (mpn && (mpn_cfg.reduced == 0 || mpn_cfg.reduced >= arch.num_classes))
      throw ConfigError("mpn_reduced must be in [1, num_classes)");
    if (!(mpn_cfg.bandwidth.spatial > 0) || !(mpn_cfg.bandwidth.color > 0))
      throw ConfigError("theta_alpha and theta_beta must be positive");
    if (arch.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (data_count == 0 || batch == 0) throw ConfigError("data_count and batch must be positive");
    if (image_size % trunk.divisor() != 0)
      throw ConfigError("image_size " + std::to_string(image_size) + " must be divisible by " +
                        std::to_string(trunk.divisor()));
    if (aug.crop % trunk.divisor() != 0)
      throw ConfigError("crop " + std::to_string(aug.crop) + " must be divisible by " +
                        std::to_string(trunk.divisor()));
    if (!(aug.scale_min > 0) || aug.scale_max < aug.scale_min) throw ConfigError("invalid scale range");
    if (!(sgd.base_lr > 0) || sgd.momentum < 0 || sgd.momentum >= 1) throw ConfigError("invalid optimizer settings");
    if (eval_scales.empty()) throw ConfigError("eval_scales must not be empty");
    for (double s : eval_scales)
      if (!(s > 0)) throw ConfigError("eval_scales must be positive");
    if (synth.min_shapes > synth.max_shapes) throw ConfigError("shapes_min exceeds shapes_max");
  }

  bool operator==(const PipelineConfig& o) const { return to_key_values() == o.to_key_values(); }
};

inline PipelineConfig load_config(const std::string& path) {
  return PipelineConfig::from_key_values(read_key_values(path));
}

inline std::string to_string(const PipelineConfig& c) { return format_key_values(c.to_key_values()); }

// Architecture-only view: variant, widths, rates, input_channels, num_classes.
inline KeyValues architecture_key_values(const ArchitectureConfig& a) {
  using namespace kv;
  return {{"variant", variant_name(a.variant)},
          {"input_channels", str(std::uint64_t{a.input_channels})},
          {"widths", join(std::vector<std::uint64_t>(a.widths.begin(), a.widths.end()))},
          {"rates", join(std::vector<std::uint64_t>(a.rates.begin(), a.rates.end()))},
          {"num_classes", str(std::uint64_t{a.num_classes})}};
}

inline ArchitectureConfig architecture_from_key_values(const KeyValues& kvs) {
  PipelineConfig c;
  for (const auto& [k, v] : kvs) c.set(k, v);
  c.arch.validate();
  return c.arch;
}

}  // namespace mcn
