#pragma once

// Checkpoint directory: manifest.txt (the resolved pipeline config as
// key=value lines plus a parameter count) and one MCNT file per tensor.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mcn/pipeline.hpp"
#include "mcn/tensor_io.hpp"

namespace mcn {

inline const std::string kManifestName = "manifest.txt";

namespace detail {

// Running statistics of every norm layer, as (1, c, 1, 1) tensors.
template <typename Fn>
void visit_norm_statistics(SegmentationModel<float>& model, Fn&& fn) {
  model.trunk().visit_norms([&](ChannelNorm<float>& n) {
    std::string base = n.gamma.name;
    base = base.substr(0, base.rfind('.'));
    fn(base + ".running_mean", n.running_mean, n);
    fn(base + ".running_var", n.running_var, n);
  });
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, SegmentationModel<float>& model) {
  std::filesystem::create_directories(dir);
  KeyValues manifest{{"format", "mcn-checkpoint"}};
  for (auto& kv : model.config().to_key_values()) manifest.push_back(kv);
  const auto params = model.parameters();
  manifest.emplace_back("parameters", std::to_string(params.size()));
  {
    std::ofstream out(dir / kManifestName, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / kManifestName).string());
    out << format_key_values(manifest);
  }
  for (auto* p : params) save_tensor(dir / (p->name + ".mcnt"), p->value);
  detail::visit_norm_statistics(model, [&](const std::string& name, std::vector<double>& stat, ChannelNorm<float>&) {
    Tensor<float> t(Shape{1, stat.size(), 1, 1});
    for (std::size_t i = 0; i < stat.size(); ++i) t[i] = static_cast<float>(stat[i]);
    save_tensor(dir / (name + ".mcnt"), t);
  });
}

inline PipelineConfig read_checkpoint_config(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) throw IoError("missing checkpoint manifest " + path.string());
  KeyValues kvs;
  for (auto& [k, v] : read_key_values(path.string()))
    if (k != "format" && k != "parameters") kvs.emplace_back(k, v);
  return PipelineConfig::from_key_values(kvs);
}

inline SegmentationModel<float> load_checkpoint(const std::filesystem::path& dir) {
  SegmentationModel<float> model(read_checkpoint_config(dir));
  for (auto* p : model.parameters()) {
    Tensor<float> t = load_tensor(dir / (p->name + ".mcnt"));
    if (t.shape() != p->value.shape())
      throw IoError("checkpoint tensor " + p->name + " has shape " + t.shape().str() + ", model expects " +
                    p->value.shape().str());
    p->value = std::move(t);
  }
  detail::visit_norm_statistics(model, [&](const std::string& name, std::vector<double>& stat, ChannelNorm<float>& n) {
    const Tensor<float> t = load_tensor(dir / (name + ".mcnt"));
    if (t.size() != stat.size()) throw IoError("checkpoint statistics " + name + " have the wrong length");
    for (std::size_t i = 0; i < stat.size(); ++i) stat[i] = t[i];
    n.has_statistics = true;
  });
  return model;
}

}  // namespace mcn
