#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mcn/pipeline.hpp"

namespace mcn {

struct TrainRow {
  std::uint64_t iter = 0;
  double lr = 0;
  double loss = 0;
  double pixel_acc = 0;
  double mean_iu = 0;
};

inline const std::string kTrainLogHeader = "iter\tlr\tloss\tpixelAcc\tmeanIU\n";

inline std::string format_row(const TrainRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu\t%.6g\t%.8f\t%.6f\t%.6f\n", static_cast<unsigned long long>(r.iter), r.lr,
                r.loss, r.pixel_acc, r.mean_iu);
  return buf;
}

struct TrainResult {
  std::vector<TrainRow> rows;
  bool reached_target = false;
  double last_eval_pixel_acc = -1;  // -1 when no evaluation ran
};

inline std::vector<SynthSample> training_set(const PipelineConfig& cfg) {
  return synth_dataset(cfg.seed, cfg.data_count, cfg.arch.num_classes, cfg.image_size, cfg.image_size, cfg.synth);
}

// Nesterov training on `data`. Calls on_row after every step; stops early
// once the periodic full-set evaluation reaches cfg.target_pixel_acc (if
// set). A non-finite loss aborts with NumericError naming the iteration.
template <typename OnRow>
TrainResult train(SegmentationModel<float>& model, const std::vector<SynthSample>& data, OnRow&& on_row) {
  const PipelineConfig& cfg = model.config();
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x7261696eULL));
  Nesterov<float> opt(cfg.sgd);
  const auto params = model.parameters();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainResult result;
  for (std::uint64_t iter = 0; iter < cfg.steps; ++iter) {
    std::vector<SynthSample> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const SynthSample& s = data[order[cursor++]];
      batch.push_back(cfg.augment ? augment(s, cfg.aug, rng) : s);
    }
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto [img, lab] = make_batch(batch, idx);

    for (auto* p : params) p->zero_grad();
    Tape<float> tape;
    Var<float> logits = model(tape, img, NormMode::Train);
    Var<float> loss = softmax_cross_entropy(logits, lab);
    const double loss_v = loss.value()[0];
    if (!std::isfinite(loss_v))
      throw NumericError("non-finite loss at iteration " + std::to_string(iter));
    tape.backward(loss);
    opt.step(params, iter);

    ConfusionMatrix conf(cfg.arch.num_classes);
    conf.accumulate(argmax_channels(logits.value()), lab);
    TrainRow row{iter, cfg.sgd.lr(iter), loss_v, 0.0, 0.0};
    if (conf.total() > 0) {
      row.pixel_acc = conf.pixel_acc();
      row.mean_iu = conf.mean_iu();
    }
    result.rows.push_back(row);
    on_row(row);

    if (cfg.target_pixel_acc > 0 && cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0) {
      result.last_eval_pixel_acc = evaluate(model, data).pixel_acc();
      if (result.last_eval_pixel_acc >= cfg.target_pixel_acc) {
        result.reached_target = true;
        break;
      }
    }
  }
  return result;
}

inline TrainResult train(SegmentationModel<float>& model, const std::vector<SynthSample>& data) {
  return train(model, data, [](const TrainRow&) {});
}

}  // namespace mcn
