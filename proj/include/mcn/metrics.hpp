#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mcn/error.hpp"
#include "mcn/labels.hpp"

namespace mcn {

// Rows are ground truth, columns prediction. Ignore-labelled pixels are
// not counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
    if (classes == 0) throw ConfigError("confusion matrix: need at least one class");
  }

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * k_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  void accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
      throw ShapeError("confusion accumulate: prediction " + dims(pred) + " vs ground truth " + dims(gt));
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
      const std::int32_t g = gt.data[i];
      if (g == kIgnoreLabel) continue;
      const std::int32_t p = pred.data[i];
      if (g < 0 || static_cast<std::size_t>(g) >= k_ || p < 0 || static_cast<std::size_t>(p) >= k_)
        throw ConfigError("confusion accumulate: label out of range at pixel " + std::to_string(i));
      ++counts_[static_cast<std::size_t>(g) * k_ + static_cast<std::size_t>(p)];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw ShapeError("confusion add: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

  double pixel_acc() const {
    require_nonempty();
    std::uint64_t diag = 0;
    for (std::size_t k = 0; k < k_; ++k) diag += at(k, k);
    return static_cast<double>(diag) / static_cast<double>(total());
  }

  // Classes with an empty union are left out of the mean.
  double mean_iu() const {
    require_nonempty();
    double sum = 0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < k_; ++k) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t j = 0; j < k_; ++j) {
        row += at(k, j);
        col += at(j, k);
      }
      const std::uint64_t uni = row + col - at(k, k);
      if (uni == 0) continue;
      sum += static_cast<double>(at(k, k)) / static_cast<double>(uni);
      ++present;
    }
    return sum / static_cast<double>(present);
  }

 private:
  static std::string dims(const LabelMap& m) {
    return "(" + std::to_string(m.n) + "," + std::to_string(m.h) + "," + std::to_string(m.w) + ")";
  }
  void require_nonempty() const {
    if (total() == 0) throw NumericError("confusion matrix is empty");
  }

  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

inline double mean_iu(const ConfusionMatrix& c) { return c.mean_iu(); }
inline double pixel_acc(const ConfusionMatrix& c) { return c.pixel_acc(); }

}  // namespace mcn
