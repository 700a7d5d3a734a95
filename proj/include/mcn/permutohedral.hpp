#pragma once

// High-dimensional Gaussian filtering on the permutohedral lattice
// (splat / blur / slice), plus an exact O(m^2) reference.
//
// Both approximate or evaluate
//     out_i = sum_j exp(-|f_i - f_j|^2 / 2) * v_j
// for feature points f (m x d) and values v (m x c, point-major).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mcn/error.hpp"
#include "mcn/parallel.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

struct FeaturePoints {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<float> coords;  // count x dim

  FeaturePoints() = default;
  FeaturePoints(std::size_t m, std::size_t d) : count(m), dim(d), coords(m * d, 0.f) {}

  std::span<const float> point(std::size_t i) const { return std::span<const float>(coords).subspan(i * dim, dim); }
  std::span<float> point(std::size_t i) { return std::span<float>(coords).subspan(i * dim, dim); }
};

struct BilateralBandwidth {
  double spatial = 8.0;  // pixels
  double color = 16.0;   // intensity units out of 255
};

// (x / spatial, y / spatial, 255 * channel / color ...) for every pixel of
// batch item `item`; image values are expected in [0, 1].
template <typename T>
FeaturePoints bilateral_features(const Tensor<T>& image, std::size_t item, BilateralBandwidth bw) {
  const Shape s = image.shape();
  FeaturePoints pts(s.plane(), 2 + s.c);
  const double inv_s = 1.0 / bw.spatial, inv_c = 255.0 / bw.color;
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      auto f = pts.point(y * s.w + x);
      f[0] = static_cast<float>(static_cast<double>(x) * inv_s);
      f[1] = static_cast<float>(static_cast<double>(y) * inv_s);
      for (std::size_t c = 0; c < s.c; ++c)
        f[2 + c] = static_cast<float>(static_cast<double>(image.at(item, c, y, x)) * inv_c);
    }
  return pts;
}

namespace detail {

// Open-addressing table from d-short keys to dense vertex ids (insertion
// order).
class LatticeHash {
 public:
  LatticeHash(std::size_t key_size, std::size_t expected)
      : key_size_(key_size), table_(std::max<std::size_t>(16, 2 * expected), -1) {
    keys_.reserve(expected * key_size);
  }

  std::size_t size() const { return filled_; }
  std::span<const std::int16_t> key(std::size_t id) const {
    return std::span<const std::int16_t>(keys_).subspan(id * key_size_, key_size_);
  }

  // Returns the vertex id, or -1 when absent and !create.
  std::int32_t find(const std::int16_t* k, bool create) {
    if (create && 2 * (filled_ + 1) > table_.size()) grow();
    std::size_t h = hash(k) % table_.size();
    while (true) {
      const std::int32_t e = table_[h];
      if (e < 0) {
        if (!create) return -1;
        keys_.insert(keys_.end(), k, k + key_size_);
        table_[h] = static_cast<std::int32_t>(filled_);
        return static_cast<std::int32_t>(filled_++);
      }
      if (std::equal(k, k + key_size_, keys_.data() + static_cast<std::size_t>(e) * key_size_)) return e;
      if (++h == table_.size()) h = 0;
    }
  }

 private:
  std::size_t hash(const std::int16_t* k) const {
    std::size_t r = 0;
    for (std::size_t i = 0; i < key_size_; ++i) {
      r += static_cast<std::size_t>(static_cast<std::uint16_t>(k[i]));
      r *= 1664525u;
    }
    return r;
  }

  void grow() {
    std::vector<std::int32_t> fresh(table_.size() * 2, -1);
    for (std::size_t e = 0; e < filled_; ++e) {
      std::size_t h = hash(keys_.data() + e * key_size_) % fresh.size();
      while (fresh[h] >= 0)
        if (++h == fresh.size()) h = 0;
      fresh[h] = static_cast<std::int32_t>(e);
    }
    table_.swap(fresh);
  }

  std::size_t key_size_;
  std::size_t filled_ = 0;
  std::vector<std::int16_t> keys_;
  std::vector<std::int32_t> table_;
};

}  // namespace detail

// A built lattice is immutable and may be shared across threads.
class PermutohedralLattice {
 public:
  // `symmetric` averages the two blur orders so the operator equals its
  // transpose; otherwise passes run in direction order 0..d.
  static PermutohedralLattice build(const FeaturePoints& points, bool symmetric = true) {
    PermutohedralLattice lat;
    lat.symmetric_ = symmetric;
    const std::size_t d = points.dim, m = points.count, d1 = d + 1;
    if (d == 0) throw ShapeError("lattice_build: feature dimension must be >= 1");
    for (std::size_t i = 0; i < points.coords.size(); ++i)
      if (!std::isfinite(points.coords[i]))
        throw NumericError("lattice_build: non-finite coordinate at point " + std::to_string(i / d));
    lat.dim_ = d;
    lat.points_ = m;
    lat.vertex_.resize(m * d1);
    lat.weight_.resize(m * d1);

    detail::LatticeHash hash(d, m * d1);

    // Canonical simplex: canonical[r][j] = r for j <= d - r, r - (d+1) otherwise.
    std::vector<int> canonical(d1 * d1);
    for (std::size_t r = 0; r <= d; ++r)
      for (std::size_t j = 0; j <= d; ++j)
        canonical[r * d1 + j] = j <= d - r ? static_cast<int>(r) : static_cast<int>(r) - static_cast<int>(d1);

    // Diagonal of the embedding, scaled so the blur approximates a
    // unit-variance Gaussian.
    const double inv_std = std::sqrt(2.0 / 3.0) * static_cast<double>(d1);
    std::vector<double> scale(d);
    for (std::size_t i = 0; i < d; ++i)
      scale[i] = inv_std / std::sqrt(static_cast<double>((i + 1) * (i + 2)));

    std::vector<double> elevated(d1), bary(d + 2);
    std::vector<int> rem0(d1), rank(d1);
    std::vector<std::int16_t> key(d);
    const double down = 1.0 / static_cast<double>(d1);
    const int up = static_cast<int>(d1);

    for (std::size_t p = 0; p < m; ++p) {
      const auto f = points.point(p);
      // Project onto the hyperplane sum(x) = 0.
      double sm = 0;
      for (std::size_t j = d; j > 0; --j) {
        const double cf = static_cast<double>(f[j - 1]) * scale[j - 1];
        elevated[j] = sm - static_cast<double>(j) * cf;
        sm += cf;
      }
      elevated[0] = sm;

      // Nearest remainder-0 lattice point.
      int sum = 0;
      for (std::size_t i = 0; i <= d; ++i) {
        const double v = down * elevated[i];
        const double hi = std::ceil(v) * up, lo = std::floor(v) * up;
        rem0[i] = static_cast<int>(hi - elevated[i] < elevated[i] - lo ? hi : lo);
        sum += rem0[i] / up;
      }

      // Rank of each coordinate's differential.
      std::fill(rank.begin(), rank.end(), 0);
      for (std::size_t i = 0; i < d; ++i) {
        const double di = elevated[i] - rem0[i];
        for (std::size_t j = i + 1; j <= d; ++j)
          if (di < elevated[j] - rem0[j])
            ++rank[i];
          else
            ++rank[j];
      }

      // Bring the point back onto the plane if the rounding left it off.
      if (sum > 0) {
        for (std::size_t i = 0; i <= d; ++i) {
          if (rank[i] >= static_cast<int>(d1) - sum) {
            rem0[i] -= up;
            rank[i] += sum - up;
          } else {
            rank[i] += sum;
          }
        }
      } else if (sum < 0) {
        for (std::size_t i = 0; i <= d; ++i) {
          if (rank[i] < -sum) {
            rem0[i] += up;
            rank[i] += up + sum;
          } else {
            rank[i] += sum;
          }
        }
      }

      // Barycentric coordinates.
      std::fill(bary.begin(), bary.end(), 0.0);
      for (std::size_t i = 0; i <= d; ++i) {
        const double v = (elevated[i] - rem0[i]) * down;
        bary[d - static_cast<std::size_t>(rank[i])] += v;
        bary[d + 1 - static_cast<std::size_t>(rank[i])] -= v;
      }
      bary[0] += 1.0 + bary[d + 1];

      for (std::size_t r = 0; r <= d; ++r) {
        for (std::size_t i = 0; i < d; ++i)
          key[i] = static_cast<std::int16_t>(rem0[i] + canonical[r * d1 + static_cast<std::size_t>(rank[i])]);
        lat.vertex_[p * d1 + r] = hash.find(key.data(), true);
        lat.weight_[p * d1 + r] = static_cast<float>(bary[r]);
      }
    }

    const std::size_t nv = hash.size();
    lat.keys_.assign(nv * d, 0);
    for (std::size_t v = 0; v < nv; ++v) std::ranges::copy(hash.key(v), lat.keys_.begin() + static_cast<std::ptrdiff_t>(v * d));

    // Neighbours of every vertex along each of the d+1 lattice directions.
    lat.neighbors_.assign(d1 * nv * 2, -1);
    std::vector<std::int16_t> n1(d), n2(d);
    for (std::size_t j = 0; j <= d; ++j)
      for (std::size_t v = 0; v < nv; ++v) {
        const auto k = lat.key(v);
        for (std::size_t i = 0; i < d; ++i) {
          n1[i] = static_cast<std::int16_t>(k[i] - 1);
          n2[i] = static_cast<std::int16_t>(k[i] + 1);
        }
        if (j < d) {
          n1[j] = static_cast<std::int16_t>(k[j] + static_cast<int>(d));
          n2[j] = static_cast<std::int16_t>(k[j] - static_cast<int>(d));
        }
        lat.neighbors_[(j * nv + v) * 2] = hash.find(n1.data(), false);
        lat.neighbors_[(j * nv + v) * 2 + 1] = hash.find(n2.data(), false);
      }
    return lat;
  }

  std::size_t dim() const { return dim_; }
  std::size_t point_count() const { return points_; }
  std::size_t vertex_count() const { return keys_.size() / std::max<std::size_t>(dim_, 1); }

  // First d coordinates of a lattice key; the last is -sum of these.
  std::span<const std::int16_t> key(std::size_t v) const {
    return std::span<const std::int16_t>(keys_).subspan(v * dim_, dim_);
  }
  std::span<const std::int32_t> vertices(std::size_t p) const {
    return std::span<const std::int32_t>(vertex_).subspan(p * (dim_ + 1), dim_ + 1);
  }
  std::span<const float> weights(std::size_t p) const {
    return std::span<const float>(weight_).subspan(p * (dim_ + 1), dim_ + 1);
  }

  // Unnormalized filter of `values` (m x c, point-major). `transpose`
  // applies the blur directions in reverse order, giving the adjoint
  // operator used for backpropagation.
  template <typename T>
  std::vector<T> filter(std::span<const T> values, std::size_t channels, bool transpose = false) const {
    if (values.size() != points_ * channels)
      throw ShapeError("lattice_filter: values hold " + std::to_string(values.size()) + " entries, expected " +
                       std::to_string(points_) + " x " + std::to_string(channels));
    const std::size_t d1 = dim_ + 1, nv = vertex_count();
    std::vector<T> out(points_ * channels, T(0));
    parallel_for(channels, [&](std::size_t c) {
      std::vector<T> lattice(nv, T(0)), scratch(nv);
      for (std::size_t p = 0; p < points_; ++p) {
        const T v = values[p * channels + c];
        for (std::size_t r = 0; r < d1; ++r)
          lattice[static_cast<std::size_t>(vertex_[p * d1 + r])] += static_cast<T>(weight_[p * d1 + r]) * v;
      }
      auto blur = [&](std::vector<T>& buf, bool reverse) {
        for (std::size_t step = 0; step < d1; ++step) {
          const std::size_t j = reverse ? dim_ - step : step;
          const std::int32_t* nb = neighbors_.data() + j * nv * 2;
          for (std::size_t v = 0; v < nv; ++v) {
            const T a = nb[2 * v] >= 0 ? buf[static_cast<std::size_t>(nb[2 * v])] : T(0);
            const T b = nb[2 * v + 1] >= 0 ? buf[static_cast<std::size_t>(nb[2 * v + 1])] : T(0);
            scratch[v] = T(0.25) * a + T(0.5) * buf[v] + T(0.25) * b;
          }
          buf.swap(scratch);
        }
      };
      if (symmetric_) {
        // Average of both pass orders: exactly self-adjoint.
        std::vector<T> other = lattice;
        blur(lattice, false);
        blur(other, true);
        for (std::size_t v = 0; v < nv; ++v) lattice[v] = T(0.5) * (lattice[v] + other[v]);
      } else {
        blur(lattice, transpose);
      }
      for (std::size_t p = 0; p < points_; ++p) {
        T acc = 0;
        for (std::size_t r = 0; r < d1; ++r)
          acc += static_cast<T>(weight_[p * d1 + r]) * lattice[static_cast<std::size_t>(vertex_[p * d1 + r])];
        out[p * channels + c] = acc * static_cast<T>(output_scale());
      }
    });
    return out;
  }

  // The (1,2,1)/4 blur is the (1/2,1,1/2) form scaled by 2^-(d+1); undo
  // that and apply the usual 1/(1+2^-d) slice factor.
  double output_scale() const {
    return std::pow(2.0, static_cast<double>(dim_ + 1)) / (1.0 + std::pow(2.0, -static_cast<double>(dim_)));
  }

  bool operator==(const PermutohedralLattice&) const = default;

 private:
  std::size_t dim_ = 0;
  std::size_t points_ = 0;
  bool symmetric_ = true;
  std::vector<std::int16_t> keys_;
  std::vector<std::int32_t> vertex_;
  std::vector<float> weight_;
  std::vector<std::int32_t> neighbors_;  // (direction, vertex) -> (minus, plus)
};

// Exact Gaussian sums. Gated at m <= 5000.
class ExactGaussian {
 public:
  static constexpr std::size_t kMaxPoints = 5000;

  explicit ExactGaussian(FeaturePoints points) : points_(std::move(points)) {
    if (points_.count > kMaxPoints)
      throw NumericError("gaussian_filter_bruteforce: " + std::to_string(points_.count) + " points exceed the " +
                         std::to_string(kMaxPoints) + "-point gate");
  }

  std::size_t point_count() const { return points_.count; }

  // The kernel is symmetric, so `transpose` has no effect.
  template <typename T>
  std::vector<T> filter(std::span<const T> values, std::size_t channels, bool /*transpose*/ = false) const {
    const std::size_t m = points_.count, d = points_.dim;
    if (values.size() != m * channels)
      throw ShapeError("gaussian_filter_bruteforce: values hold " + std::to_string(values.size()) +
                       " entries, expected " + std::to_string(m) + " x " + std::to_string(channels));
    std::vector<T> out(m * channels, T(0));
    parallel_for(m, [&](std::size_t i) {
      const auto fi = points_.point(i);
      for (std::size_t j = 0; j < m; ++j) {
        const auto fj = points_.point(j);
        double dist2 = 0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = static_cast<double>(fi[k]) - static_cast<double>(fj[k]);
          dist2 += diff * diff;
        }
        const T wgt = static_cast<T>(std::exp(-0.5 * dist2));
        for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] += wgt * values[j * channels + c];
      }
    });
    return out;
  }

 private:
  FeaturePoints points_;
};

// Divides by the filtered all-ones vector so that constants are preserved.
template <typename T, typename Filter>
std::vector<T> normalized_filter(const Filter& filter, std::span<const T> values, std::size_t channels) {
  const std::size_t m = filter.point_count();
  const std::vector<T> ones(m, T(1));
  const auto norm = filter.template filter<T>(std::span<const T>(ones), 1);
  auto out = filter.template filter<T>(values, channels);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t c = 0; c < channels; ++c) out[p * channels + c] /= norm[p];
  return out;
}

template <typename T>
std::vector<T> lattice_filter(const PermutohedralLattice& lat, std::span<const T> values, std::size_t channels,
                              bool normalize) {
  return normalize ? normalized_filter<T>(lat, values, channels) : lat.filter<T>(values, channels);
}

template <typename T>
std::vector<T> gaussian_filter_bruteforce(const FeaturePoints& points, std::span<const T> values,
                                          std::size_t channels, bool normalize) {
  const ExactGaussian exact(points);
  return normalize ? normalized_filter<T>(exact, values, channels) : exact.filter<T>(values, channels);
}

}  // namespace mcn
