#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace mcn {

// Worker cap: MCN_THREADS if set and positive, else 1.
inline std::size_t worker_count() {
  static const std::size_t count = [] {
    if (const char* env = std::getenv("MCN_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v > 0) return static_cast<std::size_t>(v);
      } catch (...) {
      }
    }
    return std::size_t{1};
  }();
  return count;
}

// Runs fn(i) for i in [0, count). Each index is processed by exactly one
// worker, so results are identical for any thread count as long as fn(i)
// only writes state owned by i.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mcn
