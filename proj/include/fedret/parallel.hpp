#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace fedret {

// Deterministic fan-out: index i always runs the same work, results land in
// caller-owned slots, so the outcome is independent of scheduling.
inline void parallel_over(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> threads;
  threads.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    threads.emplace_back([&, t]() {
      for (std::size_t i = t; i < n; i += n_threads) fn(i);
    });
  }
  for (auto& th : threads) th.join();
}

}  // namespace fedret
