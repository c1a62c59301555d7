#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace xvpr {

/// Runs fn(i) for every i in [0, n) on up to `threads` workers with a static
/// block partition. Each index writes only its own output slot, so results
/// are deterministic regardless of thread count.
template <typename Fn>
void parallel_for_indexed(std::size_t n, int threads, Fn fn) {
  if (n == 0) return;
  const std::size_t workers =
      threads <= 1 ? 1 : std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace xvpr
