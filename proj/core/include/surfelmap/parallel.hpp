#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace surfelmap {

/// Runs fn(begin, end) over a fixed block partition of [0, count).
/// Blocks depend only on count and thread count, and workers write disjoint
/// outputs, so results are identical to the sequential run.
template <typename Fn>
void parallel_for_blocks(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 64) {
    fn(std::size_t{0}, count);
    return;
  }
  const std::size_t n = static_cast<std::size_t>(threads);
  const std::size_t block = (count + n - 1) / n;
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t begin = t * block;
    const std::size_t end = std::min(count, begin + block);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace surfelmap
