#include "wnet/parallel.hpp"

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace wnet {

int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("WNET_THREADS")) {
      const int v = std::atoi(env);
      return v <= 1 ? 1 : v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

void parallel_for_blocked(std::int64_t n,
                          const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) return;
  const int threads = max_threads();
  if (threads <= 1 || n == 1) {
    body(0, n);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    const std::int64_t begin = t * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& th : pool) th.join();
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
  parallel_for_blocked(n, [&body](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) body(i);
  });
}

}  // namespace wnet
