#include "lsk/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace lsk {

int thread_count() {
  const char* env = std::getenv("LSK_THREADS");
  long requested = 0;
  if (env != nullptr && *env != '\0') {
    requested = std::strtol(env, nullptr, 10);
  }
  if (requested <= 0) {
    requested = static_cast<long>(std::thread::hardware_concurrency());
    if (requested <= 0) requested = 1;
  }
  return static_cast<int>(std::clamp<long>(requested, 1, 64));
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  const std::int64_t total = end - begin;
  if (total <= 0) return;
  const int threads = std::min<std::int64_t>(thread_count(), total);
  if (threads <= 1) {
    body(begin, end);
    return;
  }
  const std::int64_t chunk = (total + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  std::int64_t lo = begin + chunk;  // first chunk runs on the calling thread
  for (int t = 1; t < threads && lo < end; ++t, lo += chunk) {
    pool.emplace_back(body, lo, std::min(lo + chunk, end));
  }
  body(begin, std::min(begin + chunk, end));
  for (auto& th : pool) th.join();
}

}  // namespace lsk
