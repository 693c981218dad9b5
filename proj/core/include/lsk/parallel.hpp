#pragma once

#include <cstdint>
#include <functional>

namespace lsk {

// Degree of internal parallelism. Controlled by the LSK_THREADS environment
// variable: unset or 0 means hardware concurrency, otherwise the given count
// (clamped to [1, 64]). Read on every call so tests can toggle it.
int thread_count();

// Splits [begin, end) into at most thread_count() contiguous chunks and runs
// body(lo, hi) on each. Every index lands in exactly one chunk, so as long as
// the body writes disjoint outputs per index the result is independent of the
// thread count.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace lsk
