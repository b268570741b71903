#pragma once

#include <cstdint>
#include <functional>

namespace kelab {

// Number of worker threads, bounded by the KELAB_THREADS env var
// (default: hardware concurrency, minimum 1).
int thread_count();

// Splits [0, n) into one contiguous chunk per worker and runs fn(begin, end)
// on each. Chunk boundaries depend only on n and the thread count, and every
// output element is written by exactly one chunk, so results are
// bit-deterministic for any thread count as long as fn writes disjoint data.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace kelab
