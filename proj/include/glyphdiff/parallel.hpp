#pragma once

#include <cstdint>
#include <functional>

namespace glyphdiff {

// Worker count: GLYPHDIFF_THREADS env var, else hardware concurrency, clamped
// to [1,16]. Fixed at first use for the whole process so that work
// partitioning (and float accumulation order in partitioned reductions) is
// stable across all calls in a run.
int num_threads();

// Static range split: [0,n) is divided into num_threads() contiguous chunks.
// Each index is processed by exactly one worker, so results are bitwise
// independent of scheduling.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& chunk_fn);

}  // namespace glyphdiff
