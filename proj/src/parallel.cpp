#include "glyphdiff/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace glyphdiff {

static int resolve_threads() {
    if (const char* env = std::getenv("GLYPHDIFF_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return std::min(v, 16);
    }
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return (int)std::min<unsigned>(hw, 16);
}

int num_threads() {
    static const int n = resolve_threads();
    return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& chunk_fn) {
    if (n <= 0) return;
    const int t = num_threads();
    if (t == 1 || n < 64) {
        chunk_fn(0, n);
        return;
    }
    const int64_t chunk = (n + t - 1) / t;
#pragma omp parallel num_threads(t)
    {
#pragma omp for schedule(static, 1)
        for (int i = 0; i < t; ++i) {
            const int64_t begin = (int64_t)i * chunk;
            const int64_t end = std::min(begin + chunk, n);
            if (begin < end) chunk_fn(begin, end);
        }
    }
}

}  // namespace glyphdiff
