#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uamsa {

// Thread count used by all kernels. 0 keeps the OpenMP default; 1 is the
// strict single-threaded mode. Kernels are written so results are
// bit-identical for every thread count: parallel loops own disjoint output
// ranges and reductions combine fixed-size chunk partials in index order.
void set_threads(int n);
int threads();

template <class F>
inline void parallel_for(std::int64_t n, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 256)
#endif
    for (std::int64_t i = 0; i < n; ++i) {
        f(i);
    }
}

// Sum of n floats, accumulated in double per 4096-element chunk, chunks
// combined serially. Deterministic for any thread count.
double deterministic_sum(const float* x, std::int64_t n);
double deterministic_dot(const float* a, const float* b, std::int64_t n);

} // namespace uamsa
