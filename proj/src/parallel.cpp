#include "uamsa/parallel.hpp"

#include <vector>

namespace uamsa {

namespace {
int g_threads = 0;
}

void set_threads(int n) {
    g_threads = n;
#ifdef _OPENMP
    if (n > 0) {
        omp_set_num_threads(n);
    }
#endif
}

int threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {
constexpr std::int64_t kChunk = 4096;
}

double deterministic_sum(const float* x, std::int64_t n) {
    if (n <= 0) {
        return 0.0;
    }
    const std::int64_t nchunks = (n + kChunk - 1) / kChunk;
    if (nchunks == 1) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::vector<double> partial(static_cast<std::size_t>(nchunks), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t c = 0; c < nchunks; ++c) {
        const std::int64_t lo = c * kChunk;
        const std::int64_t hi = lo + kChunk < n ? lo + kChunk : n;
        double s = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) s += x[i];
        partial[static_cast<std::size_t>(c)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double deterministic_dot(const float* a, const float* b, std::int64_t n) {
    if (n <= 0) {
        return 0.0;
    }
    const std::int64_t nchunks = (n + kChunk - 1) / kChunk;
    if (nchunks == 1) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
        return s;
    }
    std::vector<double> partial(static_cast<std::size_t>(nchunks), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t c = 0; c < nchunks; ++c) {
        const std::int64_t lo = c * kChunk;
        const std::int64_t hi = lo + kChunk < n ? lo + kChunk : n;
        double s = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) s += static_cast<double>(a[i]) * b[i];
        partial[static_cast<std::size_t>(c)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

} // namespace uamsa
