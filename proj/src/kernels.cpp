#include "uamsa/kernels.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uamsa::kern {

namespace {

constexpr int kMR = 4;  // rows per register tile
constexpr int kNR = 32; // cols per register tile

} // namespace

FloatVec& scratch(int slot, std::size_t size) {
    thread_local FloatVec buffers[8];
    FloatVec& buf = buffers[slot];
    if (buf.size() < size) buf.resize(size);
    return buf;
}

namespace {

// One register tile: C[m0..m0+mlen) x [n0..n0+nlen) over the full K extent.
// K is reduced serially in fixed order, so results do not depend on the
// thread partition outside this function.
inline void gemm_tile(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate,
                      int m0, int mlen, int n0, int nlen) {
    if (mlen == kMR && nlen == kNR) {
        float acc[kMR][kNR];
        for (int i = 0; i < kMR; ++i)
            for (int j = 0; j < kNR; ++j) acc[i][j] = 0.0f;
        for (int k = 0; k < K; ++k) {
            const float* b = B + static_cast<std::size_t>(k) * N + n0;
            for (int i = 0; i < kMR; ++i) {
                const float a = A[static_cast<std::size_t>(m0 + i) * K + k];
                for (int j = 0; j < kNR; ++j) acc[i][j] += a * b[j];
            }
        }
        for (int i = 0; i < kMR; ++i) {
            float* c = C + static_cast<std::size_t>(m0 + i) * N + n0;
            if (accumulate) {
                for (int j = 0; j < kNR; ++j) c[j] += acc[i][j];
            } else {
                for (int j = 0; j < kNR; ++j) c[j] = acc[i][j];
            }
        }
    } else {
        for (int i = 0; i < mlen; ++i) {
            float* c = C + static_cast<std::size_t>(m0 + i) * N + n0;
            for (int j = 0; j < nlen; ++j) {
                float acc = 0.0f;
                const float* a = A + static_cast<std::size_t>(m0 + i) * K;
                for (int k = 0; k < K; ++k) acc += a[k] * B[static_cast<std::size_t>(k) * N + n0 + j];
                c[j] = accumulate ? c[j] + acc : acc;
            }
        }
    }
}

} // namespace

void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    const int mblocks = (M + kMR - 1) / kMR;
    const int nblocks = (N + kNR - 1) / kNR;

    if (N >= 1024) {
        // Wide output: iterate column tiles outermost so each B column strip
        // is streamed exactly once; A stays cache-resident.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int nb = 0; nb < nblocks; ++nb) {
            const int n0 = nb * kNR;
            const int nlen = std::min(kNR, N - n0);
            for (int mb = 0; mb < mblocks; ++mb) {
                const int m0 = mb * kMR;
                gemm_tile(M, N, K, A, B, C, accumulate, m0, std::min(kMR, M - m0), n0, nlen);
            }
        }
        return;
    }

    if (K >= 4096 && static_cast<std::int64_t>(M) * N <= 32768) {
        // Tall reduction into a small output: parallelize over fixed K blocks
        // into per-block partials, combined serially in block order.
        constexpr int kKB = 2048;
        const int kblocks = (K + kKB - 1) / kKB;
        std::vector<float> partial(static_cast<std::size_t>(kblocks) * M * N);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int kb = 0; kb < kblocks; ++kb) {
            const int k0 = kb * kKB;
            const int klen = std::min(kKB, K - k0);
            float* part = partial.data() + static_cast<std::size_t>(kb) * M * N;
            for (int m = 0; m < M; ++m) {
                const float* a = A + static_cast<std::size_t>(m) * K + k0;
                float* c = part + static_cast<std::size_t>(m) * N;
                for (int n = 0; n < N; ++n) c[n] = 0.0f;
                for (int k = 0; k < klen; ++k) {
                    const float av = a[k];
                    const float* b = B + static_cast<std::size_t>(k0 + k) * N;
                    for (int n = 0; n < N; ++n) c[n] += av * b[n];
                }
            }
        }
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(M) * N; ++i) {
            float acc = accumulate ? C[i] : 0.0f;
            for (int kb = 0; kb < kblocks; ++kb) {
                acc += partial[static_cast<std::size_t>(kb) * M * N + static_cast<std::size_t>(i)];
            }
            C[i] = acc;
        }
        return;
    }

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(M) * N * K > 16384)
#endif
    for (int mb = 0; mb < mblocks; ++mb) {
        const int m0 = mb * kMR;
        const int mlen = std::min(kMR, M - m0);
        for (int n0 = 0; n0 < N; n0 += kNR) {
            const int nlen = std::min(kNR, N - n0);
            gemm_tile(M, N, K, A, B, C, accumulate, m0, mlen, n0, nlen);
        }
    }
}

void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    // 8 independent lane accumulators per dot: fixed order, vectorizable.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(M) * N * K > 16384)
#endif
    for (int m = 0; m < M; ++m) {
        const float* a = A + static_cast<std::size_t>(m) * K;
        float* c = C + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const float* b = B + static_cast<std::size_t>(n) * K;
            float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            int k = 0;
            for (; k + 8 <= K; k += 8) {
                for (int j = 0; j < 8; ++j) lanes[j] += a[k + j] * b[k + j];
            }
            float tail = 0.0f;
            for (; k < K; ++k) tail += a[k] * b[k];
            float acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                        ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
            c[n] = accumulate ? c[n] + acc : acc;
        }
    }
}

void gemm_tn(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    // C rows are built by fused 4-way saxpy sweeps over the reduction axis.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(M) * N * K > 16384)
#endif
    for (int m = 0; m < M; ++m) {
        float* c = C + static_cast<std::size_t>(m) * N;
        if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<std::size_t>(N));
        int k = 0;
        for (; k + 4 <= K; k += 4) {
            const float a0 = A[static_cast<std::size_t>(k) * M + m];
            const float a1 = A[static_cast<std::size_t>(k + 1) * M + m];
            const float a2 = A[static_cast<std::size_t>(k + 2) * M + m];
            const float a3 = A[static_cast<std::size_t>(k + 3) * M + m];
            const float* b0 = B + static_cast<std::size_t>(k) * N;
            const float* b1 = B + static_cast<std::size_t>(k + 1) * N;
            const float* b2 = B + static_cast<std::size_t>(k + 2) * N;
            const float* b3 = B + static_cast<std::size_t>(k + 3) * N;
            for (int n = 0; n < N; ++n) {
                c[n] += (a0 * b0[n] + a1 * b1[n]) + (a2 * b2[n] + a3 * b3[n]);
            }
        }
        for (; k < K; ++k) {
            const float a = A[static_cast<std::size_t>(k) * M + m];
            const float* b = B + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) c[n] += a * b[n];
        }
    }
}

void im2col(const float* x, const ConvGeom& g, float* cols, std::int64_t ld) {
    const std::int64_t ncols = static_cast<std::int64_t>(g.out_h) * g.out_w;
    const std::int64_t krows = static_cast<std::int64_t>(g.in_c) * g.kh * g.kw;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (krows * ncols > 16384)
#endif
    for (std::int64_t row = 0; row < krows; ++row) {
        const int c = static_cast<int>(row / (g.kh * g.kw));
        const int rem = static_cast<int>(row % (g.kh * g.kw));
        const int ki = rem / g.kw;
        const int kj = rem % g.kw;
        const float* xc = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        float* out = cols + static_cast<std::size_t>(row) * ld;
        for (int oh = 0; oh < g.out_h; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            float* o = out + static_cast<std::size_t>(oh) * g.out_w;
            if (ih < 0 || ih >= g.in_h) {
                std::memset(o, 0, sizeof(float) * static_cast<std::size_t>(g.out_w));
                continue;
            }
            const float* xr = xc + static_cast<std::size_t>(ih) * g.in_w;
            if (g.stride == 1) {
                // iw = ow - pad + kj: three contiguous segments
                const int shift = kj - g.pad;
                int ow = 0;
                for (; ow < g.out_w && ow + shift < 0; ++ow) o[ow] = 0.0f;
                const int lim = std::min(g.out_w, g.in_w - shift);
                for (; ow < lim; ++ow) o[ow] = xr[ow + shift];
                for (; ow < g.out_w; ++ow) o[ow] = 0.0f;
            } else {
                for (int ow = 0; ow < g.out_w; ++ow) {
                    const int iw = ow * g.stride - g.pad + kj;
                    o[ow] = (iw >= 0 && iw < g.in_w) ? xr[iw] : 0.0f;
                }
            }
        }
    }
}

void im2colT(const float* x, const ConvGeom& g, float* cols_t) {
    const std::int64_t rows = static_cast<std::int64_t>(g.out_h) * g.out_w;
    const std::int64_t kw_all = static_cast<std::int64_t>(g.in_c) * g.kh * g.kw;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * kw_all > 16384)
#endif
    for (std::int64_t r = 0; r < rows; ++r) {
        const int oh = static_cast<int>(r / g.out_w);
        const int ow = static_cast<int>(r % g.out_w);
        float* out = cols_t + static_cast<std::size_t>(r) * kw_all;
        std::int64_t idx = 0;
        for (int c = 0; c < g.in_c; ++c) {
            const float* xc = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
            for (int ki = 0; ki < g.kh; ++ki) {
                const int ih = oh * g.stride - g.pad + ki;
                if (ih < 0 || ih >= g.in_h) {
                    for (int kj = 0; kj < g.kw; ++kj) out[idx++] = 0.0f;
                    continue;
                }
                const float* xr = xc + static_cast<std::size_t>(ih) * g.in_w;
                for (int kj = 0; kj < g.kw; ++kj) {
                    const int iw = ow * g.stride - g.pad + kj;
                    out[idx++] = (iw >= 0 && iw < g.in_w) ? xr[iw] : 0.0f;
                }
            }
        }
    }
}

void fold_bcn(const float* src, float* dst, int b, int c, std::int64_t n) {
    const std::int64_t rows = static_cast<std::int64_t>(b) * c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * n > 16384)
#endif
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t bi = r / c;
        const std::int64_t ci = r % c;
        std::memcpy(dst + (ci * b + bi) * n, src + r * n, sizeof(float) * static_cast<std::size_t>(n));
    }
}

void unfold_bcn(const float* src, float* dst, int b, int c, std::int64_t n) {
    const std::int64_t rows = static_cast<std::int64_t>(b) * c;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * n > 16384)
#endif
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t bi = r / c;
        const std::int64_t ci = r % c;
        std::memcpy(dst + r * n, src + (ci * b + bi) * n, sizeof(float) * static_cast<std::size_t>(n));
    }
}

void transpose_2d(const float* src, float* dst, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

void col2im_add(const float* dcols, const ConvGeom& g, std::int64_t ld, float* gx) {
    const std::int64_t ncols = static_cast<std::int64_t>(g.out_h) * g.out_w;
    (void)ncols;
    const std::int64_t rows = static_cast<std::int64_t>(g.in_c) * g.in_h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * g.in_w > 4096)
#endif
    for (std::int64_t r = 0; r < rows; ++r) {
        const int c = static_cast<int>(r / g.in_h);
        const int ih = static_cast<int>(r % g.in_h);
        double acc_buf[512];
        std::vector<double> acc_heap;
        double* acc = acc_buf;
        if (g.in_w > 512) {
            acc_heap.assign(static_cast<std::size_t>(g.in_w), 0.0);
            acc = acc_heap.data();
        } else {
            std::fill_n(acc, g.in_w, 0.0);
        }
        for (int ki = 0; ki < g.kh; ++ki) {
            const int oh_num = ih + g.pad - ki;
            if (oh_num < 0 || oh_num % g.stride) continue;
            const int oh = oh_num / g.stride;
            if (oh >= g.out_h) continue;
            for (int kj = 0; kj < g.kw; ++kj) {
                const std::size_t row = static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj);
                const float* src = dcols + row * static_cast<std::size_t>(ld) + static_cast<std::size_t>(oh) * g.out_w;
                // iw = ow * stride - pad + kj over valid ow
                int ow_lo = 0;
                while (ow_lo * g.stride - g.pad + kj < 0) ++ow_lo;
                for (int ow = ow_lo; ow < g.out_w; ++ow) {
                    const int iw = ow * g.stride - g.pad + kj;
                    if (iw >= g.in_w) break;
                    acc[iw] += src[ow];
                }
            }
        }
        float* grow = gx + static_cast<std::size_t>(r) * g.in_w;
        for (int iw = 0; iw < g.in_w; ++iw) {
            grow[iw] = static_cast<float>(static_cast<double>(grow[iw]) + acc[iw]);
        }
    }
}

void add_bias_rows(float* out, const float* bias, int channels, int ncols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(channels) * ncols > 16384)
#endif
    for (int c = 0; c < channels; ++c) {
        float* o = out + static_cast<std::size_t>(c) * ncols;
        const float b = bias[c];
        for (int j = 0; j < ncols; ++j) o[j] += b;
    }
}

namespace {

inline int win_lo(int i, int in, int out) { return static_cast<int>((static_cast<std::int64_t>(i) * in) / out); }
inline int win_hi(int i, int in, int out) {
    return static_cast<int>((static_cast<std::int64_t>(i + 1) * in + out - 1) / out);
}

} // namespace

void adaptive_pool_fwd(const float* x, float* y, int planes, int h, int w, int oh, int ow) {
    std::vector<int> c0(static_cast<std::size_t>(ow)), c1(static_cast<std::size_t>(ow));
    for (int j = 0; j < ow; ++j) {
        c0[static_cast<std::size_t>(j)] = win_lo(j, w, ow);
        c1[static_cast<std::size_t>(j)] = win_hi(j, w, ow);
    }
    const std::int64_t rows = static_cast<std::int64_t>(planes) * oh;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * ow > 2048)
#endif
    for (std::int64_t pr = 0; pr < rows; ++pr) {
        const int p = static_cast<int>(pr / oh);
        const int i = static_cast<int>(pr % oh);
        const int r0 = win_lo(i, h, oh), r1 = win_hi(i, h, oh);
        const float* plane = x + static_cast<std::size_t>(p) * h * w;
        float* orow = y + static_cast<std::size_t>(pr) * ow;
        for (int j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (int r = r0; r < r1; ++r) {
                const float* xr = plane + static_cast<std::size_t>(r) * w;
                for (int c = c0[static_cast<std::size_t>(j)]; c < c1[static_cast<std::size_t>(j)]; ++c) {
                    acc += xr[c];
                }
            }
            orow[j] = static_cast<float>(
                acc / (static_cast<double>(r1 - r0) * (c1[static_cast<std::size_t>(j)] - c0[static_cast<std::size_t>(j)])));
        }
    }
}

void adaptive_pool_bwd(const float* gy, float* gx_add, int planes, int h, int w, int oh, int ow) {
    if (h % oh == 0 && w % ow == 0) {
        // non-overlapping blocks: each input cell belongs to exactly one window
        const int sh = h / oh, sw = w / ow;
        const float inv = 1.0f / (static_cast<float>(sh) * sw);
        const std::int64_t in_rows = static_cast<std::int64_t>(planes) * h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (in_rows * w > 2048)
#endif
        for (std::int64_t pr = 0; pr < in_rows; ++pr) {
            const int p = static_cast<int>(pr / h);
            const int r = static_cast<int>(pr % h);
            const float* gr = gy + (static_cast<std::size_t>(p) * oh + static_cast<std::size_t>(r / sh)) * ow;
            float* grow = gx_add + static_cast<std::size_t>(pr) * w;
            for (int c = 0; c < w; ++c) {
                grow[c] = static_cast<float>(static_cast<double>(grow[c]) +
                                             static_cast<double>(gr[c / sw]) * inv);
            }
        }
        return;
    }
    // Per-axis lists of windows covering each input line (windows may overlap
    // when sizes do not divide).
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(h)), cols(static_cast<std::size_t>(w));
    for (int i = 0; i < oh; ++i)
        for (int r = win_lo(i, h, oh); r < win_hi(i, h, oh); ++r) rows[static_cast<std::size_t>(r)].push_back(i);
    for (int j = 0; j < ow; ++j)
        for (int c = win_lo(j, w, ow); c < win_hi(j, w, ow); ++c) cols[static_cast<std::size_t>(c)].push_back(j);
    std::vector<double> row_span(static_cast<std::size_t>(oh)), col_span(static_cast<std::size_t>(ow));
    for (int i = 0; i < oh; ++i) row_span[static_cast<std::size_t>(i)] = win_hi(i, h, oh) - win_lo(i, h, oh);
    for (int j = 0; j < ow; ++j) col_span[static_cast<std::size_t>(j)] = win_hi(j, w, ow) - win_lo(j, w, ow);

    const std::int64_t in_rows = static_cast<std::int64_t>(planes) * h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (in_rows * w > 2048)
#endif
    for (std::int64_t pr = 0; pr < in_rows; ++pr) {
        const int p = static_cast<int>(pr / h);
        const int r = static_cast<int>(pr % h);
        const float* gplane = gy + static_cast<std::size_t>(p) * oh * ow;
        float* grow = gx_add + static_cast<std::size_t>(pr) * w;
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i : rows[static_cast<std::size_t>(r)]) {
                const double hspan = row_span[static_cast<std::size_t>(i)];
                const float* gr = gplane + static_cast<std::size_t>(i) * ow;
                for (int j : cols[static_cast<std::size_t>(c)]) {
                    acc += gr[j] / (hspan * col_span[static_cast<std::size_t>(j)]);
                }
            }
            grow[c] = static_cast<float>(static_cast<double>(grow[c]) + acc);
        }
    }
}

void upsample_nearest_fwd(const float* x, float* y, int planes, int h, int w, int oh, int ow) {
    std::vector<int> src_c(static_cast<std::size_t>(ow));
    for (int j = 0; j < ow; ++j) src_c[static_cast<std::size_t>(j)] = static_cast<int>((static_cast<std::int64_t>(j) * w) / ow);
    const std::int64_t rows = static_cast<std::int64_t>(planes) * oh;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * ow > 2048)
#endif
    for (std::int64_t pr = 0; pr < rows; ++pr) {
        const int p = static_cast<int>(pr / oh);
        const int i = static_cast<int>(pr % oh);
        const int r = static_cast<int>((static_cast<std::int64_t>(i) * h) / oh);
        const float* xr = x + (static_cast<std::size_t>(p) * h + static_cast<std::size_t>(r)) * w;
        float* orow = y + static_cast<std::size_t>(pr) * ow;
        if (ow == 2 * w) {
            // common 2x case
            for (int c = 0; c < w; ++c) {
                orow[2 * c] = xr[c];
                orow[2 * c + 1] = xr[c];
            }
        } else {
            for (int j = 0; j < ow; ++j) orow[j] = xr[src_c[static_cast<std::size_t>(j)]];
        }
    }
}

void upsample_nearest_bwd(const float* gy, float* gx_add, int planes, int h, int w, int oh, int ow) {
    if (oh == 2 * h && ow == 2 * w) {
        const std::int64_t in_rows = static_cast<std::int64_t>(planes) * h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (in_rows * w > 2048)
#endif
        for (std::int64_t pr = 0; pr < in_rows; ++pr) {
            const int p = static_cast<int>(pr / h);
            const int r = static_cast<int>(pr % h);
            const float* g0 = gy + (static_cast<std::size_t>(p) * oh + 2 * static_cast<std::size_t>(r)) * ow;
            const float* g1 = g0 + ow;
            float* grow = gx_add + static_cast<std::size_t>(pr) * w;
            for (int c = 0; c < w; ++c) {
                const double acc = (static_cast<double>(g0[2 * c]) + g0[2 * c + 1]) +
                                   (static_cast<double>(g1[2 * c]) + g1[2 * c + 1]);
                grow[c] = static_cast<float>(static_cast<double>(grow[c]) + acc);
            }
        }
        return;
    }
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(h)), cols(static_cast<std::size_t>(w));
    for (int i = 0; i < oh; ++i) rows[static_cast<std::size_t>((static_cast<std::int64_t>(i) * h) / oh)].push_back(i);
    for (int j = 0; j < ow; ++j) cols[static_cast<std::size_t>((static_cast<std::int64_t>(j) * w) / ow)].push_back(j);
    const std::int64_t in_rows = static_cast<std::int64_t>(planes) * h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (in_rows * w > 2048)
#endif
    for (std::int64_t pr = 0; pr < in_rows; ++pr) {
        const int p = static_cast<int>(pr / h);
        const int r = static_cast<int>(pr % h);
        const float* gplane = gy + static_cast<std::size_t>(p) * oh * ow;
        float* grow = gx_add + static_cast<std::size_t>(pr) * w;
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i : rows[static_cast<std::size_t>(r)]) {
                const float* gr = gplane + static_cast<std::size_t>(i) * ow;
                for (int j : cols[static_cast<std::size_t>(c)]) acc += gr[j];
            }
            grow[c] = static_cast<float>(static_cast<double>(grow[c]) + acc);
        }
    }
}

namespace {

// align-corners=false source coordinate, clamped at the edges.
struct AxisMap {
    std::vector<int> lo, hi;
    std::vector<float> frac;
};

AxisMap make_axis_map(int in, int out) {
    AxisMap m;
    m.lo.resize(static_cast<std::size_t>(out));
    m.hi.resize(static_cast<std::size_t>(out));
    m.frac.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double s = (i + 0.5) * scale - 0.5;
        if (s < 0.0) s = 0.0;
        int lo = static_cast<int>(s);
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        m.lo[static_cast<std::size_t>(i)] = lo;
        m.hi[static_cast<std::size_t>(i)] = hi;
        m.frac[static_cast<std::size_t>(i)] = static_cast<float>(s - lo);
    }
    return m;
}

} // namespace

void upsample_bilinear_fwd(const float* x, float* y, int planes, int h, int w, int oh, int ow) {
    const AxisMap ym = make_axis_map(h, oh), xm = make_axis_map(w, ow);
    const std::int64_t rows = static_cast<std::int64_t>(planes) * oh;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * ow > 2048)
#endif
    for (std::int64_t pr = 0; pr < rows; ++pr) {
        const int p = static_cast<int>(pr / oh);
        const int i = static_cast<int>(pr % oh);
        const float* plane = x + static_cast<std::size_t>(p) * h * w;
        const float* top_row = plane + static_cast<std::size_t>(ym.lo[static_cast<std::size_t>(i)]) * w;
        const float* bot_row = plane + static_cast<std::size_t>(ym.hi[static_cast<std::size_t>(i)]) * w;
        const float fy = ym.frac[static_cast<std::size_t>(i)];
        float* orow = y + static_cast<std::size_t>(pr) * ow;
        for (int j = 0; j < ow; ++j) {
            const int c0 = xm.lo[static_cast<std::size_t>(j)], c1 = xm.hi[static_cast<std::size_t>(j)];
            const float fx = xm.frac[static_cast<std::size_t>(j)];
            const float top = top_row[c0] + (top_row[c1] - top_row[c0]) * fx;
            const float bot = bot_row[c0] + (bot_row[c1] - bot_row[c0]) * fx;
            orow[j] = top + (bot - top) * fy;
        }
    }
}

void upsample_bilinear_bwd(const float* gy, float* gx_add, int planes, int h, int w, int oh, int ow) {
    const AxisMap ym = make_axis_map(h, oh), xm = make_axis_map(w, ow);
    // Inverse lists: which output lines touch each input line, with weights.
    std::vector<std::vector<std::pair<int, float>>> rows(static_cast<std::size_t>(h)), cols(static_cast<std::size_t>(w));
    for (int i = 0; i < oh; ++i) {
        const float fy = ym.frac[static_cast<std::size_t>(i)];
        const int r0 = ym.lo[static_cast<std::size_t>(i)], r1 = ym.hi[static_cast<std::size_t>(i)];
        if (r0 == r1) {
            rows[static_cast<std::size_t>(r0)].push_back({i, 1.0f});
        } else {
            rows[static_cast<std::size_t>(r0)].push_back({i, 1.0f - fy});
            rows[static_cast<std::size_t>(r1)].push_back({i, fy});
        }
    }
    for (int j = 0; j < ow; ++j) {
        const float fx = xm.frac[static_cast<std::size_t>(j)];
        const int c0 = xm.lo[static_cast<std::size_t>(j)], c1 = xm.hi[static_cast<std::size_t>(j)];
        if (c0 == c1) {
            cols[static_cast<std::size_t>(c0)].push_back({j, 1.0f});
        } else {
            cols[static_cast<std::size_t>(c0)].push_back({j, 1.0f - fx});
            cols[static_cast<std::size_t>(c1)].push_back({j, fx});
        }
    }
    const std::int64_t in_rows = static_cast<std::int64_t>(planes) * h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (in_rows * w > 2048)
#endif
    for (std::int64_t pr = 0; pr < in_rows; ++pr) {
        const int p = static_cast<int>(pr / h);
        const int r = static_cast<int>(pr % h);
        const float* gplane = gy + static_cast<std::size_t>(p) * oh * ow;
        float* grow = gx_add + static_cast<std::size_t>(pr) * w;
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (const auto& [i, wy] : rows[static_cast<std::size_t>(r)]) {
                const float* gr = gplane + static_cast<std::size_t>(i) * ow;
                for (const auto& [j, wx] : cols[static_cast<std::size_t>(c)]) {
                    acc += static_cast<double>(gr[j]) * wy * wx;
                }
            }
            grow[c] = static_cast<float>(static_cast<double>(grow[c]) + acc);
        }
    }
}

void softmax_fwd(const float* x, float* y, std::int64_t outer, std::int64_t n, std::int64_t inner) {
    if (inner == 1) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (outer * n > 4096)
#endif
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* xs = x + o * n;
            float* ys = y + o * n;
            float mx = xs[0];
            for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, xs[k]);
            double denom = 0.0;
            for (std::int64_t k = 0; k < n; ++k) {
                const float e = std::exp(xs[k] - mx);
                ys[k] = e;
                denom += e;
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (std::int64_t k = 0; k < n; ++k) ys[k] *= inv;
        }
        return;
    }
    // Column-wise layout: sweep rows, vectorized across the inner extent.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (outer * n * inner > 4096)
#endif
    for (std::int64_t o = 0; o < outer; ++o) {
        const float* xs = x + o * n * inner;
        float* ys = y + o * n * inner;
        std::vector<float> mx(static_cast<std::size_t>(inner));
        std::vector<double> denom(static_cast<std::size_t>(inner), 0.0);
        std::memcpy(mx.data(), xs, sizeof(float) * static_cast<std::size_t>(inner));
        for (std::int64_t k = 1; k < n; ++k) {
            const float* row = xs + k * inner;
            for (std::int64_t i = 0; i < inner; ++i) mx[static_cast<std::size_t>(i)] = std::max(mx[static_cast<std::size_t>(i)], row[i]);
        }
        for (std::int64_t k = 0; k < n; ++k) {
            const float* row = xs + k * inner;
            float* yrow = ys + k * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                const float e = std::exp(row[i] - mx[static_cast<std::size_t>(i)]);
                yrow[i] = e;
                denom[static_cast<std::size_t>(i)] += e;
            }
        }
        std::vector<float> inv(static_cast<std::size_t>(inner));
        for (std::int64_t i = 0; i < inner; ++i) inv[static_cast<std::size_t>(i)] = static_cast<float>(1.0 / denom[static_cast<std::size_t>(i)]);
        for (std::int64_t k = 0; k < n; ++k) {
            float* yrow = ys + k * inner;
            for (std::int64_t i = 0; i < inner; ++i) yrow[i] *= inv[static_cast<std::size_t>(i)];
        }
    }
}

void softmax_bwd(const float* y, const float* gy, float* gx_add, std::int64_t outer, std::int64_t n,
                 std::int64_t inner) {
    if (inner == 1) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (outer * n > 4096)
#endif
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* ys = y + o * n;
            const float* gs = gy + o * n;
            float* xs = gx_add + o * n;
            double dot = 0.0;
            for (std::int64_t k = 0; k < n; ++k) dot += static_cast<double>(gs[k]) * ys[k];
            for (std::int64_t k = 0; k < n; ++k) {
                const double d = (static_cast<double>(gs[k]) - dot) * ys[k];
                xs[k] = static_cast<float>(static_cast<double>(xs[k]) + d);
            }
        }
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (outer * n * inner > 4096)
#endif
    for (std::int64_t o = 0; o < outer; ++o) {
        const float* ys = y + o * n * inner;
        const float* gs = gy + o * n * inner;
        float* xs = gx_add + o * n * inner;
        std::vector<double> dot(static_cast<std::size_t>(inner), 0.0);
        for (std::int64_t k = 0; k < n; ++k) {
            const float* yrow = ys + k * inner;
            const float* grow = gs + k * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                dot[static_cast<std::size_t>(i)] += static_cast<double>(grow[i]) * yrow[i];
            }
        }
        for (std::int64_t k = 0; k < n; ++k) {
            const float* yrow = ys + k * inner;
            const float* grow = gs + k * inner;
            float* xrow = xs + k * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                const double d = (static_cast<double>(grow[i]) - dot[static_cast<std::size_t>(i)]) * yrow[i];
                xrow[i] = static_cast<float>(static_cast<double>(xrow[i]) + d);
            }
        }
    }
}

void sigmoid_fwd(const float* x, float* y, std::int64_t n) {
    constexpr float lo = FLT_MIN;            // smallest positive normal
    constexpr float hi = 1.0f - 0x1.0p-24f;  // largest float below 1
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 1024)
#endif
    for (std::int64_t i = 0; i < n; ++i) {
        const float v = x[i];
        float s;
        if (v >= 0.0f) {
            s = 1.0f / (1.0f + std::exp(-v));
        } else {
            const float e = std::exp(v);
            s = e / (1.0f + e);
        }
        y[i] = std::min(hi, std::max(lo, s));
    }
}

void dropout_mask(const Rng& rng, std::uint64_t base, float p, std::uint8_t* mask, std::int64_t n) {
    const std::uint32_t threshold = static_cast<std::uint32_t>(static_cast<double>(p) * 4294967296.0);
    const std::int64_t blocks = (n + 3) / 4;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (blocks > 1024)
#endif
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        const auto words = philox::block(rng.seed(), rng.stream(), (base >> 2) + static_cast<std::uint64_t>(blk));
        const std::int64_t i0 = blk * 4;
        const std::int64_t lim = std::min<std::int64_t>(4, n - i0);
        for (std::int64_t j = 0; j < lim; ++j) {
            mask[i0 + j] = words[static_cast<std::size_t>(j)] >= threshold ? 1 : 0;
        }
    }
}

} // namespace uamsa::kern
