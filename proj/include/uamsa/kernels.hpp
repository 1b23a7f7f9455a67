#pragma once

#include <cstdint>
#include <vector>

#include "uamsa/rng.hpp"
#include "uamsa/tensor.hpp"

// Low-level float kernels, OpenMP-parallel. Every kernel is deterministic
// for any thread count: threads own disjoint output ranges and each output
// element is reduced in a fixed serial order (or with a fixed accumulator
// pattern). The serial double-precision counterparts live in uamsa::ref and
// back the test oracles and the benchmark baseline.
namespace uamsa::kern {

// Row-major GEMM family. accumulate=false overwrites C, true adds into it.
// nn: C(MxN) = A(MxK) * B(KxN)
// nt: C(MxN) = A(MxK) * B(NxK)^T
// tn: C(MxN) = A(KxM)^T * B(KxN)
void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);
void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);
void gemm_tn(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);

struct ConvGeom {
    int in_c, in_h, in_w;
    int out_c, out_h, out_w;
    int kh, kw, stride, pad;
};

// cols is (in_c*kh*kw) x (out_h*out_w) for one image; rows are written with
// leading dimension ld so a batch can share one wide buffer.
void im2col(const float* x, const ConvGeom& g, float* cols, std::int64_t ld);
// Transposed layout: (out_h*out_w) x (in_c*kh*kw), rows contiguous.
void im2colT(const float* x, const ConvGeom& g, float* cols_t);
// Gather-form adjoint of im2col, accumulated (in double) into gx; dcols rows
// have leading dimension ld.
void col2im_add(const float* dcols, const ConvGeom& g, std::int64_t ld, float* gx);

// (B, C, N) <-> (C, B*N) layout folds for batch-wide conv GEMMs.
void fold_bcn(const float* src, float* dst, int b, int c, std::int64_t n);
void unfold_bcn(const float* src, float* dst, int b, int c, std::int64_t n);
// dst(cols x rows) = src(rows x cols)^T
void transpose_2d(const float* src, float* dst, int rows, int cols);

void add_bias_rows(float* out, const float* bias, int channels, int ncols);

// Adaptive average pooling, window [floor(i*H/oh), ceil((i+1)*H/oh)).
void adaptive_pool_fwd(const float* x, float* y, int planes, int h, int w, int oh, int ow);
void adaptive_pool_bwd(const float* gy, float* gx_add, int planes, int h, int w, int oh, int ow);

void upsample_nearest_fwd(const float* x, float* y, int planes, int h, int w, int oh, int ow);
void upsample_nearest_bwd(const float* gy, float* gx_add, int planes, int h, int w, int oh, int ow);

void upsample_bilinear_fwd(const float* x, float* y, int planes, int h, int w, int oh, int ow);
void upsample_bilinear_bwd(const float* gy, float* gx_add, int planes, int h, int w, int oh, int ow);

// Softmax over the middle extent of a (outer, n, inner) view.
void softmax_fwd(const float* x, float* y, std::int64_t outer, std::int64_t n, std::int64_t inner);
void softmax_bwd(const float* y, const float* gy, float* gx_add, std::int64_t outer, std::int64_t n,
                 std::int64_t inner);

// Numerically stable sigmoid; output clamped into the open interval
// (0,1) at float precision: [FLT_MIN, 1 - 2^-24].
void sigmoid_fwd(const float* x, float* y, std::int64_t n);

// Reusable thread-local buffer (resized without initialization); avoids
// refaulting fresh pages for the large conv scratches. Slots are private to
// one kernel invocation on the calling thread.
FloatVec& scratch(int slot, std::size_t size);

// mask[i] = 1 with probability 1-p, from counters base..base+n-1 of rng;
// base must be 4-aligned (RngSequence::reserve guarantees this).
void dropout_mask(const Rng& rng, std::uint64_t base, float p, std::uint8_t* mask, std::int64_t n);

} // namespace uamsa::kern
