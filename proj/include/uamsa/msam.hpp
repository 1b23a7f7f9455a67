#pragma once

#include "uamsa/ops.hpp"
#include "uamsa/tensor.hpp"

namespace uamsa {

// Dual-scale attention module: one attention branch at the input resolution,
// one after 2x average-pool downsampling, fused by a 1x1 convolution over the
// channel concatenation.
struct MsamConfig {
    int channels = 0;       // C
    int reduction = 2;      // r, must divide C; C_red = C / r
    int pool_divisor = 4;   // queries/keys/values pooled to max(1, floor(H/4))
    bool share_branch_weights = false;
};

void validate_msam(const MsamConfig& cfg);

struct MsamBranchParams {
    Tensor wq, bq; // C_red x C x 1 x 1
    Tensor wk, bk; // C_red x C x 1 x 1
    Tensor wv, bv; // C x C x 1 x 1
};

struct MsamParams {
    MsamBranchParams orig;
    MsamBranchParams down; // aliases orig when share_branch_weights
    Tensor wf, bf;         // C x 2C x 1 x 1 fusion
};

// Single-scale attention. Query/key/value 1x1 convs, adaptive-average pool
// to H' x W' (N = H'W'), attention A = softmax(Q^T K / sqrt(C_red)) normalized
// over the axis contracted against V, context Z = V A, bilinear upsample back
// to H x W. Every output position is a convex combination of pooled value
// vectors.
Tensor attention_branch(const Tensor& x, const MsamBranchParams& params, const MsamConfig& cfg);

Tensor msam_forward(const Tensor& x, const MsamParams& params, const MsamConfig& cfg);

} // namespace uamsa
