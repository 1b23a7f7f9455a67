#include "uamsa/msam.hpp"

#include <cmath>

namespace uamsa {

void validate_msam(const MsamConfig& cfg) {
    if (cfg.channels < 1) throw ParamError("msam: channels must be positive");
    if (cfg.reduction < 1 || cfg.channels % cfg.reduction != 0) {
        throw ParamError("msam: reduction " + std::to_string(cfg.reduction) + " must divide channels " +
                         std::to_string(cfg.channels));
    }
    if (cfg.pool_divisor < 1) throw ParamError("msam: pool_divisor must be >= 1");
}

Tensor attention_branch(const Tensor& x, const MsamBranchParams& params, const MsamConfig& cfg) {
    validate_msam(cfg);
    if (x.rank() != 4 || x.dim(1) != cfg.channels) {
        throw ShapeError("attention_branch: input " + shape_str(x.shape()) + " does not carry " +
                         std::to_string(cfg.channels) + " channels");
    }
    const int B = x.dim(0), C = cfg.channels, H = x.dim(2), W = x.dim(3);
    const int c_red = C / cfg.reduction;
    const int ph = std::max(1, H / cfg.pool_divisor);
    const int pw = std::max(1, W / cfg.pool_divisor);
    const int N = ph * pw;

    Tensor q = conv2d(x, params.wq, params.bq, 1, 0);
    Tensor k = conv2d(x, params.wk, params.bk, 1, 0);
    Tensor v = conv2d(x, params.wv, params.bv, 1, 0);
    q = adaptive_avg_pool2d(q, ph, pw);
    k = adaptive_avg_pool2d(k, ph, pw);
    v = adaptive_avg_pool2d(v, ph, pw);
    Tensor qf = reshape(q, {B, c_red, N});
    Tensor kf = reshape(k, {B, c_red, N});
    Tensor vf = reshape(v, {B, C, N});

    Tensor logits = batched_matmul(transpose_last2(qf), kf); // B x N x N
    logits = mul_scalar(logits, 1.0f / std::sqrt(static_cast<float>(c_red)));
    // Normalize over the axis contracted against V: columns of A sum to 1.
    Tensor attn = softmax(logits, 1);
    Tensor z = batched_matmul(vf, attn); // B x C x N
    z = reshape(z, {B, C, ph, pw});
    return upsample(z, H, W, UpsampleMode::bilinear);
}

Tensor msam_forward(const Tensor& x, const MsamParams& params, const MsamConfig& cfg) {
    validate_msam(cfg);
    if (x.rank() != 4) throw ShapeError("msam_forward: rank-4 input required, got " + shape_str(x.shape()));
    const int H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) {
        throw GeometryError("msam_forward: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                            " too small for the downsampled branch");
    }
    Tensor z_orig = attention_branch(x, params.orig, cfg);
    Tensor x_down = adaptive_avg_pool2d(x, (H + 1) / 2, (W + 1) / 2);
    Tensor z_down = upsample(attention_branch(x_down, params.down, cfg), H, W, UpsampleMode::bilinear);
    Tensor fused = concat({z_orig, z_down}, 1);
    return conv2d(fused, params.wf, params.bf, 1, 0);
}

} // namespace uamsa
