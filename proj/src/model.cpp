#include "uamsa/model.hpp"

#include <algorithm>
#include <cmath>

namespace uamsa {

std::string variant_name(Variant v) { return v == Variant::uamsa ? "uamsa" : "plain_unet"; }

Variant parse_variant(const std::string& s) {
    if (s == "uamsa") return Variant::uamsa;
    if (s == "plain_unet") return Variant::plain_unet;
    throw ConfigError("unknown variant '" + s + "' (expected uamsa or plain_unet)");
}

void validate_spec(const ModelSpec& spec) {
    if (spec.depth < 1) throw ParamError("model: depth must be >= 1");
    if (spec.base_channels < 1) throw ParamError("model: base_channels must be >= 1");
    if (spec.in_channels < 1 || spec.out_channels < 1) throw ParamError("model: channel counts must be >= 1");
    if (!(spec.dropout_p >= 0.0f && spec.dropout_p < 1.0f)) {
        throw ParamError("model: dropout_p must satisfy 0 <= p < 1");
    }
    if (spec.variant == Variant::uamsa) {
        if (spec.msam.reduction < 1 || spec.base_channels % spec.msam.reduction != 0) {
            throw ParamError("model: msam reduction must divide base_channels");
        }
        if (spec.msam.pool_divisor < 1) throw ParamError("model: msam pool_divisor must be >= 1");
    }
}

namespace {

int enc_channels(const ModelSpec& spec, int level) { return spec.base_channels << level; }

void push_conv(std::vector<ParamDesc>& out, const std::string& prefix, int cout, int cin, int k) {
    out.push_back({prefix + ".weight", {cout, cin, k, k}});
    out.push_back({prefix + ".bias", {cout}});
}

void push_branch(std::vector<ParamDesc>& out, const std::string& prefix, int c, int c_red) {
    push_conv(out, prefix + ".wq", c_red, c, 1);
    push_conv(out, prefix + ".wk", c_red, c, 1);
    push_conv(out, prefix + ".wv", c, c, 1);
}

} // namespace

std::vector<ParamDesc> parameter_schema(const ModelSpec& spec) {
    validate_spec(spec);
    std::vector<ParamDesc> out;
    for (int l = 0; l < spec.depth; ++l) {
        const int cin = l == 0 ? spec.in_channels : enc_channels(spec, l - 1);
        const int c = enc_channels(spec, l);
        push_conv(out, "enc" + std::to_string(l) + ".conv1", c, cin, 3);
        push_conv(out, "enc" + std::to_string(l) + ".conv2", c, c, 3);
        if (spec.variant == Variant::uamsa) {
            const int c_red = c / spec.msam.reduction;
            const std::string m = "enc" + std::to_string(l) + ".msam";
            push_branch(out, m + ".orig", c, c_red);
            if (!spec.msam.share_branch_weights) {
                push_branch(out, m + ".down", c, c_red);
            }
            push_conv(out, m + ".fuse", c, 2 * c, 1);
        }
    }
    const int cb = enc_channels(spec, spec.depth - 1);
    push_conv(out, "bottleneck.conv1", 2 * cb, cb, 3);
    push_conv(out, "bottleneck.conv2", 2 * cb, 2 * cb, 3);
    for (int l = spec.depth - 1; l >= 0; --l) {
        const int c = enc_channels(spec, l);
        push_conv(out, "dec" + std::to_string(l) + ".up", c, 2 * c, 3);
        push_conv(out, "dec" + std::to_string(l) + ".conv1", c, 2 * c, 3);
        push_conv(out, "dec" + std::to_string(l) + ".conv2", c, c, 3);
    }
    push_conv(out, "head", spec.out_channels, spec.base_channels, 1);
    return out;
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw Error("model: missing parameter '" + name + "'");
    return it->second;
}

Tensor& Model::param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("model: missing parameter '" + name + "'");
    return it->second;
}

std::int64_t Model::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

Model build(const ModelSpec& spec, Rng rng) {
    validate_spec(spec);
    Model model;
    model.spec = spec;
    RngSequence seq(rng);
    for (const ParamDesc& d : parameter_schema(spec)) {
        if (d.shape.size() == 4) {
            const float fan_in = static_cast<float>(d.shape[1]) * d.shape[2] * d.shape[3];
            const float bound = std::sqrt(6.0f / fan_in);
            model.params.emplace(d.name, uniform_tensor(d.shape, -bound, bound, seq, true));
        } else {
            model.params.emplace(d.name, Tensor::zeros(d.shape, true));
        }
    }
    return model;
}

Tensor conv_block(const Tensor& x, const ConvBlockParams& p, float dropout_p, bool active_dropout,
                  RngSequence& rng) {
    Tensor h = conv2d(x, p.w1, p.b1, 1, 1);
    h = relu(h);
    h = dropout(h, dropout_p, active_dropout, rng);
    h = conv2d(h, p.w2, p.b2, 1, 1);
    h = relu(h);
    return dropout(h, dropout_p, active_dropout, rng);
}

namespace {

ConvBlockParams block_params(const Model& m, const std::string& prefix) {
    return {m.param(prefix + ".conv1.weight"), m.param(prefix + ".conv1.bias"),
            m.param(prefix + ".conv2.weight"), m.param(prefix + ".conv2.bias")};
}

MsamBranchParams branch_params(const Model& m, const std::string& prefix) {
    return {m.param(prefix + ".wq.weight"), m.param(prefix + ".wq.bias"),
            m.param(prefix + ".wk.weight"), m.param(prefix + ".wk.bias"),
            m.param(prefix + ".wv.weight"), m.param(prefix + ".wv.bias")};
}

} // namespace

Tensor forward(const Model& model, const Tensor& x, Rng rng) {
    const ModelSpec& spec = model.spec;
    validate_spec(spec);
    if (x.rank() != 4 || x.dim(1) != spec.in_channels) {
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not carry " +
                         std::to_string(spec.in_channels) + " channels");
    }
    const int H = x.dim(2), W = x.dim(3);
    const int div = 1 << spec.depth;
    if (H % div || W % div || H < div || W < div) {
        throw GeometryError("forward: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                            " not divisible by 2^depth = " + std::to_string(div));
    }
    const bool drop = model.mode != Mode::deterministic;
    RngSequence seq(rng);

    Tensor h = x;
    std::vector<Tensor> skips;
    skips.reserve(static_cast<std::size_t>(spec.depth));
    for (int l = 0; l < spec.depth; ++l) {
        const std::string enc = "enc" + std::to_string(l);
        h = conv_block(h, block_params(model, enc), spec.dropout_p, drop, seq);
        if (spec.variant == Variant::uamsa) {
            MsamConfig cfg{enc_channels(spec, l), spec.msam.reduction, spec.msam.pool_divisor,
                           spec.msam.share_branch_weights};
            MsamParams mp;
            mp.orig = branch_params(model, enc + ".msam.orig");
            mp.down = spec.msam.share_branch_weights ? mp.orig : branch_params(model, enc + ".msam.down");
            mp.wf = model.param(enc + ".msam.fuse.weight");
            mp.bf = model.param(enc + ".msam.fuse.bias");
            h = msam_forward(h, mp, cfg);
        }
        skips.push_back(h);
        h = adaptive_avg_pool2d(h, h.dim(2) / 2, h.dim(3) / 2);
    }
    h = conv_block(h, block_params(model, "bottleneck"), spec.dropout_p, drop, seq);
    for (int l = spec.depth - 1; l >= 0; --l) {
        const std::string dec = "dec" + std::to_string(l);
        h = upsample(h, h.dim(2) * 2, h.dim(3) * 2, UpsampleMode::nearest);
        h = conv2d(h, model.param(dec + ".up.weight"), model.param(dec + ".up.bias"), 1, 1);
        h = concat({h, skips[static_cast<std::size_t>(l)]}, 1);
        h = conv_block(h, block_params(model, dec), spec.dropout_p, drop, seq);
    }
    return conv2d(h, model.param("head.weight"), model.param("head.bias"), 1, 0);
}

namespace {

struct CostAcc {
    std::int64_t conv = 0, attn = 0, other = 0;

    void add_conv(std::int64_t cout, std::int64_t cin, std::int64_t k, std::int64_t h, std::int64_t w) {
        conv += 2 * cout * cin * k * k * h * w;
    }
};

void branch_cost(CostAcc& acc, int c, int c_red, int h, int w, int pool_divisor) {
    const std::int64_t ph = std::max(1, h / pool_divisor);
    const std::int64_t pw = std::max(1, w / pool_divisor);
    const std::int64_t n = ph * pw;
    acc.add_conv(c_red, c, 1, h, w); // Q
    acc.add_conv(c_red, c, 1, h, w); // K
    acc.add_conv(c, c, 1, h, w);     // V
    acc.other += 2 * c_red * n + static_cast<std::int64_t>(c) * n; // pools
    acc.attn += 2 * n * c_red * n;  // Q^T K
    acc.attn += n * n;              // scale
    acc.attn += n * n;              // softmax
    acc.attn += 2 * static_cast<std::int64_t>(c) * n * n; // V A
    acc.other += static_cast<std::int64_t>(c) * h * w;    // upsample
}

void msam_cost(CostAcc& acc, int c, int c_red, int h, int w, int pool_divisor) {
    branch_cost(acc, c, c_red, h, w, pool_divisor);
    const int dh = (h + 1) / 2, dw = (w + 1) / 2;
    acc.other += static_cast<std::int64_t>(c) * dh * dw; // 2x pool
    branch_cost(acc, c, c_red, dh, dw, pool_divisor);
    acc.other += static_cast<std::int64_t>(c) * h * w; // upsample of down branch
    acc.add_conv(c, 2 * c, 1, h, w);                   // fusion
}

void block_cost(CostAcc& acc, int cin, int cout, int h, int w) {
    acc.add_conv(cout, cin, 3, h, w);
    acc.other += static_cast<std::int64_t>(cout) * h * w; // relu
    acc.add_conv(cout, cout, 3, h, w);
    acc.other += static_cast<std::int64_t>(cout) * h * w; // relu
    // dropout is identity at inference: 0
}

} // namespace

CostReport count_params_flops(const ModelSpec& spec, int H, int W) {
    validate_spec(spec);
    const int div = 1 << spec.depth;
    if (H % div || W % div || H < div || W < div) {
        throw GeometryError("count_params_flops: spatial size " + std::to_string(H) + "x" +
                            std::to_string(W) + " not divisible by 2^depth = " + std::to_string(div));
    }
    CostReport report;
    for (const ParamDesc& d : parameter_schema(spec)) report.params += shape_numel(d.shape);

    CostAcc acc;
    int h = H, w = W;
    for (int l = 0; l < spec.depth; ++l) {
        const int cin = l == 0 ? spec.in_channels : enc_channels(spec, l - 1);
        const int c = enc_channels(spec, l);
        block_cost(acc, cin, c, h, w);
        if (spec.variant == Variant::uamsa) {
            msam_cost(acc, c, c / spec.msam.reduction, h, w, spec.msam.pool_divisor);
        }
        acc.other += static_cast<std::int64_t>(c) * (h / 2) * (w / 2); // 2x2 average pool
        h /= 2;
        w /= 2;
    }
    const int cb = enc_channels(spec, spec.depth - 1);
    block_cost(acc, cb, 2 * cb, h, w);
    for (int l = spec.depth - 1; l >= 0; --l) {
        const int c = enc_channels(spec, l);
        h *= 2;
        w *= 2;
        acc.other += static_cast<std::int64_t>(2 * c) * h * w; // nearest upsample
        acc.add_conv(c, 2 * c, 3, h, w);                       // channel-halving conv
        block_cost(acc, 2 * c, c, h, w);
    }
    acc.add_conv(spec.out_channels, spec.base_channels, 1, H, W); // head
    report.flops_conv = acc.conv;
    report.flops_attention = acc.attn;
    report.flops_other = acc.other;
    report.flops_total = acc.conv + acc.attn + acc.other;
    return report;
}

} // namespace uamsa
