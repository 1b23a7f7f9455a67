#include "uamsa/ref.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

#include "uamsa/kernels.hpp"

namespace uamsa::ref {

DTensor from_tensor(const Tensor& t) {
    DTensor d(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) d.v[static_cast<std::size_t>(i)] = t.data()[i];
    return d;
}

Tensor to_tensor(const DTensor& t) {
    std::vector<float> f(t.v.size());
    for (std::size_t i = 0; i < t.v.size(); ++i) f[i] = static_cast<float>(t.v[i]);
    return Tensor::from_data(t.shape, std::move(f));
}

DTensor conv2d(const DTensor& x, const DTensor& w, const DTensor* bias, int stride, int pad) {
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    DTensor y({B, Cout, OH, OW});
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bias ? bias->v[static_cast<std::size_t>(co)] : 0.0;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj) {
                                const int ih = oh * stride - pad + ki;
                                const int iw = ow * stride - pad + kj;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.v[static_cast<std::size_t>(((b * Cin + ci) * H + ih) * W + iw)] *
                                       w.v[static_cast<std::size_t>(((co * Cin + ci) * kh + ki) * kw + kj)];
                            }
                    y.v[static_cast<std::size_t>(((b * Cout + co) * OH + oh) * OW + ow)] = acc;
                }
    return y;
}

DTensor adaptive_avg_pool2d(const DTensor& x, int oh, int ow) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    DTensor y({B, C, oh, ow});
    for (int p = 0; p < B * C; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const int r0 = static_cast<int>(static_cast<std::int64_t>(i) * H / oh);
                const int r1 = static_cast<int>((static_cast<std::int64_t>(i + 1) * H + oh - 1) / oh);
                const int c0 = static_cast<int>(static_cast<std::int64_t>(j) * W / ow);
                const int c1 = static_cast<int>((static_cast<std::int64_t>(j + 1) * W + ow - 1) / ow);
                double acc = 0.0;
                for (int r = r0; r < r1; ++r)
                    for (int c = c0; c < c1; ++c)
                        acc += x.v[static_cast<std::size_t>((p * H + r) * W + c)];
                y.v[static_cast<std::size_t>((p * oh + i) * ow + j)] =
                    acc / (static_cast<double>(r1 - r0) * (c1 - c0));
            }
    return y;
}

DTensor upsample_nearest(const DTensor& x, int oh, int ow) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    DTensor y({B, C, oh, ow});
    for (int p = 0; p < B * C; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const int r = static_cast<int>(static_cast<std::int64_t>(i) * H / oh);
                const int c = static_cast<int>(static_cast<std::int64_t>(j) * W / ow);
                y.v[static_cast<std::size_t>((p * oh + i) * ow + j)] =
                    x.v[static_cast<std::size_t>((p * H + r) * W + c)];
            }
    return y;
}

DTensor upsample_bilinear(const DTensor& x, int oh, int ow) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    DTensor y({B, C, oh, ow});
    for (int p = 0; p < B * C; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                double sy = (i + 0.5) * static_cast<double>(H) / oh - 0.5;
                double sx = (j + 0.5) * static_cast<double>(W) / ow - 0.5;
                if (sy < 0) sy = 0;
                if (sx < 0) sx = 0;
                int r0 = std::min(static_cast<int>(sy), H - 1);
                int c0 = std::min(static_cast<int>(sx), W - 1);
                const int r1 = std::min(r0 + 1, H - 1);
                const int c1 = std::min(c0 + 1, W - 1);
                const double fy = sy - r0, fx = sx - c0;
                const double v00 = x.v[static_cast<std::size_t>((p * H + r0) * W + c0)];
                const double v01 = x.v[static_cast<std::size_t>((p * H + r0) * W + c1)];
                const double v10 = x.v[static_cast<std::size_t>((p * H + r1) * W + c0)];
                const double v11 = x.v[static_cast<std::size_t>((p * H + r1) * W + c1)];
                const double top = v00 + (v01 - v00) * fx;
                const double bot = v10 + (v11 - v10) * fx;
                y.v[static_cast<std::size_t>((p * oh + i) * ow + j)] = top + (bot - top) * fy;
            }
    return y;
}

DTensor batched_matmul(const DTensor& a, const DTensor& b) {
    const int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    DTensor y({B, m, n});
    for (int bi = 0; bi < B; ++bi)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int t = 0; t < k; ++t)
                    acc += a.v[static_cast<std::size_t>((bi * m + i) * k + t)] *
                           b.v[static_cast<std::size_t>((bi * k + t) * n + j)];
                y.v[static_cast<std::size_t>((bi * m + i) * n + j)] = acc;
            }
    return y;
}

DTensor softmax(const DTensor& x, int axis) {
    std::int64_t outer = 1, inner = 1;
    const std::int64_t n = x.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < static_cast<int>(x.shape.size()); ++i) inner *= x.dim(i);
    DTensor y(x.shape);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            double mx = -HUGE_VAL;
            for (std::int64_t k = 0; k < n; ++k)
                mx = std::max(mx, x.v[static_cast<std::size_t>((o * n + k) * inner + in)]);
            double denom = 0.0;
            for (std::int64_t k = 0; k < n; ++k) {
                const double e = std::exp(x.v[static_cast<std::size_t>((o * n + k) * inner + in)] - mx);
                y.v[static_cast<std::size_t>((o * n + k) * inner + in)] = e;
                denom += e;
            }
            for (std::int64_t k = 0; k < n; ++k)
                y.v[static_cast<std::size_t>((o * n + k) * inner + in)] /= denom;
        }
    return y;
}

DTensor sigmoid(const DTensor& x) {
    DTensor y(x.shape);
    constexpr double lo = FLT_MIN;
    constexpr double hi = 1.0 - 0x1.0p-24;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double v = x.v[i];
        double s;
        if (v >= 0) {
            s = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            s = e / (1.0 + e);
        }
        y.v[i] = std::min(hi, std::max(lo, s));
    }
    return y;
}

DTensor relu(const DTensor& x) {
    DTensor y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > 0 ? x.v[i] : 0.0;
    return y;
}

DTensor dropout_with_mask(const DTensor& x, const std::vector<std::uint8_t>& mask, double scale) {
    DTensor y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = mask[i] ? x.v[i] * scale : 0.0;
    return y;
}

DTensor attention_branch(const DTensor& x, const BranchWeights& wts, int reduction, int pool_divisor) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int c_red = C / reduction;
    const int ph = std::max(1, H / pool_divisor);
    const int pw = std::max(1, W / pool_divisor);
    const int N = ph * pw;

    const DTensor q = adaptive_avg_pool2d(conv2d(x, wts.wq, &wts.bq, 1, 0), ph, pw);
    const DTensor k = adaptive_avg_pool2d(conv2d(x, wts.wk, &wts.bk, 1, 0), ph, pw);
    const DTensor v = adaptive_avg_pool2d(conv2d(x, wts.wv, &wts.bv, 1, 0), ph, pw);

    // logits[i][j] = sum_c q[c][i] k[c][j] / sqrt(c_red); column softmax over i;
    // z[c][j] = sum_i v[c][i] a[i][j].
    DTensor z({B, C, ph, pw});
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c_red));
    for (int b = 0; b < B; ++b) {
        std::vector<double> logits(static_cast<std::size_t>(N) * N);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                double acc = 0.0;
                for (int c = 0; c < c_red; ++c)
                    acc += q.v[static_cast<std::size_t>((b * c_red + c) * N + i)] *
                           k.v[static_cast<std::size_t>((b * c_red + c) * N + j)];
                logits[static_cast<std::size_t>(i) * N + j] = acc * inv_sqrt;
            }
        std::vector<double> attn(static_cast<std::size_t>(N) * N);
        for (int j = 0; j < N; ++j) {
            double mx = -HUGE_VAL;
            for (int i = 0; i < N; ++i) mx = std::max(mx, logits[static_cast<std::size_t>(i) * N + j]);
            double denom = 0.0;
            for (int i = 0; i < N; ++i) {
                const double e = std::exp(logits[static_cast<std::size_t>(i) * N + j] - mx);
                attn[static_cast<std::size_t>(i) * N + j] = e;
                denom += e;
            }
            for (int i = 0; i < N; ++i) attn[static_cast<std::size_t>(i) * N + j] /= denom;
        }
        for (int c = 0; c < C; ++c)
            for (int j = 0; j < N; ++j) {
                double acc = 0.0;
                for (int i = 0; i < N; ++i)
                    acc += v.v[static_cast<std::size_t>((b * C + c) * N + i)] *
                           attn[static_cast<std::size_t>(i) * N + j];
                z.v[static_cast<std::size_t>((b * C + c) * N + j)] = acc;
            }
    }
    return upsample_bilinear(z, H, W);
}

DTensor msam_forward(const DTensor& x, const MsamWeights& wts, int reduction, int pool_divisor) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const DTensor z_orig = attention_branch(x, wts.orig, reduction, pool_divisor);
    const DTensor x_down = adaptive_avg_pool2d(x, (H + 1) / 2, (W + 1) / 2);
    const DTensor z_down =
        upsample_bilinear(attention_branch(x_down, wts.down, reduction, pool_divisor), H, W);
    DTensor cat({B, 2 * C, H, W});
    const std::size_t plane = static_cast<std::size_t>(C) * H * W;
    for (int b = 0; b < B; ++b) {
        std::copy_n(z_orig.v.begin() + static_cast<std::ptrdiff_t>(b * plane), plane,
                    cat.v.begin() + static_cast<std::ptrdiff_t>(2 * b * plane));
        std::copy_n(z_down.v.begin() + static_cast<std::ptrdiff_t>(b * plane), plane,
                    cat.v.begin() + static_cast<std::ptrdiff_t>((2 * b + 1) * plane));
    }
    return conv2d(cat, wts.wf, &wts.bf, 1, 0);
}

ParamMap params_from_model(const Model& m) {
    ParamMap out;
    for (const auto& [name, t] : m.params) out.emplace(name, from_tensor(t));
    return out;
}

namespace {

const DTensor& at(const ParamMap& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw Error("ref: missing parameter '" + name + "'");
    return it->second;
}

DTensor drop(DTensor h, float dropout_p, bool active, RngSequence& seq) {
    if (!active || dropout_p == 0.0f) {
        return h;
    }
    std::vector<std::uint8_t> mask(h.v.size());
    const std::uint64_t base = seq.reserve(static_cast<std::uint64_t>(h.v.size()));
    kern::dropout_mask(seq.rng(), base, dropout_p, mask.data(), static_cast<std::int64_t>(h.v.size()));
    return dropout_with_mask(h, mask, 1.0 / (1.0 - static_cast<double>(dropout_p)));
}

DTensor block(const ParamMap& p, const std::string& prefix, const DTensor& x, float dropout_p,
              bool active, RngSequence& seq) {
    DTensor h = relu(conv2d(x, at(p, prefix + ".conv1.weight"), &at(p, prefix + ".conv1.bias"), 1, 1));
    h = drop(std::move(h), dropout_p, active, seq);
    h = relu(conv2d(h, at(p, prefix + ".conv2.weight"), &at(p, prefix + ".conv2.bias"), 1, 1));
    return drop(std::move(h), dropout_p, active, seq);
}

BranchWeights branch(const ParamMap& p, const std::string& prefix) {
    return {at(p, prefix + ".wq.weight"), at(p, prefix + ".wq.bias"), at(p, prefix + ".wk.weight"),
            at(p, prefix + ".wk.bias"),   at(p, prefix + ".wv.weight"), at(p, prefix + ".wv.bias")};
}

} // namespace

DTensor model_forward(const ModelSpec& spec, const ParamMap& params, const DTensor& x, bool active_dropout,
                      Rng rng) {
    RngSequence seq(rng);
    DTensor h = x;
    std::vector<DTensor> skips;
    for (int l = 0; l < spec.depth; ++l) {
        const std::string enc = "enc" + std::to_string(l);
        h = block(params, enc, h, spec.dropout_p, active_dropout, seq);
        if (spec.variant == Variant::uamsa) {
            MsamWeights w;
            w.orig = branch(params, enc + ".msam.orig");
            w.down = spec.msam.share_branch_weights ? w.orig : branch(params, enc + ".msam.down");
            w.wf = at(params, enc + ".msam.fuse.weight");
            w.bf = at(params, enc + ".msam.fuse.bias");
            h = msam_forward(h, w, spec.msam.reduction, spec.msam.pool_divisor);
        }
        skips.push_back(h);
        h = adaptive_avg_pool2d(h, h.dim(2) / 2, h.dim(3) / 2);
    }
    h = block(params, "bottleneck", h, spec.dropout_p, active_dropout, seq);
    for (int l = spec.depth - 1; l >= 0; --l) {
        const std::string dec = "dec" + std::to_string(l);
        h = upsample_nearest(h, h.dim(2) * 2, h.dim(3) * 2);
        h = conv2d(h, at(params, dec + ".up.weight"), &at(params, dec + ".up.bias"), 1, 1);
        const DTensor& skip = skips[static_cast<std::size_t>(l)];
        DTensor cat({h.dim(0), h.dim(1) + skip.dim(1), h.dim(2), h.dim(3)});
        const std::size_t plane_h = static_cast<std::size_t>(h.dim(1)) * h.dim(2) * h.dim(3);
        const std::size_t plane_s = static_cast<std::size_t>(skip.dim(1)) * skip.dim(2) * skip.dim(3);
        for (int b = 0; b < h.dim(0); ++b) {
            std::copy_n(h.v.begin() + static_cast<std::ptrdiff_t>(b * plane_h), plane_h,
                        cat.v.begin() + static_cast<std::ptrdiff_t>(b * (plane_h + plane_s)));
            std::copy_n(skip.v.begin() + static_cast<std::ptrdiff_t>(b * plane_s), plane_s,
                        cat.v.begin() + static_cast<std::ptrdiff_t>(b * (plane_h + plane_s) + plane_h));
        }
        h = block(params, dec, cat, spec.dropout_p, active_dropout, seq);
    }
    return conv2d(h, at(params, "head.weight"), &at(params, "head.bias"), 1, 0);
}

double bce(const DTensor& prob, const DTensor& target, double eps) {
    double acc = 0.0;
    for (std::size_t i = 0; i < prob.v.size(); ++i) {
        const double p = std::min(1.0 - eps, std::max(eps, prob.v[i]));
        const double t = target.v[i];
        acc += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    return acc / static_cast<double>(prob.v.size());
}

LossValue smoothing_loss(const std::vector<DTensor>& sample_probs, const DTensor& target, double lambda_u,
                         double eps) {
    const int T = static_cast<int>(sample_probs.size());
    const std::size_t n = sample_probs[0].v.size();
    DTensor mean(sample_probs[0].shape);
    for (const DTensor& s : sample_probs)
        for (std::size_t i = 0; i < n; ++i) mean.v[i] += s.v[i];
    for (std::size_t i = 0; i < n; ++i) mean.v[i] /= T;
    double var_acc = 0.0;
    for (const DTensor& s : sample_probs)
        for (std::size_t i = 0; i < n; ++i) {
            const double d = s.v[i] - mean.v[i];
            var_acc += d * d;
        }
    const double var_part = var_acc / (static_cast<double>(T) * static_cast<double>(n));
    const double bce_part = bce(mean, target, eps);
    return {bce_part + lambda_u * var_part, bce_part, var_part};
}

double mc_loss(const ModelSpec& spec, const ParamMap& params, const DTensor& x, const DTensor& target,
               int t_passes, double lambda_u, double eps, Rng rng) {
    std::vector<DTensor> stack;
    stack.reserve(static_cast<std::size_t>(t_passes));
    for (int t = 0; t < t_passes; ++t) {
        stack.push_back(sigmoid(model_forward(spec, params, x, true, rng.split(static_cast<std::uint64_t>(t)))));
    }
    return smoothing_loss(stack, target, lambda_u, eps).total;
}

} // namespace uamsa::ref
