#include "uamsa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "uamsa/kernels.hpp"
#include "uamsa/parallel.hpp"

namespace uamsa {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

// delta may be consumed; grad accumulation runs in double per element.
void add_into(const ImplPtr& t, const float* delta) {
    t->ensure_grad();
    float* g = t->grad.data();
    parallel_for(t->numel(), [&](std::int64_t i) {
        g[i] = static_cast<float>(static_cast<double>(g[i]) + static_cast<double>(delta[i]));
    });
}

// f(upstream, aux) -> contribution; used for pointwise backward rules.
template <class F>
void add_into_map(const ImplPtr& t, const FloatVec& up, F&& f) {
    t->ensure_grad();
    float* g = t->grad.data();
    parallel_for(t->numel(), [&](std::int64_t i) {
        g[i] = static_cast<float>(static_cast<double>(g[i]) + f(i, static_cast<double>(up[static_cast<std::size_t>(i)])));
    });
}

struct AxisView {
    std::int64_t outer, n, inner;
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    AxisView v{1, s[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.inner *= s[static_cast<std::size_t>(i)];
    return v;
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                         shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Tensor finish(Tensor y, const char* op) {
    check_finite(y.data(), y.numel(), op);
    return y;
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank(input, 4, "conv2d");
    require_rank(weight, 4, "conv2d");
    if (stride < 1) throw ParamError("conv2d: stride must be >= 1");
    if (padding < 0) throw ParamError("conv2d: padding must be >= 0");
    const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != Cin) {
        throw ShapeError("conv2d: input channels " + shape_str(input.shape()) + " do not match weight " +
                         shape_str(weight.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    const int hn = H + 2 * padding - kh;
    const int wn = W + 2 * padding - kw;
    if (hn < 0 || wn < 0 || hn % stride || wn % stride) {
        throw GeometryError("conv2d: non-integral output size for input " + shape_str(input.shape()) +
                            ", kernel " + shape_str(weight.shape()) + ", stride " + std::to_string(stride) +
                            ", pad " + std::to_string(padding));
    }
    const int OH = hn / stride + 1, OW = wn / stride + 1;
    const kern::ConvGeom geom{Cin, H, W, Cout, OH, OW, kh, kw, stride, padding};
    const std::int64_t ncols = static_cast<std::int64_t>(OH) * OW;
    const std::int64_t krows = static_cast<std::int64_t>(Cin) * kh * kw;

    if (kh == 1 && kw == 1 && stride == 1 && padding == 0) {
        // pointwise conv: per-image GEMM, no im2col/col2im and no layout folds
        Tensor y = Tensor::uninit({B, Cout, OH, OW});
        for (int b = 0; b < B; ++b) {
            float* out = y.data() + static_cast<std::size_t>(b) * Cout * ncols;
            kern::gemm_nn(Cout, static_cast<int>(ncols), Cin,
                          weight.data(), input.data() + static_cast<std::size_t>(b) * Cin * ncols, out,
                          false);
            if (bias.defined()) kern::add_bias_rows(out, bias.data(), Cout, static_cast<int>(ncols));
        }
        Tape* tape = active_tape();
        const bool gx = needs_grad(input, tape), gw = needs_grad(weight, tape), gb = needs_grad(bias, tape);
        if (tape && (gx || gw || gb)) {
            ImplPtr xi = input.handle(), wi = weight.handle(), yi = y.handle();
            ImplPtr bi = bias.defined() ? bias.handle() : nullptr;
            tape->record("conv2d", yi, [=]() {
                const float* gy = yi->grad.data();
                if (gb && bi) {
                    bi->ensure_grad();
                    for (int c = 0; c < Cout; ++c) {
                        double acc = 0.0;
                        for (int b = 0; b < B; ++b) {
                            acc += deterministic_sum(gy + (static_cast<std::size_t>(b) * Cout + c) * ncols,
                                                     ncols);
                        }
                        auto& g = bi->grad[static_cast<std::size_t>(c)];
                        g = static_cast<float>(static_cast<double>(g) + acc);
                    }
                }
                if (gw) {
                    FloatVec dw(wi->data.size());
                    for (int b = 0; b < B; ++b) {
                        kern::gemm_nt(Cout, Cin, static_cast<int>(ncols),
                                      gy + static_cast<std::size_t>(b) * Cout * ncols,
                                      xi->data.data() + static_cast<std::size_t>(b) * Cin * ncols, dw.data(),
                                      b != 0);
                    }
                    add_into(wi, dw.data());
                }
                if (gx) {
                    xi->ensure_grad();
                    FloatVec w_t(wi->data.size());
                    kern::transpose_2d(wi->data.data(), w_t.data(), Cout, Cin);
                    FloatVec& dxb = kern::scratch(2, static_cast<std::size_t>(Cin) * ncols);
                    for (int b = 0; b < B; ++b) {
                        kern::gemm_nn(Cin, static_cast<int>(ncols), Cout, w_t.data(),
                                      gy + static_cast<std::size_t>(b) * Cout * ncols, dxb.data(), false);
                        float* g = xi->grad.data() + static_cast<std::size_t>(b) * Cin * ncols;
                        parallel_for(static_cast<std::int64_t>(Cin) * ncols, [&](std::int64_t i) {
                            g[i] = static_cast<float>(static_cast<double>(g[i]) +
                                                      static_cast<double>(dxb[static_cast<std::size_t>(i)]));
                        });
                    }
                }
            });
        }
        return finish(std::move(y), "conv2d");
    }

    Tensor y = Tensor::uninit({B, Cout, OH, OW});
    {
        // one wide GEMM over the whole batch, then unfold to B x Cout x N
        const std::int64_t wide = static_cast<std::int64_t>(B) * ncols;
        FloatVec& cols = kern::scratch(0, static_cast<std::size_t>(krows * wide));
        for (int b = 0; b < B; ++b) {
            kern::im2col(input.data() + static_cast<std::size_t>(b) * Cin * H * W, geom,
                         cols.data() + static_cast<std::size_t>(b) * ncols, wide);
        }
        FloatVec& out_fold = kern::scratch(1, static_cast<std::size_t>(Cout) * wide);
        kern::gemm_nn(Cout, static_cast<int>(wide), static_cast<int>(krows), weight.data(), cols.data(),
                      out_fold.data(), false);
        if (bias.defined()) {
            kern::add_bias_rows(out_fold.data(), bias.data(), Cout, static_cast<int>(wide));
        }
        kern::unfold_bcn(out_fold.data(), y.data(), B, Cout, ncols);
    }

    Tape* tape = active_tape();
    const bool gx = needs_grad(input, tape), gw = needs_grad(weight, tape), gb = needs_grad(bias, tape);
    if (tape && (gx || gw || gb)) {
        ImplPtr xi = input.handle(), wi = weight.handle(), yi = y.handle();
        ImplPtr bi = bias.defined() ? bias.handle() : nullptr;
        tape->record("conv2d", yi, [=]() {
            const float* gy = yi->grad.data();
            if (gb && bi) {
                std::vector<double> db(static_cast<std::size_t>(Cout), 0.0);
                for (int b = 0; b < B; ++b) {
                    for (int c = 0; c < Cout; ++c) {
                        db[static_cast<std::size_t>(c)] += deterministic_sum(
                            gy + (static_cast<std::size_t>(b) * Cout + c) * ncols, ncols);
                    }
                }
                bi->ensure_grad();
                for (int c = 0; c < Cout; ++c) {
                    auto& g = bi->grad[static_cast<std::size_t>(c)];
                    g = static_cast<float>(static_cast<double>(g) + db[static_cast<std::size_t>(c)]);
                }
            }
            const std::int64_t wide = static_cast<std::int64_t>(B) * ncols;
            FloatVec& gy_fold = kern::scratch(1, static_cast<std::size_t>(Cout) * wide);
            kern::fold_bcn(gy, gy_fold.data(), B, Cout, ncols);
            if (gw) {
                // dW = gy_fold (Cout x B N) * cols_t (B N x K)
                FloatVec& cols_t = kern::scratch(0, static_cast<std::size_t>(wide * krows));
                for (int b = 0; b < B; ++b) {
                    kern::im2colT(xi->data.data() + static_cast<std::size_t>(b) * Cin * H * W, geom,
                                  cols_t.data() + static_cast<std::size_t>(b) * ncols * krows);
                }
                FloatVec dw(wi->data.size());
                kern::gemm_nn(Cout, static_cast<int>(krows), static_cast<int>(wide), gy_fold.data(),
                              cols_t.data(), dw.data(), false);
                add_into(wi, dw.data());
            }
            if (gx) {
                // dcols = W^T (K x Cout) * gy_fold (Cout x B N)
                xi->ensure_grad();
                FloatVec w_t(wi->data.size());
                kern::transpose_2d(wi->data.data(), w_t.data(), Cout, static_cast<int>(krows));
                FloatVec& dcols = kern::scratch(2, static_cast<std::size_t>(krows * wide));
                kern::gemm_nn(static_cast<int>(krows), static_cast<int>(wide), Cout, w_t.data(),
                              gy_fold.data(), dcols.data(), false);
                for (int b = 0; b < B; ++b) {
                    kern::col2im_add(dcols.data() + static_cast<std::size_t>(b) * ncols, geom, wide,
                                     xi->grad.data() + static_cast<std::size_t>(b) * Cin * H * W);
                }
            }
        });
    }
    return finish(std::move(y), "conv2d");
}

Tensor adaptive_avg_pool2d(const Tensor& input, int out_h, int out_w) {
    require_rank(input, 4, "adaptive_avg_pool2d");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (out_h < 1 || out_w < 1 || out_h > H || out_w > W) {
        throw GeometryError("adaptive_avg_pool2d: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                            " invalid for input " + shape_str(input.shape()));
    }
    Tensor y = Tensor::uninit({B, C, out_h, out_w});
    kern::adaptive_pool_fwd(input.data(), y.data(), B * C, H, W, out_h, out_w);
    Tape* tape = active_tape();
    if (tape && needs_grad(input, tape)) {
        ImplPtr xi = input.handle(), yi = y.handle();
        tape->record("adaptive_avg_pool2d", yi, [=]() {
            xi->ensure_grad();
            kern::adaptive_pool_bwd(yi->grad.data(), xi->grad.data(), B * C, H, W, out_h, out_w);
        });
    }
    return finish(std::move(y), "adaptive_avg_pool2d");
}

Tensor upsample(const Tensor& input, int out_h, int out_w, UpsampleMode mode) {
    require_rank(input, 4, "upsample");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (out_h < H || out_w < W) {
        throw GeometryError("upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                            " shrinks input " + shape_str(input.shape()) +
                            "; use adaptive_avg_pool2d to downscale");
    }
    Tensor y = Tensor::uninit({B, C, out_h, out_w});
    if (mode == UpsampleMode::nearest) {
        kern::upsample_nearest_fwd(input.data(), y.data(), B * C, H, W, out_h, out_w);
    } else {
        kern::upsample_bilinear_fwd(input.data(), y.data(), B * C, H, W, out_h, out_w);
    }
    Tape* tape = active_tape();
    if (tape && needs_grad(input, tape)) {
        ImplPtr xi = input.handle(), yi = y.handle();
        tape->record("upsample", yi, [=]() {
            xi->ensure_grad();
            if (mode == UpsampleMode::nearest) {
                kern::upsample_nearest_bwd(yi->grad.data(), xi->grad.data(), B * C, H, W, out_h, out_w);
            } else {
                kern::upsample_bilinear_bwd(yi->grad.data(), xi->grad.data(), B * C, H, W, out_h, out_w);
            }
        });
    }
    return finish(std::move(y), "upsample");
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "batched_matmul");
    require_rank(b, 3, "batched_matmul");
    const int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != B || b.dim(1) != k) {
        throw ShapeError("batched_matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
    }
    Tensor y = Tensor::uninit({B, m, n});
    for (int i = 0; i < B; ++i) {
        kern::gemm_nn(m, n, k, a.data() + static_cast<std::size_t>(i) * m * k,
                      b.data() + static_cast<std::size_t>(i) * k * n,
                      y.data() + static_cast<std::size_t>(i) * m * n, false);
    }
    Tape* tape = active_tape();
    const bool ga = needs_grad(a, tape), gb = needs_grad(b, tape);
    if (tape && (ga || gb)) {
        ImplPtr ai = a.handle(), bi = b.handle(), yi = y.handle();
        tape->record("batched_matmul", yi, [=]() {
            const float* gy = yi->grad.data();
            if (ga) {
                FloatVec da(ai->data.size());
                for (int i = 0; i < B; ++i) {
                    kern::gemm_nt(m, k, n, gy + static_cast<std::size_t>(i) * m * n,
                                  bi->data.data() + static_cast<std::size_t>(i) * k * n,
                                  da.data() + static_cast<std::size_t>(i) * m * k, false);
                }
                add_into(ai, da.data());
            }
            if (gb) {
                FloatVec db(bi->data.size());
                for (int i = 0; i < B; ++i) {
                    kern::gemm_tn(k, n, m, ai->data.data() + static_cast<std::size_t>(i) * m * k,
                                  gy + static_cast<std::size_t>(i) * m * n,
                                  db.data() + static_cast<std::size_t>(i) * k * n, false);
                }
                add_into(bi, db.data());
            }
        });
    }
    return finish(std::move(y), "batched_matmul");
}

Tensor softmax(const Tensor& input, int axis) {
    const AxisView v = axis_view(input.shape(), axis, "softmax");
    Tensor y = Tensor::uninit(input.shape());
    kern::softmax_fwd(input.data(), y.data(), v.outer, v.n, v.inner);
    Tape* tape = active_tape();
    if (tape && needs_grad(input, tape)) {
        ImplPtr xi = input.handle(), yi = y.handle();
        tape->record("softmax", yi, [=]() {
            xi->ensure_grad();
            kern::softmax_bwd(yi->data.data(), yi->grad.data(), xi->grad.data(), v.outer, v.n, v.inner);
        });
    }
    return finish(std::move(y), "softmax");
}

Tensor sigmoid(const Tensor& input) {
    Tensor y = Tensor::uninit(input.shape());
    kern::sigmoid_fwd(input.data(), y.data(), input.numel());
    Tape* tape = active_tape();
    if (tape && needs_grad(input, tape)) {
        ImplPtr xi = input.handle(), yi = y.handle();
        tape->record("sigmoid", yi, [=]() {
            add_into_map(xi, yi->grad, [&](std::int64_t i, double g) {
                const double s = yi->data[static_cast<std::size_t>(i)];
                return g * s * (1.0 - s);
            });
        });
    }
    return finish(std::move(y), "sigmoid");
}

Tensor relu(const Tensor& input) {
    Tensor y = Tensor::uninit(input.shape());
    const float* x = input.data();
    float* out = y.data();
    parallel_for(input.numel(), [&](std::int64_t i) { out[i] = x[i] > 0.0f ? x[i] : 0.0f; });
    Tape* tape = active_tape();
    if (tape && needs_grad(input, tape)) {
        ImplPtr xi = input.handle(), yi = y.handle();
        tape->record("relu", yi, [=]() {
            add_into_map(xi, yi->grad, [&](std::int64_t i, double g) {
                return xi->data[static_cast<std::size_t>(i)] > 0.0f ? g : 0.0;
            });
        });
    }
    return finish(std::move(y), "relu");
}

Tensor dropout(const Tensor& input, float p, bool active, RngSequence& rng) {
    if (!(p >= 0.0f && p < 1.0f)) {
        throw ParamError("dropout: p must satisfy 0 <= p < 1, got " + std::to_string(p));
    }
    if (!active || p == 0.0f) {
        // Identity, but still a tape node so gradients flow unchanged.
        Tensor y = Tensor::from_data(input.shape(), input.vec());
        Tape* tape = active_tape();
        if (tape && needs_grad(input, tape)) {
            ImplPtr xi = input.handle(), yi = y.handle();
            tape->record("dropout", yi, [=]() { add_into(xi, yi->grad.data()); });
        }
        return y;
    }
    const std::int64_t n = input.numel();
    const std::uint64_t base = rng.reserve(static_cast<std::uint64_t>(n));
    auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n));
    kern::dropout_mask(rng.rng(), base, p, mask->data(), n);
    const float scale = 1.0f / (1.0f - p);
    Tensor y = Tensor::uninit(input.shape());
    const float* x = input.data();
    float* out = y.data();
    const std::uint8_t* m = mask->data();
    parallel_for(n, [&](std::int64_t i) { out[i] = m[i] ? x[i] * scale : 0.0f; });
    Tape* tape = active_tape();
    if (tape && needs_grad(input, tape)) {
        ImplPtr xi = input.handle(), yi = y.handle();
        tape->record("dropout", yi, [=]() {
            add_into_map(xi, yi->grad, [&](std::int64_t i, double g) {
                return (*mask)[static_cast<std::size_t>(i)] ? g * scale : 0.0;
            });
        });
    }
    return finish(std::move(y), "dropout");
}

namespace {

template <class FwdF, class BwdA, class BwdB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, FwdF&& f, BwdA&& da, BwdB&& db) {
    require_same_shape(a, b, name);
    Tensor y = Tensor::uninit(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* out = y.data();
    parallel_for(a.numel(), [&](std::int64_t i) { out[i] = f(pa[i], pb[i]); });
    Tape* tape = active_tape();
    const bool ga = needs_grad(a, tape), gb = needs_grad(b, tape);
    if (tape && (ga || gb)) {
        ImplPtr ai = a.handle(), bi = b.handle(), yi = y.handle();
        tape->record(name, yi, [=]() {
            if (ga) {
                add_into_map(ai, yi->grad, [&](std::int64_t i, double g) {
                    return da(g, ai->data[static_cast<std::size_t>(i)], bi->data[static_cast<std::size_t>(i)]);
                });
            }
            if (gb) {
                add_into_map(bi, yi->grad, [&](std::int64_t i, double g) {
                    return db(g, ai->data[static_cast<std::size_t>(i)], bi->data[static_cast<std::size_t>(i)]);
                });
            }
        });
    }
    return finish(std::move(y), name);
}

template <class FwdF, class BwdF>
Tensor unary_op(const char* name, const Tensor& a, FwdF&& f, BwdF&& dx) {
    Tensor y = Tensor::uninit(a.shape());
    const float* pa = a.data();
    float* out = y.data();
    parallel_for(a.numel(), [&](std::int64_t i) { out[i] = f(pa[i]); });
    Tape* tape = active_tape();
    if (tape && needs_grad(a, tape)) {
        ImplPtr ai = a.handle(), yi = y.handle();
        tape->record(name, yi, [=]() {
            add_into_map(ai, yi->grad, [&](std::int64_t i, double g) {
                return dx(g, ai->data[static_cast<std::size_t>(i)]);
            });
        });
    }
    return finish(std::move(y), name);
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b, [](float x, float y) { return x + y; },
                     [](double g, float, float) { return g; },
                     [](double g, float, float) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b, [](float x, float y) { return x - y; },
                     [](double g, float, float) { return g; },
                     [](double g, float, float) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b, [](float x, float y) { return x * y; },
                     [](double g, float, float y) { return g * y; },
                     [](double g, float x, float) { return g * x; });
}

Tensor add_scalar(const Tensor& a, float c) {
    return unary_op("add_scalar", a, [c](float x) { return x + c; },
                    [](double g, float) { return g; });
}

Tensor mul_scalar(const Tensor& a, float c) {
    return unary_op("mul_scalar", a, [c](float x) { return x * c; },
                    [c](double g, float) { return g * c; });
}

Tensor square(const Tensor& a) {
    return unary_op("square", a, [](float x) { return x * x; },
                    [](double g, float x) { return 2.0 * g * x; });
}

Tensor log(const Tensor& a) {
    return unary_op("log", a, [](float x) { return std::log(x); },
                    [](double g, float x) { return g / x; });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    if (lo > hi) throw ParamError("clamp: lo > hi");
    return unary_op("clamp", a, [lo, hi](float x) { return std::min(hi, std::max(lo, x)); },
                    [lo, hi](double g, float x) { return (x >= lo && x <= hi) ? g : 0.0; });
}

Tensor sum_all(const Tensor& a) {
    Tensor y = Tensor::scalar(static_cast<float>(deterministic_sum(a.data(), a.numel())));
    Tape* tape = active_tape();
    if (tape && needs_grad(a, tape)) {
        ImplPtr ai = a.handle(), yi = y.handle();
        tape->record("sum_all", yi, [=]() {
            const double g = yi->grad[0];
            add_into_map(ai, yi->grad, [&](std::int64_t, double) { return g; });
        });
    }
    return finish(std::move(y), "sum_all");
}

Tensor mean_all(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    Tensor y = Tensor::scalar(static_cast<float>(deterministic_sum(a.data(), a.numel()) / n));
    Tape* tape = active_tape();
    if (tape && needs_grad(a, tape)) {
        ImplPtr ai = a.handle(), yi = y.handle();
        tape->record("mean_all", yi, [=]() {
            const double g = yi->grad[0] / n;
            add_into_map(ai, yi->grad, [&](std::int64_t, double) { return g; });
        });
    }
    return finish(std::move(y), "mean_all");
}

namespace {

Tensor reduce_axis(const char* name, const Tensor& a, int axis, bool mean) {
    const AxisView v = axis_view(a.shape(), axis, name);
    Shape out_shape;
    for (int i = 0; i < a.rank(); ++i) {
        if (i != axis) out_shape.push_back(a.dim(i));
    }
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor y = Tensor::uninit(out_shape);
    const float* x = a.data();
    float* out = y.data();
    const double scale = mean ? 1.0 / static_cast<double>(v.n) : 1.0;
    parallel_for(v.outer * v.inner, [&](std::int64_t s) {
        const std::int64_t o = s / v.inner;
        const std::int64_t in = s % v.inner;
        double acc = 0.0;
        for (std::int64_t k = 0; k < v.n; ++k) acc += x[(o * v.n + k) * v.inner + in];
        out[o * v.inner + in] = static_cast<float>(acc * scale);
    });
    Tape* tape = active_tape();
    if (tape && needs_grad(a, tape)) {
        ImplPtr ai = a.handle(), yi = y.handle();
        tape->record(name, yi, [=]() {
            ai->ensure_grad();
            float* g = ai->grad.data();
            const float* gy = yi->grad.data();
            parallel_for(v.outer * v.inner, [&](std::int64_t s) {
                const std::int64_t o = s / v.inner;
                const std::int64_t in = s % v.inner;
                const double gv = static_cast<double>(gy[o * v.inner + in]) * scale;
                for (std::int64_t k = 0; k < v.n; ++k) {
                    auto& gi = g[(o * v.n + k) * v.inner + in];
                    gi = static_cast<float>(static_cast<double>(gi) + gv);
                }
            });
        });
    }
    return finish(std::move(y), name);
}

} // namespace

Tensor sum_axis(const Tensor& a, int axis) { return reduce_axis("sum_axis", a, axis, false); }
Tensor mean_axis(const Tensor& a, int axis) { return reduce_axis("mean_axis", a, axis, true); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ParamError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size())) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    }
    Shape out_shape = first;
    int total_axis = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != static_cast<int>(first.size())) {
            throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(t.shape()));
        }
        for (int i = 0; i < t.rank(); ++i) {
            if (i != axis && t.dim(i) != first[static_cast<std::size_t>(i)]) {
                throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(t.shape()));
            }
        }
        total_axis += t.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = total_axis;
    const AxisView v = axis_view(out_shape, axis, "concat");
    Tensor y = Tensor::uninit(out_shape);
    std::int64_t offset = 0;
    for (const Tensor& t : parts) {
        const std::int64_t tn = t.dim(axis);
        const float* src = t.data();
        float* dst = y.data();
        parallel_for(v.outer * tn, [&](std::int64_t row) {
            const std::int64_t o = row / tn;
            const std::int64_t k = row % tn;
            std::memcpy(dst + ((o * v.n + offset + k) * v.inner),
                        src + ((o * tn + k) * v.inner), sizeof(float) * static_cast<std::size_t>(v.inner));
        });
        offset += tn;
    }
    Tape* tape = active_tape();
    bool any = false;
    for (const Tensor& t : parts) any = any || needs_grad(t, tape);
    if (tape && any) {
        std::vector<ImplPtr> impls;
        impls.reserve(parts.size());
        for (const Tensor& t : parts) impls.push_back(t.handle());
        ImplPtr yi = y.handle();
        tape->record("concat", yi, [=]() {
            const float* gy = yi->grad.data();
            std::int64_t off = 0;
            for (const ImplPtr& pi : impls) {
                const std::int64_t tn = pi->shape[static_cast<std::size_t>(axis)];
                pi->ensure_grad();
                float* g = pi->grad.data();
                const std::int64_t local_off = off;
                parallel_for(v.outer * tn, [&](std::int64_t row) {
                    const std::int64_t o = row / tn;
                    const std::int64_t k = row % tn;
                    float* grow = g + (o * tn + k) * v.inner;
                    const float* gyrow = gy + (o * v.n + local_off + k) * v.inner;
                    for (std::int64_t in = 0; in < v.inner; ++in) {
                        grow[in] = static_cast<float>(static_cast<double>(grow[in]) + gyrow[in]);
                    }
                });
                off += tn;
            }
        });
    }
    return finish(std::move(y), "concat");
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    Tensor y = Tensor::from_data(std::move(shape), a.vec());
    Tape* tape = active_tape();
    if (tape && needs_grad(a, tape)) {
        ImplPtr ai = a.handle(), yi = y.handle();
        tape->record("reshape", yi, [=]() { add_into(ai, yi->grad.data()); });
    }
    return y;
}

Tensor transpose_last2(const Tensor& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2: rank >= 2 required, got " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    const int r = a.rank();
    std::swap(out_shape[static_cast<std::size_t>(r - 2)], out_shape[static_cast<std::size_t>(r - 1)]);
    const std::int64_t rows = a.dim(r - 2), colsn = a.dim(r - 1);
    const std::int64_t outer = a.numel() / (rows * colsn);
    Tensor y = Tensor::uninit(out_shape);
    const float* src = a.data();
    float* dst = y.data();
    parallel_for(outer * rows * colsn, [&](std::int64_t i) {
        const std::int64_t o = i / (rows * colsn);
        const std::int64_t rem = i % (rows * colsn);
        const std::int64_t rr = rem / colsn;
        const std::int64_t cc = rem % colsn;
        dst[(o * colsn + cc) * rows + rr] = src[i];
    });
    Tape* tape = active_tape();
    if (tape && needs_grad(a, tape)) {
        ImplPtr ai = a.handle(), yi = y.handle();
        tape->record("transpose_last2", yi, [=]() {
            ai->ensure_grad();
            float* g = ai->grad.data();
            const float* gy = yi->grad.data();
            parallel_for(outer * rows * colsn, [&](std::int64_t i) {
                const std::int64_t o = i / (rows * colsn);
                const std::int64_t rem = i % (rows * colsn);
                const std::int64_t rr = rem / colsn;
                const std::int64_t cc = rem % colsn;
                g[i] = static_cast<float>(static_cast<double>(g[i]) + gy[(o * colsn + cc) * rows + rr]);
            });
        });
    }
    return y;
}

Tensor uniform_tensor(Shape shape, float lo, float hi, RngSequence& rng, bool requires_grad) {
    Tensor t = Tensor::uninit(std::move(shape));
    t.impl()->requires_grad = requires_grad;
    const std::int64_t n = t.numel();
    const std::uint64_t base = rng.reserve(static_cast<std::uint64_t>(n));
    const Rng r = rng.rng();
    float* out = t.data();
    parallel_for(n, [&](std::int64_t i) {
        out[i] = r.uniform(base + static_cast<std::uint64_t>(i), lo, hi);
    });
    return t;
}

} // namespace uamsa
