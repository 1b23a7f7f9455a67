#include "uamsa/bayes.hpp"

#include <cmath>

#include "uamsa/parallel.hpp"

namespace uamsa {

std::string modality_name(Modality m) {
    switch (m) {
        case Modality::T1C: return "T1C";
        case Modality::T2FLAIR: return "T2FLAIR";
        case Modality::T2W: return "T2W";
        case Modality::SYNTH: return "SYNTH";
    }
    return "SYNTH";
}

Modality parse_modality(const std::string& s) {
    if (s == "T1C") return Modality::T1C;
    if (s == "T2FLAIR") return Modality::T2FLAIR;
    if (s == "T2W") return Modality::T2W;
    if (s == "SYNTH") return Modality::SYNTH;
    throw ConfigError("unknown modality '" + s + "'");
}

float lambda_for_modality(Modality m) {
    switch (m) {
        case Modality::T1C: return 0.12f;
        case Modality::T2FLAIR: return 0.191f;
        case Modality::T2W: return 0.191f;
        case Modality::SYNTH: return 0.12f;
    }
    return 0.12f;
}

McPrediction mc_predict(const Model& model, const Tensor& x, int t_passes, Rng rng, bool retain_samples) {
    if (t_passes < 1) throw ParamError("mc_predict: T must be >= 1, got " + std::to_string(t_passes));
    NoTapeScope no_tape;
    Model mc_model = model; // shallow: shares parameter storage
    mc_model.mode = Mode::mc;

    std::vector<Tensor> samples;
    samples.reserve(static_cast<std::size_t>(t_passes));
    for (int t = 0; t < t_passes; ++t) {
        samples.push_back(sigmoid(forward(mc_model, x, rng.split(static_cast<std::uint64_t>(t)))));
    }

    const std::int64_t n = samples[0].numel();
    McPrediction out;
    out.passes = t_passes;
    out.mean = Tensor::zeros(samples[0].shape());
    out.variance = Tensor::zeros(samples[0].shape());
    float* mean = out.mean.data();
    float* var = out.variance.data();
    const double inv_t = 1.0 / static_cast<double>(t_passes);
    parallel_for(n, [&](std::int64_t i) {
        double acc = 0.0;
        for (const Tensor& s : samples) acc += s.data()[i];
        const double m = acc * inv_t;
        double v = 0.0;
        for (const Tensor& s : samples) {
            const double d = static_cast<double>(s.data()[i]) - m;
            v += d * d;
        }
        mean[i] = static_cast<float>(m);
        var[i] = static_cast<float>(v * inv_t);
    });
    if (retain_samples) out.samples = std::move(samples);
    return out;
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void check_binary_target(const Tensor& t, const char* op) {
    if (!debug_checks()) return;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const float v = t.data()[i];
        if (v != 0.0f && v != 1.0f) {
            throw ParamError(std::string(op) + ": target not binary at flat index " + std::to_string(i));
        }
    }
}

// Chunked double reduction of a per-element double expression; deterministic
// for any thread count.
template <class F>
double reduce_expr(std::int64_t n, F&& f) {
    constexpr std::int64_t chunk = 4096;
    const std::int64_t nchunks = (n + chunk - 1) / chunk;
    std::vector<double> partial(static_cast<std::size_t>(nchunks), 0.0);
    parallel_for(nchunks, [&](std::int64_t c) {
        const std::int64_t lo = c * chunk;
        const std::int64_t hi = lo + chunk < n ? lo + chunk : n;
        double s = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) s += f(i);
        partial[static_cast<std::size_t>(c)] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

} // namespace

Tensor bce(const Tensor& prob, const Tensor& target, float eps) {
    require_same(prob, target, "bce");
    if (!(eps > 0.0f && eps < 0.5f)) throw ParamError("bce: eps out of range");
    check_binary_target(target, "bce");
    const std::int64_t n = prob.numel();
    const float* p = prob.data();
    const float* t = target.data();
    const double lo = eps, hi = 1.0 - static_cast<double>(eps);
    const double total = reduce_expr(n, [&](std::int64_t i) {
        const double pc = std::min(hi, std::max(lo, static_cast<double>(p[i])));
        const double ti = t[i];
        return -(ti * std::log(pc) + (1.0 - ti) * std::log(1.0 - pc));
    });
    Tensor y = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
    Tape* tape = active_tape();
    if (tape && needs_grad(prob, tape)) {
        auto pi = prob.handle();
        auto ti_ = target.handle();
        auto yi = y.handle();
        const float eps_c = eps;
        tape->record("bce", yi, [=]() {
            pi->ensure_grad();
            float* g = pi->grad.data();
            const double gy = yi->grad[0] / static_cast<double>(n);
            const double lo_d = eps_c, hi_d = 1.0 - static_cast<double>(eps_c);
            parallel_for(n, [&](std::int64_t i) {
                const double pv = pi->data[static_cast<std::size_t>(i)];
                if (pv < lo_d || pv > hi_d) return; // clamp blocks the gradient
                const double tv = ti_->data[static_cast<std::size_t>(i)];
                const double d = gy * (pv - tv) / (pv * (1.0 - pv));
                g[i] = static_cast<float>(static_cast<double>(g[i]) + d);
            });
        });
    }
    check_finite(y.data(), 1, "bce");
    return y;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
    require_same(logits, target, "bce_with_logits");
    check_binary_target(target, "bce_with_logits");
    const std::int64_t n = logits.numel();
    const float* x = logits.data();
    const float* t = target.data();
    const double total = reduce_expr(n, [&](std::int64_t i) {
        const double xv = x[i];
        const double tv = t[i];
        return std::max(xv, 0.0) - xv * tv + std::log1p(std::exp(-std::fabs(xv)));
    });
    Tensor y = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
    Tape* tape = active_tape();
    if (tape && needs_grad(logits, tape)) {
        auto xi = logits.handle();
        auto ti_ = target.handle();
        auto yi = y.handle();
        tape->record("bce_with_logits", yi, [=]() {
            xi->ensure_grad();
            float* g = xi->grad.data();
            const double gy = yi->grad[0] / static_cast<double>(n);
            parallel_for(n, [&](std::int64_t i) {
                const double xv = xi->data[static_cast<std::size_t>(i)];
                const double s = xv >= 0 ? 1.0 / (1.0 + std::exp(-xv))
                                         : std::exp(xv) / (1.0 + std::exp(xv));
                const double d = gy * (s - ti_->data[static_cast<std::size_t>(i)]);
                g[i] = static_cast<float>(static_cast<double>(g[i]) + d);
            });
        });
    }
    check_finite(y.data(), 1, "bce_with_logits");
    return y;
}

LossParts smoothing_loss(const std::vector<Tensor>& sample_probs, const Tensor& target,
                         const LossConfig& cfg) {
    if (sample_probs.empty()) throw ParamError("smoothing_loss: empty sample stack");
    if (static_cast<int>(sample_probs.size()) != cfg.t_passes) {
        throw ParamError("smoothing_loss: stack size " + std::to_string(sample_probs.size()) +
                         " does not match configured T = " + std::to_string(cfg.t_passes));
    }
    for (const Tensor& s : sample_probs) require_same(s, target, "smoothing_loss");
    const int T = cfg.t_passes;

    Tensor sum = sample_probs[0];
    for (int t = 1; t < T; ++t) sum = add(sum, sample_probs[static_cast<std::size_t>(t)]);
    Tensor mean = mul_scalar(sum, 1.0f / static_cast<float>(T));

    LossParts parts;
    if (cfg.bce_mode == BceMode::mean_prediction) {
        parts.bce_part = bce(mean, target, cfg.eps);
    } else {
        Tensor acc = bce(sample_probs[0], target, cfg.eps);
        for (int t = 1; t < T; ++t) acc = add(acc, bce(sample_probs[static_cast<std::size_t>(t)], target, cfg.eps));
        parts.bce_part = mul_scalar(acc, 1.0f / static_cast<float>(T));
    }

    if (cfg.lambda_u == 0.0f) {
        // Penalty off: keep the variance out of the graph; report it detached.
        NoTapeScope no_tape;
        Tensor dev = sub(sample_probs[0], mean);
        Tensor acc = square(dev);
        for (int t = 1; t < T; ++t) {
            acc = add(acc, square(sub(sample_probs[static_cast<std::size_t>(t)], mean)));
        }
        parts.var_part = mean_all(mul_scalar(acc, 1.0f / static_cast<float>(T)));
        parts.total = parts.bce_part;
        return parts;
    }

    Tensor acc = square(sub(sample_probs[0], mean));
    for (int t = 1; t < T; ++t) {
        acc = add(acc, square(sub(sample_probs[static_cast<std::size_t>(t)], mean)));
    }
    Tensor variance = mul_scalar(acc, 1.0f / static_cast<float>(T));
    parts.var_part = mean_all(variance);
    parts.total = add(parts.bce_part, mul_scalar(parts.var_part, cfg.lambda_u));
    return parts;
}

} // namespace uamsa
