#include "uamsa/tensor.hpp"

#include <cmath>

#include "uamsa/parallel.hpp"

#ifdef UAMSA_PROFILE_BACKWARD
#include <chrono>
#include <cstdio>
#include <map>
#endif

namespace uamsa {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<std::size_t>(impl->numel()), 0.0f);
    impl->requires_grad = requires_grad;
    return wrap(std::move(impl));
}

Tensor Tensor::uninit(Shape shape) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.resize(static_cast<std::size_t>(impl->numel()));
    return wrap(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool requires_grad) {
    FloatVec buf;
    buf.assign(values.begin(), values.end());
    return from_data(std::move(shape), std::move(buf), requires_grad);
}

Tensor Tensor::from_data(Shape shape, FloatVec values, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return wrap(std::move(impl));
}

Tensor Tensor::scalar(float value) {
    Tensor t = uninit({1});
    t.data()[0] = value;
    return t;
}

const FloatVec& Tensor::grad() const {
    if (!has_grad()) {
        throw Error("tensor has no gradient (backward not run, or tensor not on any grad path)");
    }
    return impl_->grad;
}

float Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    }
    return impl_->data[0];
}

void Tape::record(const char* op, const std::shared_ptr<TensorImpl>& out, std::function<void()> fn) {
    out->tape = this;
    out->tape_epoch = epoch_;
    out->on_path = true;
    nodes_.push_back(TapeNode{op, out, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined()) {
        throw Error("backward: undefined loss tensor");
    }
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    TensorImpl* li = loss.impl();
    if (li->tape != this || li->tape_epoch != epoch_) {
        throw Error("backward: loss was not produced under this tape");
    }
    if (consumed_) {
        throw Error("backward: tape already consumed; reset() before replaying");
    }
    consumed_ = true;
    li->ensure_grad();
    li->grad[0] = 1.0f;
#ifdef UAMSA_PROFILE_BACKWARD
    static std::map<std::string, double> prof;
    static int prof_calls = 0;
#endif
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) {
            continue; // not on the path from the loss
        }
#ifdef UAMSA_PROFILE_BACKWARD
        const auto t0 = std::chrono::steady_clock::now();
#endif
        it->backward();
#ifdef UAMSA_PROFILE_BACKWARD
        const auto t1 = std::chrono::steady_clock::now();
        prof[it->op] += std::chrono::duration<double>(t1 - t0).count();
#endif
        if (!it->out->requires_grad && it->out.get() != li) {
            it->out->grad.clear();
            it->out->grad.shrink_to_fit();
        }
    }
#ifdef UAMSA_PROFILE_BACKWARD
    if (++prof_calls % 2 == 0) {
        std::fprintf(stderr, "--- backward profile (cumulative) ---\n");
        for (const auto& [op, t] : prof) std::fprintf(stderr, "%-18s %8.1f ms\n", op.c_str(), t * 1e3);
    }
#endif
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
    ++epoch_;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
bool g_debug_checks = false;
}

Tape* active_tape() { return g_active_tape; }

bool needs_grad(const Tensor& t, Tape* tape) {
    if (!t.defined()) return false;
    TensorImpl* i = t.impl();
    if (i->requires_grad) return true;
    return tape && i->tape == tape && i->tape_epoch == tape->epoch() && i->on_path;
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoTapeScope::NoTapeScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = prev_; }

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

void check_finite(const float* x, std::int64_t n, const char* where) {
    if (!g_debug_checks) return;
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) {
            throw NumericError(std::string(where) + ": non-finite value at flat index " +
                               std::to_string(i));
        }
    }
}

void accumulate_grad(FloatVec& grad, const std::vector<double>& delta) {
    parallel_for(static_cast<std::int64_t>(delta.size()), [&](std::int64_t i) {
        const auto u = static_cast<std::size_t>(i);
        grad[u] = static_cast<float>(static_cast<double>(grad[u]) + delta[u]);
    });
}

} // namespace uamsa
