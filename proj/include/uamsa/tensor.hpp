#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uamsa/errors.hpp"

namespace uamsa {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Vector whose value-initialization is a no-op, so freshly sized buffers that
// a kernel fully overwrites cost no memset.
template <class T>
struct NoInitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = NoInitAllocator<U>;
    };
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) > 0) {
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
        }
    }
};

using FloatVec = std::vector<float, NoInitAllocator<float>>;

class Tape;

// Storage behind a Tensor handle. Values are float32. Gradients are stored
// as float32 and every accumulation is computed in double before rounding
// back (documented choice from the two the contract allows).
struct TensorImpl {
    Shape shape;
    FloatVec data;
    FloatVec grad; // empty until a backward pass touches it
    bool requires_grad = false;

    // Set when an op under an active tape produced this tensor.
    Tape* tape = nullptr;
    std::uint64_t tape_epoch = 0;
    bool on_path = false; // some ancestor is a requires_grad leaf

    std::int64_t numel() const { return shape_numel(shape); }
    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0f);
        }
    }
};

// Cheap shared handle; tensors are immutable after construction except for
// gradient accumulation and in-place parameter updates by the optimizer
// (never concurrent with a forward pass).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    // Uninitialized storage; callers must overwrite every element.
    static Tensor uninit(Shape shape);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor from_data(Shape shape, FloatVec values, bool requires_grad = false);
    static Tensor scalar(float value); // shape {1}

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return impl_->numel(); }

    const float* data() const { return impl_->data.data(); }
    float* data() { return impl_->data.data(); }
    const FloatVec& vec() const { return impl_->data; }
    FloatVec& vec() { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    bool has_grad() const { return defined() && !impl_->grad.empty(); }
    const FloatVec& grad() const;
    void zero_grad() { if (impl_) impl_->grad.clear(); }

    float item() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

    static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

private:
    std::shared_ptr<TensorImpl> impl_;
};

struct TapeNode {
    const char* op;
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward; // reads out->grad, accumulates into inputs
};

// Record of one forward build. Single-owner: never share across threads.
// One reverse pass per build; reset() permits a replay.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Reverse topological traversal; accumulates gradients additively across
    // fan-out, then releases intermediate grad buffers.
    void backward(const Tensor& loss);

    void reset();
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }
    std::uint64_t epoch() const { return epoch_; }

    void record(const char* op, const std::shared_ptr<TensorImpl>& out, std::function<void()> fn);

private:
    std::vector<TapeNode> nodes_;
    bool consumed_ = false;
    std::uint64_t epoch_ = 1;
};

// Thread-local active tape. Ops record onto it when any input needs grad.
Tape* active_tape();
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// True when t is a requires_grad leaf or was produced under tape this epoch.
bool needs_grad(const Tensor& t, Tape* tape);

// Suspends recording for inference paths (mc_predict, validation).
class NoTapeScope {
public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* prev_;
};

// Debug flag: when on, every op boundary validates finiteness and throws
// NumericError naming the op.
void set_debug_checks(bool on);
bool debug_checks();
void check_finite(const float* x, std::int64_t n, const char* where);

// grad[i] = float(double(grad[i]) + delta[i]); delta in double.
void accumulate_grad(FloatVec& grad, const std::vector<double>& delta);

} // namespace uamsa
