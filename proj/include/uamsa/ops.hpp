#pragma once

#include <vector>

#include "uamsa/rng.hpp"
#include "uamsa/tensor.hpp"

namespace uamsa {

enum class UpsampleMode { nearest, bilinear };

// Differentiable operations. Each records a backward rule on the active tape
// when some input can reach a requires_grad leaf. Without an active tape they
// are plain evaluations.

// Cross-correlation; input B x Cin x H x W, weight Cout x Cin x kH x kW,
// optional bias Cout. Output H' = (H + 2 pad - kH)/stride + 1, likewise W'.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

// Output cell (i,j) averages window [floor(i H/oh), ceil((i+1) H/oh)) x ...
Tensor adaptive_avg_pool2d(const Tensor& input, int out_h, int out_w);

// Enlarge only; nearest uses floor(i*h/oh), bilinear is align-corners=false
// with clamped edges.
Tensor upsample(const Tensor& input, int out_h, int out_w, UpsampleMode mode);

// a: B x m x k, b: B x k x n -> B x m x n.
Tensor batched_matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& input, int axis);
Tensor sigmoid(const Tensor& input);
Tensor relu(const Tensor& input);

// Inverted dropout: survivors scaled by 1/(1-p) while active, identity when
// inactive or p == 0. Mask bits come from the sequence's counters, so the
// same cursor state reproduces the same mask.
Tensor dropout(const Tensor& input, float p, bool active, RngSequence& rng);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float c);
Tensor mul_scalar(const Tensor& a, float c);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);
// Gradient passes inside [lo, hi] (inclusive), zero outside.
Tensor clamp(const Tensor& a, float lo, float hi);

Tensor sum_all(const Tensor& a);  // shape {1}
Tensor mean_all(const Tensor& a); // shape {1}
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose_last2(const Tensor& a);

// Uniform values in [lo, hi); plain constructor, never on the tape.
Tensor uniform_tensor(Shape shape, float lo, float hi, RngSequence& rng, bool requires_grad = false);

} // namespace uamsa
