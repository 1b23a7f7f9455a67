#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uamsa/msam.hpp"
#include "uamsa/ops.hpp"
#include "uamsa/rng.hpp"
#include "uamsa/tensor.hpp"

namespace uamsa {

enum class Variant { uamsa, plain_unet };
enum class Mode { train, mc, deterministic };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct MsamSettings {
    int reduction = 2;
    int pool_divisor = 4;
    bool share_branch_weights = false;
};

// Architecture description. depth counts encoder levels; channels double per
// level starting at base_channels; the bottleneck sits below the last level.
// Inputs must be divisible by 2^depth in both spatial axes.
struct ModelSpec {
    Variant variant = Variant::uamsa;
    int in_channels = 1;
    int out_channels = 1;
    int depth = 4;
    int base_channels = 16;
    float dropout_p = 0.2f;
    MsamSettings msam; // consulted only for the uamsa variant
};

void validate_spec(const ModelSpec& spec);

struct ParamDesc {
    std::string name;
    Shape shape;
};

// Canonical parameter list; order is the checkpoint serialization order.
// Names: enc{L}.conv1/conv2, enc{L}.msam.{orig,down}.{wq,wk,wv} and
// enc{L}.msam.fuse (uamsa only), bottleneck.conv1/conv2, dec{L}.up,
// dec{L}.conv1/conv2 (L from depth-1 down to 0), head; each with
// .weight/.bias. See docs/checkpoint-schema.md.
std::vector<ParamDesc> parameter_schema(const ModelSpec& spec);

struct Model {
    ModelSpec spec;
    std::map<std::string, Tensor> params;
    Mode mode = Mode::train;

    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
    std::int64_t parameter_count() const;
};

// Fan-in-scaled uniform init, bound sqrt(6/fan_in); biases zero.
// Deterministic in rng.
Model build(const ModelSpec& spec, Rng rng);

struct ConvBlockParams {
    Tensor w1, b1, w2, b2;
};

// [3x3 conv pad 1 -> ReLU -> dropout] x 2.
Tensor conv_block(const Tensor& x, const ConvBlockParams& p, float dropout_p, bool active_dropout,
                  RngSequence& rng);

// Full forward to logits (no sigmoid). Dropout draws from rng in train/mc
// modes; deterministic mode never touches it.
Tensor forward(const Model& model, const Tensor& x, Rng rng);

struct CostReport {
    std::int64_t params = 0;
    std::int64_t flops_total = 0;     // per image, multiply-accumulates x2
    std::int64_t flops_conv = 0;      // conv contributions only
    std::int64_t flops_attention = 0; // MSAM matmul/softmax/scale terms
    std::int64_t flops_other = 0;     // pooling, upsampling, activations
};

// Analytic cost at deterministic-inference settings; the counting rules are
// written out in docs/flops-formulas.md.
CostReport count_params_flops(const ModelSpec& spec, int H, int W);

} // namespace uamsa
