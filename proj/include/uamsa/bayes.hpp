#pragma once

#include <vector>

#include "uamsa/model.hpp"
#include "uamsa/tensor.hpp"

namespace uamsa {

enum class Modality { T1C, T2FLAIR, T2W, SYNTH };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& s);

// Penalty weights reported for the MRI modalities; SYNTH reuses the T1C one.
float lambda_for_modality(Modality m);

// Mean map and per-pixel population variance over T stochastic passes.
struct McPrediction {
    Tensor mean;     // in [0,1]
    Tensor variance; // in [0, 0.25]
    int passes = 0;
    std::vector<Tensor> samples; // retained only on request
};

// T forward passes in mc mode with per-pass rng sub-streams, sigmoid applied
// per pass. Variance uses the 1/T population form. Runs off the tape.
McPrediction mc_predict(const Model& model, const Tensor& x, int t_passes, Rng rng,
                        bool retain_samples = false);

// Mean over all elements of -[t log p + (1-t) log(1-p)], p clamped into
// [eps, 1-eps]. Differentiable in prob.
Tensor bce(const Tensor& prob, const Tensor& target, float eps = 1e-7f);

// Fused stable form max(x,0) - x t + log1p(exp(-|x|)); agrees with
// bce(sigmoid(x), t) within 1e-5.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

enum class BceMode { mean_prediction, per_pass };

struct LossConfig {
    float lambda_u = 0.12f;
    int t_passes = 20;
    float eps = 1e-7f;
    BceMode bce_mode = BceMode::mean_prediction; // per_pass kept for ablation
};

struct LossParts {
    Tensor total;    // scalar, on the tape
    Tensor bce_part; // scalar
    Tensor var_part; // scalar: unweighted mean of the per-pixel variance
};

// Mean prediction and variance computed on the tape so gradients reach every
// pass. total = bce + lambda_u * var_part; with lambda_u == 0 the variance
// term is left out of the graph entirely and total aliases bce_part.
LossParts smoothing_loss(const std::vector<Tensor>& sample_probs, const Tensor& target,
                         const LossConfig& cfg);

} // namespace uamsa
