#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uamsa/bayes.hpp"
#include "uamsa/data.hpp"
#include "uamsa/model.hpp"

namespace uamsa {

struct AdamState {
    std::map<std::string, std::vector<double>> m, v;
    std::int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    float lr_max = 1e-3f;
    float lr_min = 1e-6f;
    int t_passes = 20;
    float lambda_u = 0.12f;
    std::uint64_t seed = 0;
    Variant variant = Variant::uamsa;
    int image_size = 240;
    bool desk_profile = false;
    float grad_clip = 0.0f;    // 0 = off
    float weight_decay = 0.0f; // 0 = off
    BceMode bce_mode = BceMode::mean_prediction;
    bool ledger_timing = true; // false writes 0 in the seconds column
};

void validate_train_config(const TrainConfig& cfg);

// lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi epoch / epochs)); stepped once
// per epoch.
double cosine_lr(int epoch, const TrainConfig& cfg);

// Bias-corrected Adam update on every parameter that has a gradient.
// Aborts (NumericError naming the parameter) on non-finite gradients.
void adam_step(Model& model, AdamState& state, double lr, float grad_clip = 0.0f,
               float weight_decay = 0.0f);

struct SplitResult {
    std::vector<SampleRecord> train, val, test;
};

// Deterministic shuffle keyed by hash(sample id, seed), so the assignment is
// stable under reordering of the input list; counts are floor(n r0/sum),
// floor(n r1/sum), remainder.
SplitResult split_dataset(std::vector<SampleRecord> samples, std::array<int, 3> ratios,
                          std::uint64_t seed);

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_bce = 0.0;
    double loss_var = 0.0;
    double val_dice = 0.0;
    double val_miou = 0.0;
    double seconds = 0.0;
};

struct FitResult {
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_dice = 0.0;
};

// Optimization loop: per batch, T stochastic passes feeding the smoothing
// loss for the uamsa variant, or a single sigmoid+BCE pass for plain_unet;
// Adam with the per-epoch cosine schedule. Appends one ledger row per epoch
// to <out_dir>/ledger.csv and keeps the best-validation-Dice checkpoint at
// <out_dir>/checkpoint.bin. Validation Dice/mIoU are computed from the
// thresholded deterministic forward.
FitResult fit(Model& model, const SplitResult& data, const TrainConfig& cfg, const std::string& out_dir);

// Per-sample evaluation with mc_predict; mean_uncertainty is the average of
// the variance map.
std::vector<MetricRecord> evaluate(const Model& model, const std::vector<SampleRecord>& samples,
                                   int t_passes, Rng rng);

} // namespace uamsa
