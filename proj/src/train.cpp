#include "uamsa/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "uamsa/parallel.hpp"

namespace fs = std::filesystem;

namespace uamsa {

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ParamError("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ParamError("train: batch_size must be >= 1");
    if (!(cfg.lr_min <= cfg.lr_max)) throw ParamError("train: lr_min must not exceed lr_max");
    if (cfg.t_passes < 1) throw ParamError("train: t_passes must be >= 1");
    if (cfg.lambda_u < 0.0f) throw ParamError("train: lambda_u must be >= 0");
    if (cfg.grad_clip < 0.0f || cfg.weight_decay < 0.0f) {
        throw ParamError("train: grad_clip/weight_decay must be >= 0");
    }
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch > cfg.epochs) {
        throw ParamError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(cfg.epochs) + "]");
    }
    const double lo = cfg.lr_min, hi = cfg.lr_max;
    return lo + 0.5 * (hi - lo) * (1.0 + std::cos(3.14159265358979323846 * epoch / cfg.epochs));
}

void adam_step(Model& model, AdamState& state, double lr, float grad_clip, float weight_decay) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

    double clip_scale = 1.0;
    if (grad_clip > 0.0f) {
        double sq = 0.0;
        for (const auto& [name, t] : model.params) {
            if (!t.has_grad()) continue;
            const auto& g = t.grad();
            sq += deterministic_dot(g.data(), g.data(), static_cast<std::int64_t>(g.size()));
        }
        const double norm = std::sqrt(sq);
        if (norm > grad_clip) clip_scale = grad_clip / norm;
    }

    for (auto& [name, t] : model.params) {
        if (!t.has_grad()) continue;
        const auto& g = t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NumericError("adam_step: non-finite gradient in parameter '" + name + "'");
            }
        }
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != g.size()) m.assign(g.size(), 0.0);
        if (v.size() != g.size()) v.assign(g.size(), 0.0);
        float* theta = t.data();
        const double wd = weight_decay;
        parallel_for(static_cast<std::int64_t>(g.size()), [&](std::int64_t i) {
            const auto u = static_cast<std::size_t>(i);
            double gi = static_cast<double>(g[u]) * clip_scale;
            if (wd > 0.0) gi += wd * static_cast<double>(theta[u]);
            m[u] = state.beta1 * m[u] + (1.0 - state.beta1) * gi;
            v[u] = state.beta2 * v[u] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m[u] / bc1;
            const double vhat = v[u] / bc2;
            theta[u] = static_cast<float>(static_cast<double>(theta[u]) -
                                          lr * mhat / (std::sqrt(vhat) + state.eps));
        });
    }
}

SplitResult split_dataset(std::vector<SampleRecord> samples, std::array<int, 3> ratios,
                          std::uint64_t seed) {
    if (samples.empty()) throw ParamError("split_dataset: empty input");
    if (samples.size() < 10) throw ParamError("split_dataset: need at least 10 samples");
    if (ratios[0] < 1 || ratios[1] < 0 || ratios[2] < 0) throw ParamError("split_dataset: bad ratios");
    std::sort(samples.begin(), samples.end(), [&](const SampleRecord& a, const SampleRecord& b) {
        const std::uint64_t ha = hash_id(a.id, seed), hb = hash_id(b.id, seed);
        return ha != hb ? ha < hb : a.id < b.id;
    });
    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    const std::int64_t total = ratios[0] + ratios[1] + ratios[2];
    const std::int64_t n_train = n * ratios[0] / total;
    const std::int64_t n_val = n * ratios[1] / total;
    SplitResult out;
    out.train.assign(samples.begin(), samples.begin() + n_train);
    out.val.assign(samples.begin() + n_train, samples.begin() + n_train + n_val);
    out.test.assign(samples.begin() + n_train + n_val, samples.end());
    return out;
}

namespace {

constexpr std::uint64_t kShuffleLabel = 1ull << 40;

void stack_batch(const std::vector<SampleRecord>& samples, const std::vector<std::size_t>& order,
                 std::size_t lo, std::size_t hi, Tensor& images, Tensor& masks) {
    const int B = static_cast<int>(hi - lo);
    const Shape& s = samples[order[lo]].image.shape(); // 1 x H x W
    images = Tensor::zeros({B, 1, s[1], s[2]});
    masks = Tensor::zeros({B, 1, s[1], s[2]});
    const std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
    for (std::size_t i = lo; i < hi; ++i) {
        const SampleRecord& r = samples[order[i]];
        if (r.image.shape() != s) {
            throw ShapeError("fit: sample '" + r.id + "' has shape " + shape_str(r.image.shape()) +
                             ", batch expects " + shape_str(s));
        }
        std::copy_n(r.image.data(), plane, images.data() + (i - lo) * plane);
        std::copy_n(r.mask.data(), plane, masks.data() + (i - lo) * plane);
    }
}

struct ValScore {
    double dice_mean = 0.0, miou_mean = 0.0;
};

ValScore validate(const Model& model, const std::vector<SampleRecord>& val) {
    if (val.empty()) return {};
    NoTapeScope no_tape;
    Model eval_model = model;
    eval_model.mode = Mode::deterministic;
    double dsum = 0.0, msum = 0.0;
    for (const SampleRecord& r : val) {
        Tensor x = reshape(r.image, {1, 1, r.image.dim(1), r.image.dim(2)});
        Tensor probs = sigmoid(forward(eval_model, x, Rng(0)));
        Tensor pred = binarize(reshape(probs, r.mask.shape()), 0.5f);
        dsum += dice(pred, r.mask);
        msum += miou(pred, r.mask).miou;
    }
    return {dsum / static_cast<double>(val.size()), msum / static_cast<double>(val.size())};
}

} // namespace

FitResult fit(Model& model, const SplitResult& data, const TrainConfig& cfg, const std::string& out_dir) {
    validate_train_config(cfg);
    validate_spec(model.spec);
    if (model.spec.variant != cfg.variant) {
        throw ConfigError("fit: config variant " + variant_name(cfg.variant) + " does not match model " +
                          variant_name(model.spec.variant));
    }
    if (data.train.empty()) throw ParamError("fit: empty training split");
    fs::create_directories(out_dir);
    const std::string ledger_path = (fs::path(out_dir) / "ledger.csv").string();
    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
    std::ofstream ledger(ledger_path, std::ios::binary);
    if (!ledger) throw FormatError("fit: cannot open ledger '" + ledger_path + "'");
    ledger << "epoch,lr,loss_total,loss_bce,loss_var,val_dice,val_miou,seconds\n";
    ledger.flush();

    model.mode = Mode::train;
    AdamState adam;
    FitResult result;
    const Rng run_rng(cfg.seed);
    const LossConfig loss_cfg{cfg.lambda_u, cfg.t_passes, 1e-7f, cfg.bce_mode};
    const std::size_t n_train = data.train.size();

    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cosine_lr(epoch, cfg);
        const Rng epoch_rng = run_rng.split(static_cast<std::uint64_t>(epoch));

        // Fisher-Yates with counter-based draws.
        {
            const Rng shuffle_rng = epoch_rng.split(kShuffleLabel);
            for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
            for (std::size_t i = n_train; i > 1; --i) {
                const std::uint64_t j = shuffle_rng.bits32(static_cast<std::uint64_t>(i)) % i;
                std::swap(order[i - 1], order[static_cast<std::size_t>(j)]);
            }
        }

        double loss_sum = 0.0, bce_sum = 0.0, var_sum = 0.0;
        int batches = 0;
        for (std::size_t lo = 0; lo < n_train; lo += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(n_train, lo + static_cast<std::size_t>(cfg.batch_size));
            Tensor images, masks;
            stack_batch(data.train, order, lo, hi, images, masks);
            const Rng batch_rng = epoch_rng.split(static_cast<std::uint64_t>(batches));

            Tape tape;
            LossParts parts;
            {
                TapeScope scope(tape);
                if (model.spec.variant == Variant::uamsa) {
                    std::vector<Tensor> stack;
                    stack.reserve(static_cast<std::size_t>(cfg.t_passes));
                    for (int t = 0; t < cfg.t_passes; ++t) {
                        Tensor logits = forward(model, images, batch_rng.split(static_cast<std::uint64_t>(t)));
                        stack.push_back(sigmoid(logits));
                    }
                    parts = smoothing_loss(stack, masks, loss_cfg);
                } else {
                    Tensor logits = forward(model, images, batch_rng.split(0));
                    Tensor probs = sigmoid(logits);
                    parts.bce_part = bce(probs, masks, loss_cfg.eps);
                    parts.var_part = Tensor::scalar(0.0f);
                    parts.total = parts.bce_part;
                }
            }
            const float loss_value = parts.total.item();
            if (!std::isfinite(loss_value)) {
                throw NumericError("fit: non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches));
            }
            tape.backward(parts.total);
            adam_step(model, adam, lr, cfg.grad_clip, cfg.weight_decay);
            for (auto& [name, t] : model.params) t.zero_grad();

            loss_sum += loss_value;
            bce_sum += parts.bce_part.item();
            var_sum += parts.var_part.item();
            ++batches;
        }

        const ValScore val = validate(model, data.val);
        const auto t1 = std::chrono::steady_clock::now();
        EpochLog row;
        row.epoch = epoch;
        row.lr = lr;
        row.loss_total = loss_sum / batches;
        row.loss_bce = bce_sum / batches;
        row.loss_var = var_sum / batches;
        row.val_dice = val.dice_mean;
        row.val_miou = val.miou_mean;
        row.seconds = cfg.ledger_timing ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
        result.log.push_back(row);

        ledger << row.epoch << ',' << format_float(row.lr) << ',' << format_float(row.loss_total) << ','
               << format_float(row.loss_bce) << ',' << format_float(row.loss_var) << ','
               << format_float(row.val_dice) << ',' << format_float(row.val_miou) << ','
               << format_float(row.seconds) << '\n';
        ledger.flush();
        if (!ledger) throw FormatError("fit: ledger write failed");

        if (result.best_epoch < 0 || row.val_dice > result.best_val_dice) {
            result.best_epoch = epoch;
            result.best_val_dice = row.val_dice;
            save_checkpoint(ckpt_path, model);
        }
    }
    return result;
}

std::vector<MetricRecord> evaluate(const Model& model, const std::vector<SampleRecord>& samples,
                                   int t_passes, Rng rng) {
    std::vector<MetricRecord> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SampleRecord& r = samples[i];
        Tensor x = reshape(r.image, {1, 1, r.image.dim(1), r.image.dim(2)});
        const McPrediction mc = mc_predict(model, x, t_passes, rng.split(static_cast<std::uint64_t>(i)));
        Tensor pred = binarize(reshape(mc.mean, r.mask.shape()), 0.5f);
        MetricRecord rec;
        rec.sample_id = r.id;
        rec.dice = dice(pred, r.mask);
        const IouResult iou = miou(pred, r.mask);
        rec.iou_fg = iou.iou_fg;
        rec.iou_bg = iou.iou_bg;
        rec.miou = iou.miou;
        rec.mean_uncertainty =
            deterministic_sum(mc.variance.data(), mc.variance.numel()) / static_cast<double>(mc.variance.numel());
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace uamsa
