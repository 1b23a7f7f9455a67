// Command-line front end: synth / train / eval / predict / flops.
//
// Exit codes: 0 success, 2 config error, 3 data or format error,
// 4 numerical abort. Diagnostics go to stderr; machine-readable output goes
// to files or stdout only.

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uamsa/config.hpp"
#include "uamsa/parallel.hpp"
#include "uamsa/ref.hpp"
#include "uamsa/train.hpp"

namespace fs = std::filesystem;
using namespace uamsa;

namespace {

// Exclusive lock on an output directory; one run per directory at a time.
class DirLock {
public:
    explicit DirLock(const std::string& dir) {
        fs::create_directories(dir);
        path_ = (fs::path(dir) / ".uamsa.lock").string();
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            throw ConfigError("output directory '" + dir +
                              "' is locked by another run (remove " + path_ + " if stale)");
        }
        ::close(fd);
        held_ = true;
    }
    ~DirLock() {
        if (held_) ::unlink(path_.c_str());
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
    bool held_ = false;
};

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets; // key=value overrides
};

KeyValues merge_keys(const CommonArgs& args) {
    KeyValues keys;
    if (!args.config_path.empty()) keys = read_config_file(args.config_path);
    for (const std::string& kv : args.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        keys[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return keys;
}

void apply_threads(const RunConfig& cfg) {
    if (cfg.threads > 0) set_threads(cfg.threads);
}

void print_summary_block(const std::vector<MetricRecord>& records) {
    const RecordSummary s = summarize(records);
    auto line = [](const char* name, const Summary& m) {
        std::printf("%s: mean=%s median=%s q1=%s q3=%s\n", name, format_float(m.mean).c_str(),
                    format_float(m.median).c_str(), format_float(m.q1).c_str(),
                    format_float(m.q3).c_str());
    };
    std::printf("samples: %zu\n", records.size());
    line("dice", s.dice);
    line("iou_fg", s.iou_fg);
    line("iou_bg", s.iou_bg);
    line("miou", s.miou);
    line("mean_uncertainty", s.mean_uncertainty);
    auto hist = [](const char* name, const Summary& m) {
        std::printf("histogram %s:", name);
        for (int b : m.histogram) std::printf(" %d", b);
        std::printf("\n");
    };
    hist("dice", s.dice);
    hist("miou", s.miou);
}

int run_synth(const CommonArgs& common, const std::string& out_dir) {
    const RunConfig cfg = resolve_config(merge_keys(common));
    apply_threads(cfg);
    DirLock lock(out_dir);
    const auto samples = generate_synthetic(cfg.synth);
    write_dataset(out_dir, samples);
    write_echo((fs::path(out_dir) / "config.echo").string(), cfg);
    std::fprintf(stderr, "synth: wrote %zu samples to %s\n", samples.size(), out_dir.c_str());
    return 0;
}

int run_train(const CommonArgs& common, const std::string& data_dir, const std::string& out_dir) {
    const RunConfig cfg = resolve_config(merge_keys(common));
    apply_threads(cfg);
    DirLock lock(out_dir);
    ImportStats stats;
    auto samples = import_slices(data_dir, cfg.train.image_size, &stats);
    if (stats.skipped_unpaired || stats.failed) {
        std::fprintf(stderr, "train: imported %d samples (%d unpaired, %d failed)\n", stats.imported,
                     stats.skipped_unpaired, stats.failed);
    }
    const SplitResult split = split_dataset(std::move(samples), {8, 1, 1}, cfg.train.seed);
    Model model = build(cfg.spec, Rng(cfg.train.seed, 1));
    write_echo((fs::path(out_dir) / "config.echo").string(), cfg);
    const FitResult result = fit(model, split, cfg.train, out_dir);
    std::fprintf(stderr, "train: best val dice %s at epoch %d; outputs in %s\n",
                 format_float(result.best_val_dice).c_str(), result.best_epoch, out_dir.c_str());
    return 0;
}

int run_eval(const CommonArgs& common, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split_name, int t_passes_flag, const std::string& out_csv) {
    const RunConfig cfg = resolve_config(merge_keys(common));
    apply_threads(cfg);
    const Model model = load_checkpoint(checkpoint);
    auto samples = import_slices(data_dir, cfg.train.image_size, nullptr);
    const SplitResult split = split_dataset(std::move(samples), {8, 1, 1}, cfg.train.seed);
    const std::vector<SampleRecord>* subset = &split.test;
    if (split_name == "train") {
        subset = &split.train;
    } else if (split_name == "val") {
        subset = &split.val;
    } else if (split_name != "test") {
        throw ConfigError("eval: --split expects train, val or test, got '" + split_name + "'");
    }
    if (subset->empty()) throw ParamError("eval: selected split is empty");
    const int t_passes = t_passes_flag > 0 ? t_passes_flag : cfg.train.t_passes;
    const auto records = evaluate(model, *subset, t_passes, Rng(cfg.train.seed, 2));
    std::string csv = out_csv;
    if (csv.empty()) {
        csv = (fs::path(checkpoint).parent_path() / ("metrics_" + split_name + ".csv")).string();
    }
    write_metrics_csv(csv, records);
    print_summary_block(records);
    std::fprintf(stderr, "eval: wrote %s\n", csv.c_str());
    return 0;
}

int run_predict(const std::string& checkpoint, const std::string& image_path, int t_passes,
                std::uint64_t seed, int threads, const std::string& out_prefix) {
    if (threads > 0) set_threads(threads);
    const Model model = load_checkpoint(checkpoint);
    Tensor img = read_pgm(image_path);
    const int H = img.dim(1), W = img.dim(2);
    Tensor x = reshape(img, {1, 1, H, W});
    const McPrediction mc = mc_predict(model, x, t_passes, Rng(seed, 2));
    write_pgm(out_prefix + "_mean.pgm", reshape(mc.mean, {1, H, W}));
    write_pgm(out_prefix + "_mask.pgm", reshape(binarize(mc.mean), {1, H, W}));
    write_floatmap(out_prefix + "_uncertainty.uamf", reshape(mc.variance, {H, W}));
    std::fprintf(stderr, "predict: wrote %s_{mean,mask}.pgm and %s_uncertainty.uamf\n",
                 out_prefix.c_str(), out_prefix.c_str());
    return 0;
}

int run_flops(const CommonArgs& common) {
    const RunConfig cfg = resolve_config(merge_keys(common));
    const CostReport r = count_params_flops(cfg.spec, cfg.train.image_size, cfg.train.image_size);
    std::printf("variant %s\n", variant_name(cfg.spec.variant).c_str());
    std::printf("input %dx%d\n", cfg.train.image_size, cfg.train.image_size);
    std::printf("params %lld\n", static_cast<long long>(r.params));
    std::printf("flops_total %lld\n", static_cast<long long>(r.flops_total));
    std::printf("flops_conv %lld\n", static_cast<long long>(r.flops_conv));
    std::printf("flops_attention %lld\n", static_cast<long long>(r.flops_attention));
    std::printf("flops_other %lld\n", static_cast<long long>(r.flops_other));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UAMSA-UNet experiments: Bayesian segmentation with dual-scale attention"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string out_dir, data_dir, checkpoint, image_path, out_prefix, out_csv;
    std::string split_name = "test";
    int t_passes = 0;
    int predict_t = 20;
    int threads = 0;
    std::uint64_t seed = 0;

    auto add_common = [&common](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", common.config_path, "key = value config file");
        if (config_required) opt->required();
        sub->add_option("--set", common.sets, "override a config key (key=value, repeatable)");
    };
    auto add_override = [&common](CLI::App* sub, const char* flag, const char* key, const char* help) {
        sub->add_option_function<std::string>(
            flag, [&common, key](const std::string& v) { common.sets.push_back(std::string(key) + "=" + v); },
            help);
    };

    CLI::App* synth = app.add_subcommand("synth", "materialize a synthetic dataset");
    add_common(synth, true);
    synth->add_option("--out-dir", out_dir, "dataset output directory")->required();
    add_override(synth, "--seed", "seed", "generation seed");
    add_override(synth, "--count", "synth_count", "number of samples");

    CLI::App* train = app.add_subcommand("train", "fit a model; writes checkpoint, ledger, config echo");
    add_common(train, true);
    train->add_option("--data-dir", data_dir, "directory of <id>_img.pgm / <id>_mask.pgm pairs")->required();
    train->add_option("--out-dir", out_dir, "run output directory")->required();
    add_override(train, "--variant", "variant", "uamsa or plain_unet");
    add_override(train, "--seed", "seed", "run seed");
    add_override(train, "--threads", "threads", "kernel threads (1 = strict single-threaded)");
    add_override(train, "--lambda-u", "lambda_u", "variance penalty weight");

    CLI::App* eval = app.add_subcommand("eval", "mc_predict on a split; writes metrics CSV");
    add_common(eval, true);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--data-dir", data_dir, "dataset directory")->required();
    eval->add_option("--split", split_name, "train | val | test (default test)");
    eval->add_option("--t-passes", t_passes, "MC passes (default: config t_passes)");
    eval->add_option("--out-csv", out_csv, "metrics CSV path (default: next to checkpoint)");
    add_override(eval, "--seed", "seed", "split/eval seed");
    add_override(eval, "--threads", "threads", "kernel threads");

    CLI::App* predict = app.add_subcommand("predict", "segment one PGM image with uncertainty");
    predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    predict->add_option("--image", image_path, "input PGM (P5) image")->required();
    predict->add_option("--t-passes", predict_t, "MC passes (default 20)");
    predict->add_option("--seed", seed, "sampling seed");
    predict->add_option("--threads", threads, "kernel threads");
    predict->add_option("--out-prefix", out_prefix, "output path prefix")->required();

    CLI::App* flops = app.add_subcommand("flops", "print the params/FLOPs table");
    add_common(flops, true);
    add_override(flops, "--image-size", "image_size", "input resolution");
    add_override(flops, "--variant", "variant", "uamsa or plain_unet");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return run_synth(common, out_dir);
        if (train->parsed()) return run_train(common, data_dir, out_dir);
        if (eval->parsed()) return run_eval(common, checkpoint, data_dir, split_name, t_passes, out_csv);
        if (predict->parsed()) return run_predict(checkpoint, image_path, predict_t, seed, threads, out_prefix);
        if (flops->parsed()) return run_flops(common);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const SchemaError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const ParamError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
