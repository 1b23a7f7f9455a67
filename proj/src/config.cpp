#include "uamsa/config.hpp"

#include <charconv>
#include <fstream>

namespace uamsa {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
    return out;
}

float parse_float(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const float out = std::stof(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "0") return false;
    if (v == "1") return true;
    throw ConfigError("config: key '" + key + "' expects 0 or 1, got '" + v + "'");
}

} // namespace

KeyValues read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    KeyValues out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: '" + path + "' line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("config: '" + path + "' line " + std::to_string(lineno) +
                              ": empty key or value");
        }
        out[key] = value;
    }
    return out;
}

RunConfig resolve_config(const KeyValues& keys) {
    static const char* kKnown[] = {
        "variant", "in_channels", "out_channels", "depth", "base_channels", "dropout_p",
        "msam_reduction", "msam_pool_divisor", "msam_share",
        "epochs", "batch_size", "lr_max", "lr_min", "t_passes", "lambda_u", "seed", "image_size",
        "desk_profile", "grad_clip", "weight_decay", "bce_mode", "threads", "ledger_timing", "modality",
        "synth_count", "synth_blob_min", "synth_blob_max", "synth_radius_min", "synth_radius_max",
        "synth_fuzz", "synth_noise"};
    for (const auto& [key, value] : keys) {
        bool known = false;
        for (const char* k : kKnown) known = known || key == k;
        if (!known) throw ConfigError("config: unknown key '" + key + "'");
    }
    auto get = [&keys](const char* key) -> const std::string* {
        auto it = keys.find(key);
        return it == keys.end() ? nullptr : &it->second;
    };

    RunConfig cfg;
    // paper-protocol defaults
    cfg.spec = ModelSpec{};
    cfg.train = TrainConfig{};
    cfg.synth = SynthConfig{};

    const bool desk = get("desk_profile") && parse_bool("desk_profile", *get("desk_profile"));
    cfg.train.desk_profile = desk;
    if (desk) {
        cfg.train.epochs = 30;
        cfg.train.batch_size = 8;
        cfg.train.t_passes = 5;
        cfg.train.image_size = 64;
        cfg.spec.base_channels = 8;
    }

    if (const auto* v = get("variant")) cfg.spec.variant = parse_variant(*v);
    if (const auto* v = get("in_channels")) cfg.spec.in_channels = parse_int("in_channels", *v);
    if (const auto* v = get("out_channels")) cfg.spec.out_channels = parse_int("out_channels", *v);
    if (const auto* v = get("depth")) cfg.spec.depth = parse_int("depth", *v);
    if (const auto* v = get("base_channels")) cfg.spec.base_channels = parse_int("base_channels", *v);
    if (const auto* v = get("dropout_p")) cfg.spec.dropout_p = parse_float("dropout_p", *v);
    if (const auto* v = get("msam_reduction")) cfg.spec.msam.reduction = parse_int("msam_reduction", *v);
    if (const auto* v = get("msam_pool_divisor")) {
        cfg.spec.msam.pool_divisor = parse_int("msam_pool_divisor", *v);
    }
    if (const auto* v = get("msam_share")) cfg.spec.msam.share_branch_weights = parse_bool("msam_share", *v);

    if (const auto* v = get("modality")) cfg.modality = parse_modality(*v);

    if (const auto* v = get("epochs")) cfg.train.epochs = parse_int("epochs", *v);
    if (const auto* v = get("batch_size")) cfg.train.batch_size = parse_int("batch_size", *v);
    if (const auto* v = get("lr_max")) cfg.train.lr_max = parse_float("lr_max", *v);
    if (const auto* v = get("lr_min")) cfg.train.lr_min = parse_float("lr_min", *v);
    if (const auto* v = get("t_passes")) cfg.train.t_passes = parse_int("t_passes", *v);
    if (const auto* v = get("seed")) cfg.train.seed = parse_u64("seed", *v);
    if (const auto* v = get("image_size")) cfg.train.image_size = parse_int("image_size", *v);
    if (const auto* v = get("grad_clip")) cfg.train.grad_clip = parse_float("grad_clip", *v);
    if (const auto* v = get("weight_decay")) cfg.train.weight_decay = parse_float("weight_decay", *v);
    if (const auto* v = get("threads")) cfg.threads = parse_int("threads", *v);
    if (const auto* v = get("ledger_timing")) cfg.train.ledger_timing = parse_bool("ledger_timing", *v);
    if (const auto* v = get("bce_mode")) {
        if (*v == "mean_prediction") {
            cfg.train.bce_mode = BceMode::mean_prediction;
        } else if (*v == "per_pass") {
            cfg.train.bce_mode = BceMode::per_pass;
        } else {
            throw ConfigError("config: bce_mode expects mean_prediction or per_pass, got '" + *v + "'");
        }
    }
    if (const auto* v = get("lambda_u")) {
        cfg.train.lambda_u = parse_float("lambda_u", *v);
    } else {
        cfg.train.lambda_u = lambda_for_modality(cfg.modality);
    }
    cfg.train.variant = cfg.spec.variant;

    if (const auto* v = get("synth_count")) cfg.synth.count = parse_int("synth_count", *v);
    if (const auto* v = get("synth_blob_min")) cfg.synth.blob_min = parse_int("synth_blob_min", *v);
    if (const auto* v = get("synth_blob_max")) cfg.synth.blob_max = parse_int("synth_blob_max", *v);
    if (const auto* v = get("synth_radius_min")) cfg.synth.radius_min = parse_float("synth_radius_min", *v);
    if (const auto* v = get("synth_radius_max")) cfg.synth.radius_max = parse_float("synth_radius_max", *v);
    if (const auto* v = get("synth_fuzz")) cfg.synth.boundary_fuzz = parse_float("synth_fuzz", *v);
    if (const auto* v = get("synth_noise")) cfg.synth.noise_sigma = parse_float("synth_noise", *v);
    cfg.synth.size = cfg.train.image_size;
    cfg.synth.seed = cfg.train.seed;
    cfg.synth.modality = cfg.modality;

    validate_spec(cfg.spec);
    validate_train_config(cfg.train);
    if (cfg.threads < 0) throw ConfigError("config: threads must be >= 0");
    return cfg;
}

std::string echo_text(const RunConfig& cfg) {
    std::string out;
    out += "variant = " + variant_name(cfg.spec.variant) + "\n";
    out += "in_channels = " + std::to_string(cfg.spec.in_channels) + "\n";
    out += "out_channels = " + std::to_string(cfg.spec.out_channels) + "\n";
    out += "depth = " + std::to_string(cfg.spec.depth) + "\n";
    out += "base_channels = " + std::to_string(cfg.spec.base_channels) + "\n";
    out += "dropout_p = " + format_float(cfg.spec.dropout_p) + "\n";
    if (cfg.spec.variant == Variant::uamsa) {
        out += "msam_reduction = " + std::to_string(cfg.spec.msam.reduction) + "\n";
        out += "msam_pool_divisor = " + std::to_string(cfg.spec.msam.pool_divisor) + "\n";
        out += std::string("msam_share = ") + (cfg.spec.msam.share_branch_weights ? "1" : "0") + "\n";
    }
    out += "modality = " + modality_name(cfg.modality) + "\n";
    out += "epochs = " + std::to_string(cfg.train.epochs) + "\n";
    out += "batch_size = " + std::to_string(cfg.train.batch_size) + "\n";
    out += "lr_max = " + format_float(cfg.train.lr_max) + "\n";
    out += "lr_min = " + format_float(cfg.train.lr_min) + "\n";
    out += "t_passes = " + std::to_string(cfg.train.t_passes) + "\n";
    out += "lambda_u = " + format_float(cfg.train.lambda_u) + "\n";
    out += "seed = " + std::to_string(cfg.train.seed) + "\n";
    out += "image_size = " + std::to_string(cfg.train.image_size) + "\n";
    out += std::string("desk_profile = ") + (cfg.train.desk_profile ? "1" : "0") + "\n";
    out += "grad_clip = " + format_float(cfg.train.grad_clip) + "\n";
    out += "weight_decay = " + format_float(cfg.train.weight_decay) + "\n";
    out += std::string("bce_mode = ") +
           (cfg.train.bce_mode == BceMode::mean_prediction ? "mean_prediction" : "per_pass") + "\n";
    out += "threads = " + std::to_string(cfg.threads) + "\n";
    out += std::string("ledger_timing = ") + (cfg.train.ledger_timing ? "1" : "0") + "\n";
    out += "synth_count = " + std::to_string(cfg.synth.count) + "\n";
    out += "synth_blob_min = " + std::to_string(cfg.synth.blob_min) + "\n";
    out += "synth_blob_max = " + std::to_string(cfg.synth.blob_max) + "\n";
    out += "synth_radius_min = " + format_float(cfg.synth.radius_min) + "\n";
    out += "synth_radius_max = " + format_float(cfg.synth.radius_max) + "\n";
    out += "synth_fuzz = " + format_float(cfg.synth.boundary_fuzz) + "\n";
    out += "synth_noise = " + format_float(cfg.synth.noise_sigma) + "\n";
    return out;
}

void write_echo(const std::string& path, const RunConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config: cannot write echo '" + path + "'");
    f << echo_text(cfg);
    if (!f) throw ConfigError("config: short write to '" + path + "'");
}

} // namespace uamsa
