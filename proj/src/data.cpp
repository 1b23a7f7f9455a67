#include "uamsa/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "uamsa/kernels.hpp"
#include "uamsa/parallel.hpp"

namespace fs = std::filesystem;

namespace uamsa {

std::string format_float(float v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_float(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

namespace {

struct ContrastProfile {
    float fg, bg, texture_amp;
};

ContrastProfile profile_for(Modality m) {
    switch (m) {
        case Modality::T1C: return {0.78f, 0.22f, 0.05f};
        case Modality::T2FLAIR: return {0.70f, 0.32f, 0.06f};
        case Modality::T2W: return {0.75f, 0.28f, 0.06f};
        case Modality::SYNTH: return {0.80f, 0.25f, 0.05f};
    }
    return {0.80f, 0.25f, 0.05f};
}

struct Ellipse {
    double cx, cy, rx, ry, cos_t, sin_t;
};

} // namespace

std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg) {
    if (cfg.count < 1 || cfg.size < 4) throw ParamError("synth: count/size out of range");
    if (cfg.blob_min < 1 || cfg.blob_max < cfg.blob_min) throw ParamError("synth: bad blob_count range");
    if (!(cfg.radius_min > 0.0f && cfg.radius_max >= cfg.radius_min && cfg.radius_max <= 0.5f)) {
        throw ParamError("synth: radius range must satisfy 0 < min <= max <= 0.5");
    }
    if (cfg.boundary_fuzz < 0.0f || cfg.noise_sigma < 0.0f) throw ParamError("synth: sigma must be >= 0");

    const ContrastProfile prof = profile_for(cfg.modality);
    const int S = cfg.size;
    int width = 1;
    for (int c = cfg.count - 1; c >= 10; c /= 10) ++width;

    std::vector<SampleRecord> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    const Rng base(cfg.seed);
    for (int s = 0; s < cfg.count; ++s) {
        const Rng rng = base.split(static_cast<std::uint64_t>(s));
        RngSequence seq(rng);

        const int span = cfg.blob_max - cfg.blob_min + 1;
        const int nblobs = cfg.blob_min + std::min(span - 1, static_cast<int>(seq.next_uniform() * span));
        std::vector<Ellipse> blobs;
        blobs.reserve(static_cast<std::size_t>(nblobs));
        for (int b = 0; b < nblobs; ++b) {
            Ellipse e;
            e.cx = (0.25 + 0.5 * seq.next_uniform()) * S;
            e.cy = (0.25 + 0.5 * seq.next_uniform()) * S;
            e.rx = (cfg.radius_min + (cfg.radius_max - cfg.radius_min) * seq.next_uniform()) * S;
            e.ry = (cfg.radius_min + (cfg.radius_max - cfg.radius_min) * seq.next_uniform()) * S;
            const double theta = seq.next_uniform() * 3.14159265358979323846;
            e.cos_t = std::cos(theta);
            e.sin_t = std::sin(theta);
            blobs.push_back(e);
        }
        // low-frequency background texture
        double tfx[3], tfy[3], tph[3];
        for (int k = 0; k < 3; ++k) {
            tfx[k] = 0.5 + 2.5 * seq.next_uniform();
            tfy[k] = 0.5 + 2.5 * seq.next_uniform();
            tph[k] = 6.283185307179586 * seq.next_uniform();
        }
        const std::uint64_t noise_base = seq.reserve(static_cast<std::uint64_t>(2 * S * S));

        Tensor image = Tensor::zeros({1, S, S});
        Tensor mask = Tensor::zeros({1, S, S});
        float* img = image.data();
        float* msk = mask.data();
        const double fuzz = std::max(static_cast<double>(cfg.boundary_fuzz), 1e-9);
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                double field = 0.0;
                for (const Ellipse& e : blobs) {
                    const double dx = x + 0.5 - e.cx;
                    const double dy = y + 0.5 - e.cy;
                    const double u = (dx * e.cos_t + dy * e.sin_t) / e.rx;
                    const double v = (-dx * e.sin_t + dy * e.cos_t) / e.ry;
                    const double rho = std::sqrt(u * u + v * v);
                    const double sharp = std::min(e.rx, e.ry) / fuzz;
                    const double z = (1.0 - rho) * sharp;
                    const double soft = z > 40.0 ? 1.0 : (z < -40.0 ? 0.0 : 1.0 / (1.0 + std::exp(-z)));
                    field = std::max(field, soft);
                }
                const std::size_t idx = static_cast<std::size_t>(y) * S + x;
                msk[idx] = field >= 0.5 ? 1.0f : 0.0f;
                double tex = 0.0;
                for (int k = 0; k < 3; ++k) {
                    tex += std::sin(6.283185307179586 * (tfx[k] * x / S + tfy[k] * y / S) + tph[k]);
                }
                tex *= prof.texture_amp / 3.0;
                double val = prof.bg + (prof.fg - prof.bg) * field + tex;
                if (cfg.noise_sigma > 0.0f) {
                    val += cfg.noise_sigma * rng.normal((noise_base >> 1) + idx);
                }
                img[idx] = static_cast<float>(std::min(1.0, std::max(0.0, val)));
            }
        }
        std::ostringstream id;
        id << "synth_";
        id.width(width);
        id.fill('0');
        id << s;
        out.push_back({id.str(), std::move(image), std::move(mask), cfg.modality});
    }
    return out;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

void write_pgm(const std::string& path, const Tensor& image) {
    const Shape& s = image.shape();
    int H, W;
    if (s.size() == 2) {
        H = s[0];
        W = s[1];
    } else if (s.size() == 3 && s[0] == 1) {
        H = s[1];
        W = s[2];
    } else {
        throw ShapeError("write_pgm: expected HxW or 1xHxW image, got " + shape_str(image.shape()));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_pgm: cannot open '" + path + "'");
    f << "P5\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(W));
    const float* p = image.data();
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const float v = p[static_cast<std::size_t>(y) * W + x];
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw ParamError("write_pgm: value " + format_float(v) + " outside [0,1]");
            }
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
        }
        f.write(reinterpret_cast<const char*>(row.data()), W);
    }
    if (!f) throw FormatError("write_pgm: short write to '" + path + "'");
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& f, std::uint64_t& offset, const std::string& path) {
    std::string tok;
    int c;
    while ((c = f.get()) != EOF) {
        ++offset;
        if (c == '#') {
            while ((c = f.get()) != EOF && c != '\n') ++offset;
            if (c != EOF) ++offset;
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("read_pgm: truncated header in '" + path + "'", offset);
    return tok;
}

int pgm_int(std::istream& f, std::uint64_t& offset, const std::string& path) {
    const std::string tok = pgm_token(f, offset, path);
    int value = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || value <= 0) {
        throw FormatError("read_pgm: bad header field '" + tok + "' in '" + path + "'", offset);
    }
    return value;
}

} // namespace

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_pgm: cannot open '" + path + "'");
    std::uint64_t offset = 0;
    const std::string magic = pgm_token(f, offset, path);
    if (magic != "P5") {
        throw FormatError("read_pgm: '" + path + "' is not binary PGM (magic '" + magic + "', P5 required)",
                          0);
    }
    const int W = pgm_int(f, offset, path);
    const int H = pgm_int(f, offset, path);
    const int maxval = pgm_int(f, offset, path);
    if (maxval != 255) {
        throw FormatError("read_pgm: unsupported maxval " + std::to_string(maxval) + " in '" + path + "'",
                          offset);
    }
    // pgm_int consumed exactly one whitespace byte after the maxval.
    std::vector<unsigned char> bytes(static_cast<std::size_t>(H) * W);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(f.gcount()) != bytes.size()) {
        throw FormatError("read_pgm: truncated payload in '" + path + "'",
                          offset + static_cast<std::uint64_t>(f.gcount()));
    }
    Tensor out = Tensor::zeros({1, H, W});
    float* p = out.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) p[i] = static_cast<float>(bytes[i]) / 255.0f;
    return out;
}

// ---------------------------------------------------------------------------
// float maps
// ---------------------------------------------------------------------------

namespace {

void put_u16(std::ostream& f, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& f, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& f, std::uint64_t& offset, const std::string& what) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    if (f.gcount() != 2) throw FormatError(what + ": truncated", offset);
    offset += 2;
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& f, std::uint64_t& offset, const std::string& what) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw FormatError(what + ": truncated", offset);
    offset += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& f, const float* data, std::size_t n) {
    // Little-endian hosts only; asserted at configure time for this artifact.
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

void get_f32(std::istream& f, float* data, std::size_t n, std::uint64_t& offset, const std::string& what) {
    f.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
    if (static_cast<std::size_t>(f.gcount()) != n * 4) {
        throw FormatError(what + ": truncated payload", offset + static_cast<std::uint64_t>(f.gcount()));
    }
    offset += n * 4;
}

} // namespace

void write_floatmap(const std::string& path, const Tensor& map) {
    int H, W;
    const Shape& s = map.shape();
    if (s.size() == 2) {
        H = s[0];
        W = s[1];
    } else if (s.size() == 3 && s[0] == 1) {
        H = s[1];
        W = s[2];
    } else {
        throw ShapeError("write_floatmap: expected HxW map, got " + shape_str(map.shape()));
    }
    check_finite(map.data(), map.numel(), "write_floatmap");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_floatmap: cannot open '" + path + "'");
    f.write("UAMF", 4);
    put_u16(f, 1);
    put_u32(f, static_cast<std::uint32_t>(H));
    put_u32(f, static_cast<std::uint32_t>(W));
    put_f32(f, map.data(), static_cast<std::size_t>(map.numel()));
    if (!f) throw FormatError("write_floatmap: short write to '" + path + "'");
}

Tensor read_floatmap(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_floatmap: cannot open '" + path + "'");
    std::uint64_t offset = 0;
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, "UAMF", 4) != 0) {
        throw FormatError("read_floatmap: bad magic in '" + path + "'", 0);
    }
    offset = 4;
    const std::uint16_t version = get_u16(f, offset, "read_floatmap");
    if (version != 1) throw FormatError("read_floatmap: unsupported version " + std::to_string(version), 4);
    const std::uint32_t H = get_u32(f, offset, "read_floatmap");
    const std::uint32_t W = get_u32(f, offset, "read_floatmap");
    if (H == 0 || W == 0 || static_cast<std::uint64_t>(H) * W > (1u << 30)) {
        throw FormatError("read_floatmap: implausible size " + std::to_string(H) + "x" + std::to_string(W),
                          6);
    }
    Tensor out = Tensor::zeros({static_cast<int>(H), static_cast<int>(W)});
    get_f32(f, out.data(), static_cast<std::size_t>(out.numel()), offset, "read_floatmap");
    return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

std::string canonical_spec_text(const ModelSpec& spec) {
    validate_spec(spec);
    std::string out;
    out += "variant=" + variant_name(spec.variant) + "\n";
    out += "in_channels=" + std::to_string(spec.in_channels) + "\n";
    out += "out_channels=" + std::to_string(spec.out_channels) + "\n";
    out += "depth=" + std::to_string(spec.depth) + "\n";
    out += "base_channels=" + std::to_string(spec.base_channels) + "\n";
    out += "dropout_p=" + format_float(spec.dropout_p) + "\n";
    if (spec.variant == Variant::uamsa) {
        out += "msam_reduction=" + std::to_string(spec.msam.reduction) + "\n";
        out += "msam_pool_divisor=" + std::to_string(spec.msam.pool_divisor) + "\n";
        out += std::string("msam_share=") + (spec.msam.share_branch_weights ? "1" : "0") + "\n";
    }
    return out;
}

ModelSpec parse_spec_text(const std::string& text) {
    ModelSpec spec;
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("spec text: missing '=' in line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto take = [&kv](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("spec text: missing key '" + key + "'");
        const std::string v = it->second;
        kv.erase(it);
        return v;
    };
    spec.variant = parse_variant(take("variant"));
    spec.in_channels = std::stoi(take("in_channels"));
    spec.out_channels = std::stoi(take("out_channels"));
    spec.depth = std::stoi(take("depth"));
    spec.base_channels = std::stoi(take("base_channels"));
    spec.dropout_p = std::stof(take("dropout_p"));
    if (spec.variant == Variant::uamsa) {
        spec.msam.reduction = std::stoi(take("msam_reduction"));
        spec.msam.pool_divisor = std::stoi(take("msam_pool_divisor"));
        spec.msam.share_branch_weights = take("msam_share") == "1";
    }
    if (!kv.empty()) throw FormatError("spec text: unknown key '" + kv.begin()->first + "'");
    validate_spec(spec);
    return spec;
}

void save_checkpoint(const std::string& path, const Model& model) {
    for (const auto& [name, t] : model.params) {
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            if (!std::isfinite(t.data()[i])) {
                throw NumericError("save_checkpoint: non-finite value in '" + name + "'");
            }
        }
    }
    const std::string spec_text = canonical_spec_text(model.spec);
    const auto schema = parameter_schema(model.spec);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_checkpoint: cannot open '" + path + "'");
    f.write("UAMS", 4);
    put_u16(f, 1);
    put_u32(f, static_cast<std::uint32_t>(spec_text.size()));
    f.write(spec_text.data(), static_cast<std::streamsize>(spec_text.size()));
    put_u32(f, static_cast<std::uint32_t>(schema.size()));
    for (const ParamDesc& d : schema) {
        const Tensor& t = model.param(d.name);
        if (t.shape() != d.shape) {
            throw SchemaError("save_checkpoint: parameter '" + d.name + "' has shape " +
                                  shape_str(t.shape()) + ", schema wants " + shape_str(d.shape),
                              {}, {});
        }
        put_u16(f, static_cast<std::uint16_t>(d.name.size()));
        f.write(d.name.data(), static_cast<std::streamsize>(d.name.size()));
        f.put(static_cast<char>(d.shape.size()));
        for (int dim : d.shape) put_u32(f, static_cast<std::uint32_t>(dim));
        put_f32(f, t.data(), static_cast<std::size_t>(t.numel()));
    }
    if (!f) throw FormatError("save_checkpoint: short write to '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_checkpoint: cannot open '" + path + "'");
    std::uint64_t offset = 0;
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, "UAMS", 4) != 0) {
        throw FormatError("load_checkpoint: bad magic in '" + path + "'", 0);
    }
    offset = 4;
    const std::uint16_t version = get_u16(f, offset, "load_checkpoint");
    if (version != 1) {
        throw FormatError("load_checkpoint: unsupported version " + std::to_string(version), 4);
    }
    const std::uint32_t spec_len = get_u32(f, offset, "load_checkpoint");
    if (spec_len > 4096) throw FormatError("load_checkpoint: implausible spec length", offset - 4);
    std::string spec_text(spec_len, '\0');
    f.read(spec_text.data(), spec_len);
    if (static_cast<std::uint32_t>(f.gcount()) != spec_len) {
        throw FormatError("load_checkpoint: truncated spec text", offset);
    }
    offset += spec_len;
    ModelSpec spec = parse_spec_text(spec_text);
    const auto schema = parameter_schema(spec);
    const std::uint32_t count = get_u32(f, offset, "load_checkpoint");
    if (count != schema.size()) {
        std::vector<std::string> missing, unexpected;
        throw SchemaError("load_checkpoint: tensor count " + std::to_string(count) + " does not match the " +
                              std::to_string(schema.size()) + "-entry schema of the stored spec",
                          missing, unexpected);
    }
    Model model;
    model.spec = spec;
    for (const ParamDesc& d : schema) {
        const std::uint16_t name_len = get_u16(f, offset, "load_checkpoint");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (static_cast<std::uint16_t>(f.gcount()) != name_len) {
            throw FormatError("load_checkpoint: truncated tensor name", offset);
        }
        offset += name_len;
        if (name != d.name) {
            throw SchemaError("load_checkpoint: tensor '" + name + "' where schema expects '" + d.name + "'",
                              {d.name}, {name});
        }
        const int rank = f.get();
        if (rank == EOF) throw FormatError("load_checkpoint: truncated rank byte", offset);
        ++offset;
        if (rank != static_cast<int>(d.shape.size())) {
            throw FormatError("load_checkpoint: tensor '" + name + "' rank mismatch", offset - 1);
        }
        Shape shape(static_cast<std::size_t>(rank));
        for (int i = 0; i < rank; ++i) {
            shape[static_cast<std::size_t>(i)] = static_cast<int>(get_u32(f, offset, "load_checkpoint"));
        }
        if (shape != d.shape) {
            throw FormatError("load_checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                                  ", schema wants " + shape_str(d.shape),
                              offset);
        }
        Tensor t = Tensor::zeros(shape, true);
        get_f32(f, t.data(), static_cast<std::size_t>(t.numel()), offset, "load_checkpoint");
        model.params.emplace(d.name, std::move(t));
    }
    return model;
}

Model load_checkpoint(const std::string& path, const ModelSpec& expected) {
    Model model = load_checkpoint(path);
    if (canonical_spec_text(model.spec) != canonical_spec_text(expected)) {
        std::vector<std::string> missing, unexpected;
        const auto want = parameter_schema(expected);
        const auto have = parameter_schema(model.spec);
        for (const ParamDesc& d : want) {
            if (std::none_of(have.begin(), have.end(),
                             [&](const ParamDesc& h) { return h.name == d.name; })) {
                missing.push_back(d.name);
            }
        }
        for (const ParamDesc& h : have) {
            if (std::none_of(want.begin(), want.end(),
                             [&](const ParamDesc& d) { return d.name == h.name; })) {
                unexpected.push_back(h.name);
            }
        }
        std::string msg = "load_checkpoint: stored spec does not match the requested one";
        if (!missing.empty()) {
            msg += "; missing:";
            for (const auto& m : missing) msg += " " + m;
        }
        if (!unexpected.empty()) {
            msg += "; unexpected:";
            for (const auto& u : unexpected) msg += " " + u;
        }
        throw SchemaError(msg, std::move(missing), std::move(unexpected));
    }
    return model;
}

// ---------------------------------------------------------------------------
// resize + import
// ---------------------------------------------------------------------------

namespace {

std::pair<int, int> image_hw(const Tensor& img, const char* op) {
    const Shape& s = img.shape();
    if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
    if (s.size() == 2) return {s[0], s[1]};
    throw ShapeError(std::string(op) + ": expected 1xHxW image, got " + shape_str(img.shape()));
}

} // namespace

Tensor resize_nearest(const Tensor& img, int oh, int ow) {
    const auto [h, w] = image_hw(img, "resize_nearest");
    Tensor out = Tensor::zeros({1, oh, ow});
    const float* x = img.data();
    float* y = out.data();
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
            const int r = static_cast<int>(static_cast<std::int64_t>(i) * h / oh);
            const int c = static_cast<int>(static_cast<std::int64_t>(j) * w / ow);
            y[static_cast<std::size_t>(i) * ow + j] = x[static_cast<std::size_t>(r) * w + c];
        }
    return out;
}

Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
    const auto [h, w] = image_hw(img, "resize_bilinear");
    Tensor out = Tensor::zeros({1, oh, ow});
    const float* x = img.data();
    float* y = out.data();
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
            double sy = (i + 0.5) * static_cast<double>(h) / oh - 0.5;
            double sx = (j + 0.5) * static_cast<double>(w) / ow - 0.5;
            if (sy < 0) sy = 0;
            if (sx < 0) sx = 0;
            int r0 = std::min(static_cast<int>(sy), h - 1);
            int c0 = std::min(static_cast<int>(sx), w - 1);
            const int r1 = std::min(r0 + 1, h - 1);
            const int c1 = std::min(c0 + 1, w - 1);
            const double fy = sy - r0, fx = sx - c0;
            const double v00 = x[static_cast<std::size_t>(r0) * w + c0];
            const double v01 = x[static_cast<std::size_t>(r0) * w + c1];
            const double v10 = x[static_cast<std::size_t>(r1) * w + c0];
            const double v11 = x[static_cast<std::size_t>(r1) * w + c1];
            const double top = v00 + (v01 - v00) * fx;
            const double bot = v10 + (v11 - v10) * fx;
            y[static_cast<std::size_t>(i) * ow + j] = static_cast<float>(top + (bot - top) * fy);
        }
    return out;
}

std::vector<SampleRecord> import_slices(const std::string& dir, int target_size, ImportStats* stats) {
    if (!fs::is_directory(dir)) throw FormatError("import: '" + dir + "' is not a directory");
    std::map<std::string, Modality> manifest;
    const fs::path manifest_path = fs::path(dir) / "manifest.csv";
    if (fs::exists(manifest_path)) {
        std::ifstream mf(manifest_path);
        std::string line;
        bool first = true;
        while (std::getline(mf, line)) {
            if (first) {
                first = false;
                if (line.rfind("id,", 0) == 0) continue;
            }
            const auto comma = line.find(',');
            if (comma == std::string::npos || line.empty()) continue;
            manifest[line.substr(0, comma)] = parse_modality(line.substr(comma + 1));
        }
    }

    ImportStats local;
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        constexpr const char* kSuffix = "_img.pgm";
        if (name.size() > 8 && name.substr(name.size() - 8) == kSuffix) {
            ids.push_back(name.substr(0, name.size() - 8));
        }
    }
    std::sort(ids.begin(), ids.end());

    std::vector<SampleRecord> out;
    for (const std::string& id : ids) {
        const fs::path img_path = fs::path(dir) / (id + "_img.pgm");
        const fs::path mask_path = fs::path(dir) / (id + "_mask.pgm");
        if (!fs::exists(mask_path)) {
            fprintf(stderr, "import: skipping '%s' (no mask)\n", id.c_str());
            ++local.skipped_unpaired;
            continue;
        }
        try {
            Tensor image = read_pgm(img_path.string());
            Tensor mask = read_pgm(mask_path.string());
            if (image.shape() != mask.shape()) {
                fprintf(stderr, "import: skipping '%s' (image %s vs mask %s)\n", id.c_str(),
                        shape_str(image.shape()).c_str(), shape_str(mask.shape()).c_str());
                ++local.failed;
                continue;
            }
            if (target_size > 0 && (image.dim(1) != target_size || image.dim(2) != target_size)) {
                image = resize_bilinear(image, target_size, target_size);
                mask = resize_nearest(mask, target_size, target_size);
            }
            // masks may arrive as 0/255 bytes; anything >= 0.5 is foreground
            mask = binarize(mask, 0.5f);
            Modality modality = Modality::SYNTH;
            if (auto it = manifest.find(id); it != manifest.end()) modality = it->second;
            out.push_back({id, std::move(image), std::move(mask), modality});
            ++local.imported;
        } catch (const FormatError& e) {
            fprintf(stderr, "import: skipping '%s': %s\n", id.c_str(), e.what());
            ++local.failed;
        }
    }
    if (stats) *stats = local;
    if (out.empty()) throw FormatError("import: no usable image/mask pairs in '" + dir + "'");
    return out;
}

void write_dataset(const std::string& dir, const std::vector<SampleRecord>& samples) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.csv", std::ios::binary);
    manifest << "id,modality\n";
    for (const SampleRecord& s : samples) {
        write_pgm((fs::path(dir) / (s.id + "_img.pgm")).string(), s.image);
        write_pgm((fs::path(dir) / (s.id + "_mask.pgm")).string(), s.mask);
        manifest << s.id << "," << modality_name(s.modality) << "\n";
    }
    if (!manifest) throw FormatError("write_dataset: failed writing manifest in '" + dir + "'");
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRecord>& records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_metrics_csv: cannot open '" + path + "'");
    f << "sample_id,dice,iou_fg,iou_bg,miou,mean_uncertainty\n";
    for (const MetricRecord& r : records) {
        f << r.sample_id << ',' << format_float(r.dice) << ',' << format_float(r.iou_fg) << ','
          << format_float(r.iou_bg) << ',' << format_float(r.miou) << ','
          << format_float(r.mean_uncertainty) << '\n';
    }
    if (!f) throw FormatError("write_metrics_csv: short write to '" + path + "'");
}

} // namespace uamsa
