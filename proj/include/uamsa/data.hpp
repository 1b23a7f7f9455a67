#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uamsa/bayes.hpp"
#include "uamsa/metrics.hpp"
#include "uamsa/model.hpp"
#include "uamsa/rng.hpp"
#include "uamsa/tensor.hpp"

namespace uamsa {

struct SampleRecord {
    std::string id;
    Tensor image; // 1 x H x W in [0,1]
    Tensor mask;  // 1 x H x W in {0,1}
    Modality modality = Modality::SYNTH;
};

// Fuzzy-boundary blobs: a union of random ellipses rasterized to a soft
// field; mask = field >= 0.5; image = per-modality contrast mapping of the
// field plus low-frequency texture and Gaussian noise, clipped to [0,1].
// A pure function of the config (all randomness is counter-based off seed).
struct SynthConfig {
    int count = 200;
    int size = 64;
    int blob_min = 1;
    int blob_max = 3;
    float radius_min = 0.10f; // fraction of size
    float radius_max = 0.24f;
    float boundary_fuzz = 1.5f; // transition half-width, pixels
    float noise_sigma = 0.03f;
    Modality modality = Modality::SYNTH;
    std::uint64_t seed = 0;
};

std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg);

// Binary PGM (P5, maxval 255). Write rounds half-up; read divides by 255.
void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path); // 1 x H x W

// Float map: "UAMF", u16 version 1, u32 H, u32 W, then H*W little-endian
// f32 row-major. Round-trips bit-exactly.
void write_floatmap(const std::string& path, const Tensor& map); // H x W
Tensor read_floatmap(const std::string& path);

// Checkpoint: "UAMS", u16 version 1, length-prefixed canonical spec text,
// u32 tensor count, then per tensor: u16 name length + name, u8 rank,
// u32 dims, f32 payload. Tensors in schema order. docs/checkpoint-schema.md
// has the full layout.
std::string canonical_spec_text(const ModelSpec& spec);
ModelSpec parse_spec_text(const std::string& text);
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);
// Validates the file's parameter names against `expected`'s schema; throws
// SchemaError listing missing/unexpected names.
Model load_checkpoint(const std::string& path, const ModelSpec& expected);

// Any-direction resizes for the import path (masks nearest, images bilinear).
Tensor resize_nearest(const Tensor& img, int oh, int ow);
Tensor resize_bilinear(const Tensor& img, int oh, int ow);

struct ImportStats {
    int imported = 0;
    int skipped_unpaired = 0;
    int failed = 0;
};

// Reads <id>_img.pgm / <id>_mask.pgm pairs; modality comes from an optional
// manifest.csv (id,modality). target_size 0 keeps native sizes. Unpaired or
// inconsistent samples are reported and skipped; zero usable pairs is fatal.
std::vector<SampleRecord> import_slices(const std::string& dir, int target_size,
                                        ImportStats* stats = nullptr);

// Writes images, masks and manifest.csv for a generated dataset.
void write_dataset(const std::string& dir, const std::vector<SampleRecord>& samples);

// sample_id,dice,iou_fg,iou_bg,miou,mean_uncertainty with LF endings and
// shortest round-trip float formatting.
void write_metrics_csv(const std::string& path, const std::vector<MetricRecord>& records);

std::string format_float(float v);
std::string format_float(double v);

} // namespace uamsa
