#pragma once

#include <array>
#include <string>
#include <vector>

#include "uamsa/tensor.hpp"

namespace uamsa {

struct MetricRecord {
    std::string sample_id;
    double dice = 0.0;
    double iou_fg = 0.0;
    double iou_bg = 0.0;
    double miou = 0.0;
    double mean_uncertainty = 0.0;
};

// 1 where prob >= threshold (ties go to foreground), else 0.
Tensor binarize(const Tensor& prob, float threshold = 0.5f);

// 2|P n G| / (|P| + |G|); both masks empty -> 1.
double dice(const Tensor& pred, const Tensor& gt);

struct IouResult {
    double iou_fg, iou_bg, miou;
};

// Per-class IoU with empty-union -> 1 per class; miou is the unweighted mean.
IouResult miou(const Tensor& pred, const Tensor& gt);

struct Summary {
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    // Fixed bins [0,0.05), [0.05,0.10), ..., [0.95,1.0]; v=1 lands in the last.
    std::array<int, 20> histogram{};
};

// Quartiles use the midpoint convention: median averages the two middle
// values for even n; Q1/Q3 are the medians of the lower/upper halves
// (median excluded for odd n).
Summary summarize_values(std::vector<double> values);

struct RecordSummary {
    Summary dice, iou_fg, iou_bg, miou, mean_uncertainty;
};

RecordSummary summarize(const std::vector<MetricRecord>& records);

// 1 on pixels within `radius` (Chebyshev) of a mask boundary, else 0.
// Used to probe uncertainty concentration along ground-truth contours.
Tensor boundary_band(const Tensor& mask, int radius);

} // namespace uamsa
