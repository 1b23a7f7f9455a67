#include "uamsa/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace uamsa {

Tensor binarize(const Tensor& prob, float threshold) {
    Tensor out = Tensor::zeros(prob.shape());
    const float* p = prob.data();
    float* o = out.data();
    for (std::int64_t i = 0; i < prob.numel(); ++i) o[i] = p[i] >= threshold ? 1.0f : 0.0f;
    return out;
}

namespace {

struct Counts {
    std::int64_t inter = 0, pred = 0, gt = 0, n = 0;
};

Counts count(const Tensor& pred, const Tensor& gt, const char* op) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
    }
    Counts c;
    c.n = pred.numel();
    const float* p = pred.data();
    const float* g = gt.data();
    for (std::int64_t i = 0; i < c.n; ++i) {
        const bool pi = p[i] != 0.0f;
        const bool gi = g[i] != 0.0f;
        c.pred += pi;
        c.gt += gi;
        c.inter += pi && gi;
    }
    return c;
}

} // namespace

double dice(const Tensor& pred, const Tensor& gt) {
    const Counts c = count(pred, gt, "dice");
    if (c.pred + c.gt == 0) return 1.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt);
}

IouResult miou(const Tensor& pred, const Tensor& gt) {
    const Counts c = count(pred, gt, "miou");
    const std::int64_t union_fg = c.pred + c.gt - c.inter;
    const double fg = union_fg == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(union_fg);
    const std::int64_t inter_bg = c.n - union_fg;
    const std::int64_t union_bg = c.n - c.inter;
    const double bg = union_bg == 0 ? 1.0 : static_cast<double>(inter_bg) / static_cast<double>(union_bg);
    return {fg, bg, 0.5 * (fg + bg)};
}

namespace {

double median_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    const std::size_t n = hi - lo;
    const std::size_t mid = lo + n / 2;
    if (n % 2) return v[mid];
    return 0.5 * (v[mid - 1] + v[mid]);
}

} // namespace

Summary summarize_values(std::vector<double> values) {
    if (values.empty()) throw ParamError("summarize: empty input");
    Summary s;
    double acc = 0.0;
    for (double v : values) {
        acc += v;
        int bin = static_cast<int>(v / 0.05);
        if (bin > 19) bin = 19;
        if (bin < 0) bin = 0;
        ++s.histogram[static_cast<std::size_t>(bin)];
    }
    s.mean = acc / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    s.median = median_of(values, 0, n);
    s.q1 = median_of(values, 0, n / 2);
    s.q3 = median_of(values, n - n / 2, n);
    return s;
}

RecordSummary summarize(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw ParamError("summarize: empty input");
    std::vector<double> d, fg, bg, mi, mu;
    d.reserve(records.size());
    for (const MetricRecord& r : records) {
        d.push_back(r.dice);
        fg.push_back(r.iou_fg);
        bg.push_back(r.iou_bg);
        mi.push_back(r.miou);
        mu.push_back(r.mean_uncertainty);
    }
    return {summarize_values(std::move(d)), summarize_values(std::move(fg)),
            summarize_values(std::move(bg)), summarize_values(std::move(mi)),
            summarize_values(std::move(mu))};
}

Tensor boundary_band(const Tensor& mask, int radius) {
    if (radius < 0) throw ParamError("boundary_band: radius must be >= 0");
    if (mask.rank() < 2) throw ShapeError("boundary_band: rank >= 2 required");
    const int W = mask.dim(mask.rank() - 1);
    const int H = mask.dim(mask.rank() - 2);
    const std::int64_t planes = mask.numel() / (static_cast<std::int64_t>(H) * W);
    Tensor out = Tensor::zeros(mask.shape());
    const float* m = mask.data();
    float* o = out.data();
    for (std::int64_t p = 0; p < planes; ++p) {
        const float* mp = m + p * H * W;
        float* op = o + p * H * W;
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                const bool v = mp[static_cast<std::size_t>(r) * W + c] != 0.0f;
                bool boundary = false;
                for (int dr = -radius; dr <= radius && !boundary; ++dr) {
                    for (int dc = -radius; dc <= radius && !boundary; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                        if ((mp[static_cast<std::size_t>(rr) * W + cc] != 0.0f) != v) boundary = true;
                    }
                }
                op[static_cast<std::size_t>(r) * W + c] = boundary ? 1.0f : 0.0f;
            }
        }
    }
    return out;
}

} // namespace uamsa
