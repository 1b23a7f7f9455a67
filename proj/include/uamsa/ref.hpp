#pragma once

#include <map>
#include <string>
#include <vector>

#include "uamsa/model.hpp"
#include "uamsa/rng.hpp"
#include "uamsa/tensor.hpp"

// Serial double-precision reference implementations: plain loops, no tape,
// no OpenMP. These are the independent oracles the fast float kernels are
// tested against (finite differences evaluate these), and the baseline the
// benchmark compares to. Kept deliberately naive; do not optimize.
namespace uamsa::ref {

struct DTensor {
    Shape shape;
    std::vector<double> v;

    DTensor() = default;
    DTensor(Shape s, double fill = 0.0) : shape(std::move(s)) {
        v.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    }
    std::int64_t numel() const { return shape_numel(shape); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
};

DTensor from_tensor(const Tensor& t);
Tensor to_tensor(const DTensor& t);

DTensor conv2d(const DTensor& x, const DTensor& w, const DTensor* bias, int stride, int pad);
DTensor adaptive_avg_pool2d(const DTensor& x, int oh, int ow);
DTensor upsample_nearest(const DTensor& x, int oh, int ow);
DTensor upsample_bilinear(const DTensor& x, int oh, int ow);
DTensor batched_matmul(const DTensor& a, const DTensor& b);
DTensor softmax(const DTensor& x, int axis);
DTensor sigmoid(const DTensor& x);
DTensor relu(const DTensor& x);
DTensor dropout_with_mask(const DTensor& x, const std::vector<std::uint8_t>& mask, double scale);

struct BranchWeights {
    DTensor wq, bq, wk, bk, wv, bv;
};

// Direct evaluation of the single-scale attention equation: 1x1 convs,
// adaptive pooling, explicit N x N attention loops, bilinear upsample.
DTensor attention_branch(const DTensor& x, const BranchWeights& wts, int reduction, int pool_divisor);

struct MsamWeights {
    BranchWeights orig, down;
    DTensor wf, bf;
};

DTensor msam_forward(const DTensor& x, const MsamWeights& wts, int reduction, int pool_divisor);

using ParamMap = std::map<std::string, DTensor>;

ParamMap params_from_model(const Model& m);

// Mirrors uamsa::forward including the dropout counter discipline, so masks
// match the float path bit for bit when the same rng is supplied.
DTensor model_forward(const ModelSpec& spec, const ParamMap& params, const DTensor& x, bool active_dropout,
                      Rng rng);

double bce(const DTensor& prob, const DTensor& target, double eps);

struct LossValue {
    double total, bce_part, var_part;
};

LossValue smoothing_loss(const std::vector<DTensor>& sample_probs, const DTensor& target, double lambda_u,
                         double eps);

// T stochastic passes -> sigmoid -> smoothing loss; pass t uses rng.split(t).
double mc_loss(const ModelSpec& spec, const ParamMap& params, const DTensor& x, const DTensor& target,
               int t_passes, double lambda_u, double eps, Rng rng);

} // namespace uamsa::ref
