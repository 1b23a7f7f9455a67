// Benchmark: OpenMP float kernels vs the serial double-precision reference.
// Prints per-op wall time, throughput, speedup and the max abs difference.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "uamsa/ops.hpp"
#include "uamsa/parallel.hpp"
#include "uamsa/ref.hpp"

using namespace uamsa;

namespace {

using Clock = std::chrono::steady_clock;

double time_of(const std::function<void()>& fn, int min_reps = 3) {
    fn(); // warm up
    double best = 1e300;
    for (int r = 0; r < min_reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        const auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

double max_abs_diff(const Tensor& a, const ref::DTensor& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) - b.v[static_cast<std::size_t>(i)]));
    }
    return m;
}

void report(const char* name, double flops, double par_s, double ser_s, double diff) {
    std::printf("%-22s %9.2f ms | serial %9.2f ms | %6.1fx | %7.2f GF/s | max|diff| %.2e\n", name,
                par_s * 1e3, ser_s * 1e3, ser_s / par_s, flops / par_s / 1e9, diff);
}

} // namespace

int main(int argc, char** argv) {
    int threads = 0;
    if (argc > 1) threads = std::atoi(argv[1]);
    if (threads > 0) set_threads(threads);
    std::printf("threads: %d\n", uamsa::threads());

    Rng rng(7);
    RngSequence seq(rng);

    { // conv2d, a decoder-scale shape
        Tensor x = uniform_tensor({8, 32, 32, 32}, -1.0f, 1.0f, seq);
        Tensor w = uniform_tensor({16, 32, 3, 3}, -0.2f, 0.2f, seq);
        Tensor b = uniform_tensor({16}, -0.1f, 0.1f, seq);
        Tensor y;
        const double t_par = time_of([&]() { y = conv2d(x, w, b, 1, 1); });
        const ref::DTensor xd = ref::from_tensor(x), wd = ref::from_tensor(w), bd = ref::from_tensor(b);
        ref::DTensor yd;
        const double t_ser = time_of([&]() { yd = ref::conv2d(xd, wd, &bd, 1, 1); }, 1);
        const double flops = 2.0 * 16 * 32 * 9 * 8 * 32 * 32;
        report("conv2d 8x32x32x32", flops, t_par, t_ser, max_abs_diff(y, yd));
    }

    { // batched matmul, attention-logits shape
        Tensor a = uniform_tensor({8, 256, 16}, -1.0f, 1.0f, seq);
        Tensor b = uniform_tensor({8, 16, 256}, -1.0f, 1.0f, seq);
        Tensor y;
        const double t_par = time_of([&]() { y = batched_matmul(a, b); });
        const ref::DTensor ad = ref::from_tensor(a), bd = ref::from_tensor(b);
        ref::DTensor yd;
        const double t_ser = time_of([&]() { yd = ref::batched_matmul(ad, bd); }, 1);
        const double flops = 2.0 * 8 * 256 * 16 * 256;
        report("matmul 8x256x16x256", flops, t_par, t_ser, max_abs_diff(y, yd));
    }

    { // one attention branch at encoder scale
        const MsamConfig cfg{16, 2, 4, false};
        MsamBranchParams p;
        p.wq = uniform_tensor({8, 16, 1, 1}, -0.3f, 0.3f, seq);
        p.bq = uniform_tensor({8}, -0.1f, 0.1f, seq);
        p.wk = uniform_tensor({8, 16, 1, 1}, -0.3f, 0.3f, seq);
        p.bk = uniform_tensor({8}, -0.1f, 0.1f, seq);
        p.wv = uniform_tensor({16, 16, 1, 1}, -0.3f, 0.3f, seq);
        p.bv = uniform_tensor({16}, -0.1f, 0.1f, seq);
        Tensor x = uniform_tensor({4, 16, 64, 64}, -1.0f, 1.0f, seq);
        Tensor y;
        const double t_par = time_of([&]() { y = attention_branch(x, p, cfg); });
        ref::BranchWeights wts{ref::from_tensor(p.wq), ref::from_tensor(p.bq), ref::from_tensor(p.wk),
                               ref::from_tensor(p.bk), ref::from_tensor(p.wv), ref::from_tensor(p.bv)};
        const ref::DTensor xd = ref::from_tensor(x);
        ref::DTensor yd;
        const double t_ser = time_of([&]() { yd = ref::attention_branch(xd, wts, 2, 4); }, 1);
        const double n = 16.0 * 16.0;
        const double flops = 4 * (2.0 * (8 * 16 + 8 * 16 + 16 * 16) * 64 * 64 + 2 * n * 8 * n + 2 * 16 * n * n);
        report("attention 4x16x64x64", flops, t_par, t_ser, max_abs_diff(y, yd));
    }

    { // full forward, desk-profile model
        ModelSpec spec;
        spec.base_channels = 8;
        Model model = build(spec, Rng(3, 1));
        model.mode = Mode::deterministic;
        Tensor x = uniform_tensor({4, 1, 64, 64}, 0.0f, 1.0f, seq);
        Tensor y;
        const double t_par = time_of([&]() { y = forward(model, x, Rng(0)); });
        const ref::ParamMap params = ref::params_from_model(model);
        const ref::DTensor xd = ref::from_tensor(x);
        ref::DTensor yd;
        const double t_ser = time_of([&]() { yd = ref::model_forward(spec, params, xd, false, Rng(0)); }, 1);
        const CostReport cost = count_params_flops(spec, 64, 64);
        report("forward 4x1x64x64", 4.0 * static_cast<double>(cost.flops_total), t_par, t_ser,
               max_abs_diff(y, yd));
    }

    return 0;
}
