// Timing comparison between the serial reference kernels and the
// OpenMP-parallel kernels, plus a whole-model inference measurement.

#include <chrono>
#include <cstdio>
#include <functional>

#include "npnet/model.hpp"
#include "npnet/ops.hpp"
#include "npnet/ref_ops.hpp"
#include "npnet/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace npnet;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, float scale = 1.0f) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
    return t;
}

double time_best_of(int repeats, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        auto start = std::chrono::steady_clock::now();
        fn();
        double s = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
        if (s < best) best = s;
    }
    return best;
}

void report(const char* name, double serial_s, double parallel_s) {
    std::printf("%-34s %10.2f ms %10.2f ms %8.2fx\n", name, serial_s * 1e3,
                parallel_s * 1e3, serial_s / parallel_s);
}

void bench_conv(Rng& rng, const char* name, Shape in, int out_c, int kernel,
                int stride, int dilation, int padding) {
    Tensor x = random_tensor(rng, in);
    ConvSpec spec;
    spec.in_channels = in.c;
    spec.out_channels = out_c;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.dilation = dilation;
    spec.padding = padding;
    spec.weight = random_tensor(rng, Shape{out_c, in.c, kernel, kernel}, 0.1f);

    double serial = time_best_of(3, [&] { ref::conv2d(x, spec); });
    double parallel = time_best_of(3, [&] { conv2d(x, spec); });
    report(name, serial, parallel);

    Tensor upstream = random_tensor(
        rng, Shape{in.n, out_c,
                   conv_out_dim(in.h, kernel, stride, dilation, padding),
                   conv_out_dim(in.w, kernel, stride, dilation, padding)});
    char bwd_name[64];
    std::snprintf(bwd_name, sizeof(bwd_name), "%s backward", name);
    double serial_bwd = time_best_of(3, [&] {
        Tensor gx(x.shape()), gw(spec.weight.shape());
        ref::conv2d_backward(x, spec, upstream, &gx, &gw, nullptr);
    });
    double parallel_bwd = time_best_of(3, [&] {
        Tensor gx(x.shape()), gw(spec.weight.shape());
        conv2d_backward(x, spec, upstream, &gx, &gw, nullptr);
    });
    report(bwd_name, serial_bwd, parallel_bwd);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (OpenMP disabled)\n");
#endif
    std::printf("%-34s %13s %13s %9s\n", "kernel", "serial", "parallel",
                "speedup");

    Rng rng(1234);
    bench_conv(rng, "conv 3x3 s2 3->32 @224", Shape{1, 3, 224, 224}, 32, 3, 2,
               1, 1);
    bench_conv(rng, "conv 3x3 s1 32->32 @112", Shape{1, 32, 112, 112}, 32, 3,
               1, 1, 1);
    bench_conv(rng, "conv 3x3 d5 128->64 @28", Shape{1, 128, 28, 28}, 64, 3, 1,
               5, 5);
    bench_conv(rng, "conv 1x1 256->128 @28", Shape{1, 256, 28, 28}, 128, 1, 1,
               1, 0);

    {
        Rng init(7);
        Model model = build_npnet(ModelConfig{}, 42);
        Tensor image = random_tensor(init, Shape{1, 3, 224, 224}, 0.3f);
        double forward =
            time_best_of(3, [&] { model.forward(image, BnMode::Eval); });
        std::printf("%-34s %10.2f ms\n", "model eval forward @224", forward * 1e3);
    }
    {
        BatchNormState state = BatchNormState::make(64);
        Tensor x = random_tensor(rng, Shape{2, 64, 56, 56});
        double serial = time_best_of(3, [&] {
            BatchNormState st = state;
            ref::batchnorm(x, st);
        });
        double parallel = time_best_of(3, [&] {
            BatchNormState st = state;
            batchnorm(x, st);
        });
        report("batchnorm 64ch @56 train", serial, parallel);
    }
    {
        Tensor x = random_tensor(rng, Shape{1, 2, 28, 28});
        double serial =
            time_best_of(3, [&] { ref::bilinear_resize(x, 224, 224); });
        double parallel =
            time_best_of(3, [&] { bilinear_resize(x, 224, 224); });
        report("bilinear 28->224 2ch", serial, parallel);
    }
    return 0;
}
