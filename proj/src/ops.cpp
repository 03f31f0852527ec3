#include "npnet/ops.hpp"

#include <cassert>
#include <cmath>
#include <sstream>
#include <string>

#include "npnet/errors.hpp"

// Parallel loops below are gather-style: every output element is written
// by exactly one thread and accumulated in a fixed order, so results are
// bitwise identical for any thread count and match the serial kernels in
// npnet::ref.

namespace npnet {

namespace {

float stable_sigmoid(float x) {
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    float e = std::exp(x);
    return e / (1.0f + e);
}

void require_shape(const Tensor& t, const Shape& want, const char* what) {
    if (!(t.shape() == want)) {
        throw ShapeError(std::string(what) + ": expected shape " + want.str() +
                         ", got " + t.shape().str());
    }
}

void check_conv_args(const Tensor& input, const ConvSpec& spec, int* out_h,
                     int* out_w) {
    if (input.c() != spec.in_channels) {
        std::ostringstream msg;
        msg << "conv2d: input has " << input.c() << " channels, spec expects "
            << spec.in_channels;
        throw ShapeError(msg.str());
    }
    Shape want_w{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    require_shape(spec.weight, want_w, "conv2d weight");
    if (spec.has_bias()) {
        require_shape(spec.bias, Shape{1, spec.out_channels, 1, 1},
                      "conv2d bias");
    }
    *out_h = conv_out_dim(input.h(), spec.kernel, spec.stride, spec.dilation,
                          spec.padding);
    *out_w = conv_out_dim(input.w(), spec.kernel, spec.stride, spec.dilation,
                          spec.padding);
    if (*out_h < 1 || *out_w < 1) {
        std::ostringstream msg;
        msg << "conv2d: output dims " << *out_h << "x" << *out_w
            << " < 1 for input " << input.h() << "x" << input.w()
            << " (kernel " << spec.kernel << ", stride " << spec.stride
            << ", dilation " << spec.dilation << ", padding " << spec.padding
            << ")";
        throw ShapeError(msg.str());
    }
}

}  // namespace

int conv_out_dim(int in, int kernel, int stride, int dilation, int padding) {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec) {
    int out_h = 0, out_w = 0;
    check_conv_args(input, spec, &out_h, &out_w);

    const int batch = input.n();
    const int in_c = spec.in_channels;
    const int out_c = spec.out_channels;
    const int in_h = input.h(), in_w = input.w();
    const int k = spec.kernel, stride = spec.stride, dil = spec.dilation,
              pad = spec.padding;

    Tensor out(batch, out_c, out_h, out_w);
    const float* x = input.data();
    const float* w = spec.weight.data();
    const float* b = spec.has_bias() ? spec.bias.data() : nullptr;
    float* y = out.data();

#pragma omp parallel for collapse(3) schedule(static)
    for (int n = 0; n < batch; ++n) {
        for (int co = 0; co < out_c; ++co) {
            for (int oy = 0; oy < out_h; ++oy) {
                const float* w_co = w + static_cast<std::size_t>(co) * in_c * k * k;
                float* y_row =
                    y + ((static_cast<std::size_t>(n) * out_c + co) * out_h + oy) * out_w;
                for (int ox = 0; ox < out_w; ++ox) {
                    float acc = b ? b[co] : 0.0f;
                    for (int ci = 0; ci < in_c; ++ci) {
                        const float* x_plane =
                            x + (static_cast<std::size_t>(n) * in_c + ci) * in_h * in_w;
                        const float* w_ci = w_co + static_cast<std::size_t>(ci) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            int iy = oy * stride - pad + ky * dil;
                            if (iy < 0 || iy >= in_h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                int ix = ox * stride - pad + kx * dil;
                                if (ix < 0 || ix >= in_w) continue;
                                acc += x_plane[iy * in_w + ix] * w_ci[ky * k + kx];
                            }
                        }
                    }
                    y_row[ox] = acc;
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& input, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias) {
    int out_h = 0, out_w = 0;
    check_conv_args(input, spec, &out_h, &out_w);
    require_shape(grad_out, Shape{input.n(), spec.out_channels, out_h, out_w},
                  "conv2d grad_out");

    const int batch = input.n();
    const int in_c = spec.in_channels;
    const int out_c = spec.out_channels;
    const int in_h = input.h(), in_w = input.w();
    const int k = spec.kernel, stride = spec.stride, dil = spec.dilation,
              pad = spec.padding;
    const float* x = input.data();
    const float* w = spec.weight.data();
    const float* g = grad_out.data();

    if (grad_bias) {
        require_shape(*grad_bias, Shape{1, out_c, 1, 1}, "conv2d grad_bias");
        float* gb = grad_bias->data();
#pragma omp parallel for schedule(static)
        for (int co = 0; co < out_c; ++co) {
            float acc = 0.0f;
            for (int n = 0; n < batch; ++n) {
                const float* g_plane =
                    g + (static_cast<std::size_t>(n) * out_c + co) * out_h * out_w;
                for (int p = 0; p < out_h * out_w; ++p) acc += g_plane[p];
            }
            gb[co] += acc;
        }
    }

    if (grad_weight) {
        require_shape(*grad_weight, spec.weight.shape(), "conv2d grad_weight");
        float* gw = grad_weight->data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int co = 0; co < out_c; ++co) {
            for (int ci = 0; ci < in_c; ++ci) {
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        float acc = 0.0f;
                        for (int n = 0; n < batch; ++n) {
                            const float* x_plane =
                                x + (static_cast<std::size_t>(n) * in_c + ci) * in_h * in_w;
                            const float* g_plane =
                                g + (static_cast<std::size_t>(n) * out_c + co) * out_h * out_w;
                            for (int oy = 0; oy < out_h; ++oy) {
                                int iy = oy * stride - pad + ky * dil;
                                if (iy < 0 || iy >= in_h) continue;
                                for (int ox = 0; ox < out_w; ++ox) {
                                    int ix = ox * stride - pad + kx * dil;
                                    if (ix < 0 || ix >= in_w) continue;
                                    acc += x_plane[iy * in_w + ix] *
                                           g_plane[oy * out_w + ox];
                                }
                            }
                        }
                        gw[((static_cast<std::size_t>(co) * in_c + ci) * k + ky) * k + kx] +=
                            acc;
                    }
                }
            }
        }
    }

    if (grad_input) {
        require_shape(*grad_input, input.shape(), "conv2d grad_input");
        float* gx = grad_input->data();
#pragma omp parallel for collapse(3) schedule(static)
        for (int n = 0; n < batch; ++n) {
            for (int ci = 0; ci < in_c; ++ci) {
                for (int iy = 0; iy < in_h; ++iy) {
                    for (int ix = 0; ix < in_w; ++ix) {
                        float acc = 0.0f;
                        for (int co = 0; co < out_c; ++co) {
                            const float* w_slice =
                                w + (static_cast<std::size_t>(co) * in_c + ci) * k * k;
                            const float* g_plane =
                                g + (static_cast<std::size_t>(n) * out_c + co) * out_h * out_w;
                            // descending tap order = ascending output order,
                            // keeping the sum bitwise equal to ref's scatter
                            for (int ky = k - 1; ky >= 0; --ky) {
                                int num_y = iy + pad - ky * dil;
                                if (num_y < 0 || num_y % stride != 0) continue;
                                int oy = num_y / stride;
                                if (oy >= out_h) continue;
                                for (int kx = k - 1; kx >= 0; --kx) {
                                    int num_x = ix + pad - kx * dil;
                                    if (num_x < 0 || num_x % stride != 0) continue;
                                    int ox = num_x / stride;
                                    if (ox >= out_w) continue;
                                    acc += w_slice[ky * k + kx] *
                                           g_plane[oy * out_w + ox];
                                }
                            }
                        }
                        gx[((static_cast<std::size_t>(n) * in_c + ci) * in_h + iy) * in_w +
                           ix] += acc;
                    }
                }
            }
        }
    }
}

BatchNormState BatchNormState::make(int channels) {
    BatchNormState s;
    s.gamma = Tensor::full(Shape{1, channels, 1, 1}, 1.0f);
    s.beta = Tensor(1, channels, 1, 1);
    s.running_mean = Tensor(1, channels, 1, 1);
    s.running_var = Tensor::full(Shape{1, channels, 1, 1}, 1.0f);
    return s;
}

Tensor batchnorm(const Tensor& input, BatchNormState& state,
                 BatchNormCache* cache) {
    const int channels = input.c();
    if (state.gamma.c() != channels) {
        std::ostringstream msg;
        msg << "batchnorm: state has " << state.gamma.c()
            << " channels, input has " << channels;
        throw ShapeError(msg.str());
    }
    const int batch = input.n(), in_h = input.h(), in_w = input.w();
    const int per_channel = batch * in_h * in_w;
    const std::size_t plane = static_cast<std::size_t>(in_h) * in_w;

    Tensor out(input.shape());
    const float* x = input.data();
    float* y = out.data();
    const float* gamma = state.gamma.data();
    const float* beta = state.beta.data();

    if (state.mode == BnMode::Eval) {
        const float* rm = state.running_mean.data();
        const float* rv = state.running_var.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int n = 0; n < batch; ++n) {
            for (int c = 0; c < channels; ++c) {
                float inv_std = 1.0f / std::sqrt(rv[c] + state.epsilon);
                const float* xp = x + (static_cast<std::size_t>(n) * channels + c) * plane;
                float* yp = y + (static_cast<std::size_t>(n) * channels + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    float h = (xp[p] - rm[c]) * inv_std;
                    yp[p] = gamma[c] * h + beta[c];
                }
            }
        }
        if (cache) {
            cache->mean = state.running_mean;
            Tensor inv(1, channels, 1, 1);
            for (int c = 0; c < channels; ++c) {
                inv[c] = 1.0f / std::sqrt(rv[c] + state.epsilon);
            }
            cache->inv_std = inv;
            cache->normalized = Tensor(input.shape());
            for (std::size_t i = 0; i < out.size(); ++i) {
                // x-hat recovered from the affine output
                std::size_t c = (i / plane) % channels;
                cache->normalized[i] = (x[i] - rm[c]) * cache->inv_std[c];
            }
        }
        return out;
    }

    if (per_channel < 2) {
        std::ostringstream msg;
        msg << "batchnorm: train mode needs n*h*w >= 2 per channel, got "
            << per_channel;
        throw ShapeError(msg.str());
    }

    Tensor mean(1, channels, 1, 1);
    Tensor inv_std(1, channels, 1, 1);
    Tensor var(1, channels, 1, 1);
    Tensor normalized(input.shape());
    float* xhat = normalized.data();

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        float sum = 0.0f;
        for (int n = 0; n < batch; ++n) {
            const float* xp = x + (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) sum += xp[p];
        }
        float mu = sum / static_cast<float>(per_channel);
        float sq = 0.0f;
        for (int n = 0; n < batch; ++n) {
            const float* xp = x + (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                float d = xp[p] - mu;
                sq += d * d;
            }
        }
        float v = sq / static_cast<float>(per_channel);
        assert(v >= 0.0f);
        float istd = 1.0f / std::sqrt(v + state.epsilon);
        mean[c] = mu;
        var[c] = v;
        inv_std[c] = istd;
        for (int n = 0; n < batch; ++n) {
            const float* xp = x + (static_cast<std::size_t>(n) * channels + c) * plane;
            float* hp = xhat + (static_cast<std::size_t>(n) * channels + c) * plane;
            float* yp = y + (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                float h = (xp[p] - mu) * istd;
                hp[p] = h;
                yp[p] = gamma[c] * h + beta[c];
            }
        }
    }

    for (int c = 0; c < channels; ++c) {
        state.running_mean[c] =
            state.momentum * state.running_mean[c] + (1.0f - state.momentum) * mean[c];
        state.running_var[c] =
            state.momentum * state.running_var[c] + (1.0f - state.momentum) * var[c];
    }

    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
        cache->normalized = std::move(normalized);
    }
    return out;
}

void batchnorm_backward(const BatchNormState& state,
                        const BatchNormCache& cache, const Tensor& grad_out,
                        Tensor* grad_input, Tensor* grad_gamma,
                        Tensor* grad_beta) {
    const int batch = grad_out.n(), channels = grad_out.c();
    const std::size_t plane = static_cast<std::size_t>(grad_out.h()) * grad_out.w();
    const float m = static_cast<float>(batch) * plane;
    require_shape(cache.normalized, grad_out.shape(), "batchnorm cache");

    const float* g = grad_out.data();
    const float* xhat = cache.normalized.data();
    const float* gamma = state.gamma.data();
    const float* inv_std = cache.inv_std.data();

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        float sum_g = 0.0f, sum_gh = 0.0f;
        for (int n = 0; n < batch; ++n) {
            std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                sum_g += g[base + p];
                sum_gh += g[base + p] * xhat[base + p];
            }
        }
        if (grad_gamma) (*grad_gamma)[c] += sum_gh;
        if (grad_beta) (*grad_beta)[c] += sum_g;
        if (grad_input) {
            float* gx = grad_input->data();
            float scale = gamma[c] * inv_std[c];
            if (state.mode == BnMode::Eval) {
                // running stats do not depend on the input
                for (int n = 0; n < batch; ++n) {
                    std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        gx[base + p] += scale * g[base + p];
                    }
                }
            } else {
                float mean_g = sum_g / m;
                float mean_gh = sum_gh / m;
                for (int n = 0; n < batch; ++n) {
                    std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        gx[base + p] += scale * (g[base + p] - mean_g -
                                                 xhat[base + p] * mean_gh);
                    }
                }
            }
        }
    }
}

Tensor activate(const Tensor& input, Activation kind) {
    Tensor out(input.shape());
    const float* x = input.data();
    float* y = out.data();
    const std::int64_t total = static_cast<std::int64_t>(input.size());
    if (kind == Activation::Relu) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            y[i] = x[i] > 0.0f ? x[i] : 0.0f;
        }
    } else {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            y[i] = stable_sigmoid(x[i]);
        }
    }
    return out;
}

Tensor activate_backward(const Tensor& output, Activation kind,
                         const Tensor& grad_out) {
    require_shape(grad_out, output.shape(), "activation grad_out");
    Tensor grad(output.shape());
    const float* y = output.data();
    const float* g = grad_out.data();
    float* gx = grad.data();
    const std::int64_t total = static_cast<std::int64_t>(output.size());
    if (kind == Activation::Relu) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            gx[i] = y[i] > 0.0f ? g[i] : 0.0f;
        }
    } else {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            gx[i] = g[i] * y[i] * (1.0f - y[i]);
        }
    }
    return grad;
}

Tensor global_avg_pool(const Tensor& input) {
    const int batch = input.n(), channels = input.c();
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    Tensor out(batch, channels, 1, 1);
    const float* x = input.data();
    float* y = out.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const float* xp = x + (static_cast<std::size_t>(n) * channels + c) * plane;
            float sum = 0.0f;
            for (std::size_t p = 0; p < plane; ++p) sum += xp[p];
            y[static_cast<std::size_t>(n) * channels + c] =
                sum / static_cast<float>(plane);
        }
    }
    return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape,
                                const Tensor& grad_out) {
    require_shape(grad_out, Shape{input_shape.n, input_shape.c, 1, 1},
                  "global_avg_pool grad_out");
    Tensor grad(input_shape);
    const std::size_t plane =
        static_cast<std::size_t>(input_shape.h) * input_shape.w;
    const float inv = 1.0f / static_cast<float>(plane);
    const float* g = grad_out.data();
    float* gx = grad.data();
    const int nc = input_shape.n * input_shape.c;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nc; ++i) {
        float v = g[i] * inv;
        float* p = gx + static_cast<std::size_t>(i) * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] = v;
    }
    return grad;
}

namespace {

// Half-pixel source coordinate, clamped; splits into low index and blend.
inline void resize_coord(int dst, int in_size, double scale, int* lo, int* hi,
                         float* frac) {
    double src = (dst + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    double limit = in_size - 1;
    if (src > limit) src = limit;
    int l = static_cast<int>(src);
    *lo = l;
    *hi = l + 1 < in_size ? l + 1 : in_size - 1;
    *frac = static_cast<float>(src - l);
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw ShapeError("bilinear_resize: target dims must be >= 1");
    }
    const int batch = input.n(), channels = input.c();
    const int in_h = input.h(), in_w = input.w();
    Tensor out(batch, channels, out_h, out_w);
    const double scale_h = static_cast<double>(in_h) / out_h;
    const double scale_w = static_cast<double>(in_w) / out_w;
    const float* x = input.data();
    float* y = out.data();
    const int nc = batch * channels;
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < nc; ++i) {
        for (int oy = 0; oy < out_h; ++oy) {
            const float* xp = x + static_cast<std::size_t>(i) * in_h * in_w;
            float* yp = y + (static_cast<std::size_t>(i) * out_h + oy) * out_w;
            int y0, y1;
            float fy;
            resize_coord(oy, in_h, scale_h, &y0, &y1, &fy);
            for (int ox = 0; ox < out_w; ++ox) {
                int x0, x1;
                float fx;
                resize_coord(ox, in_w, scale_w, &x0, &x1, &fx);
                float top = xp[y0 * in_w + x0] * (1.0f - fx) + xp[y0 * in_w + x1] * fx;
                float bot = xp[y1 * in_w + x0] * (1.0f - fx) + xp[y1 * in_w + x1] * fx;
                yp[ox] = top * (1.0f - fy) + bot * fy;
            }
        }
    }
    return out;
}

Tensor bilinear_resize_backward(const Shape& input_shape,
                                const Tensor& grad_out) {
    if (grad_out.n() != input_shape.n || grad_out.c() != input_shape.c) {
        throw ShapeError("bilinear_resize grad_out: batch/channel mismatch");
    }
    const int in_h = input_shape.h, in_w = input_shape.w;
    const int out_h = grad_out.h(), out_w = grad_out.w();
    Tensor grad(input_shape);
    const double scale_h = static_cast<double>(in_h) / out_h;
    const double scale_w = static_cast<double>(in_w) / out_w;
    const float* g = grad_out.data();
    float* gx = grad.data();
    const int nc = input_shape.n * input_shape.c;
    // Scatter of the four blend weights; one thread owns a whole plane.
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nc; ++i) {
        const float* gp = g + static_cast<std::size_t>(i) * out_h * out_w;
        float* plane = gx + static_cast<std::size_t>(i) * in_h * in_w;
        for (int oy = 0; oy < out_h; ++oy) {
            int y0, y1;
            float fy;
            resize_coord(oy, in_h, scale_h, &y0, &y1, &fy);
            for (int ox = 0; ox < out_w; ++ox) {
                int x0, x1;
                float fx;
                resize_coord(ox, in_w, scale_w, &x0, &x1, &fx);
                float v = gp[oy * out_w + ox];
                plane[y0 * in_w + x0] += v * (1.0f - fy) * (1.0f - fx);
                plane[y0 * in_w + x1] += v * (1.0f - fy) * fx;
                plane[y1 * in_w + x0] += v * fy * (1.0f - fx);
                plane[y1 * in_w + x1] += v * fy * fx;
            }
        }
    }
    return grad;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw ShapeError("concat_channels: operands disagree outside the "
                         "channel dim: " +
                         a.shape().str() + " vs " + b.shape().str());
    }
    const int ca = a.c(), cb = b.c();
    Tensor out(a.n(), ca + cb, a.h(), a.w());
    const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < a.n(); ++n) {
        float* dst = out.data() + static_cast<std::size_t>(n) * (ca + cb) * plane;
        const float* pa = a.data() + static_cast<std::size_t>(n) * ca * plane;
        const float* pb = b.data() + static_cast<std::size_t>(n) * cb * plane;
        for (std::size_t j = 0; j < ca * plane; ++j) dst[j] = pa[j];
        for (std::size_t j = 0; j < cb * plane; ++j) dst[ca * plane + j] = pb[j];
    }
    return out;
}

Tensor slice_channels(const Tensor& x, int from, int count) {
    if (from < 0 || count < 1 || from + count > x.c()) {
        std::ostringstream msg;
        msg << "slice_channels: range [" << from << ", " << from + count
            << ") out of bounds for " << x.c() << " channels";
        throw ShapeError(msg.str());
    }
    Tensor out(x.n(), count, x.h(), x.w());
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < x.n(); ++n) {
        const float* src =
            x.data() + (static_cast<std::size_t>(n) * x.c() + from) * plane;
        float* dst = out.data() + static_cast<std::size_t>(n) * count * plane;
        for (std::size_t j = 0; j < count * plane; ++j) dst[j] = src[j];
    }
    return out;
}

Tensor channel_scale(const Tensor& input, const Tensor& weights) {
    require_shape(weights, Shape{input.n(), input.c(), 1, 1},
                  "channel_scale weights");
    Tensor out(input.shape());
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    const int nc = input.n() * input.c();
    const float* x = input.data();
    const float* w = weights.data();
    float* y = out.data();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nc; ++i) {
        const float s = w[i];
        const float* xp = x + static_cast<std::size_t>(i) * plane;
        float* yp = y + static_cast<std::size_t>(i) * plane;
        for (std::size_t p = 0; p < plane; ++p) yp[p] = xp[p] * s;
    }
    return out;
}

void channel_scale_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_out, Tensor* grad_input,
                            Tensor* grad_weights) {
    require_shape(grad_out, input.shape(), "channel_scale grad_out");
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    const int nc = input.n() * input.c();
    const float* x = input.data();
    const float* w = weights.data();
    const float* g = grad_out.data();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nc; ++i) {
        const float* xp = x + static_cast<std::size_t>(i) * plane;
        const float* gp = g + static_cast<std::size_t>(i) * plane;
        if (grad_input) {
            float* gi = grad_input->data() + static_cast<std::size_t>(i) * plane;
            for (std::size_t p = 0; p < plane; ++p) gi[p] += gp[p] * w[i];
        }
        if (grad_weights) {
            float acc = 0.0f;
            for (std::size_t p = 0; p < plane; ++p) acc += gp[p] * xp[p];
            (*grad_weights)[i] += acc;
        }
    }
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.h() != 1 || input.w() != 1) {
        throw ShapeError("dense: expects pooled (n, c, 1, 1) input, got " +
                         input.shape().str());
    }
    const int in_c = input.c();
    const int out_c = weight.n();
    if (weight.c() != in_c) {
        throw ShapeError("dense: weight expects " + std::to_string(weight.c()) +
                         " inputs, got " + std::to_string(in_c));
    }
    Tensor out(input.n(), out_c, 1, 1);
    for (int n = 0; n < input.n(); ++n) {
        for (int o = 0; o < out_c; ++o) {
            float acc = bias.empty() ? 0.0f : bias[o];
            for (int i = 0; i < in_c; ++i) {
                acc += weight[static_cast<std::size_t>(o) * in_c + i] *
                       input[static_cast<std::size_t>(n) * in_c + i];
            }
            out[static_cast<std::size_t>(n) * out_c + o] = acc;
        }
    }
    return out;
}

void dense_backward(const Tensor& input, const Tensor& weight,
                    const Tensor& grad_out, Tensor* grad_input,
                    Tensor* grad_weight, Tensor* grad_bias) {
    const int in_c = input.c();
    const int out_c = weight.n();
    require_shape(grad_out, Shape{input.n(), out_c, 1, 1}, "dense grad_out");
    for (int n = 0; n < input.n(); ++n) {
        for (int o = 0; o < out_c; ++o) {
            float g = grad_out[static_cast<std::size_t>(n) * out_c + o];
            if (grad_bias) (*grad_bias)[o] += g;
            for (int i = 0; i < in_c; ++i) {
                if (grad_weight) {
                    (*grad_weight)[static_cast<std::size_t>(o) * in_c + i] +=
                        g * input[static_cast<std::size_t>(n) * in_c + i];
                }
                if (grad_input) {
                    (*grad_input)[static_cast<std::size_t>(n) * in_c + i] +=
                        g * weight[static_cast<std::size_t>(o) * in_c + i];
                }
            }
        }
    }
}

void add_inplace(Tensor& dst, const Tensor& src) {
    require_shape(src, dst.shape(), "add_inplace src");
    float* d = dst.data();
    const float* s = src.data();
    const std::int64_t total = static_cast<std::int64_t>(dst.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) d[i] += s[i];
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                         const LabelMap& target) {
    const int batch = logits.n(), classes = logits.c();
    const int h = logits.h(), w = logits.w();
    if (target.n != batch || target.h != h || target.w != w) {
        throw ShapeError("softmax_cross_entropy: target dims do not match "
                         "logits " +
                         logits.shape().str());
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t pixels = static_cast<std::size_t>(batch) * plane;
    const float inv_pixels = 1.0f / static_cast<float>(pixels);

    CrossEntropyResult result;
    result.grad_logits = Tensor(logits.shape());
    std::vector<double> pixel_loss(pixels, 0.0);
    const float* l = logits.data();
    float* grad = result.grad_logits.data();

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < batch; ++n) {
        for (int p = 0; p < static_cast<int>(plane); ++p) {
            std::int32_t cls = target.data[n * plane + p];
            if (cls < 0 || cls >= classes) {
                // thrown below, serially, for a clean diagnostic
                continue;
            }
            const std::size_t base = static_cast<std::size_t>(n) * classes * plane + p;
            float max_logit = l[base];
            for (int k = 1; k < classes; ++k) {
                float v = l[base + k * plane];
                if (v > max_logit) max_logit = v;
            }
            float sum = 0.0f;
            for (int k = 0; k < classes; ++k) {
                sum += std::exp(l[base + k * plane] - max_logit);
            }
            float log_z = max_logit + std::log(sum);
            pixel_loss[n * plane + p] =
                static_cast<double>(log_z - l[base + cls * plane]);
            for (int k = 0; k < classes; ++k) {
                float soft = std::exp(l[base + k * plane] - log_z);
                grad[base + k * plane] =
                    (soft - (k == cls ? 1.0f : 0.0f)) * inv_pixels;
            }
        }
    }

    for (std::size_t p = 0; p < pixels; ++p) {
        std::int32_t cls = target.data[p];
        if (cls < 0 || cls >= classes) {
            std::ostringstream msg;
            msg << "softmax_cross_entropy: class index " << cls << " at pixel "
                << p << " outside [0, " << classes << ")";
            throw DataError(msg.str());
        }
    }

    // fixed-order sum, independent of thread count
    double total = 0.0;
    for (double v : pixel_loss) total += v;
    result.loss = static_cast<float>(total / static_cast<double>(pixels));
    return result;
}

}  // namespace npnet
