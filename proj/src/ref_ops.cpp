#include "npnet/ref_ops.hpp"

#include <cmath>
#include <sstream>

#include "npnet/errors.hpp"

namespace npnet::ref {

Tensor conv2d(const Tensor& input, const ConvSpec& spec) {
    if (input.c() != spec.in_channels) {
        throw ShapeError("ref::conv2d: channel mismatch");
    }
    const int out_h = conv_out_dim(input.h(), spec.kernel, spec.stride,
                                   spec.dilation, spec.padding);
    const int out_w = conv_out_dim(input.w(), spec.kernel, spec.stride,
                                   spec.dilation, spec.padding);
    if (out_h < 1 || out_w < 1) {
        throw ShapeError("ref::conv2d: empty output");
    }
    Tensor out(input.n(), spec.out_channels, out_h, out_w);
    for (int n = 0; n < input.n(); ++n) {
        for (int co = 0; co < spec.out_channels; ++co) {
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    float acc = spec.has_bias() ? spec.bias[co] : 0.0f;
                    for (int ci = 0; ci < spec.in_channels; ++ci) {
                        for (int ky = 0; ky < spec.kernel; ++ky) {
                            for (int kx = 0; kx < spec.kernel; ++kx) {
                                int iy = oy * spec.stride - spec.padding +
                                         ky * spec.dilation;
                                int ix = ox * spec.stride - spec.padding +
                                         kx * spec.dilation;
                                if (iy < 0 || iy >= input.h() || ix < 0 ||
                                    ix >= input.w()) {
                                    continue;
                                }
                                acc += input.at(n, ci, iy, ix) *
                                       spec.weight.at(co, ci, ky, kx);
                            }
                        }
                    }
                    out.at(n, co, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& input, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias) {
    const int out_h = grad_out.h(), out_w = grad_out.w();
    for (int n = 0; n < input.n(); ++n) {
        for (int co = 0; co < spec.out_channels; ++co) {
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    float g = grad_out.at(n, co, oy, ox);
                    if (grad_bias) (*grad_bias)[co] += g;
                    for (int ci = 0; ci < spec.in_channels; ++ci) {
                        for (int ky = 0; ky < spec.kernel; ++ky) {
                            for (int kx = 0; kx < spec.kernel; ++kx) {
                                int iy = oy * spec.stride - spec.padding +
                                         ky * spec.dilation;
                                int ix = ox * spec.stride - spec.padding +
                                         kx * spec.dilation;
                                if (iy < 0 || iy >= input.h() || ix < 0 ||
                                    ix >= input.w()) {
                                    continue;
                                }
                                if (grad_weight) {
                                    grad_weight->at(co, ci, ky, kx) +=
                                        g * input.at(n, ci, iy, ix);
                                }
                                if (grad_input) {
                                    grad_input->at(n, ci, iy, ix) +=
                                        g * spec.weight.at(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor batchnorm(const Tensor& input, BatchNormState& state,
                 BatchNormCache* cache) {
    const int channels = input.c();
    const int count = input.n() * input.h() * input.w();
    Tensor out(input.shape());
    Tensor mean(1, channels, 1, 1), inv_std(1, channels, 1, 1);
    Tensor normalized(input.shape());

    for (int c = 0; c < channels; ++c) {
        float mu, istd;
        if (state.mode == BnMode::Train) {
            float sum = 0.0f;
            for (int n = 0; n < input.n(); ++n)
                for (int y = 0; y < input.h(); ++y)
                    for (int x = 0; x < input.w(); ++x)
                        sum += input.at(n, c, y, x);
            mu = sum / static_cast<float>(count);
            float sq = 0.0f;
            for (int n = 0; n < input.n(); ++n)
                for (int y = 0; y < input.h(); ++y)
                    for (int x = 0; x < input.w(); ++x) {
                        float d = input.at(n, c, y, x) - mu;
                        sq += d * d;
                    }
            float var = sq / static_cast<float>(count);
            istd = 1.0f / std::sqrt(var + state.epsilon);
            state.running_mean[c] = state.momentum * state.running_mean[c] +
                                    (1.0f - state.momentum) * mu;
            state.running_var[c] = state.momentum * state.running_var[c] +
                                   (1.0f - state.momentum) * var;
        } else {
            mu = state.running_mean[c];
            istd = 1.0f / std::sqrt(state.running_var[c] + state.epsilon);
        }
        mean[c] = mu;
        inv_std[c] = istd;
        for (int n = 0; n < input.n(); ++n)
            for (int y = 0; y < input.h(); ++y)
                for (int x = 0; x < input.w(); ++x) {
                    float h = (input.at(n, c, y, x) - mu) * istd;
                    normalized.at(n, c, y, x) = h;
                    out.at(n, c, y, x) = state.gamma[c] * h + state.beta[c];
                }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
        cache->normalized = std::move(normalized);
    }
    return out;
}

Tensor global_avg_pool(const Tensor& input) {
    Tensor out(input.n(), input.c(), 1, 1);
    for (int n = 0; n < input.n(); ++n) {
        for (int c = 0; c < input.c(); ++c) {
            float sum = 0.0f;
            for (int y = 0; y < input.h(); ++y)
                for (int x = 0; x < input.w(); ++x) sum += input.at(n, c, y, x);
            out.at(n, c, 0, 0) =
                sum / static_cast<float>(input.h() * input.w());
        }
    }
    return out;
}

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
    Tensor out(input.n(), input.c(), out_h, out_w);
    const double scale_h = static_cast<double>(input.h()) / out_h;
    const double scale_w = static_cast<double>(input.w()) / out_w;
    for (int n = 0; n < input.n(); ++n) {
        for (int c = 0; c < input.c(); ++c) {
            for (int oy = 0; oy < out_h; ++oy) {
                for (int ox = 0; ox < out_w; ++ox) {
                    double sy = (oy + 0.5) * scale_h - 0.5;
                    double sx = (ox + 0.5) * scale_w - 0.5;
                    sy = sy < 0.0 ? 0.0 : (sy > input.h() - 1 ? input.h() - 1 : sy);
                    sx = sx < 0.0 ? 0.0 : (sx > input.w() - 1 ? input.w() - 1 : sx);
                    int y0 = static_cast<int>(sy);
                    int x0 = static_cast<int>(sx);
                    int y1 = y0 + 1 < input.h() ? y0 + 1 : input.h() - 1;
                    int x1 = x0 + 1 < input.w() ? x0 + 1 : input.w() - 1;
                    float fy = static_cast<float>(sy - y0);
                    float fx = static_cast<float>(sx - x0);
                    float top = input.at(n, c, y0, x0) * (1.0f - fx) +
                                input.at(n, c, y0, x1) * fx;
                    float bot = input.at(n, c, y1, x0) * (1.0f - fx) +
                                input.at(n, c, y1, x1) * fx;
                    out.at(n, c, oy, ox) = top * (1.0f - fy) + bot * fy;
                }
            }
        }
    }
    return out;
}

}  // namespace npnet::ref
