#ifndef NPNET_OPS_HPP
#define NPNET_OPS_HPP

#include "npnet/tensor.hpp"

namespace npnet {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// Geometry and weights of one 2-D convolution. Weight layout is
// (out_channels, in_channels, kernel, kernel); bias, when present, is
// stored as (1, out_channels, 1, 1).
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    int padding = 0;
    Tensor weight;
    Tensor bias;

    bool has_bias() const { return !bias.empty(); }
};

// floor((in + 2*padding - dilation*(kernel-1) - 1) / stride) + 1
int conv_out_dim(int in, int kernel, int stride, int dilation, int padding);

// Direct convolution, parallel over output positions. Accumulation order
// per output element is (in_channel, ky, kx), identical to ref::conv2d,
// so the two agree bitwise.
Tensor conv2d(const Tensor& input, const ConvSpec& spec);

// Gradients w.r.t. input (gather form), weight and bias. Any out-pointer
// may be null to skip that gradient. grad_weight/grad_bias are
// accumulated into (callers zero them when starting a fresh step).
void conv2d_backward(const Tensor& input, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias);

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class BnMode { Train, Eval };

struct BatchNormState {
    Tensor gamma;         // (1, c, 1, 1)
    Tensor beta;          // (1, c, 1, 1)
    Tensor running_mean;  // (1, c, 1, 1)
    Tensor running_var;   // (1, c, 1, 1), entries >= 0
    float epsilon = 1e-5f;
    float momentum = 0.9f;  // new_running = momentum*old + (1-momentum)*batch
    BnMode mode = BnMode::Train;

    static BatchNormState make(int channels);
};

// Saved batch statistics from a train-mode forward, needed by backward.
struct BatchNormCache {
    Tensor mean;        // (1, c, 1, 1)
    Tensor inv_std;     // (1, c, 1, 1), 1/sqrt(var + eps)
    Tensor normalized;  // x-hat, same shape as the input
};

// Train mode normalizes by batch statistics, applies (gamma, beta) and
// updates the running statistics in `state` — the one mutating operator
// in this module. Eval mode only reads running statistics.
Tensor batchnorm(const Tensor& input, BatchNormState& state,
                 BatchNormCache* cache = nullptr);

void batchnorm_backward(const BatchNormState& state,
                        const BatchNormCache& cache, const Tensor& grad_out,
                        Tensor* grad_input, Tensor* grad_gamma,
                        Tensor* grad_beta);

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

enum class Activation { Relu, Sigmoid };

Tensor activate(const Tensor& input, Activation kind);

// Derivative gated by the upstream gradient. Takes the forward *output*:
// relu' = [y > 0], sigmoid' = y * (1 - y).
Tensor activate_backward(const Tensor& output, Activation kind,
                         const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Pooling / resize / channel ops
// ---------------------------------------------------------------------------

// Mean over all spatial positions; output shape (n, c, 1, 1).
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape,
                                const Tensor& grad_out);

// Half-pixel-center bilinear resize with edge clamping:
// src = (dst + 0.5) * in/out - 0.5, clamped to [0, in-1].
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);
Tensor bilinear_resize_backward(const Shape& input_shape,
                                const Tensor& grad_out);

// Channel concatenation, a's channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Channels [from, from+count) of x; the backward of concat is two slices.
Tensor slice_channels(const Tensor& x, int from, int count);

// Broadcast multiply of (n, c, h, w) by per-channel weights (n, c, 1, 1).
Tensor channel_scale(const Tensor& input, const Tensor& weights);
void channel_scale_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_out, Tensor* grad_input,
                            Tensor* grad_weights);

// Fully-connected map on pooled (n, c, 1, 1) vectors; weight is
// (out, in, 1, 1), bias (1, out, 1, 1). The se attention bottleneck.
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);
void dense_backward(const Tensor& input, const Tensor& weight,
                    const Tensor& grad_out, Tensor* grad_input,
                    Tensor* grad_weight, Tensor* grad_bias);

// Elementwise sum of two like-shaped tensors (gradient accumulation).
void add_inplace(Tensor& dst, const Tensor& src);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct CrossEntropyResult {
    float loss = 0.0f;
    Tensor grad_logits;  // (softmax - onehot) / (n*h*w)
};

// Per-pixel softmax + negative log-likelihood, averaged over all pixels.
// logits: (n, num_classes, h, w); target: (n, h, w) of class indices.
CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                         const LabelMap& target);

}  // namespace npnet

#endif
