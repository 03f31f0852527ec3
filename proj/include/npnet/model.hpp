#ifndef NPNET_MODEL_HPP
#define NPNET_MODEL_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "npnet/ops.hpp"
#include "npnet/tensor.hpp"

namespace npnet {

enum class AttentionKind { None, Se, Cam };

std::string to_string(AttentionKind kind);
AttentionKind attention_from_string(const std::string& text);

// Architecture hyperparameters. Widths are not fixed by the design the
// network follows; the defaults land near 0.71 M parameters and are
// overridable everywhere.
struct ModelConfig {
    int in_channels = 3;
    int num_classes = 2;
    std::array<int, 3> widths{32, 64, 128};
    int reduction = 16;
    std::array<int, 4> dilation_rates{1, 5, 15, 20};
    AttentionKind attention = AttentionKind::Cam;

    void validate() const;  // throws ConfigError naming the violated rule
};

// A named learnable tensor with its gradient and Adam moment state.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
};

// Non-learnable model state (batchnorm running statistics).
struct NamedTensor {
    std::string name;
    Tensor value;
};

class Model;

namespace detail {

// conv (+ optional bn + relu). Parameters and buffers are owned by the
// model; units hold indices. Caches are written by train-mode forwards
// inside Model::forward and consumed by the matching backward.
struct ConvUnit {
    std::string conv_name;
    std::string bn_name;
    int weight = -1;
    int bias = -1;
    int gamma = -1;
    int beta = -1;
    int run_mean = -1;
    int run_var = -1;
    bool bn = false;
    bool relu = false;
    int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, dilation = 1,
        padding = 0;

    Tensor in_cache;
    BatchNormCache bn_cache;
    Tensor out_cache;

    Tensor forward(Model& m, const Tensor& x, BnMode mode, bool cache);
    Tensor backward(Model& m, const Tensor& grad_out);
};

struct BasicBlockUnit {
    std::array<ConvUnit, 3> convs;

    Tensor forward(Model& m, const Tensor& x, BnMode mode, bool cache);
    Tensor backward(Model& m, const Tensor& grad_out);
};

// gap -> reduce (C -> C/r) -> relu -> expand (C/r -> C) -> sigmoid ->
// channel-wise rescale. Cam uses 1x1 convolutions, Se fully-connected
// maps; on a pooled 1x1 feature map both compute the same function.
struct AttentionUnit {
    AttentionKind kind = AttentionKind::None;
    std::string name;
    int reduce_w = -1, reduce_b = -1;
    int expand_w = -1, expand_b = -1;
    int channels = 0, reduced = 0;

    Tensor in_cache;
    Tensor pooled_cache;
    Tensor mid_cache;
    Tensor gate_cache;

    Tensor forward(Model& m, const Tensor& x, bool cache);
    Tensor backward(Model& m, const Tensor& grad_out);
};

// Four parallel dilated 3x3 branches at half width, concatenated, fused
// by 1x1 conv, concatenated with the input, fused again.
struct FeatureEnhancementUnit {
    std::array<ConvUnit, 4> branches;
    ConvUnit fuse1;
    ConvUnit fuse2;
    int width = 0;

    Tensor forward(Model& m, const Tensor& x, BnMode mode, bool cache);
    Tensor backward(Model& m, const Tensor& grad_out);
};

}  // namespace detail

// One row of the cost breakdown: a convolution/dense layer with its MACs,
// or a batchnorm row (params only).
struct LayerCost {
    std::string name;
    std::string kind;  // "conv", "dense" or "bn"
    int in_ch = 0, out_ch = 0, kernel = 0, stride = 0, dilation = 0,
        padding = 0;
    int out_h = 0, out_w = 0;
    long long params = 0;
    long long macs = 0;
};

struct CostReport {
    std::vector<LayerCost> layers;
    long long total_params = 0;
    long long total_macs = 0;
};

class Model {
public:
    Model() = default;

    const ModelConfig& config() const { return config_; }

    // Full forward pass: three stride-2 blocks with attention, the
    // dilated context module, 1x1 classifier, bilinear x8 restore.
    // Train mode caches activations for backward and updates batchnorm
    // running statistics; eval mode mutates nothing.
    Tensor forward(const Tensor& input, BnMode mode);

    // Backpropagates through the cached train-mode forward, accumulating
    // into Parameter::grad. Returns the gradient w.r.t. the input.
    Tensor backward(const Tensor& grad_logits);

    // Per-module forwards, primarily for tests and probes.
    Tensor block_forward(int index, const Tensor& x, BnMode mode);
    Tensor attention_forward(int index, const Tensor& x);
    Tensor feature_enhancement_forward(const Tensor& x, BnMode mode);

    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }
    std::vector<NamedTensor>& buffers() { return buffers_; }
    const std::vector<NamedTensor>& buffers() const { return buffers_; }
    Parameter* find_param(const std::string& name);
    NamedTensor* find_buffer(const std::string& name);
    void zero_grads();

    // Per-layer parameter/MAC breakdown at the given input resolution.
    CostReport analyze_cost(int in_h, int in_w) const;

    // internal wiring (used by build_npnet and the layer units)
    int add_param(std::string name, Shape shape);
    int add_buffer(std::string name, Tensor value);
    Parameter& param(int index) { return params_[index]; }
    Tensor& buffer(int index) { return buffers_[index].value; }
    const Tensor& buffer(int index) const { return buffers_[index].value; }

private:
    friend Model build_npnet(const ModelConfig&, std::uint32_t);

    void check_input(const Tensor& input) const;

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::vector<NamedTensor> buffers_;
    std::array<detail::BasicBlockUnit, 3> blocks_;
    std::array<detail::AttentionUnit, 3> attns_;
    detail::FeatureEnhancementUnit fem_;
    detail::ConvUnit classifier_;
    Shape small_shape_{};  // classifier output shape from the last cached forward
};

// Deterministic construction: same config and seed give bitwise
// identical parameters. Conv and dense weights are fan-in-scaled
// Gaussians, biases and bn betas zero, bn gammas one.
Model build_npnet(const ModelConfig& config, std::uint32_t seed);

// Sum of element counts over all learnable parameter tensors.
long long count_params(const Model& model);

// Multiply-accumulate count at the given input resolution; convolution
// and dense layers only, MACs = Cin*Cout*k^2*Hout*Wout.
CostReport count_macs(const Model& model, int in_h, int in_w);

}  // namespace npnet

#endif
