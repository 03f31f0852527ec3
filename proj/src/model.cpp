#include "npnet/model.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "npnet/errors.hpp"
#include "npnet/rng.hpp"

namespace npnet {

std::string to_string(AttentionKind kind) {
    switch (kind) {
        case AttentionKind::None: return "none";
        case AttentionKind::Se: return "se";
        case AttentionKind::Cam: return "cam";
    }
    return "none";
}

AttentionKind attention_from_string(const std::string& text) {
    if (text == "none") return AttentionKind::None;
    if (text == "se") return AttentionKind::Se;
    if (text == "cam") return AttentionKind::Cam;
    throw ConfigError("unknown attention kind '" + text +
                      "' (expected none, se or cam)");
}

void ModelConfig::validate() const {
    if (in_channels < 1) {
        throw ConfigError("in_channels must be >= 1, got " +
                          std::to_string(in_channels));
    }
    if (num_classes < 2) {
        throw ConfigError("num_classes must be >= 2, got " +
                          std::to_string(num_classes));
    }
    if (reduction < 1) {
        throw ConfigError("reduction must be >= 1, got " +
                          std::to_string(reduction));
    }
    for (int i = 0; i < 3; ++i) {
        if (widths[i] < 1) {
            throw ConfigError("width c" + std::to_string(i + 1) +
                              " must be >= 1, got " + std::to_string(widths[i]));
        }
        if (widths[i] % reduction != 0) {
            std::ostringstream msg;
            msg << "width c" << i + 1 << "=" << widths[i]
                << " must be divisible by reduction " << reduction;
            throw ConfigError(msg.str());
        }
    }
    if (widths[2] % 2 != 0) {
        throw ConfigError("c3=" + std::to_string(widths[2]) +
                          " must be even (context branches are half width)");
    }
    for (int rate : dilation_rates) {
        if (rate < 1) {
            throw ConfigError("dilation rates must be strictly positive, got " +
                              std::to_string(rate));
        }
    }
}

namespace detail {

namespace {

ConvSpec make_spec(Model& m, const ConvUnit& u) {
    ConvSpec spec;
    spec.in_channels = u.in_ch;
    spec.out_channels = u.out_ch;
    spec.kernel = u.kernel;
    spec.stride = u.stride;
    spec.dilation = u.dilation;
    spec.padding = u.padding;
    spec.weight = m.param(u.weight).value;
    if (u.bias >= 0) spec.bias = m.param(u.bias).value;
    return spec;
}

BatchNormState make_bn_state(Model& m, const ConvUnit& u, BnMode mode) {
    BatchNormState st;
    st.gamma = m.param(u.gamma).value;
    st.beta = m.param(u.beta).value;
    st.running_mean = m.buffer(u.run_mean);
    st.running_var = m.buffer(u.run_var);
    st.mode = mode;
    return st;
}

}  // namespace

Tensor ConvUnit::forward(Model& m, const Tensor& x, BnMode mode, bool cache) {
    ConvSpec spec = make_spec(m, *this);
    Tensor y = conv2d(x, spec);
    if (bn) {
        BatchNormState st = make_bn_state(m, *this, mode);
        y = batchnorm(y, st, cache ? &bn_cache : nullptr);
        if (mode == BnMode::Train) {
            m.buffer(run_mean) = std::move(st.running_mean);
            m.buffer(run_var) = std::move(st.running_var);
        }
    }
    if (relu) y = activate(y, Activation::Relu);
    if (cache) {
        in_cache = x;
        out_cache = y;
    }
    return y;
}

Tensor ConvUnit::backward(Model& m, const Tensor& grad_out) {
    Tensor cur = grad_out;
    if (relu) cur = activate_backward(out_cache, Activation::Relu, cur);
    if (bn) {
        BatchNormState st = make_bn_state(m, *this, BnMode::Train);
        Tensor gin(cur.shape());
        batchnorm_backward(st, bn_cache, cur, &gin, &m.param(gamma).grad,
                           &m.param(beta).grad);
        cur = std::move(gin);
    }
    ConvSpec spec = make_spec(m, *this);
    Tensor gx(in_cache.shape());
    conv2d_backward(in_cache, spec, cur, &gx, &m.param(weight).grad,
                    bias >= 0 ? &m.param(bias).grad : nullptr);
    return gx;
}

Tensor BasicBlockUnit::forward(Model& m, const Tensor& x, BnMode mode,
                               bool cache) {
    Tensor cur = convs[0].forward(m, x, mode, cache);
    cur = convs[1].forward(m, cur, mode, cache);
    return convs[2].forward(m, cur, mode, cache);
}

Tensor BasicBlockUnit::backward(Model& m, const Tensor& grad_out) {
    Tensor g = convs[2].backward(m, grad_out);
    g = convs[1].backward(m, g);
    return convs[0].backward(m, g);
}

Tensor AttentionUnit::forward(Model& m, const Tensor& x, bool cache) {
    if (kind == AttentionKind::None) return x;
    Tensor pooled = global_avg_pool(x);

    Tensor mid;
    if (kind == AttentionKind::Cam) {
        ConvSpec reduce;
        reduce.in_channels = channels;
        reduce.out_channels = reduced;
        reduce.kernel = 1;
        reduce.weight = m.param(reduce_w).value;
        reduce.bias = m.param(reduce_b).value;
        mid = conv2d(pooled, reduce);
    } else {
        mid = dense(pooled, m.param(reduce_w).value, m.param(reduce_b).value);
    }
    mid = activate(mid, Activation::Relu);

    Tensor pre_gate;
    if (kind == AttentionKind::Cam) {
        ConvSpec expand;
        expand.in_channels = reduced;
        expand.out_channels = channels;
        expand.kernel = 1;
        expand.weight = m.param(expand_w).value;
        expand.bias = m.param(expand_b).value;
        pre_gate = conv2d(mid, expand);
    } else {
        pre_gate = dense(mid, m.param(expand_w).value, m.param(expand_b).value);
    }
    Tensor gate = activate(pre_gate, Activation::Sigmoid);
    Tensor out = channel_scale(x, gate);

    if (cache) {
        in_cache = x;
        pooled_cache = std::move(pooled);
        mid_cache = std::move(mid);
        gate_cache = std::move(gate);
    }
    return out;
}

Tensor AttentionUnit::backward(Model& m, const Tensor& grad_out) {
    if (kind == AttentionKind::None) return grad_out;

    Tensor gx(in_cache.shape());
    Tensor ggate(gate_cache.shape());
    channel_scale_backward(in_cache, gate_cache, grad_out, &gx, &ggate);

    Tensor gpre = activate_backward(gate_cache, Activation::Sigmoid, ggate);

    Tensor gmid(mid_cache.shape());
    if (kind == AttentionKind::Cam) {
        ConvSpec expand;
        expand.in_channels = reduced;
        expand.out_channels = channels;
        expand.kernel = 1;
        expand.weight = m.param(expand_w).value;
        expand.bias = m.param(expand_b).value;
        conv2d_backward(mid_cache, expand, gpre, &gmid,
                        &m.param(expand_w).grad, &m.param(expand_b).grad);
    } else {
        dense_backward(mid_cache, m.param(expand_w).value, gpre, &gmid,
                       &m.param(expand_w).grad, &m.param(expand_b).grad);
    }

    gmid = activate_backward(mid_cache, Activation::Relu, gmid);

    Tensor gpooled(pooled_cache.shape());
    if (kind == AttentionKind::Cam) {
        ConvSpec reduce;
        reduce.in_channels = channels;
        reduce.out_channels = reduced;
        reduce.kernel = 1;
        reduce.weight = m.param(reduce_w).value;
        reduce.bias = m.param(reduce_b).value;
        conv2d_backward(pooled_cache, reduce, gmid, &gpooled,
                        &m.param(reduce_w).grad, &m.param(reduce_b).grad);
    } else {
        dense_backward(pooled_cache, m.param(reduce_w).value, gmid, &gpooled,
                       &m.param(reduce_w).grad, &m.param(reduce_b).grad);
    }

    add_inplace(gx, global_avg_pool_backward(in_cache.shape(), gpooled));
    return gx;
}

Tensor FeatureEnhancementUnit::forward(Model& m, const Tensor& x, BnMode mode,
                                       bool cache) {
    Tensor cat = branches[0].forward(m, x, mode, cache);
    for (int i = 1; i < 4; ++i) {
        cat = concat_channels(cat, branches[i].forward(m, x, mode, cache));
    }
    Tensor fused = fuse1.forward(m, cat, mode, cache);
    Tensor res = concat_channels(fused, x);
    return fuse2.forward(m, res, mode, cache);
}

Tensor FeatureEnhancementUnit::backward(Model& m, const Tensor& grad_out) {
    Tensor g_res = fuse2.backward(m, grad_out);
    Tensor g_fused = slice_channels(g_res, 0, width);
    Tensor gx = slice_channels(g_res, width, width);
    Tensor g_cat = fuse1.backward(m, g_fused);
    const int half = width / 2;
    for (int i = 0; i < 4; ++i) {
        Tensor g_branch = slice_channels(g_cat, i * half, half);
        add_inplace(gx, branches[i].backward(m, g_branch));
    }
    return gx;
}

}  // namespace detail

void Model::check_input(const Tensor& input) const {
    if (input.c() != config_.in_channels) {
        std::ostringstream msg;
        msg << "model expects " << config_.in_channels
            << " input channels, got " << input.c();
        throw ShapeError(msg.str());
    }
    if (input.h() % 8 != 0 || input.w() % 8 != 0) {
        std::ostringstream msg;
        msg << "input " << input.h() << "x" << input.w()
            << " is not divisible by 8; resize to a multiple of 8 first";
        throw ShapeError(msg.str());
    }
}

Tensor Model::forward(const Tensor& input, BnMode mode) {
    check_input(input);
    const bool cache = (mode == BnMode::Train);
    Tensor cur = input;
    for (int i = 0; i < 3; ++i) {
        cur = blocks_[i].forward(*this, cur, mode, cache);
        cur = attns_[i].forward(*this, cur, cache);
    }
    cur = fem_.forward(*this, cur, mode, cache);
    cur = classifier_.forward(*this, cur, mode, cache);
    if (cache) small_shape_ = cur.shape();
    return bilinear_resize(cur, input.h(), input.w());
}

Tensor Model::backward(const Tensor& grad_logits) {
    if (small_shape_.count() == 0) {
        throw ShapeError("model backward called without a cached train-mode "
                         "forward");
    }
    Tensor g = bilinear_resize_backward(small_shape_, grad_logits);
    g = classifier_.backward(*this, g);
    g = fem_.backward(*this, g);
    for (int i = 2; i >= 0; --i) {
        g = attns_[i].backward(*this, g);
        g = blocks_[i].backward(*this, g);
    }
    return g;
}

Tensor Model::block_forward(int index, const Tensor& x, BnMode mode) {
    return blocks_[index].forward(*this, x, mode, false);
}

Tensor Model::attention_forward(int index, const Tensor& x) {
    return attns_[index].forward(*this, x, false);
}

Tensor Model::feature_enhancement_forward(const Tensor& x, BnMode mode) {
    return fem_.forward(*this, x, mode, false);
}

Parameter* Model::find_param(const std::string& name) {
    for (Parameter& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

NamedTensor* Model::find_buffer(const std::string& name) {
    for (NamedTensor& b : buffers_) {
        if (b.name == name) return &b;
    }
    return nullptr;
}

void Model::zero_grads() {
    for (Parameter& p : params_) p.grad.fill(0.0f);
}

int Model::add_param(std::string name, Shape shape) {
    Parameter p;
    p.name = std::move(name);
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.adam_m = Tensor(shape);
    p.adam_v = Tensor(shape);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

int Model::add_buffer(std::string name, Tensor value) {
    buffers_.push_back({std::move(name), std::move(value)});
    return static_cast<int>(buffers_.size()) - 1;
}

namespace {

using detail::AttentionUnit;
using detail::BasicBlockUnit;
using detail::ConvUnit;
using detail::FeatureEnhancementUnit;

ConvUnit make_conv_unit(Model& m, const std::string& conv_name,
                        const std::string& bn_name, int in_ch, int out_ch,
                        int kernel, int stride, int dilation, int padding,
                        bool with_bias, bool with_relu) {
    ConvUnit u;
    u.conv_name = conv_name;
    u.bn_name = bn_name;
    u.in_ch = in_ch;
    u.out_ch = out_ch;
    u.kernel = kernel;
    u.stride = stride;
    u.dilation = dilation;
    u.padding = padding;
    u.relu = with_relu;
    u.weight = m.add_param(conv_name + ".weight",
                           Shape{out_ch, in_ch, kernel, kernel});
    if (with_bias) {
        u.bias = m.add_param(conv_name + ".bias", Shape{1, out_ch, 1, 1});
    }
    if (!bn_name.empty()) {
        u.bn = true;
        u.gamma = m.add_param(bn_name + ".gamma", Shape{1, out_ch, 1, 1});
        u.beta = m.add_param(bn_name + ".beta", Shape{1, out_ch, 1, 1});
        u.run_mean = m.add_buffer(bn_name + ".running_mean",
                                  Tensor(1, out_ch, 1, 1));
        u.run_var = m.add_buffer(
            bn_name + ".running_var",
            Tensor::full(Shape{1, out_ch, 1, 1}, 1.0f));
    }
    return u;
}

BasicBlockUnit make_basic_block(Model& m, const std::string& name, int in_ch,
                                int out_ch) {
    BasicBlockUnit block;
    // stride-2 downsample, then two stride-1 extractors; bias folded
    // into the batchnorm that follows each conv
    block.convs[0] = make_conv_unit(m, name + ".conv1", name + ".bn1", in_ch,
                                    out_ch, 3, 2, 1, 1, false, true);
    block.convs[1] = make_conv_unit(m, name + ".conv2", name + ".bn2", out_ch,
                                    out_ch, 3, 1, 1, 1, false, true);
    block.convs[2] = make_conv_unit(m, name + ".conv3", name + ".bn3", out_ch,
                                    out_ch, 3, 1, 1, 1, false, true);
    return block;
}

AttentionUnit make_attention(Model& m, const std::string& name, int channels,
                             int reduction, AttentionKind kind) {
    AttentionUnit attn;
    attn.kind = kind;
    attn.name = name;
    if (kind == AttentionKind::None) return attn;
    attn.channels = channels;
    attn.reduced = channels / reduction;
    attn.reduce_w = m.add_param(name + ".reduce.weight",
                                Shape{attn.reduced, channels, 1, 1});
    attn.reduce_b =
        m.add_param(name + ".reduce.bias", Shape{1, attn.reduced, 1, 1});
    attn.expand_w = m.add_param(name + ".expand.weight",
                                Shape{channels, attn.reduced, 1, 1});
    attn.expand_b =
        m.add_param(name + ".expand.bias", Shape{1, channels, 1, 1});
    return attn;
}

FeatureEnhancementUnit make_fem(Model& m, int width,
                                const std::array<int, 4>& rates) {
    FeatureEnhancementUnit fem;
    fem.width = width;
    const int half = width / 2;
    for (int i = 0; i < 4; ++i) {
        std::string base = "fem.branch" + std::to_string(i + 1);
        fem.branches[i] = make_conv_unit(m, base + ".conv", base + ".bn",
                                         width, half, 3, 1, rates[i], rates[i],
                                         false, true);
    }
    fem.fuse1 = make_conv_unit(m, "fem.fuse1.conv", "fem.fuse1.bn", 2 * width,
                               width, 1, 1, 1, 0, false, true);
    fem.fuse2 = make_conv_unit(m, "fem.fuse2.conv", "fem.fuse2.bn", 2 * width,
                               width, 1, 1, 1, 0, false, true);
    return fem;
}

}  // namespace

Model build_npnet(const ModelConfig& config, std::uint32_t seed) {
    config.validate();
    Model m;
    m.config_ = config;

    int in_ch = config.in_channels;
    for (int i = 0; i < 3; ++i) {
        std::string idx = std::to_string(i + 1);
        m.blocks_[i] = make_basic_block(m, "block" + idx, in_ch,
                                        config.widths[i]);
        m.attns_[i] = make_attention(m, "attn" + idx, config.widths[i],
                                     config.reduction, config.attention);
        in_ch = config.widths[i];
    }
    m.fem_ = make_fem(m, config.widths[2], config.dilation_rates);
    m.classifier_ = make_conv_unit(m, "classifier", "", config.widths[2],
                                   config.num_classes, 1, 1, 1, 0, true,
                                   false);

    // fan-in-scaled Gaussian for weights; draw order is registration
    // order, so identical (config, seed) reproduce bitwise
    Rng rng(seed);
    for (Parameter& p : m.params_) {
        if (p.name.ends_with(".weight")) {
            const Shape& s = p.value.shape();
            int fan_in = s.c * s.h * s.w;
            float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                p.value[i] = rng.normal() * stddev;
            }
        } else if (p.name.ends_with(".gamma")) {
            p.value.fill(1.0f);
        }
        // biases and betas stay zero
    }
    return m;
}

long long count_params(const Model& model) {
    long long total = 0;
    for (const Parameter& p : model.params()) {
        total += static_cast<long long>(p.value.size());
    }
    return total;
}

namespace {

LayerCost conv_cost(const Model& m, const detail::ConvUnit& u, int in_h,
                    int in_w, int* out_h, int* out_w) {
    LayerCost row;
    row.name = u.conv_name;
    row.kind = "conv";
    row.in_ch = u.in_ch;
    row.out_ch = u.out_ch;
    row.kernel = u.kernel;
    row.stride = u.stride;
    row.dilation = u.dilation;
    row.padding = u.padding;
    row.out_h = conv_out_dim(in_h, u.kernel, u.stride, u.dilation, u.padding);
    row.out_w = conv_out_dim(in_w, u.kernel, u.stride, u.dilation, u.padding);
    row.params = static_cast<long long>(m.params()[u.weight].value.size());
    if (u.bias >= 0) {
        row.params += static_cast<long long>(m.params()[u.bias].value.size());
    }
    row.macs = static_cast<long long>(u.in_ch) * u.out_ch * u.kernel *
               u.kernel * row.out_h * row.out_w;
    *out_h = row.out_h;
    *out_w = row.out_w;
    return row;
}

LayerCost bn_cost(const Model& m, const detail::ConvUnit& u, int out_h,
                  int out_w) {
    LayerCost row;
    row.name = u.bn_name;
    row.kind = "bn";
    row.in_ch = u.out_ch;
    row.out_ch = u.out_ch;
    row.out_h = out_h;
    row.out_w = out_w;
    row.params = static_cast<long long>(m.params()[u.gamma].value.size()) +
                 static_cast<long long>(m.params()[u.beta].value.size());
    row.macs = 0;
    return row;
}

void add_conv_unit_cost(const Model& m, const detail::ConvUnit& u,
                        CostReport* report, int* h, int* w) {
    int oh = 0, ow = 0;
    report->layers.push_back(conv_cost(m, u, *h, *w, &oh, &ow));
    if (u.bn) report->layers.push_back(bn_cost(m, u, oh, ow));
    *h = oh;
    *w = ow;
}

void add_attention_cost(const Model& m, const detail::AttentionUnit& a,
                        CostReport* report) {
    if (a.kind == AttentionKind::None) return;
    const char* kind = a.kind == AttentionKind::Cam ? "conv" : "dense";
    LayerCost reduce;
    reduce.name = a.name + ".reduce";
    reduce.kind = kind;
    reduce.in_ch = a.channels;
    reduce.out_ch = a.reduced;
    reduce.kernel = 1;
    reduce.stride = 1;
    reduce.dilation = 1;
    reduce.out_h = 1;
    reduce.out_w = 1;
    reduce.params = static_cast<long long>(m.params()[a.reduce_w].value.size()) +
                    static_cast<long long>(m.params()[a.reduce_b].value.size());
    reduce.macs = static_cast<long long>(a.channels) * a.reduced;
    report->layers.push_back(reduce);

    LayerCost expand = reduce;
    expand.name = a.name + ".expand";
    expand.in_ch = a.reduced;
    expand.out_ch = a.channels;
    expand.params = static_cast<long long>(m.params()[a.expand_w].value.size()) +
                    static_cast<long long>(m.params()[a.expand_b].value.size());
    expand.macs = static_cast<long long>(a.reduced) * a.channels;
    report->layers.push_back(expand);
}

}  // namespace

CostReport Model::analyze_cost(int in_h, int in_w) const {
    if (in_h % 8 != 0 || in_w % 8 != 0 || in_h < 8 || in_w < 8) {
        std::ostringstream msg;
        msg << "analysis input " << in_h << "x" << in_w
            << " must be a positive multiple of 8";
        throw ConfigError(msg.str());
    }
    CostReport report;
    int h = in_h, w = in_w;
    for (int i = 0; i < 3; ++i) {
        for (const detail::ConvUnit& u : blocks_[i].convs) {
            add_conv_unit_cost(*this, u, &report, &h, &w);
        }
        add_attention_cost(*this, attns_[i], &report);
    }
    {
        // the four branches all read the same map; track dims through one
        int bh = h, bw = w;
        for (const detail::ConvUnit& u : fem_.branches) {
            int th = h, tw = w;
            add_conv_unit_cost(*this, u, &report, &th, &tw);
            bh = th;
            bw = tw;
        }
        h = bh;
        w = bw;
        add_conv_unit_cost(*this, fem_.fuse1, &report, &h, &w);
        add_conv_unit_cost(*this, fem_.fuse2, &report, &h, &w);
    }
    add_conv_unit_cost(*this, classifier_, &report, &h, &w);

    for (const LayerCost& row : report.layers) {
        report.total_params += row.params;
        report.total_macs += row.macs;
    }
    return report;
}

CostReport count_macs(const Model& model, int in_h, int in_w) {
    return model.analyze_cost(in_h, in_w);
}

}  // namespace npnet
