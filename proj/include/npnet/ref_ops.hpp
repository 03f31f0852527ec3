#ifndef NPNET_REF_OPS_HPP
#define NPNET_REF_OPS_HPP

#include "npnet/ops.hpp"
#include "npnet/tensor.hpp"

// Serial reference kernels. Single-threaded naive loops, kept as the
// oracle the parallel kernels in npnet:: are tested against and as the
// baseline for the benchmark target. Per-element accumulation order
// matches the parallel kernels, so comparisons are bitwise.
namespace npnet::ref {

Tensor conv2d(const Tensor& input, const ConvSpec& spec);

void conv2d_backward(const Tensor& input, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias);

Tensor batchnorm(const Tensor& input, BatchNormState& state,
                 BatchNormCache* cache = nullptr);

Tensor global_avg_pool(const Tensor& input);

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

}  // namespace npnet::ref

#endif
