#pragma once

#include <cstddef>

namespace ectlab::kernels {

struct ConvDims {
    std::size_t batch, in_channels, out_channels, height, width, kernel;
};

// Same-padded square convolution, odd kernel, stride 1. Every output element accumulates
// bias, then input channels, then kernel rows, then kernel columns, in that fixed order, so
// results do not depend on how much zero padding surrounds the valid region.
void conv2d_forward(const ConvDims& d, const double* input, const double* weight, const double* bias, double* out);

// Accumulates (+=) into grad_input / grad_weight / grad_bias; any of them may be null.
void conv2d_backward(const ConvDims& d, const double* input, const double* weight, const double* grad_out,
                     double* grad_input, double* grad_weight, double* grad_bias);

}  // namespace ectlab::kernels
