#pragma once

#include <span>
#include <vector>

#include "ectlab/autodiff.hpp"
#include "ectlab/tensor.hpp"

// Differentiable operations over Tape variables. Feature maps are [B, C, H, W] with W the
// frame axis; vectors are [B, D].
namespace ectlab::ops {

// Same-padded stride-1 convolution; weight [Co, Ci, k, k] with odd k, bias [Co].
Var conv2d(Var x, Var weight, Var bias);

Var add(Var a, Var b);
Var mul(Var a, Var b);

// x [B, C, H, W] + e [B, C] broadcast over the spatial axes.
Var add_channel_bias(Var x, Var e);

Var silu(Var x);
Var sigmoid(Var x);

// Zeroes padded frames.
Var mask(Var x, const FrameMask& mask);

// 2x2 average pooling with ceil output size; out-of-range cells count as zeros.
Var avg_pool2(Var x);

// Nearest-neighbour 2x upsampling cropped to [height, width].
Var upsample2(Var x, std::size_t height, std::size_t width);

Var concat_channels(const std::vector<Var>& parts);

// Mean over bins and valid frames, giving [B, C, 1, 1].
Var masked_global_pool(Var x, const FrameMask& mask);

// [B, C, 1, 1] -> [B, C, height, width].
Var broadcast_spatial(Var x, std::size_t height, std::size_t width);

// x [B, I], weight [O, I], bias [O] -> [B, O].
Var linear(Var x, Var weight, Var bias);

// Multiplies item b of x by the constant coeffs[b].
Var scale_items(Var x, std::span<const double> coeffs);

// Value copy that passes no gradient back to `x`.
Var stop_gradient(Var x);

Var sum(Var x);

// Sum of squared differences over valid frames (all bins and channels), divided by the
// number of valid cells when `normalize_by_valid`, otherwise by the full padded element
// count. Result has shape [1].
Var masked_mean_sq(Var a, Var b, const FrameMask& mask, bool normalize_by_valid = true);

}  // namespace ectlab::ops
