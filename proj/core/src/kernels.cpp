#include "ectlab/kernels.hpp"

#include <algorithm>
#include <vector>

namespace ectlab::kernels {

namespace {

struct TapRange {
    std::size_t lo, hi;  // output coordinates whose tap lands inside the input
};

inline TapRange tap_range(std::ptrdiff_t offset, std::size_t extent) {
    const auto n = static_cast<std::ptrdiff_t>(extent);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - offset);
    if (lo >= hi) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

void conv2d_forward(const ConvDims& d, const double* input, const double* weight, const double* bias, double* out) {
    const std::size_t plane = d.height * d.width, k = d.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t co = 0; co < d.out_channels; ++co) {
            double* o = out + (b * d.out_channels + co) * plane;
            std::fill(o, o + plane, bias ? bias[co] : 0.0);
            for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
                const double* in = input + (b * d.in_channels + ci) * plane;
                const double* wk = weight + (co * d.in_channels + ci) * k * k;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                    const TapRange ys = tap_range(dy, d.height);
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        const TapRange xs = tap_range(dx, d.width);
                        if (xs.lo >= xs.hi) continue;
                        const double wv = wk[ky * k + kx];
                        for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                            double* orow = o + y * d.width;
                            const double* irow = in + (y + dy) * d.width + dx;
                            for (std::size_t x = xs.lo; x < xs.hi; ++x) orow[x] += wv * irow[x];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward(const ConvDims& d, const double* input, const double* weight, const double* grad_out,
                     double* grad_input, double* grad_weight, double* grad_bias) {
    const std::size_t plane = d.height * d.width, k = d.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);

    if (grad_bias) {
        for (std::size_t b = 0; b < d.batch; ++b) {
            for (std::size_t co = 0; co < d.out_channels; ++co) {
                const double* g = grad_out + (b * d.out_channels + co) * plane;
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += g[i];
                grad_bias[co] += s;
            }
        }
    }

    if (grad_input) {
        for (std::size_t b = 0; b < d.batch; ++b) {
            for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
                double* gi = grad_input + (b * d.in_channels + ci) * plane;
                for (std::size_t co = 0; co < d.out_channels; ++co) {
                    const double* g = grad_out + (b * d.out_channels + co) * plane;
                    const double* wk = weight + (co * d.in_channels + ci) * k * k;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                        const TapRange ys = tap_range(dy, d.height);
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                            const TapRange xs = tap_range(dx, d.width);
                            if (xs.lo >= xs.hi) continue;
                            const double wv = wk[ky * k + kx];
                            for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                                const double* grow = g + y * d.width;
                                double* irow = gi + (y + dy) * d.width + dx;
                                for (std::size_t x = xs.lo; x < xs.hi; ++x) irow[x] += wv * grow[x];
                            }
                        }
                    }
                }
            }
        }
    }

    if (grad_weight) {
        // Column-wise partial sums keep the inner loop vectorizable without reassociating.
        std::vector<double> acc(d.width);
        for (std::size_t co = 0; co < d.out_channels; ++co) {
            for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
                double* gw = grad_weight + (co * d.in_channels + ci) * k * k;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                    const TapRange ys = tap_range(dy, d.height);
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        const TapRange xs = tap_range(dx, d.width);
                        if (xs.lo >= xs.hi || ys.lo >= ys.hi) continue;
                        std::fill(acc.begin(), acc.end(), 0.0);
                        for (std::size_t b = 0; b < d.batch; ++b) {
                            const double* g = grad_out + (b * d.out_channels + co) * plane;
                            const double* in = input + (b * d.in_channels + ci) * plane;
                            for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                                const double* grow = g + y * d.width;
                                const double* irow = in + (y + dy) * d.width + dx;
                                for (std::size_t x = xs.lo; x < xs.hi; ++x) acc[x] += grow[x] * irow[x];
                            }
                        }
                        double s = 0.0;
                        for (std::size_t x = xs.lo; x < xs.hi; ++x) s += acc[x];
                        gw[ky * k + kx] += s;
                    }
                }
            }
        }
    }
}

}  // namespace ectlab::kernels
