#include "ectlab/ops.hpp"

#include <cmath>

#include "ectlab/error.hpp"
#include "ectlab/kernels.hpp"

namespace ectlab::ops {

namespace {

Tape& tape_of(Var v) {
    if (!v.valid()) throw UsageError("op applied to an unbound variable");
    return *v.tape();
}

void require_feature_map(const Tensor& t, const char* what) { require_rank(t, 4, what); }

void check_mask(const Tensor& x, const FrameMask& mask, const char* what) {
    require_feature_map(x, what);
    if (x.dim(0) != mask.batch() || x.dim(3) != mask.frames()) {
        throw ShapeError(std::string(what) + ": mask " + std::to_string(mask.batch()) + "x" +
                         std::to_string(mask.frames()) + " vs feature map " + to_string(x.shape()));
    }
}

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Var conv2d(Var x, Var weight, Var bias) {
    Tape& tape = tape_of(x);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_feature_map(xv, "conv2d input");
    require_rank(wv, 4, "conv2d weight");
    if (wv.dim(1) != xv.dim(1)) {
        throw ShapeError("conv2d: weight expects " + std::to_string(wv.dim(1)) + " input channels, got " +
                         std::to_string(xv.dim(1)));
    }
    if (wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
    if (bias.value().size() != wv.dim(0)) throw ShapeError("conv2d: bias size mismatch");

    const kernels::ConvDims dims{xv.dim(0), xv.dim(1), wv.dim(0), xv.dim(2), xv.dim(3), wv.dim(2)};
    Tensor out({dims.batch, dims.out_channels, dims.height, dims.width});
    kernels::conv2d_forward(dims, xv.ptr(), wv.ptr(), bias.value().ptr(), out.ptr());

    return tape.record(std::move(out), {x, weight, bias}, [x, weight, bias, dims](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        Tensor* gw = t.grad_slot(weight);
        Tensor* gb = t.grad_slot(bias);
        kernels::conv2d_backward(dims, t.value(x).ptr(), t.value(weight).ptr(), g.ptr(), gx ? gx->ptr() : nullptr,
                                 gw ? gw->ptr() : nullptr, gb ? gb->ptr() : nullptr);
    });
}

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        for (Var v : {a, b}) {
            if (Tensor* gv = t.grad_slot(v)) {
                for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
            }
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_slot(a)) {
            const Tensor& bv = t.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        }
        if (Tensor* gb = t.grad_slot(b)) {
            const Tensor& av = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
        }
    });
}

Var add_channel_bias(Var x, Var e) {
    const Tensor& xv = x.value();
    const Tensor& ev = e.value();
    require_feature_map(xv, "add_channel_bias");
    if (ev.rank() != 2 || ev.dim(0) != xv.dim(0) || ev.dim(1) != xv.dim(1)) {
        throw ShapeError("add_channel_bias: embedding " + to_string(ev.shape()) + " vs " + to_string(xv.shape()));
    }
    const std::size_t rows = xv.dim(0) * xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    Tensor out = xv;
    for (std::size_t r = 0; r < rows; ++r) {
        double* o = out.ptr() + r * plane;
        for (std::size_t i = 0; i < plane; ++i) o[i] += ev[r];
    }
    return tape_of(x).record(std::move(out), {x, e}, [x, e, rows, plane](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(x)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        }
        if (Tensor* ge = t.grad_slot(e)) {
            for (std::size_t r = 0; r < rows; ++r) {
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += g[r * plane + i];
                (*ge)[r] += s;
            }
        }
    });
}

Var silu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = v * logistic(v);
    return tape_of(x).record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        const Tensor& xv = t.value(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = logistic(xv[i]);
            (*gx)[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
}

Var sigmoid(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = logistic(v);
    return tape_of(x).record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        const Tensor& xv = t.value(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = logistic(xv[i]);
            (*gx)[i] += g[i] * s * (1.0 - s);
        }
    });
}

Var mask(Var x, const FrameMask& m) {
    check_mask(x.value(), m, "mask");
    Tensor out = x.value();
    apply_mask_inplace(out, m);
    return tape_of(x).record(std::move(out), {x}, [x, m](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        Tensor masked = g;
        apply_mask_inplace(masked, m);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += masked[i];
    });
}

Var avg_pool2(Var x) {
    const Tensor& xv = x.value();
    require_feature_map(xv, "avg_pool2");
    const std::size_t rows = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
    Tensor out({xv.dim(0), xv.dim(1), oh, ow});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.ptr() + r * h * w;
        double* o = out.ptr() + r * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0.0;
                for (std::size_t a = 0; a < 2; ++a) {
                    for (std::size_t c = 0; c < 2; ++c) {
                        const std::size_t y = 2 * i + a, xx = 2 * j + c;
                        if (y < h && xx < w) s += in[y * w + xx];
                    }
                }
                o[i * ow + j] = 0.25 * s;
            }
        }
    }
    return tape_of(x).record(std::move(out), {x}, [x, rows, h, w, oh, ow](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double* gi = gx->ptr() + r * h * w;
            const double* go = g.ptr() + r * oh * ow;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t xx = 0; xx < w; ++xx) gi[y * w + xx] += 0.25 * go[(y / 2) * ow + xx / 2];
            }
        }
    });
}

Var upsample2(Var x, std::size_t height, std::size_t width) {
    const Tensor& xv = x.value();
    require_feature_map(xv, "upsample2");
    const std::size_t rows = xv.dim(0) * xv.dim(1), ih = xv.dim(2), iw = xv.dim(3);
    if ((height + 1) / 2 != ih || (width + 1) / 2 != iw) {
        throw ShapeError("upsample2: cannot map " + to_string(xv.shape()) + " onto " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    Tensor out({xv.dim(0), xv.dim(1), height, width});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.ptr() + r * ih * iw;
        double* o = out.ptr() + r * height * width;
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t xx = 0; xx < width; ++xx) o[y * width + xx] = in[(y / 2) * iw + xx / 2];
        }
    }
    return tape_of(x).record(std::move(out), {x}, [x, rows, ih, iw, height, width](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double* gi = gx->ptr() + r * ih * iw;
            const double* go = g.ptr() + r * height * width;
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t xx = 0; xx < width; ++xx) gi[(y / 2) * iw + xx / 2] += go[y * width + xx];
            }
        }
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
    const Tensor& first = parts.front().value();
    require_feature_map(first, "concat_channels");
    std::size_t channels = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        require_feature_map(v, "concat_channels");
        if (v.dim(0) != first.dim(0) || v.dim(2) != first.dim(2) || v.dim(3) != first.dim(3)) {
            throw ShapeError("concat_channels: " + to_string(v.shape()) + " vs " + to_string(first.shape()));
        }
        channels += v.dim(1);
    }
    const std::size_t batch = first.dim(0), plane = first.dim(2) * first.dim(3);
    Tensor out({batch, channels, first.dim(2), first.dim(3)});
    for (std::size_t b = 0; b < batch; ++b) {
        double* o = out.ptr() + b * channels * plane;
        for (const Var& p : parts) {
            const Tensor& v = p.value();
            const std::size_t n = v.dim(1) * plane;
            std::copy_n(v.ptr() + b * n, n, o);
            o += n;
        }
    }
    return tape_of(parts.front()).record(std::move(out), parts, [parts, batch, channels, plane](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
            const std::size_t n = t.value(p).dim(1) * plane;
            if (Tensor* gp = t.grad_slot(p)) {
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* src = g.ptr() + b * channels * plane + offset;
                    double* dst = gp->ptr() + b * n;
                    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
                }
            }
            offset += n;
        }
    });
}

Var masked_global_pool(Var x, const FrameMask& m) {
    const Tensor& xv = x.value();
    check_mask(xv, m, "masked_global_pool");
    const std::size_t batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out({batch, ch, 1, 1});
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t len = m.length(b);
        const double inv = 1.0 / static_cast<double>(h * len);
        for (std::size_t c = 0; c < ch; ++c) {
            double s = 0.0;
            for (std::size_t y = 0; y < h; ++y) {
                const double* row = xv.ptr() + ((b * ch + c) * h + y) * w;
                for (std::size_t j = 0; j < len; ++j) s += row[j];
            }
            out[b * ch + c] = s * inv;
        }
    }
    return tape_of(x).record(std::move(out), {x}, [x, m, batch, ch, h, w](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t len = m.length(b);
            const double inv = 1.0 / static_cast<double>(h * len);
            for (std::size_t c = 0; c < ch; ++c) {
                const double gv = g[b * ch + c] * inv;
                for (std::size_t y = 0; y < h; ++y) {
                    double* row = gx->ptr() + ((b * ch + c) * h + y) * w;
                    for (std::size_t j = 0; j < len; ++j) row[j] += gv;
                }
            }
        }
    });
}

Var broadcast_spatial(Var x, std::size_t height, std::size_t width) {
    const Tensor& xv = x.value();
    require_feature_map(xv, "broadcast_spatial");
    if (xv.dim(2) != 1 || xv.dim(3) != 1) throw ShapeError("broadcast_spatial: input must be [B, C, 1, 1]");
    const std::size_t rows = xv.dim(0) * xv.dim(1), plane = height * width;
    Tensor out({xv.dim(0), xv.dim(1), height, width});
    for (std::size_t r = 0; r < rows; ++r) std::fill_n(out.ptr() + r * plane, plane, xv[r]);
    return tape_of(x).record(std::move(out), {x}, [x, rows, plane](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += g[r * plane + i];
            (*gx)[r] += s;
        }
    });
}

Var linear(Var x, Var weight, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_rank(xv, 2, "linear input");
    require_rank(wv, 2, "linear weight");
    if (wv.dim(1) != xv.dim(1) || bias.value().size() != wv.dim(0)) {
        throw ShapeError("linear: weight " + to_string(wv.shape()) + " vs input " + to_string(xv.shape()));
    }
    const std::size_t batch = xv.dim(0), in = xv.dim(1), outd = wv.dim(0);
    Tensor out({batch, outd});
    const Tensor& bv = bias.value();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < outd; ++o) {
            double s = bv[o];
            for (std::size_t i = 0; i < in; ++i) s += wv[o * in + i] * xv[b * in + i];
            out[b * outd + o] = s;
        }
    }
    return tape_of(x).record(std::move(out), {x, weight, bias}, [x, weight, bias, batch, in, outd](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(weight);
        Tensor* gx = t.grad_slot(x);
        Tensor* gw = t.grad_slot(weight);
        Tensor* gb = t.grad_slot(bias);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < outd; ++o) {
                const double go = g[b * outd + o];
                if (gb) (*gb)[o] += go;
                for (std::size_t i = 0; i < in; ++i) {
                    if (gw) (*gw)[o * in + i] += go * xv[b * in + i];
                    if (gx) (*gx)[b * in + i] += go * wv[o * in + i];
                }
            }
        }
    });
}

Var scale_items(Var x, std::span<const double> coeffs) {
    const Tensor& xv = x.value();
    if (xv.rank() < 1 || xv.dim(0) != coeffs.size()) {
        throw ShapeError("scale_items: " + std::to_string(coeffs.size()) + " coefficients for " + to_string(xv.shape()));
    }
    const std::size_t per = xv.size() / coeffs.size();
    Tensor out = xv;
    for (std::size_t b = 0; b < coeffs.size(); ++b) {
        for (std::size_t i = 0; i < per; ++i) out[b * per + i] *= coeffs[b];
    }
    std::vector<double> c(coeffs.begin(), coeffs.end());
    return tape_of(x).record(std::move(out), {x}, [x, c = std::move(c), per](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (std::size_t b = 0; b < c.size(); ++b) {
            for (std::size_t i = 0; i < per; ++i) (*gx)[b * per + i] += g[b * per + i] * c[b];
        }
    });
}

Var stop_gradient(Var x) { return tape_of(x).constant(x.value()); }

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return tape_of(x).record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(x);
        for (double& v : gx->data()) v += g[0];
    });
}

Var masked_mean_sq(Var a, Var b, const FrameMask& m, bool normalize_by_valid) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "masked_mean_sq");
    check_mask(av, m, "masked_mean_sq");
    if (m.valid_frames() == 0) throw DomainError("masked_mean_sq: mask has no valid frames");
    const std::size_t batch = av.dim(0), rows = av.dim(1) * av.dim(2), w = av.dim(3);

    double s = 0.0;
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const std::size_t len = normalize_by_valid ? m.length(bi) : w;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = (bi * rows + r) * w;
            for (std::size_t j = 0; j < len; ++j) {
                const double d = av[base + j] - bv[base + j];
                s += d * d;
            }
        }
    }
    const double denom = normalize_by_valid ? static_cast<double>(rows * m.valid_frames()) : static_cast<double>(av.size());
    return tape_of(a).record(Tensor::scalar(s / denom), {a, b},
                             [a, b, m, normalize_by_valid, batch, rows, w, denom](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        Tensor* ga = t.grad_slot(a);
        Tensor* gb = t.grad_slot(b);
        const double scale = 2.0 * g[0] / denom;
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const std::size_t len = normalize_by_valid ? m.length(bi) : w;
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t base = (bi * rows + r) * w;
                for (std::size_t j = 0; j < len; ++j) {
                    const double d = scale * (av[base + j] - bv[base + j]);
                    if (ga) (*ga)[base + j] += d;
                    if (gb) (*gb)[base + j] -= d;
                }
            }
        }
    });
}

}  // namespace ectlab::ops
