#include "ectlab/denoiser.hpp"

#include <cmath>
#include <numbers>

#include "ectlab/error.hpp"
#include "ectlab/ops.hpp"

namespace ectlab {

void ArchConfig::validate() const {
    if (depth < 1) throw ConfigError("arch.depth", "must be >= 1");
    if (base_width < 1) throw ConfigError("arch.base_width", "must be >= 1");
    if (width_mult.size() != static_cast<std::size_t>(depth)) {
        throw ConfigError("arch.width_mult", "needs one entry per level (" + std::to_string(depth) + ")");
    }
    for (int m : width_mult) {
        if (m < 1) throw ConfigError("arch.width_mult", "entries must be >= 1");
    }
    if (time_features < 2 || time_features % 2 != 0) throw ConfigError("arch.time_features", "must be even and >= 2");
    if (embed_dim < 1) throw ConfigError("arch.embed_dim", "must be >= 1");
    if (!std::isfinite(fuse_bias_init)) throw ConfigError("arch.fuse_bias_init", "must be finite");
}

ArchConfig ArchConfig::tiny() {
    ArchConfig a;
    a.depth = 2;
    a.base_width = 4;
    a.width_mult = {1, 2};
    a.time_features = 4;
    a.embed_dim = 8;
    return a;
}

void ModelParams::add(std::string name, Tensor value) {
    if (index_.contains(name)) throw ArgumentError("duplicate parameter " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
}

std::size_t ModelParams::index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ArgumentError("unknown parameter " + std::string(name));
    return it->second;
}

Tensor& ModelParams::get(std::string_view name) { return tensors_[index(name)]; }
const Tensor& ModelParams::get(std::string_view name) const { return tensors_[index(name)]; }
bool ModelParams::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
}

bool ModelParams::same_layout(const ModelParams& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
    }
    return true;
}

namespace {

using Layout = std::vector<std::pair<std::string, Shape>>;

void add_conv(Layout& out, const std::string& name, int out_ch, int in_ch, int k) {
    const auto o = static_cast<std::size_t>(out_ch), i = static_cast<std::size_t>(in_ch), kk = static_cast<std::size_t>(k);
    out.emplace_back(name + ".w", Shape{o, i, kk, kk});
    out.emplace_back(name + ".b", Shape{o});
}

void add_linear(Layout& out, const std::string& name, int out_dim, int in_dim) {
    out.emplace_back(name + ".w", Shape{static_cast<std::size_t>(out_dim), static_cast<std::size_t>(in_dim)});
    out.emplace_back(name + ".b", Shape{static_cast<std::size_t>(out_dim)});
}

std::string level_name(const char* stem, int level) { return stem + std::to_string(level); }

int mid_width(const ArchConfig& arch) { return arch.width(arch.depth - 1); }

}  // namespace

std::vector<std::pair<std::string, Shape>> param_layout(const ArchConfig& arch) {
    arch.validate();
    Layout out;
    add_linear(out, "temb.fc1", arch.embed_dim, arch.time_features);
    add_linear(out, "temb.fc2", arch.embed_dim, arch.embed_dim);
    int prev = 2;
    for (int l = 0; l < arch.depth; ++l) {
        add_conv(out, level_name("enc", l) + ".conv", arch.width(l), prev, 3);
        add_linear(out, level_name("enc", l) + ".temb", arch.width(l), arch.embed_dim);
        prev = arch.width(l);
    }
    add_conv(out, "mid.conv", mid_width(arch), prev, 3);
    add_linear(out, "mid.temb", mid_width(arch), arch.embed_dim);
    int below = mid_width(arch);
    for (int l = arch.depth - 1; l >= 0; --l) {
        const int w = arch.width(l);
        if (arch.msgate_enabled) {
            const std::string g = level_name("gate", l);
            add_conv(out, g + ".b1x1", w, w, 1);
            add_conv(out, g + ".b3x3", w, w, 3);
            add_conv(out, g + ".b5x5", w, w, 5);
            add_conv(out, g + ".global", w, w, 1);
            add_conv(out, g + ".fuse", w, 4 * w, 1);
        }
        add_conv(out, level_name("dec", l) + ".conv", w, below + w, 3);
        add_linear(out, level_name("dec", l) + ".temb", w, arch.embed_dim);
        below = w;
    }
    add_conv(out, "out.conv", 1, arch.width(0), 3);
    return out;
}

std::size_t param_count(const ArchConfig& arch) {
    std::size_t n = 0;
    for (const auto& [name, shape] : param_layout(arch)) n += Tensor(shape).size();
    return n;
}

ModelParams init_params(const ArchConfig& arch, Rng& rng) {
    ModelParams params;
    for (const auto& [name, shape] : param_layout(arch)) {
        Tensor t(shape);
        const bool is_weight = name.ends_with(".w");
        if (is_weight) {
            std::size_t fan_in = 1;
            for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : t.data()) v = bound * (2.0 * rng.uniform() - 1.0);
        } else if (name.ends_with(".fuse.b")) {
            t.fill(arch.fuse_bias_init);
        }
        params.add(name, std::move(t));
    }
    return params;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool requires_grad) : tape_(&tape), params_(&params) {
    vars_.reserve(params.size());
    for (const Tensor& t : params) vars_.push_back(requires_grad ? tape.parameter(t) : tape.constant(t));
}

namespace {

Var conv(Var x, const BoundParams& p, const std::string& name) { return ops::conv2d(x, p(name + ".w"), p(name + ".b")); }

// conv -> + time projection -> SiLU -> mask
Var block(Var h, Var emb, const FrameMask& mask, const BoundParams& p, const std::string& name) {
    Var y = conv(h, p, name + ".conv");
    y = ops::add_channel_bias(y, ops::linear(emb, p(name + ".temb.w"), p(name + ".temb.b")));
    return ops::mask(ops::silu(y), mask);
}

}  // namespace

Var msgate_forward(Var h, const FrameMask& mask, const BoundParams& p, const std::string& prefix, Var* gate) {
    const Tensor& hv = h.value();
    require_rank(hv, 4, "msgate input");
    const Tensor& w1 = p(prefix + ".b1x1.w").value();
    if (w1.dim(1) != hv.dim(1)) {
        throw ShapeError("msgate " + prefix + ": built for " + std::to_string(w1.dim(1)) + " channels, got " +
                         std::to_string(hv.dim(1)));
    }
    Var local = conv(h, p, prefix + ".b1x1");
    Var mid = conv(h, p, prefix + ".b3x3");
    Var wide = conv(h, p, prefix + ".b5x5");
    Var pooled = conv(ops::masked_global_pool(h, mask), p, prefix + ".global");
    Var global = ops::broadcast_spatial(pooled, hv.dim(2), hv.dim(3));
    Var fused = conv(ops::concat_channels({local, mid, wide, global}), p, prefix + ".fuse");
    Var g = ops::sigmoid(fused);
    if (gate) *gate = g;
    return ops::mul(h, g);
}

Tensor time_features(std::span<const double> noise_emb, int n_features) {
    const std::size_t half = static_cast<std::size_t>(n_features) / 2;
    Tensor out({noise_emb.size(), static_cast<std::size_t>(n_features)});
    for (std::size_t b = 0; b < noise_emb.size(); ++b) {
        for (std::size_t k = 0; k < half; ++k) {
            // Geometric frequencies from 1 to 32 rad per unit of c_noise.
            const double freq = half > 1 ? std::pow(32.0, static_cast<double>(k) / static_cast<double>(half - 1)) : 1.0;
            out[b * 2 * half + k] = std::cos(freq * noise_emb[b]);
            out[b * 2 * half + half + k] = std::sin(freq * noise_emb[b]);
        }
    }
    return out;
}

Var unet_forward(Var x_scaled, std::span<const double> noise_emb, Var mu, const FrameMask& mask,
                 const BoundParams& p, const ArchConfig& arch) {
    const Tensor& xv = x_scaled.value();
    require_rank(xv, 4, "unet input");
    require_same_shape(xv, mu.value(), "unet input vs mu");
    if (xv.dim(1) != 1) throw ShapeError("unet input must have one channel, got " + to_string(xv.shape()));
    if (mask.batch() != xv.dim(0) || mask.frames() != xv.dim(3)) throw ShapeError("unet: mask does not match input");
    if (noise_emb.size() != xv.dim(0)) throw ShapeError("unet: one noise embedding per item required");
    if (!xv.all_finite() || !mu.value().all_finite()) throw NumericError("unet: non-finite input");

    Tape& tape = p.tape();
    Var emb = tape.constant(time_features(noise_emb, arch.time_features));
    emb = ops::silu(ops::linear(emb, p("temb.fc1.w"), p("temb.fc1.b")));
    emb = ops::silu(ops::linear(emb, p("temb.fc2.w"), p("temb.fc2.b")));

    std::vector<FrameMask> masks{mask};
    std::vector<Var> skips;
    Var h = ops::concat_channels({x_scaled, mu});
    for (int l = 0; l < arch.depth; ++l) {
        h = block(h, emb, masks.back(), p, level_name("enc", l));
        skips.push_back(h);
        h = ops::avg_pool2(h);
        masks.push_back(masks.back().downsampled());
    }
    h = block(h, emb, masks.back(), p, "mid");
    for (int l = arch.depth - 1; l >= 0; --l) {
        const auto lv = static_cast<std::size_t>(l);
        const Tensor& sv = skips[lv].value();
        Var up = ops::mask(ops::upsample2(h, sv.dim(2), sv.dim(3)), masks[lv]);
        Var skip = arch.msgate_enabled ? msgate_forward(skips[lv], masks[lv], p, level_name("gate", l)) : skips[lv];
        h = block(ops::concat_channels({up, skip}), emb, masks[lv], p, level_name("dec", l));
    }
    return ops::mask(conv(h, p, "out.conv"), mask);
}

Var denoise(const Tensor& x_t, std::span<const double> sigmas, const Tensor& mu, const FrameMask& mask,
            const BoundParams& p, const ArchConfig& arch, const ScheduleConfig& sched) {
    require_rank(x_t, 4, "denoise input");
    if (sigmas.size() != x_t.dim(0)) throw ShapeError("denoise: one sigma per batch item required");
    std::vector<double> skip(sigmas.size()), out(sigmas.size()), in(sigmas.size()), noise(sigmas.size());
    for (std::size_t b = 0; b < sigmas.size(); ++b) {
        skip[b] = c_skip(sigmas[b], sched);
        out[b] = c_out(sigmas[b], sched);
        in[b] = c_in(sigmas[b], sched);
        noise[b] = c_noise(sigmas[b]);
    }
    Tape& tape = p.tape();
    // Padding in the inputs is never trusted.
    Var x = ops::mask(tape.constant(x_t), mask);
    Var backbone = unet_forward(ops::scale_items(x, in), noise, ops::mask(tape.constant(mu), mask), mask, p, arch);
    Var y = ops::add(ops::scale_items(x, skip), ops::scale_items(backbone, out));
    return ops::mask(y, mask);
}

Tensor denoise_eval(const Tensor& x_t, std::span<const double> sigmas, const Tensor& mu, const FrameMask& mask,
                    const ModelParams& params, const ArchConfig& arch, const ScheduleConfig& sched) {
    Tape tape;
    BoundParams bound(tape, params, false);
    return denoise(x_t, sigmas, mu, mask, bound, arch, sched).value();
}

Tensor score_from_denoiser(const Tensor& x_t, double sigma, const Tensor& denoised) {
    if (!(sigma > 0.0)) throw DomainError("score_from_denoiser: sigma must be positive");
    require_same_shape(x_t, denoised, "score_from_denoiser");
    Tensor out(x_t.shape());
    const double inv = 1.0 / (sigma * sigma);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (denoised[i] - x_t[i]) * inv;
    return out;
}

}  // namespace ectlab
