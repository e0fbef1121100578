#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ectlab/autodiff.hpp"
#include "ectlab/noise_schedule.hpp"
#include "ectlab/rng.hpp"
#include "ectlab/tensor.hpp"

namespace ectlab {

struct ArchConfig {
    int depth = 2;
    int base_width = 32;
    std::vector<int> width_mult = {1, 2};  // one entry per level
    int time_features = 16;                // sinusoidal features of c_noise
    int embed_dim = 64;                    // width of the time-embedding MLP
    bool msgate_enabled = true;
    double fuse_bias_init = 2.0;

    int width(int level) const { return base_width * width_mult.at(static_cast<std::size_t>(level)); }
    void validate() const;

    // Small architecture used for gradient checks and fast tests.
    static ArchConfig tiny();

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// Ordered, named parameter tensors of the gated U-Net.
class ModelParams {
public:
    void add(std::string name, Tensor value);

    std::size_t size() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::vector<std::string>& names() const { return names_; }
    Tensor& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
    Tensor& get(std::string_view name);
    const Tensor& get(std::string_view name) const;
    bool contains(std::string_view name) const;
    std::size_t index(std::string_view name) const;

    std::size_t scalar_count() const;
    bool same_layout(const ModelParams& other) const;

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        return a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Shapes of every parameter, in canonical order, for an architecture.
std::vector<std::pair<std::string, Shape>> param_layout(const ArchConfig& arch);
std::size_t param_count(const ArchConfig& arch);

// Fan-in scaled uniform kernels, zero biases, MSGate fusion bias at fuse_bias_init.
ModelParams init_params(const ArchConfig& arch, Rng& rng);

// Parameters bound as tape variables for one forward pass.
class BoundParams {
public:
    BoundParams(Tape& tape, const ModelParams& params, bool requires_grad);
    Var operator()(std::string_view name) const { return vars_[params_->index(name)]; }
    Var at(std::size_t i) const { return vars_[i]; }
    std::size_t size() const { return vars_.size(); }
    Tape& tape() const { return *tape_; }

private:
    Tape* tape_;
    const ModelParams* params_;
    std::vector<Var> vars_;
};

// Multi-scale gate: four parallel branches (1x1, 3x3, 5x5 convolutions and masked global
// pooling followed by a 1x1 convolution and broadcast), concatenated, fused by a 1x1
// convolution and squashed by a sigmoid; the result multiplies h elementwise.
// `prefix` selects parameters "<prefix>.b1x1.w" etc. When `gate` is given it receives the
// sigmoid output.
Var msgate_forward(Var h, const FrameMask& mask, const BoundParams& params, const std::string& prefix,
                   Var* gate = nullptr);

// Sinusoidal features of per-item noise embeddings, shape [B, time_features].
Tensor time_features(std::span<const double> noise_emb, int n_features);

// Raw backbone F: stacks x_scaled and mu as two channels, runs the gated U-Net and returns
// [B, 1, F, N], zero on padded frames.
Var unet_forward(Var x_scaled, std::span<const double> noise_emb, Var mu, const FrameMask& mask,
                 const BoundParams& params, const ArchConfig& arch);

// Skip-parameterized denoiser c_skip x_t + c_out F(c_in x_t, c_noise, mu), one sigma per item.
Var denoise(const Tensor& x_t, std::span<const double> sigmas, const Tensor& mu, const FrameMask& mask,
            const BoundParams& params, const ArchConfig& arch, const ScheduleConfig& sched);

// Forward-only evaluation on a private tape.
Tensor denoise_eval(const Tensor& x_t, std::span<const double> sigmas, const Tensor& mu, const FrameMask& mask,
                    const ModelParams& params, const ArchConfig& arch, const ScheduleConfig& sched);

// Score estimate (denoised - x_t) / sigma^2 for a single sigma.
Tensor score_from_denoiser(const Tensor& x_t, double sigma, const Tensor& denoised);

}  // namespace ectlab
