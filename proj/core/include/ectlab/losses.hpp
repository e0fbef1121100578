#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ectlab/autodiff.hpp"
#include "ectlab/denoiser.hpp"
#include "ectlab/noise_schedule.hpp"
#include "ectlab/rng.hpp"
#include "ectlab/tensor.hpp"

namespace ectlab {

struct LossValue {
    double value = 0.0;
    std::size_t valid_frame_count = 0;
};

struct LossOptions {
    // Divide by the number of valid cells (true) or by the full padded element count.
    bool masked_norm = true;
    // Multiply each item's squared error by the EDM weight 1 / c_out(sigma)^2. Pretraining only.
    bool edm_weighting = false;
};

// Everything a loss needs besides parameters.
struct LossInputs {
    const Tensor& x0;
    const Tensor& mu;
    const FrameMask& mask;
    const Tensor& eps;
};

// Value-only masked squared error between two feature maps.
LossValue masked_mean_sq(const Tensor& a, const Tensor& b, const FrameMask& mask, bool normalize_by_valid = true);

// Denoising loss || D(x0 + sigma eps, sigma, mu) - x0 ||^2 over valid cells, one sigma per item.
Var edm_loss(const BoundParams& params, const LossInputs& in, std::span<const double> sigmas,
             const ArchConfig& arch, const ScheduleConfig& sched, const LossOptions& opts = {});

struct EctLoss {
    Var loss;
    // r-branch output before the stop-gradient; absent when every r is 0 and the target is x0.
    std::optional<Var> target_branch;
};

// Consistency loss || D(x_t, t) - sg(D(x_r, r)) ||^2 with x_t = x0 + t eps and x_r = x0 + r eps
// sharing eps. Items with r = 0 use x0 as the target. Throws ArgumentError unless 0 <= r < t.
EctLoss ect_loss(const BoundParams& params, const LossInputs& in, std::span<const double> t,
                 std::span<const double> r, const ArchConfig& arch, const ScheduleConfig& sched,
                 const LossOptions& opts = {});

// Standard normal noise shaped like `like`, drawn over valid cells only (bins fastest, then
// frames, then channels, then items); padding stays zero.
Tensor masked_gaussian(const Shape& shape, const FrameMask& mask, Rng& rng);

struct TuningPair {
    std::vector<double> t;
    std::vector<double> r;
    Tensor eps;
};

// Per item t ~ training proposal, r = anneal_r(t, k); then masked noise. Draw order matches the
// pretraining step (all sigmas first, then noise) so k = 0 reproduces its randomness exactly.
TuningPair make_tuning_pair(Rng& rng, std::int64_t tune_step, const ScheduleConfig& sched, const Shape& shape,
                            const FrameMask& mask);

}  // namespace ectlab
