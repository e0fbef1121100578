#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ectlab/autodiff.hpp"
#include "ectlab/config.hpp"
#include "ectlab/denoiser.hpp"
#include "ectlab/losses.hpp"
#include "ectlab/tensor.hpp"
#include "ectlab/trainer.hpp"

namespace ectlab {

// Mean |5-point Laplacian| over interior valid cells of item `item` of a [B, 1, F, N] map.
// DomainError when the item has fewer than 3 valid frames or the map fewer than 3 bins.
double sharpness_item(const Tensor& x, const FrameMask& mask, std::size_t item);
std::vector<double> sharpness_items(const Tensor& x, const FrameMask& mask);
// Pooled over the interior cells of every item.
double sharpness(const Tensor& x, const FrameMask& mask);

using Point2 = std::array<double, 2>;

struct W2Result {
    double value = 0.0;
    bool regularized = false;  // a covariance was singular and got +1e-9 I
};

// 2-Wasserstein distance between Gaussians fitted (mean, 1/n covariance) to each set.
// ArgumentError for fewer than 32 points on either side.
W2Result gaussian_w2(std::span<const Point2> a, std::span<const Point2> b);

// Closed-form W2 between two Gaussians given by mean and row-major 2x2 covariance.
double gaussian_w2_closed_form(const Point2& m1, const std::array<double, 4>& c1, const Point2& m2,
                               const std::array<double, 4>& c2);

// Principal square root of a symmetric positive semi-definite 2x2 matrix.
std::array<double, 4> sqrtm_2x2(const std::array<double, 4>& m);

// Scalar loss built on a tape from bound parameters; must be a deterministic function of them.
using LossFn = std::function<Var(const BoundParams& params)>;

struct GradcheckOptions {
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    std::size_t min_coords = 600;  // spread evenly over tensors, every tensor at least 4
    std::uint64_t seed = 7;
    // Test hook: scales the analytic gradient of the first tensor.
    double sabotage = 1.0;
};

struct TensorCheck {
    std::string name;
    std::size_t coords = 0;
    double max_rel_err = 0.0;
    double max_abs_grad = 0.0;
};

struct GradcheckReport {
    std::vector<TensorCheck> tensors;
    std::size_t coords = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;

    bool passed() const { return max_rel_err <= tolerance; }
};

GradcheckReport gradcheck(const ModelParams& params, const LossFn& loss, const GradcheckOptions& opts = {});

// Tiny-architecture problem used by the gradient check: a small padded batch, fixed noise and
// per-item (t, r) pairs with one r = 0 item. The loss sums the weighted EDM loss and the
// consistency loss against frozen_target, the r-branch output at the check point. Holding the
// target fixed is what the stop-gradient means, so central differences of this loss are the
// oracle for the consistency-loss gradient.
struct GradcheckProblem {
    ArchConfig arch;
    ScheduleConfig sched;
    ModelParams params;
    Batch batch;
    Tensor eps;
    std::vector<double> t;
    std::vector<double> r;
    bool masked_norm = true;
    Tensor frozen_target;

    LossInputs inputs() const { return {batch.x0, batch.mu, batch.mask, eps}; }
    // The returned function refers to this object.
    LossFn loss() const;
};

GradcheckProblem make_gradcheck_problem(const RunConfig& cfg);

struct StopGradReport {
    std::size_t coords = 0;  // cells of the r-branch output
    double max_abs_grad = 0.0;
};

// Runs ect_loss backward and reads the adjoint reaching the r-branch output.
StopGradReport stop_gradient_probe(const ModelParams& params, const LossInputs& in, std::span<const double> t,
                                   std::span<const double> r, const ArchConfig& arch, const ScheduleConfig& sched);

struct EvalRequest {
    SamplerMethod method = SamplerMethod::OneStep;
    int n_steps = 1;
    int n_samples = 256;
    bool use_ema = true;
    int consistency_trajectories = 0;  // 0 skips consistency_dev
    int consistency_steps = 18;
};

struct EvalReport {
    std::string mode;
    std::string method;
    int n_steps = 0;
    int nfe = 0;
    bool used_ema = false;
    int n_samples = 0;
    std::string checkpoint_phase;
    std::int64_t checkpoint_step = 0;
    double masked_mse = 0.0;
    std::optional<double> sharpness_mean;
    std::optional<double> sharpness_median;
    std::optional<double> w2;
    bool w2_regularized = false;
    std::optional<double> consistency_dev;
    double wall_ms_per_sample = 0.0;
    std::uint64_t config_fingerprint = 0;

    std::vector<double> sharpness_per_item;  // not serialized
};

// Samples n_samples items conditioned on held-out batches and scores them against the
// held-out targets. Pure given (state, cfg, request) apart from wall_ms_per_sample.
EvalReport evaluate(const TrainState& state, const RunConfig& cfg, const EvalRequest& req);

std::string report_to_json(const EvalReport& report);
std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& report);

double median(std::vector<double> values);

}  // namespace ectlab
