#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "ectlab/denoiser.hpp"
#include "ectlab/noise_schedule.hpp"
#include "ectlab/rng.hpp"
#include "ectlab/tensor.hpp"

namespace ectlab {

// Denoiser evaluated at one noise level shared by the whole batch.
using DenoiseFn = std::function<Tensor(const Tensor& x, double sigma)>;

// Wraps trained parameters; mu and mask are captured by reference and must outlive the result.
DenoiseFn model_denoiser(const ModelParams& params, const ArchConfig& arch, const ScheduleConfig& sched,
                         const Tensor& mu, const FrameMask& mask);

// States visited by a sampler, sigma_max first and the terminal sigma = 0 state last.
struct Trajectory {
    std::vector<double> sigmas;
    std::vector<Tensor> states;

    std::size_t size() const { return sigmas.size(); }
};

struct SampleResult {
    Tensor x;
    int nfe = 0;
    Trajectory trajectory;  // empty unless recording was requested
};

// mu + sigma_max * eps, eps standard normal over valid cells (same draw order as training
// noise), padding zero.
Tensor init_state(const Tensor& mu, const FrameMask& mask, Rng& rng, const ScheduleConfig& sched);

SampleResult sample_onestep(const DenoiseFn& f, const Tensor& x_init, const ScheduleConfig& sched);

// Euler integration of dx/dsigma = (x - f(x, sigma)) / sigma over karras_step_grid(n_steps).
// The step into sigma = 0 lands exactly on f, so n_steps = 1 reproduces sample_onestep bitwise.
SampleResult sample_euler(const DenoiseFn& f, const Tensor& x_init, int n_steps, const ScheduleConfig& sched,
                          bool record = false);

// Heun: Euler predictor plus trapezoidal corrector, corrector skipped on the step into 0.
SampleResult sample_heun(const DenoiseFn& f, const Tensor& x_init, int n_steps, const ScheduleConfig& sched,
                         bool record = false);

// Mean over positive-sigma states of the masked squared distance between f at that state and
// f at the last positive state. ArgumentError without any positive-sigma state.
double consistency_deviation(const DenoiseFn& f, const Trajectory& trajectory, const FrameMask& mask);

// Item `item` of a [B, 1, F, N] map cut to its valid frames and written as
//   <stem>.pgm        binary 16-bit PGM, row = bin 0 upward, column = frame
//   <stem>.range.txt  "min <v>\nmax <v>\n" of the affine rescale
//   <stem>.f32        raw little-endian float32, [F, length] row-major
void write_sample_dump(const std::filesystem::path& stem, const Tensor& batch, std::size_t item,
                       const FrameMask& mask);

}  // namespace ectlab
