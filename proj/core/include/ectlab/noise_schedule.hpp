#pragma once

#include <cstdint>
#include <vector>

#include "ectlab/rng.hpp"

namespace ectlab {

// Noise-level domain and consistency-tuning annealing parameters. Defaults follow the EDM recipe.
struct ScheduleConfig {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double sigma_data = 0.5;
    double rho = 7.0;
    double p_mean = -1.2;
    double p_std = 1.2;
    int anneal_doublings = 8;        // M
    std::int64_t total_tune_steps = 10000;  // K

    // Throws ConfigError with a "schedule.<field>" path.
    void validate() const;

    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

// Preconditioning coefficients of the skip-parameterized denoiser
//   D(x, sigma) = c_skip(sigma) x + c_out(sigma) F(c_in(sigma) x, c_noise(sigma)).
// All throw DomainError for sigma <= 0.
double c_skip(double sigma, const ScheduleConfig& cfg);
double c_out(double sigma, const ScheduleConfig& cfg);
double c_in(double sigma, const ScheduleConfig& cfg);
double c_noise(double sigma);

// exp(p_mean + p_std z), z ~ N(0, 1), clamped into [sigma_min, sigma_max].
double sample_training_sigma(Rng& rng, const ScheduleConfig& cfg);

// Karras grid sigma_max .. sigma_min (n entries) followed by a terminal 0.
std::vector<double> karras_step_grid(int n_steps, const ScheduleConfig& cfg);

// Annealed partner level r = t (1 - 2^-floor(k M / K)) for tuning step k in [0, K].
double anneal_r(double t, std::int64_t tune_step, const ScheduleConfig& cfg);

}  // namespace ectlab
