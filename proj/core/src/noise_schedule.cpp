#include "ectlab/noise_schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ectlab/error.hpp"

namespace ectlab {

namespace {

void require_positive(double sigma, const char* what) {
    if (!(sigma > 0.0)) throw DomainError(std::string(what) + ": sigma must be positive, got " + std::to_string(sigma));
}

}  // namespace

void ScheduleConfig::validate() const {
    auto positive = [](double v, const char* field) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("schedule.") + field, "must be positive");
    };
    positive(sigma_min, "sigma_min");
    positive(sigma_max, "sigma_max");
    positive(sigma_data, "sigma_data");
    positive(p_std, "p_std");
    if (!(sigma_min < sigma_max)) throw ConfigError("schedule.sigma_max", "must exceed sigma_min");
    if (!(rho >= 1.0)) throw ConfigError("schedule.rho", "must be >= 1");
    if (!std::isfinite(p_mean)) throw ConfigError("schedule.p_mean", "must be finite");
    if (anneal_doublings < 1) throw ConfigError("schedule.anneal_doublings", "must be >= 1");
    if (total_tune_steps < 1) throw ConfigError("schedule.total_tune_steps", "must be >= 1");
}

double c_skip(double sigma, const ScheduleConfig& cfg) {
    require_positive(sigma, "c_skip");
    const double sd2 = cfg.sigma_data * cfg.sigma_data;
    return sd2 / (sigma * sigma + sd2);
}

double c_out(double sigma, const ScheduleConfig& cfg) {
    require_positive(sigma, "c_out");
    return sigma * cfg.sigma_data / std::sqrt(sigma * sigma + cfg.sigma_data * cfg.sigma_data);
}

double c_in(double sigma, const ScheduleConfig& cfg) {
    require_positive(sigma, "c_in");
    return 1.0 / std::sqrt(sigma * sigma + cfg.sigma_data * cfg.sigma_data);
}

double c_noise(double sigma) {
    require_positive(sigma, "c_noise");
    return 0.25 * std::log(sigma);
}

double sample_training_sigma(Rng& rng, const ScheduleConfig& cfg) {
    const double sigma = std::exp(cfg.p_mean + cfg.p_std * rng.normal());
    return std::clamp(sigma, cfg.sigma_min, cfg.sigma_max);
}

std::vector<double> karras_step_grid(int n_steps, const ScheduleConfig& cfg) {
    if (n_steps < 1) throw ArgumentError("karras_step_grid: n_steps must be >= 1");
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(n_steps) + 1);
    if (n_steps == 1) {
        grid = {cfg.sigma_max, 0.0};
        return grid;
    }
    const double hi = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
    const double lo = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
    for (int i = 0; i < n_steps; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(n_steps - 1);
        grid.push_back(std::pow(hi + frac * (lo - hi), cfg.rho));
    }
    // Endpoints exactly, independent of pow round-off.
    grid.front() = cfg.sigma_max;
    grid.back() = cfg.sigma_min;
    grid.push_back(0.0);
    return grid;
}

double anneal_r(double t, std::int64_t tune_step, const ScheduleConfig& cfg) {
    if (tune_step < 0) throw ArgumentError("anneal_r: tune step must be non-negative");
    if (tune_step > cfg.total_tune_steps) throw ArgumentError("anneal_r: tune step exceeds total_tune_steps");
    // Integer floor of k M / K; k M fits easily in 64 bits for any realistic run.
    const std::int64_t level = tune_step * cfg.anneal_doublings / cfg.total_tune_steps;
    const double gap = std::ldexp(1.0, -static_cast<int>(level));
    return t * (1.0 - gap);
}

}  // namespace ectlab
