#include <cmath>

#include <gtest/gtest.h>

#include "ectlab/error.hpp"
#include "ectlab/noise_schedule.hpp"

using namespace ectlab;

TEST(Preconditioning, BoundaryAtSigmaMin) {
    const ScheduleConfig cfg;
    const double ratio = cfg.sigma_min / cfg.sigma_data;
    EXPECT_LE(std::abs(c_skip(cfg.sigma_min, cfg) - 1.0), ratio * ratio);
    EXPECT_LE(c_out(cfg.sigma_min, cfg), cfg.sigma_min);
    // Values computed independently in extended precision.
    EXPECT_NEAR(c_skip(cfg.sigma_min, cfg), 0.9999840002559959, 1e-15);
    EXPECT_NEAR(c_out(cfg.sigma_min, cfg), 0.0019999840001919972, 1e-17);
}

TEST(Preconditioning, EdmIdentityOnLogGrid) {
    const ScheduleConfig cfg;
    for (int i = 0; i < 100; ++i) {
        const double sigma = cfg.sigma_min * std::pow(cfg.sigma_max / cfg.sigma_min, i / 99.0);
        const double lhs = c_out(sigma, cfg) * c_out(sigma, cfg);
        const double rhs = sigma * sigma * c_skip(sigma, cfg);
        EXPECT_LE(std::abs(lhs - rhs) / rhs, 1e-12) << sigma;
        // c_skip^2 sigma_data^2 ... unit-variance input scaling.
        EXPECT_NEAR(c_in(sigma, cfg) * std::sqrt(sigma * sigma + cfg.sigma_data * cfg.sigma_data), 1.0, 1e-14);
    }
}

TEST(Preconditioning, LimitsAndDomain) {
    const ScheduleConfig cfg;
    EXPECT_LT(c_out(1e-12, cfg), 1e-11);
    EXPECT_NEAR(c_skip(1e6, cfg), 0.0, 1e-12);
    EXPECT_NEAR(c_out(1e6, cfg), cfg.sigma_data, 1e-12);
    EXPECT_DOUBLE_EQ(c_noise(1.0), 0.0);
    EXPECT_DOUBLE_EQ(c_noise(std::exp(4.0)), 1.0);
    for (double bad : {0.0, -1.0, std::nan("")}) {
        EXPECT_THROW(c_skip(bad, cfg), DomainError);
        EXPECT_THROW(c_out(bad, cfg), DomainError);
        EXPECT_THROW(c_in(bad, cfg), DomainError);
        EXPECT_THROW(c_noise(bad), DomainError);
    }
}

TEST(TrainingSigma, LognormalMeanMonteCarlo) {
    const ScheduleConfig cfg;
    Rng rng(42);
    const int n = 200000;
    double sum = 0.0, sum_log = 0.0;
    for (int i = 0; i < n; ++i) {
        const double s = sample_training_sigma(rng, cfg);
        ASSERT_GE(s, cfg.sigma_min);
        ASSERT_LE(s, cfg.sigma_max);
        sum += s;
        sum_log += std::log(s);
    }
    // E[sigma] = exp(p_mean + p_std^2 / 2) = 0.6187833918061408; sd of sigma ~ 1.174.
    const double se = 1.174 / std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(sum / n, 0.6187833918061408, 4.0 * se);
    EXPECT_NEAR(sum_log / n, cfg.p_mean, 4.0 * cfg.p_std / std::sqrt(static_cast<double>(n)));
}

TEST(TrainingSigma, ClampsIntoDomain) {
    ScheduleConfig cfg;
    cfg.p_mean = 10.0;
    Rng rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_LE(sample_training_sigma(rng, cfg), cfg.sigma_max);
    cfg.p_mean = -20.0;
    for (int i = 0; i < 100; ++i) EXPECT_GE(sample_training_sigma(rng, cfg), cfg.sigma_min);
}

TEST(KarrasGrid, FiveStepOracle) {
    const ScheduleConfig cfg;
    const auto grid = karras_step_grid(5, cfg);
    // Reference from an independent evaluation of the rho-interpolation.
    const double expected[] = {80.0, 17.52783196464411, 2.515218976147159, 0.16975275626876413, 0.002, 0.0};
    ASSERT_EQ(grid.size(), 6u);
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(grid[i], expected[i], 1e-12 * (1.0 + expected[i]));
    EXPECT_EQ(grid.front(), cfg.sigma_max);
    EXPECT_EQ(grid[4], cfg.sigma_min);
}

TEST(KarrasGrid, StrictlyDecreasingWithTerminalZero) {
    const ScheduleConfig cfg;
    for (int n : {1, 2, 3, 18, 50, 200}) {
        const auto grid = karras_step_grid(n, cfg);
        ASSERT_EQ(grid.size(), static_cast<std::size_t>(n) + 1);
        EXPECT_EQ(grid.front(), cfg.sigma_max);
        EXPECT_EQ(grid.back(), 0.0);
        for (std::size_t i = 0; i + 1 < grid.size(); ++i) EXPECT_GT(grid[i], grid[i + 1]);
    }
    EXPECT_EQ(karras_step_grid(1, cfg), (std::vector<double>{cfg.sigma_max, 0.0}));
    EXPECT_THROW(karras_step_grid(0, cfg), ArgumentError);
}

TEST(AnnealR, DoublingSchedule) {
    ScheduleConfig cfg;
    cfg.anneal_doublings = 8;
    cfg.total_tune_steps = 800;
    EXPECT_EQ(anneal_r(2.0, 0, cfg), 0.0);
    EXPECT_EQ(anneal_r(2.0, 99, cfg), 0.0);
    EXPECT_EQ(anneal_r(2.0, 100, cfg), 1.0);
    EXPECT_EQ(anneal_r(2.0, 200, cfg), 1.5);
    EXPECT_EQ(anneal_r(2.0, 800, cfg), 2.0 * (1.0 - 1.0 / 256.0));
    double prev = -1.0;
    for (std::int64_t k = 0; k <= 800; ++k) {
        const double r = anneal_r(1.0, k, cfg);
        EXPECT_GE(r, prev);
        EXPECT_LT(r, 1.0);
        prev = r;
    }
    EXPECT_THROW(anneal_r(1.0, -1, cfg), ArgumentError);
    EXPECT_THROW(anneal_r(1.0, 801, cfg), ArgumentError);
}

TEST(ScheduleConfig, ValidationNamesField) {
    ScheduleConfig cfg;
    cfg.sigma_min = 100.0;
    try {
        cfg.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.path, "schedule.sigma_max");
    }
    cfg = ScheduleConfig{};
    cfg.anneal_doublings = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
