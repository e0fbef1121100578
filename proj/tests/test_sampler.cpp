#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ectlab/error.hpp"
#include "ectlab/losses.hpp"
#include "ectlab/sampler.hpp"
#include "golden_cases.hpp"
#include "test_util.hpp"

using namespace ectlab;

namespace {

// Exact denoiser for data ~ N(0, s^2): D(x, sigma) = x s^2 / (s^2 + sigma^2).
DenoiseFn gaussian_oracle(double s, int* calls = nullptr) {
    return [s, calls](const Tensor& x, double sigma) {
        if (calls) ++*calls;
        Tensor out = x;
        for (double& v : out.data()) v *= s * s / (s * s + sigma * sigma);
        return out;
    };
}

Tensor scalar_state(double v) { return Tensor({1, 1, 1, 1}, v); }

// Closed-form ODE endpoint from x(sigma_max) = 1.
double exact_terminal(double s, const ScheduleConfig& sched) {
    return s / std::sqrt(s * s + sched.sigma_max * sched.sigma_max);
}

}  // namespace

using golden::slurp;

TEST(GaussianOracle, EulerAndHeunErrorsMatchReference) {
    const ScheduleConfig sched;
    const double exact = exact_terminal(0.5, sched);
    EXPECT_NEAR(exact, 0.006249877933263662, 1e-17);
    // Reference errors from an independent double-precision integration.
    const int ns[] = {4, 8, 16, 32};
    const double euler_ref[] = {0.002955686411705701, 0.002090014391135219, 0.0010784280884034297,
                                0.0005474722691513664};
    const double heun_ref[] = {0.021022167621355815, 0.0024625445581120398, 0.00045109783931063675,
                               9.809720947274309e-05};
    for (int i = 0; i < 4; ++i) {
        const double e = std::abs(sample_euler(gaussian_oracle(0.5), scalar_state(1.0), ns[i], sched).x[0] - exact);
        const double h = std::abs(sample_heun(gaussian_oracle(0.5), scalar_state(1.0), ns[i], sched).x[0] - exact);
        EXPECT_NEAR(e, euler_ref[i], 1e-9 * euler_ref[i]) << ns[i];
        EXPECT_NEAR(h, heun_ref[i], 1e-9 * heun_ref[i]) << ns[i];
    }
}

TEST(GaussianOracle, ErrorsShrinkWithStepCount) {
    const ScheduleConfig sched;
    const double exact = exact_terminal(0.5, sched);
    double prev_e = 1e9, prev_h = 1e9;
    for (int n : {4, 8, 16, 32, 64}) {
        const double e = std::abs(sample_euler(gaussian_oracle(0.5), scalar_state(1.0), n, sched).x[0] - exact);
        const double h = std::abs(sample_heun(gaussian_oracle(0.5), scalar_state(1.0), n, sched).x[0] - exact);
        EXPECT_LT(e, prev_e);
        EXPECT_LT(h, prev_h);
        prev_e = e;
        prev_h = h;
    }
}

TEST(Sampler, OneStepEqualsEulerAndHeunWithOneStep) {
    const ScheduleConfig sched;
    const Tensor x = ectlab::testing::random_tensor({2, 1, 3, 4}, 3, 80.0);
    const auto f = gaussian_oracle(0.7);
    const auto one = sample_onestep(f, x, sched);
    EXPECT_EQ(one.x, sample_euler(f, x, 1, sched).x);
    EXPECT_EQ(one.x, sample_heun(f, x, 1, sched).x);
    EXPECT_EQ(one.x, f(x, sched.sigma_max));
}

TEST(Sampler, NfeCountsAreExact) {
    const ScheduleConfig sched;
    for (int n : {1, 2, 5, 18}) {
        int ce = 0, ch = 0, co = 0;
        const auto e = sample_euler(gaussian_oracle(0.5, &ce), scalar_state(1.0), n, sched);
        const auto h = sample_heun(gaussian_oracle(0.5, &ch), scalar_state(1.0), n, sched);
        const auto o = sample_onestep(gaussian_oracle(0.5, &co), scalar_state(1.0), sched);
        EXPECT_EQ(e.nfe, n);
        EXPECT_EQ(ce, n);
        EXPECT_EQ(h.nfe, 2 * n - 1);
        EXPECT_EQ(ch, 2 * n - 1);
        EXPECT_EQ(o.nfe, 1);
        EXPECT_EQ(co, 1);
    }
}

TEST(Sampler, RecordedTrajectoryFollowsGrid) {
    const ScheduleConfig sched;
    const auto res = sample_euler(gaussian_oracle(0.5), scalar_state(1.0), 6, sched, true);
    ASSERT_EQ(res.trajectory.size(), 7u);
    EXPECT_EQ(res.trajectory.sigmas, karras_step_grid(6, sched));
    EXPECT_EQ(res.trajectory.states.front(), scalar_state(1.0));
    EXPECT_EQ(res.trajectory.states.back(), res.x);
    EXPECT_TRUE(sample_euler(gaussian_oracle(0.5), scalar_state(1.0), 6, sched).trajectory.states.empty());
    const auto heun = sample_heun(gaussian_oracle(0.5), scalar_state(1.0), 6, sched, true);
    EXPECT_EQ(heun.trajectory.sigmas, karras_step_grid(6, sched));
}

TEST(Sampler, InitStateMaskedAroundPrior) {
    const ScheduleConfig sched;
    const FrameMask mask({4, 2}, 4);
    Tensor mu({2, 1, 3, 4}, 0.25);
    apply_mask_inplace(mu, mask);
    Rng a(8), b(8);
    const Tensor x = init_state(mu, mask, a, sched);
    const Tensor eps = masked_gaussian(mu.shape(), mask, b);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], mu[i] + sched.sigma_max * eps[i]);
    EXPECT_EQ(x.at(1, 0, 2, 3), 0.0);
}

TEST(ConsistencyDeviation, OdeEndpointMapIsNearlyConsistent) {
    // For N(0, s^2) data the ODE carries x(sigma) along x / sqrt(s^2 + sigma^2) = const, so
    // f(x, sigma) = x s / sqrt(s^2 + sigma^2) is the exact consistency function. The posterior
    // mean is not, and is penalized.
    const ScheduleConfig sched;
    const FrameMask mask({1}, 1);
    const auto d = gaussian_oracle(0.5);
    const auto traj = sample_heun(d, scalar_state(1.0), 64, sched, true).trajectory;
    const DenoiseFn f = [](const Tensor& x, double sigma) {
        Tensor out = x;
        for (double& v : out.data()) v *= 0.5 / std::sqrt(0.25 + sigma * sigma);
        return out;
    };
    const double consistent = consistency_deviation(f, traj, mask);
    EXPECT_LT(consistent, 1e-4 * consistency_deviation(d, traj, mask));
    // What remains is Heun's state error, squared, so doubling n cuts it by about 16.
    const auto fine = sample_heun(d, scalar_state(1.0), 128, sched, true).trajectory;
    EXPECT_LT(consistency_deviation(f, fine, mask), consistent / 8.0);
}

TEST(ConsistencyDeviation, DegenerateTrajectories) {
    const FrameMask mask({1}, 1);
    const auto f = gaussian_oracle(0.5);
    Trajectory single{{2.0, 0.0}, {scalar_state(1.0), scalar_state(0.2)}};
    EXPECT_EQ(consistency_deviation(f, single, mask), 0.0);
    Trajectory none{{0.0}, {scalar_state(1.0)}};
    EXPECT_THROW(consistency_deviation(f, none, mask), ArgumentError);
}

TEST(SampleDump, MatchesGoldenFiles) {
    const auto c = golden::dump_case();
    const auto dir = std::filesystem::temp_directory_path() / "ectlab_test_dump";
    std::filesystem::create_directories(dir);
    write_sample_dump(dir / "s", c.x, c.item, c.mask);
    const std::filesystem::path golden = ECTLAB_GOLDEN_DIR;
    if (std::getenv("ECTLAB_REGEN_GOLDEN")) {
        for (const char* ext : {".pgm", ".range.txt", ".f32"}) {
            std::filesystem::copy_file(dir / (std::string("s") + ext), golden / (std::string("sample") + ext),
                                       std::filesystem::copy_options::overwrite_existing);
        }
    }
    for (const char* ext : {".pgm", ".range.txt", ".f32"}) {
        EXPECT_EQ(slurp(dir / (std::string("s") + ext)), slurp(golden / (std::string("sample") + ext))) << ext;
    }
    const std::string pgm = slurp(dir / "s.pgm");
    EXPECT_EQ(pgm.substr(0, 15), std::string("P5\n3 3\n65535\n\x24\x92"));  // 0.5 / 3.5 * 65535 -> 9362
    EXPECT_EQ(slurp(dir / "s.range.txt"), "min -1.500000000e+00\nmax 2.000000000e+00\n");
    EXPECT_EQ(slurp(dir / "s.f32").size(), 9u * 4u);
    std::filesystem::remove_all(dir);
}
