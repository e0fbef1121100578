#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ectlab/error.hpp"
#include "ectlab/metrics.hpp"
#include "ectlab/ops.hpp"
#include "ectlab/synth_data.hpp"
#include "golden_cases.hpp"
#include "test_util.hpp"

using namespace ectlab;

namespace {

Tensor map_with(std::size_t bins, std::size_t len, double fill = 0.0) { return Tensor({1, 1, bins, len}, fill); }

std::vector<Point2> square_cloud(double scale, double dx, double dy) {
    std::vector<Point2> pts;
    for (int k = 0; k < 8; ++k)
        for (double sx : {-1.0, 1.0})
            for (double sy : {-1.0, 1.0}) pts.push_back({dx + scale * sx, dy + scale * sy});
    return pts;
}

RunConfig tiny_gmm_run() {
    RunConfig cfg;
    cfg.data.mode = DataMode::Gmm2D;
    cfg.data.batch_size = 16;
    cfg.arch = ArchConfig::tiny();
    cfg.trainer.pretrain_steps = 3;
    cfg.trainer.tune_steps = 3;
    cfg.schedule.total_tune_steps = 3;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST(Sharpness, ImpulseOracle) {
    const std::size_t F = 7, N = 9;
    Tensor x = map_with(F, N);
    x.at(0, 0, 3, 4) = 2.5;
    const FrameMask mask({N}, N);
    // Centre contributes 4h and each of its four interior neighbours h.
    EXPECT_DOUBLE_EQ(sharpness_item(x, mask, 0), 8.0 * 2.5 / ((F - 2) * (N - 2)));
    EXPECT_DOUBLE_EQ(sharpness(x, mask), sharpness_item(x, mask, 0));
}

TEST(Sharpness, ConstantAndLinearMapsAreZero) {
    const FrameMask mask({6}, 6);
    EXPECT_EQ(sharpness_item(map_with(5, 6, 3.0), mask, 0), 0.0);
    Tensor ramp = map_with(5, 6);
    for (std::size_t f = 0; f < 5; ++f)
        for (std::size_t j = 0; j < 6; ++j) ramp.at(0, 0, f, j) = 0.5 * f - 0.25 * j;
    EXPECT_NEAR(sharpness_item(ramp, mask, 0), 0.0, 1e-15);
}

TEST(Sharpness, SignAndScaleBehaviour) {
    const FrameMask mask({10}, 10);
    Tensor x = ectlab::testing::random_tensor({1, 1, 6, 10}, 3);
    Tensor neg = x, twice = x;
    for (double& v : neg.data()) v = -v;
    for (double& v : twice.data()) v *= 2.0;
    const double s = sharpness_item(x, mask, 0);
    EXPECT_DOUBLE_EQ(sharpness_item(neg, mask, 0), s);
    EXPECT_DOUBLE_EQ(sharpness_item(twice, mask, 0), 2.0 * s);
}

TEST(Sharpness, BlurLowersIt) {
    DataConfig d;
    d.mel_bins = 16;
    d.n_min = 20;
    d.n_max = 30;
    d.batch_size = 4;
    d.prior_noise = 0.0;
    const Batch b = gen_mel_batch(d, 0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(sharpness_item(b.mu, b.mask, i), sharpness_item(b.x0, b.mask, i));
}

TEST(Sharpness, PaddingIgnoredAndDomainChecked) {
    Tensor x = ectlab::testing::random_tensor({2, 1, 5, 8}, 4);
    const FrameMask mask({8, 5}, 8);
    const double s1 = sharpness_item(x, mask, 1);
    for (std::size_t f = 0; f < 5; ++f)
        for (std::size_t j = 5; j < 8; ++j) x.at(1, 0, f, j) = 1e6;
    EXPECT_EQ(sharpness_item(x, mask, 1), s1);
    EXPECT_THROW(sharpness_item(x, FrameMask({8, 2}, 8), 1), DomainError);
    EXPECT_THROW(sharpness_item(Tensor({1, 1, 2, 8}), FrameMask({8}, 8), 0), DomainError);
}

TEST(W2, ClosedFormValues) {
    const std::array<double, 4> eye = {1, 0, 0, 1}, four = {4, 0, 0, 4};
    EXPECT_NEAR(gaussian_w2_closed_form({0, 0}, eye, {3, 4}, eye), 5.0, 1e-12);
    EXPECT_NEAR(gaussian_w2_closed_form({0, 0}, eye, {0, 0}, four), std::sqrt(2.0), 1e-12);
    const std::array<double, 4> a = {2.0, 0.3, 0.3, 0.5}, b = {0.7, -0.2, -0.2, 1.1};
    EXPECT_NEAR(gaussian_w2_closed_form({0.1, 0}, a, {0, 1}, b), gaussian_w2_closed_form({0, 1}, b, {0.1, 0}, a), 1e-12);
    EXPECT_NEAR(gaussian_w2_closed_form({1, 2}, a, {1, 2}, a), 0.0, 1e-7);
}

TEST(W2, SqrtmSquaresBack) {
    const std::array<double, 4> m = {2.0, 0.6, 0.6, 1.0};
    const auto s = sqrtm_2x2(m);
    EXPECT_NEAR(s[0] * s[0] + s[1] * s[2], m[0], 1e-14);
    EXPECT_NEAR(s[0] * s[1] + s[1] * s[3], m[1], 1e-14);
    EXPECT_NEAR(s[2] * s[1] + s[3] * s[3], m[3], 1e-14);
}

TEST(W2, FromSamples) {
    const auto base = square_cloud(1.0, 0.0, 0.0);
    const auto r = gaussian_w2(base, square_cloud(1.0, 3.0, 4.0));
    EXPECT_NEAR(r.value, 5.0, 1e-9);
    EXPECT_FALSE(r.regularized);
    EXPECT_NEAR(gaussian_w2(base, square_cloud(2.0, 0.0, 0.0)).value, std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(gaussian_w2(square_cloud(1.0, 3.0, 4.0), base).value, 5.0, 1e-9);
    EXPECT_THROW(gaussian_w2(std::vector<Point2>(31, Point2{0, 0}), base), ArgumentError);
}

TEST(W2, DegenerateCovarianceIsRegularized) {
    std::vector<Point2> line;
    for (int i = 0; i < 40; ++i) line.push_back({0.1 * i, 0.2 * i});
    const auto r = gaussian_w2(line, square_cloud(1.0, 0.0, 0.0));
    EXPECT_TRUE(r.regularized);
    EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Median, OddEvenAndEmpty) {
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
    EXPECT_THROW(median({}), ArgumentError);
}

TEST(Gradcheck, QuadraticIsExact) {
    ModelParams params;
    params.add("a", ectlab::testing::random_tensor({5}, 1));
    params.add("b", ectlab::testing::random_tensor({3, 2}, 2));
    const LossFn loss = [](const BoundParams& p) {
        return ops::add(ops::sum(ops::mul(p.at(0), p.at(0))), ops::sum(ops::mul(p.at(1), p.at(1))));
    };
    GradcheckOptions opts;
    opts.min_coords = 8;
    const auto rep = gradcheck(params, loss, opts);
    EXPECT_TRUE(rep.passed());
    EXPECT_LT(rep.max_rel_err, 1e-8);
    ASSERT_EQ(rep.tensors.size(), 2u);
    EXPECT_EQ(rep.tensors[0].coords, 4u);
    EXPECT_EQ(rep.tensors[1].coords, 4u);
    opts.sabotage = 1.01;
    EXPECT_FALSE(gradcheck(params, loss, opts).passed());
}

TEST(Gradcheck, QuotaCoversSmallTensorsFully) {
    ModelParams params;
    params.add("small", ectlab::testing::random_tensor({2}, 3));
    params.add("big", ectlab::testing::random_tensor({50}, 4));
    const LossFn loss = [](const BoundParams& p) { return ops::add(ops::sum(p.at(0)), ops::sum(ops::mul(p.at(1), p.at(1)))); };
    GradcheckOptions opts;
    opts.min_coords = 30;
    const auto rep = gradcheck(params, loss, opts);
    EXPECT_EQ(rep.tensors[0].coords, 2u);
    EXPECT_EQ(rep.tensors[1].coords, 28u);
    EXPECT_EQ(rep.coords, 30u);
}

TEST(Evaluate, DeterministicWithExactNfeAndGmmFields) {
    const RunConfig cfg = tiny_gmm_run();
    auto state = init_pretrain(cfg.arch, cfg.schedule, cfg.trainer, cfg.seed);
    EvalRequest req;
    req.method = SamplerMethod::Heun;
    req.n_steps = 3;
    req.n_samples = 40;
    req.consistency_trajectories = 5;
    req.consistency_steps = 4;
    const auto a = evaluate(state, cfg, req), b = evaluate(state, cfg, req);
    EXPECT_EQ(a.nfe, 5);
    EXPECT_EQ(a.masked_mse, b.masked_mse);
    ASSERT_TRUE(a.w2 && b.w2);
    EXPECT_EQ(*a.w2, *b.w2);
    ASSERT_TRUE(a.consistency_dev);
    EXPECT_EQ(*a.consistency_dev, *b.consistency_dev);
    EXPECT_FALSE(a.sharpness_mean);
    EXPECT_EQ(a.mode, "gmm2d");
    EXPECT_FALSE(a.used_ema);
    req.method = SamplerMethod::OneStep;
    req.consistency_trajectories = 0;
    const auto c = evaluate(state, cfg, req);
    EXPECT_EQ(c.nfe, 1);
    EXPECT_EQ(c.n_steps, 1);
    EXPECT_FALSE(c.consistency_dev);
}

TEST(Evaluate, MelReportsSharpness) {
    RunConfig cfg;
    cfg.data.mel_bins = 8;
    cfg.data.n_min = 8;
    cfg.data.n_max = 10;
    cfg.data.batch_size = 4;
    cfg.arch = ArchConfig::tiny();
    cfg.schedule.total_tune_steps = 1;
    const auto state = init_pretrain(cfg.arch, cfg.schedule, cfg.trainer, 1);
    EvalRequest req;
    req.n_samples = 6;
    const auto r = evaluate(state, cfg, req);
    EXPECT_EQ(r.sharpness_per_item.size(), 6u);
    ASSERT_TRUE(r.sharpness_median);
    EXPECT_EQ(*r.sharpness_median, median(r.sharpness_per_item));
    EXPECT_FALSE(r.w2);
}

TEST(EvalCsv, MatchesGoldenLayout) {
    const std::string text = golden::eval_csv_text();
    const std::filesystem::path file = std::filesystem::path(ECTLAB_GOLDEN_DIR) / "eval.csv";
    if (std::getenv("ECTLAB_REGEN_GOLDEN")) std::ofstream(file, std::ios::binary) << text;
    EXPECT_EQ(text, golden::slurp(file));
    EXPECT_EQ(eval_csv_row(golden::eval_case()),
              "0123456789abcdef,tune,1000,gmm2d,heun,4,7,1,64,1.250000000e-01,,,6.250000000e-02,0,"
              "1.000000000e-03,2.500");
}
