#include <cmath>

#include <gtest/gtest.h>

#include "ectlab/error.hpp"
#include "ectlab/losses.hpp"
#include "ectlab/ops.hpp"
#include "ectlab/synth_data.hpp"
#include "test_util.hpp"

using namespace ectlab;
using ectlab::testing::pad_frames;

namespace {

struct LossCase {
    ArchConfig arch = ArchConfig::tiny();
    ScheduleConfig sched;
    ModelParams params;
    Batch batch;
    Tensor eps;

    explicit LossCase(std::uint64_t seed = 11) {
        Rng rng(seed);
        params = init_params(arch, rng);
        DataConfig data;
        data.mel_bins = 8;
        data.n_min = 8;
        data.n_max = 14;
        data.batch_size = 4;
        data.seed = seed;
        batch = gen_mel_batch(data, 0);
        eps = masked_gaussian(batch.x0.shape(), batch.mask, rng);
    }
    LossInputs inputs() const { return {batch.x0, batch.mu, batch.mask, eps}; }
};

double edm_value(const ModelParams& params, const LossInputs& in, const std::vector<double>& s, const LossCase& st,
                 LossOptions opts = {}) {
    Tape tape;
    BoundParams bound(tape, params, false);
    return edm_loss(bound, in, s, st.arch, st.sched, opts).value()[0];
}

double ect_value(const ModelParams& params, const LossInputs& in, const std::vector<double>& t,
                 const std::vector<double>& r, const LossCase& st, LossOptions opts = {}) {
    Tape tape;
    BoundParams bound(tape, params, false);
    return ect_loss(bound, in, t, r, st.arch, st.sched, opts).loss.value()[0];
}

}  // namespace

TEST(MaskedMeanSq, ValueAndCount) {
    const Tensor a({1, 1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    const Tensor b({1, 1, 2, 3}, 0.0);
    const FrameMask mask({2}, 3);
    const auto v = masked_mean_sq(a, b, mask);
    EXPECT_EQ(v.valid_frame_count, 2u);
    EXPECT_DOUBLE_EQ(v.value, (1.0 + 4.0 + 16.0 + 25.0) / 4.0);
    // Without masked normalization every cell counts, padding included.
    EXPECT_DOUBLE_EQ(masked_mean_sq(a, b, mask, false).value, 91.0 / 6.0);
}

TEST(EctLoss, ZeroRDegeneratesToEdmLoss) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const LossCase st(seed);
        Rng rng(seed + 100);
        std::vector<double> s(4), zero(4, 0.0);
        for (double& v : s) v = sample_training_sigma(rng, st.sched);
        const double edm = edm_value(st.params, st.inputs(), s, st);
        const double ect = ect_value(st.params, st.inputs(), s, zero, st);
        EXPECT_LE(std::abs(edm - ect), 1e-12 * std::abs(edm));
    }
}

TEST(EctLoss, ZeroRGradientsMatchEdm) {
    const LossCase st;
    const std::vector<double> s = {0.2, 0.9, 3.0, 12.0}, zero(4, 0.0);
    Tape t1, t2;
    BoundParams b1(t1, st.params, true), b2(t2, st.params, true);
    t1.backward(edm_loss(b1, st.inputs(), s, st.arch, st.sched));
    t2.backward(ect_loss(b2, st.inputs(), s, zero, st.arch, st.sched).loss);
    for (std::size_t i = 0; i < st.params.size(); ++i) EXPECT_EQ(t1.grad(b1.at(i)), t2.grad(b2.at(i))) << st.params.name(i);
}

TEST(EctLoss, NoTargetBranchWhenAllRZero) {
    const LossCase st;
    Tape tape;
    BoundParams bound(tape, st.params, false);
    const std::vector<double> t = {1, 1, 1, 1}, r(4, 0.0), rp = {0.0, 0.5, 0.5, 0.5};
    EXPECT_FALSE(ect_loss(bound, st.inputs(), t, r, st.arch, st.sched).target_branch.has_value());
    EXPECT_TRUE(ect_loss(bound, st.inputs(), t, rp, st.arch, st.sched).target_branch.has_value());
}

TEST(EctLoss, RejectsInvalidPairs) {
    const LossCase st;
    Tape tape;
    BoundParams bound(tape, st.params, false);
    const std::vector<double> t = {1, 1, 1, 1};
    for (const std::vector<double>& r : {std::vector<double>{1, 0, 0, 0}, std::vector<double>{2, 0, 0, 0},
                                        std::vector<double>{-0.1, 0, 0, 0}}) {
        EXPECT_THROW(ect_loss(bound, st.inputs(), t, r, st.arch, st.sched), ArgumentError);
    }
    EXPECT_THROW(ect_loss(bound, st.inputs(), t, std::vector<double>{0, 0, 0}, st.arch, st.sched), ShapeError);
}

TEST(EctLoss, StopGradientLeavesTargetBranchWithoutAdjoint) {
    const LossCase st;
    Tape tape;
    BoundParams bound(tape, st.params, true);
    const std::vector<double> t = {0.5, 1.0, 2.0, 4.0}, r = {0.0, 0.5, 1.0, 2.0};
    const auto ect = ect_loss(bound, st.inputs(), t, r, st.arch, st.sched);
    tape.backward(ect.loss);
    ASSERT_TRUE(ect.target_branch.has_value());
    EXPECT_EQ(tape.grad(*ect.target_branch).max_abs(), 0.0);
}

TEST(EctLoss, GradientEqualsFrozenTargetLoss) {
    // With the target held constant the consistency loss is an ordinary regression loss, so
    // its tape gradient must equal the ECT gradient exactly.
    const LossCase st;
    const std::vector<double> t = {0.5, 1.0, 2.0, 4.0}, r = {0.0, 0.5, 1.0, 2.0};
    Tape t1;
    BoundParams b1(t1, st.params, true);
    const auto ect = ect_loss(b1, st.inputs(), t, r, st.arch, st.sched);
    t1.backward(ect.loss);

    Tensor frozen = denoise_eval(
        [&] {
            Tensor x = st.batch.x0;
            const std::size_t per = x.size() / 4;
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t i = 0; i < per; ++i) x[b * per + i] += r[b] * st.eps[b * per + i];
            return x;
        }(),
        std::vector<double>{0.5, 0.5, 1.0, 2.0}, st.batch.mu, st.batch.mask, st.params, st.arch, st.sched);
    const std::size_t per = frozen.size() / 4;
    std::copy_n(st.batch.x0.ptr(), per, frozen.ptr());

    Tape t2;
    BoundParams b2(t2, st.params, true);
    Tensor xt = st.batch.x0;
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < per; ++i) xt[b * per + i] += t[b] * st.eps[b * per + i];
    Var pred = denoise(xt, t, st.batch.mu, st.batch.mask, b2, st.arch, st.sched);
    Var loss = ops::masked_mean_sq(pred, t2.constant(frozen), st.batch.mask, true);
    t2.backward(loss);
    EXPECT_EQ(loss.value()[0], ect.loss.value()[0]);
    for (std::size_t i = 0; i < st.params.size(); ++i) EXPECT_EQ(t1.grad(b1.at(i)), t2.grad(b2.at(i))) << st.params.name(i);
}

TEST(Losses, PaddingInvarianceUnderMaskedNorm) {
    const LossCase st;
    const std::vector<double> s = {0.1, 0.7, 2.0, 9.0}, r = {0.0, 0.3, 1.0, 4.0};
    const double edm = edm_value(st.params, st.inputs(), s, st);
    const double ect = ect_value(st.params, st.inputs(), s, r, st);
    const double edm_raw = edm_value(st.params, st.inputs(), s, st, {.masked_norm = false});
    for (std::size_t extra : {1u, 5u, 16u, 32u}) {
        const Tensor x0 = pad_frames(st.batch.x0, extra), mu = pad_frames(st.batch.mu, extra),
                     eps = pad_frames(st.eps, extra);
        const FrameMask mask = st.batch.mask.with_frames(x0.dim(3));
        const LossInputs in{x0, mu, mask, eps};
        EXPECT_EQ(edm_value(st.params, in, s, st), edm) << extra;
        EXPECT_EQ(ect_value(st.params, in, s, r, st), ect) << extra;
        EXPECT_NE(edm_value(st.params, in, s, st, {.masked_norm = false}), edm_raw) << extra;
    }
}

TEST(Losses, EdmWeightingScalesEachItem) {
    const LossCase st;
    const std::vector<double> s = {2.0, 2.0, 2.0, 2.0};
    const double plain = edm_value(st.params, st.inputs(), s, st);
    const double weighted = edm_value(st.params, st.inputs(), s, st, {.edm_weighting = true});
    const double w = 1.0 / (c_out(2.0, st.sched) * c_out(2.0, st.sched));
    EXPECT_NEAR(weighted, w * plain, 1e-12 * weighted);
}

TEST(Losses, PerfectDenoiserHasZeroLoss) {
    // Zero parameters give F = 0, so D(0, sigma) = 0 = x0 at every noise level.
    const LossCase st;
    const Tensor zero(st.batch.x0.shape());
    ModelParams params = st.params;
    for (Tensor& p : params) p.fill(0.0);
    const LossInputs in{zero, zero, st.batch.mask, zero};
    EXPECT_EQ(edm_value(params, in, {1, 2, 3, 4}, st), 0.0);
    EXPECT_EQ(ect_value(params, in, {1, 2, 3, 4}, {0.5, 1, 1.5, 2}, st), 0.0);
}

TEST(MaskedGaussian, DrawOrderAndPadding) {
    const FrameMask mask({3, 2}, 3);
    Rng a(9), b(9);
    const Tensor eps = masked_gaussian({2, 1, 2, 3}, mask, a);
    // Item 0: frame 0 bins 0..1, frame 1, frame 2; then item 1.
    EXPECT_EQ(eps.at(0, 0, 0, 0), b.normal());
    EXPECT_EQ(eps.at(0, 0, 1, 0), b.normal());
    EXPECT_EQ(eps.at(0, 0, 0, 1), b.normal());
    EXPECT_EQ(eps.at(0, 0, 1, 1), b.normal());
    EXPECT_EQ(eps.at(0, 0, 0, 2), b.normal());
    EXPECT_EQ(eps.at(0, 0, 1, 2), b.normal());
    EXPECT_EQ(eps.at(1, 0, 0, 0), b.normal());
    EXPECT_EQ(eps.at(1, 0, 1, 0), b.normal());
    EXPECT_EQ(eps.at(1, 0, 0, 1), b.normal());
    EXPECT_EQ(eps.at(1, 0, 1, 1), b.normal());
    EXPECT_EQ(eps.at(1, 0, 0, 2), 0.0);
    EXPECT_EQ(eps.at(1, 0, 1, 2), 0.0);
    EXPECT_EQ(a, b);
}

TEST(TuningPair, StepZeroReproducesPretrainDraws) {
    ScheduleConfig sched;
    sched.total_tune_steps = 100;
    const FrameMask mask({4, 3}, 4);
    Rng a(21), b(21);
    const auto pair = make_tuning_pair(a, 0, sched, {2, 1, 2, 4}, mask);
    std::vector<double> s = {sample_training_sigma(b, sched), sample_training_sigma(b, sched)};
    const Tensor eps = masked_gaussian({2, 1, 2, 4}, mask, b);
    EXPECT_EQ(pair.t, s);
    EXPECT_EQ(pair.r, std::vector<double>(2, 0.0));
    EXPECT_EQ(pair.eps, eps);
    Rng c(21);
    const auto later = make_tuning_pair(c, 60, sched, {2, 1, 2, 4}, mask);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_LT(later.r[i], later.t[i]);
        EXPECT_GT(later.r[i], 0.0);
    }
}
