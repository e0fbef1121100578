#include "ectlab/losses.hpp"

#include <cmath>

#include "ectlab/error.hpp"
#include "ectlab/ops.hpp"

namespace ectlab {

namespace {

// x0 + sigma_b * eps per item.
Tensor noised(const Tensor& x0, const Tensor& eps, std::span<const double> sigmas) {
    require_same_shape(x0, eps, "noise");
    if (sigmas.size() != x0.dim(0)) throw ShapeError("one noise level per item required");
    Tensor out = x0;
    const std::size_t per = x0.size() / x0.dim(0);
    for (std::size_t b = 0; b < sigmas.size(); ++b) {
        for (std::size_t i = 0; i < per; ++i) out[b * per + i] += sigmas[b] * eps[b * per + i];
    }
    return out;
}

void check_inputs(const LossInputs& in) {
    require_rank(in.x0, 4, "loss x0");
    require_same_shape(in.x0, in.mu, "loss x0 vs mu");
    require_same_shape(in.x0, in.eps, "loss x0 vs eps");
}

}  // namespace

LossValue masked_mean_sq(const Tensor& a, const Tensor& b, const FrameMask& mask, bool normalize_by_valid) {
    Tape tape;
    Var loss = ops::masked_mean_sq(tape.constant(a), tape.constant(b), mask, normalize_by_valid);
    return {loss.value()[0], mask.valid_frames()};
}

Var edm_loss(const BoundParams& params, const LossInputs& in, std::span<const double> sigmas,
             const ArchConfig& arch, const ScheduleConfig& sched, const LossOptions& opts) {
    check_inputs(in);
    Tape& tape = params.tape();
    const Tensor x_t = noised(in.x0, in.eps, sigmas);
    Var pred = denoise(x_t, sigmas, in.mu, in.mask, params, arch, sched);
    Var target = tape.constant(in.x0);
    if (opts.edm_weighting) {
        std::vector<double> root(sigmas.size());
        for (std::size_t b = 0; b < sigmas.size(); ++b) root[b] = 1.0 / c_out(sigmas[b], sched);
        pred = ops::scale_items(pred, root);
        target = ops::scale_items(target, root);
    }
    return ops::masked_mean_sq(pred, target, in.mask, opts.masked_norm);
}

EctLoss ect_loss(const BoundParams& params, const LossInputs& in, std::span<const double> t,
                 std::span<const double> r, const ArchConfig& arch, const ScheduleConfig& sched,
                 const LossOptions& opts) {
    check_inputs(in);
    if (t.size() != r.size() || t.size() != in.x0.dim(0)) throw ShapeError("ect_loss: one (t, r) pair per item required");
    bool any_positive = false;
    for (std::size_t b = 0; b < t.size(); ++b) {
        if (!(r[b] >= 0.0) || !(r[b] < t[b])) {
            throw ArgumentError("ect_loss: need 0 <= r < t, got r=" + std::to_string(r[b]) + " t=" + std::to_string(t[b]));
        }
        any_positive = any_positive || r[b] > 0.0;
    }
    Tape& tape = params.tape();
    EctLoss result;
    Var target;
    if (!any_positive) {
        target = tape.constant(in.x0);
    } else {
        // Items with r = 0 are evaluated at t only to keep the batch intact; their target is
        // replaced by x0 below.
        std::vector<double> r_eval(r.begin(), r.end());
        for (std::size_t b = 0; b < r_eval.size(); ++b) {
            if (r_eval[b] == 0.0) r_eval[b] = t[b];
        }
        Var branch = denoise(noised(in.x0, in.eps, r), r_eval, in.mu, in.mask, params, arch, sched);
        result.target_branch = branch;
        Tensor frozen = branch.value();
        const std::size_t per = frozen.size() / frozen.dim(0);
        for (std::size_t b = 0; b < r.size(); ++b) {
            if (r[b] == 0.0) std::copy_n(in.x0.ptr() + b * per, per, frozen.ptr() + b * per);
        }
        target = tape.constant(std::move(frozen));  // stop-gradient
    }
    Var pred = denoise(noised(in.x0, in.eps, t), t, in.mu, in.mask, params, arch, sched);
    result.loss = ops::masked_mean_sq(pred, target, in.mask, opts.masked_norm);
    return result;
}

Tensor masked_gaussian(const Shape& shape, const FrameMask& mask, Rng& rng) {
    Tensor out(shape);
    require_rank(out, 4, "masked_gaussian");
    if (shape[0] != mask.batch() || shape[3] != mask.frames()) throw ShapeError("masked_gaussian: mask mismatch");
    const std::size_t ch = shape[1], bins = shape[2], frames = shape[3];
    for (std::size_t b = 0; b < shape[0]; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t j = 0; j < mask.length(b); ++j) {
                for (std::size_t f = 0; f < bins; ++f) out[((b * ch + c) * bins + f) * frames + j] = rng.normal();
            }
        }
    }
    return out;
}

TuningPair make_tuning_pair(Rng& rng, std::int64_t tune_step, const ScheduleConfig& sched, const Shape& shape,
                            const FrameMask& mask) {
    TuningPair pair;
    const std::size_t batch = shape.at(0);
    pair.t.resize(batch);
    pair.r.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        pair.t[b] = sample_training_sigma(rng, sched);
        pair.r[b] = anneal_r(pair.t[b], tune_step, sched);
    }
    pair.eps = masked_gaussian(shape, mask, rng);
    return pair;
}

}  // namespace ectlab
