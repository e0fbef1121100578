#include "ectlab/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ectlab/error.hpp"
#include "ectlab/ops.hpp"
#include "ectlab/sampler.hpp"
#include "ectlab/synth_data.hpp"

namespace ectlab {

double sharpness_item(const Tensor& x, const FrameMask& mask, std::size_t item) {
    require_rank(x, 4, "sharpness");
    const std::size_t bins = x.dim(2), len = mask.length(item);
    if (bins < 3 || len < 3) throw DomainError("sharpness: need at least 3 bins and 3 valid frames");
    double total = 0.0;
    for (std::size_t f = 1; f + 1 < bins; ++f) {
        for (std::size_t j = 1; j + 1 < len; ++j) {
            const double lap = x.at(item, 0, f + 1, j) + x.at(item, 0, f - 1, j) + x.at(item, 0, f, j + 1) +
                               x.at(item, 0, f, j - 1) - 4.0 * x.at(item, 0, f, j);
            total += std::abs(lap);
        }
    }
    return total / static_cast<double>((bins - 2) * (len - 2));
}

std::vector<double> sharpness_items(const Tensor& x, const FrameMask& mask) {
    std::vector<double> out;
    for (std::size_t b = 0; b < mask.batch(); ++b) out.push_back(sharpness_item(x, mask, b));
    return out;
}

double sharpness(const Tensor& x, const FrameMask& mask) {
    double total = 0.0;
    std::size_t cells = 0;
    for (std::size_t b = 0; b < mask.batch(); ++b) {
        const std::size_t n = (x.dim(2) - 2) * (mask.length(b) >= 2 ? mask.length(b) - 2 : 0);
        total += sharpness_item(x, mask, b) * static_cast<double>(n);
        cells += n;
    }
    return total / static_cast<double>(cells);
}

std::array<double, 4> sqrtm_2x2(const std::array<double, 4>& m) {
    const double det = std::max(0.0, m[0] * m[3] - m[1] * m[2]);
    const double s = std::sqrt(det);
    const double t = std::sqrt(std::max(0.0, m[0] + m[3] + 2.0 * s));
    if (t == 0.0) return {0.0, 0.0, 0.0, 0.0};
    return {(m[0] + s) / t, m[1] / t, m[2] / t, (m[3] + s) / t};
}

namespace {

using Mat2 = std::array<double, 4>;

Mat2 matmul(const Mat2& a, const Mat2& b) {
    return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3]};
}

struct Fit {
    Point2 mean{};
    Mat2 cov{};
};

Fit fit_gaussian(std::span<const Point2> pts) {
    Fit fit;
    const double n = static_cast<double>(pts.size());
    for (const auto& p : pts) {
        fit.mean[0] += p[0];
        fit.mean[1] += p[1];
    }
    fit.mean[0] /= n;
    fit.mean[1] /= n;
    for (const auto& p : pts) {
        const double dx = p[0] - fit.mean[0], dy = p[1] - fit.mean[1];
        fit.cov[0] += dx * dx;
        fit.cov[1] += dx * dy;
        fit.cov[3] += dy * dy;
    }
    fit.cov[0] /= n;
    fit.cov[1] /= n;
    fit.cov[3] /= n;
    fit.cov[2] = fit.cov[1];
    return fit;
}

bool regularize(Mat2& c) {
    const double tr = c[0] + c[3];
    const double det = c[0] * c[3] - c[1] * c[2];
    if (det > 1e-12 * tr * tr && tr > 0.0) return false;
    c[0] += 1e-9;
    c[3] += 1e-9;
    return true;
}

}  // namespace

double gaussian_w2_closed_form(const Point2& m1, const Mat2& c1, const Point2& m2, const Mat2& c2) {
    const Mat2 s2 = sqrtm_2x2(c2);
    const Mat2 cross = sqrtm_2x2(matmul(matmul(s2, c1), s2));
    const double dm = (m1[0] - m2[0]) * (m1[0] - m2[0]) + (m1[1] - m2[1]) * (m1[1] - m2[1]);
    const double tr = c1[0] + c1[3] + c2[0] + c2[3] - 2.0 * (cross[0] + cross[3]);
    return std::sqrt(std::max(0.0, dm + tr));
}

W2Result gaussian_w2(std::span<const Point2> a, std::span<const Point2> b) {
    if (a.size() < 32 || b.size() < 32) throw ArgumentError("gaussian_w2: need at least 32 samples per side");
    Fit fa = fit_gaussian(a), fb = fit_gaussian(b);
    W2Result res;
    res.regularized = regularize(fa.cov);
    res.regularized = regularize(fb.cov) || res.regularized;
    res.value = gaussian_w2_closed_form(fa.mean, fa.cov, fb.mean, fb.cov);
    return res;
}

GradcheckReport gradcheck(const ModelParams& params, const LossFn& loss, const GradcheckOptions& opts) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        BoundParams bound(tape, params, true);
        Var l = loss(bound);
        tape.backward(l);
        for (std::size_t i = 0; i < bound.size(); ++i) analytic.push_back(tape.grad(bound.at(i)));
    }
    auto value_at = [&](const ModelParams& p) {
        Tape tape;
        BoundParams bound(tape, p, false);
        return loss(bound).value()[0];
    };

    GradcheckReport report;
    report.tolerance = opts.tolerance;
    Rng rng(opts.seed);
    ModelParams work = params;
    // Smallest per-tensor quota reaching min_coords in total.
    std::size_t per_tensor = 4, total = 0;
    for (;; ++per_tensor) {
        total = 0;
        std::size_t largest = 0;
        for (const auto& t : params) {
            total += std::min(t.size(), per_tensor);
            largest = std::max(largest, t.size());
        }
        if (total >= opts.min_coords || per_tensor >= largest) break;
    }
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        TensorCheck check;
        check.name = params.name(ti);
        const std::size_t n = params[ti].size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const std::size_t take = std::min(n, per_tensor);
        for (std::size_t k = 0; k < take; ++k) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(k),
                                                                    static_cast<std::int64_t>(n - 1)));
            std::swap(idx[k], idx[j]);
        }
        for (std::size_t k = 0; k < take; ++k) {
            const std::size_t c = idx[k];
            const double orig = work[ti][c];
            work[ti][c] = orig + opts.epsilon;
            const double up = value_at(work);
            work[ti][c] = orig - opts.epsilon;
            const double down = value_at(work);
            work[ti][c] = orig;
            const double fd = (up - down) / (2.0 * opts.epsilon);
            double a = analytic[ti][c];
            if (ti == 0) a *= opts.sabotage;
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-12});
            check.max_rel_err = std::max(check.max_rel_err, rel);
            check.max_abs_grad = std::max(check.max_abs_grad, std::abs(a));
            ++check.coords;
        }
        report.coords += check.coords;
        report.max_rel_err = std::max(report.max_rel_err, check.max_rel_err);
        report.tensors.push_back(check);
    }
    return report;
}

GradcheckProblem make_gradcheck_problem(const RunConfig& cfg) {
    GradcheckProblem p;
    p.arch = ArchConfig::tiny();
    p.arch.msgate_enabled = cfg.arch.msgate_enabled;
    p.sched = cfg.schedule;
    p.masked_norm = cfg.trainer.masked_norm;
    DataConfig data = cfg.data;
    if (data.mode == DataMode::MelLike) {
        data.mel_bins = 8;
        data.n_min = 8;
        data.n_max = 11;
    }
    data.batch_size = 3;
    p.batch = gen_batch(data, 0);
    Rng rng(mix_seed(cfg.seed, 0x67726164, 0));
    p.params = init_params(p.arch, rng);
    // Check point away from initialization: at init the deep gate kernels see gradients near
    // 1e-8, where central differences are dominated by round-off.
    for (std::size_t i = 0; i < p.params.size(); ++i) {
        const bool bias = p.params.name(i).ends_with(".b");
        for (double& v : p.params[i].data()) v = bias ? 0.3 * rng.normal() : 2.0 * v;
    }
    const std::size_t batch = p.batch.mask.batch();
    for (std::size_t b = 0; b < batch; ++b) {
        p.t.push_back(0.3 + 0.4 * static_cast<double>(b));
        p.r.push_back(b == 0 ? 0.0 : 0.5 * p.t.back());
    }
    p.eps = masked_gaussian(p.batch.x0.shape(), p.batch.mask, rng);
    Tape tape;
    BoundParams bound(tape, p.params, false);
    EctLoss ect = ect_loss(bound, p.inputs(), p.t, p.r, p.arch, p.sched, {p.masked_norm, false});
    p.frozen_target = ect.target_branch ? ect.target_branch->value() : p.batch.x0;
    for (std::size_t b = 0; b < batch; ++b) {
        if (p.r[b] > 0.0) continue;
        for (std::size_t f = 0; f < p.batch.x0.dim(2); ++f) {
            for (std::size_t j = 0; j < p.batch.x0.dim(3); ++j) p.frozen_target.at(b, 0, f, j) = p.batch.x0.at(b, 0, f, j);
        }
    }
    return p;
}

LossFn GradcheckProblem::loss() const {
    return [this](const BoundParams& bp) {
        const LossInputs in = inputs();
        Var edm = edm_loss(bp, in, t, arch, sched, {masked_norm, true});
        Tensor noisy(in.x0.shape());
        const std::size_t per_item = in.x0.size() / t.size();
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = in.x0[i] + t[i / per_item] * in.eps[i];
        Var pred = denoise(noisy, t, in.mu, in.mask, bp, arch, sched);
        Var ect = ops::masked_mean_sq(pred, bp.tape().constant(frozen_target), in.mask, masked_norm);
        return ops::add(edm, ect);
    };
}

StopGradReport stop_gradient_probe(const ModelParams& params, const LossInputs& in, std::span<const double> t,
                                   std::span<const double> r, const ArchConfig& arch, const ScheduleConfig& sched) {
    Tape tape;
    BoundParams bound(tape, params, true);
    EctLoss l = ect_loss(bound, in, t, r, arch, sched);
    if (!l.target_branch) throw ArgumentError("stop_gradient_probe: needs some r > 0");
    tape.backward(l.loss);
    const Tensor g = tape.grad(*l.target_branch);
    StopGradReport rep;
    rep.coords = g.size();
    rep.max_abs_grad = g.max_abs();
    return rep;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ArgumentError("median: empty input");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double hi = values[mid];
    if (values.size() % 2 == 1) return hi;
    const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

namespace {

constexpr std::uint64_t kSampleDomain = 0x73616d70;
constexpr std::uint64_t kTrajectoryDomain = 0x7472616a;

// Item b of a batch as a batch of one, cut to its valid frames.
Tensor slice_item(const Tensor& x, std::size_t b, std::size_t len) {
    const std::size_t ch = x.dim(1), bins = x.dim(2);
    Tensor out({1, ch, bins, len});
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t f = 0; f < bins; ++f) {
            for (std::size_t j = 0; j < len; ++j) out.at(0, c, f, j) = x.at(b, c, f, j);
        }
    }
    return out;
}

SampleResult run_sampler(SamplerMethod method, const DenoiseFn& f, const Tensor& x_init, int n_steps,
                         const ScheduleConfig& sched) {
    switch (method) {
        case SamplerMethod::OneStep: return sample_onestep(f, x_init, sched);
        case SamplerMethod::Euler: return sample_euler(f, x_init, n_steps, sched);
        case SamplerMethod::Heun: return sample_heun(f, x_init, n_steps, sched);
    }
    throw ArgumentError("unknown sampler method");
}

}  // namespace

EvalReport evaluate(const TrainState& state, const RunConfig& cfg, const EvalRequest& req) {
    if (req.n_samples < 1) throw ArgumentError("evaluate: n_samples must be >= 1");
    const bool use_ema = req.use_ema && state.ema.has_value();
    const ModelParams& params = use_ema ? state.ema->shadow : state.params;
    const bool mel = cfg.data.mode == DataMode::MelLike;

    EvalReport rep;
    rep.mode = mel ? "mel_like" : "gmm2d";
    rep.method = to_string(req.method);
    rep.n_steps = req.method == SamplerMethod::OneStep ? 1 : req.n_steps;
    rep.used_ema = use_ema;
    rep.n_samples = req.n_samples;
    rep.checkpoint_phase = to_string(state.phase);
    rep.checkpoint_step = state.step;
    rep.config_fingerprint = config_fingerprint(cfg);

    const auto batch = static_cast<std::size_t>(cfg.data.batch_size);
    const std::size_t n_batches = (static_cast<std::size_t>(req.n_samples) + batch - 1) / batch;
    HeldOutStream stream = held_out_stream(cfg.data, n_batches);
    std::vector<Point2> generated, truth;
    double sq = 0.0;
    std::size_t cells = 0;
    double wall_ms = 0.0;
    std::size_t remaining = static_cast<std::size_t>(req.n_samples);
    for (std::size_t bi = 0; stream.has_next(); ++bi) {
        const Batch bt = stream.next();
        Rng rng(mix_seed(cfg.seed, kSampleDomain, bi));
        const Tensor x_init = init_state(bt.mu, bt.mask, rng, state.sched);
        const DenoiseFn f = model_denoiser(params, state.arch, state.sched, bt.mu, bt.mask);
        const auto t0 = std::chrono::steady_clock::now();
        const SampleResult res = run_sampler(req.method, f, x_init, req.n_steps, state.sched);
        wall_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rep.nfe = res.nfe;
        const std::size_t keep = std::min(remaining, bt.mask.batch());
        remaining -= keep;
        const std::size_t ch = bt.x0.dim(1), bins = bt.x0.dim(2);
        for (std::size_t b = 0; b < keep; ++b) {
            for (std::size_t c = 0; c < ch; ++c) {
                for (std::size_t fb = 0; fb < bins; ++fb) {
                    for (std::size_t j = 0; j < bt.mask.length(b); ++j) {
                        const double d = res.x.at(b, c, fb, j) - bt.x0.at(b, c, fb, j);
                        sq += d * d;
                        ++cells;
                    }
                }
            }
            if (mel) {
                rep.sharpness_per_item.push_back(sharpness_item(res.x, bt.mask, b));
            } else {
                generated.push_back({res.x.at(b, 0, 0, 0), res.x.at(b, 0, 1, 0)});
                truth.push_back({bt.x0.at(b, 0, 0, 0), bt.x0.at(b, 0, 1, 0)});
            }
        }
    }
    rep.masked_mse = sq / static_cast<double>(cells);
    rep.wall_ms_per_sample = wall_ms / static_cast<double>(req.n_samples);
    if (mel) {
        rep.sharpness_mean = std::accumulate(rep.sharpness_per_item.begin(), rep.sharpness_per_item.end(), 0.0) /
                             static_cast<double>(rep.sharpness_per_item.size());
        rep.sharpness_median = median(rep.sharpness_per_item);
    } else if (generated.size() >= 32) {
        const W2Result w2 = gaussian_w2(generated, truth);
        rep.w2 = w2.value;
        rep.w2_regularized = w2.regularized;
    }

    if (req.consistency_trajectories > 0) {
        const std::size_t want = static_cast<std::size_t>(req.consistency_trajectories);
        HeldOutStream traj_stream = held_out_stream(cfg.data, (want + batch - 1) / batch);
        double total = 0.0;
        std::size_t done = 0;
        for (std::size_t bi = 0; traj_stream.has_next() && done < want; ++bi) {
            const Batch bt = traj_stream.next();
            Rng rng(mix_seed(cfg.seed, kTrajectoryDomain, bi));
            const Tensor x_init = init_state(bt.mu, bt.mask, rng, state.sched);
            const DenoiseFn f = model_denoiser(params, state.arch, state.sched, bt.mu, bt.mask);
            const SampleResult res = sample_euler(f, x_init, req.consistency_steps, state.sched, true);
            for (std::size_t b = 0; b < bt.mask.batch() && done < want; ++b, ++done) {
                const std::size_t len = bt.mask.length(b);
                const Tensor mu_b = slice_item(bt.mu, b, len);
                const FrameMask mask_b({len}, len);
                Trajectory tb;
                tb.sigmas = res.trajectory.sigmas;
                for (const auto& s : res.trajectory.states) tb.states.push_back(slice_item(s, b, len));
                const DenoiseFn fb = model_denoiser(params, state.arch, state.sched, mu_b, mask_b);
                total += consistency_deviation(fb, tb, mask_b);
            }
        }
        rep.consistency_dev = total / static_cast<double>(done);
    }
    return rep;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string opt_csv(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9e", *v);
    return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j = {{"config_fingerprint", fingerprint_hex(r.config_fingerprint)},
                        {"checkpoint_phase", r.checkpoint_phase},
                        {"checkpoint_step", r.checkpoint_step},
                        {"mode", r.mode},
                        {"method", r.method},
                        {"n_steps", r.n_steps},
                        {"nfe", r.nfe},
                        {"used_ema", r.used_ema},
                        {"n_samples", r.n_samples},
                        {"masked_mse", r.masked_mse},
                        {"sharpness_mean", opt_json(r.sharpness_mean)},
                        {"sharpness_median", opt_json(r.sharpness_median)},
                        {"w2", opt_json(r.w2)},
                        {"w2_regularized", r.w2_regularized},
                        {"consistency_dev", opt_json(r.consistency_dev)},
                        {"wall_ms_per_sample", r.wall_ms_per_sample}};
    return j.dump(2) + "\n";
}

std::string eval_csv_header() {
    return "config_fingerprint,checkpoint_phase,checkpoint_step,mode,method,n_steps,nfe,used_ema,n_samples,"
           "masked_mse,sharpness_mean,sharpness_median,w2,w2_regularized,consistency_dev,wall_ms_per_sample";
}

std::string eval_csv_row(const EvalReport& r) {
    char head[256];
    std::snprintf(head, sizeof head, "%s,%s,%lld,%s,%s,%d,%d,%d,%d,%.9e,", fingerprint_hex(r.config_fingerprint).c_str(),
                  r.checkpoint_phase.c_str(), static_cast<long long>(r.checkpoint_step), r.mode.c_str(),
                  r.method.c_str(), r.n_steps, r.nfe, r.used_ema ? 1 : 0, r.n_samples, r.masked_mse);
    char tail[64];
    std::snprintf(tail, sizeof tail, ",%.3f", r.wall_ms_per_sample);
    return std::string(head) + opt_csv(r.sharpness_mean) + "," + opt_csv(r.sharpness_median) + "," + opt_csv(r.w2) +
           "," + (r.w2_regularized ? "1" : "0") + "," + opt_csv(r.consistency_dev) + tail;
}

}  // namespace ectlab
