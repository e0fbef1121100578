#include "ectlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "ectlab/error.hpp"
#include "ectlab/losses.hpp"
#include "ectlab/persistence.hpp"

namespace ectlab {

const char* to_string(Phase phase) { return phase == Phase::Pretrain ? "pretrain" : "tune"; }

void TrainerConfig::validate() const {
    if (pretrain_steps < 0) throw ConfigError("trainer.pretrain_steps", "must be >= 0");
    if (tune_steps < 0) throw ConfigError("trainer.tune_steps", "must be >= 0");
    if (!(lr_pretrain > 0.0)) throw ConfigError("trainer.lr_pretrain", "must be positive");
    if (!(lr_tune > 0.0)) throw ConfigError("trainer.lr_tune", "must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("trainer.beta1", "must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("trainer.beta2", "must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("trainer.adam_eps", "must be positive");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("trainer.ema_decay", "must lie in [0, 1]");
    if (!(clip_norm > 0.0)) throw ConfigError("trainer.clip_norm", "must be positive");
    if (checkpoint_every < 0) throw ConfigError("trainer.checkpoint_every", "must be >= 0");
    if (log_every < 1) throw ConfigError("trainer.log_every", "must be >= 1");
}

OptimState make_optim(const ModelParams& params, double lr, const TrainerConfig& cfg) {
    OptimState opt;
    for (const Tensor& p : params) {
        opt.m.emplace_back(p.shape());
        opt.v.emplace_back(p.shape());
    }
    opt.lr = lr;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.adam_eps;
    return opt;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, OptimState& opt) {
    if (grads.size() != params.size() || opt.m.size() != params.size() || opt.v.size() != params.size()) {
        throw ShapeError("adam_step: gradient/moment count does not match parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(params[i], grads[i], "adam_step gradient");
        if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient in " + params.name(i));
    }
    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        Tensor& m = opt.m[i];
        Tensor& v = opt.v[i];
        const Tensor& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            p[j] -= opt.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt.eps);
        }
    }
}

void ema_update(EmaState& ema, const ModelParams& params) {
    if (!ema.shadow.same_layout(params)) throw ShapeError("ema_update: shadow layout differs from parameters");
    const double keep = ema.decay, take = 1.0 - ema.decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& s = ema.shadow[i];
        const Tensor& p = params[i];
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = keep * s[j] + take * p[j];
    }
}

double global_norm(const std::vector<Tensor>& grads) {
    double s = 0.0;
    for (const Tensor& g : grads) {
        for (double v : g.data()) s += v * v;
    }
    return std::sqrt(s);
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (Tensor& g : grads) {
            for (double& v : g.data()) v *= scale;
        }
    }
    return norm;
}

namespace {

void round_to_float(Tensor& t) {
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

void apply_precision(TrainState& state) {
    if (state.precision != Precision::Single) return;
    for (Tensor& p : state.params) round_to_float(p);
    for (Tensor& m : state.opt.m) round_to_float(m);
    for (Tensor& v : state.opt.v) round_to_float(v);
    if (state.ema) {
        for (Tensor& s : state.ema->shadow) round_to_float(s);
    }
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<Tensor> collect_grads(const Tape& tape, const BoundParams& bound) {
    std::vector<Tensor> grads;
    grads.reserve(bound.size());
    for (std::size_t i = 0; i < bound.size(); ++i) grads.push_back(tape.grad(bound.at(i)));
    return grads;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

TrainState init_pretrain(const ArchConfig& arch, const ScheduleConfig& sched, const TrainerConfig& cfg,
                         std::uint64_t seed) {
    arch.validate();
    sched.validate();
    cfg.validate();
    TrainState state;
    state.arch = arch;
    state.sched = sched;
    Rng init_rng(mix_seed(seed, 0x696e6974));
    state.params = init_params(arch, init_rng);
    state.opt = make_optim(state.params, cfg.lr_pretrain, cfg);
    state.phase = Phase::Pretrain;
    state.rng = Rng(mix_seed(seed, 0x70726574));
    state.masked_norm = cfg.masked_norm;
    state.precision = cfg.precision;
    apply_precision(state);
    return state;
}

TrainState begin_tuning(const TrainState& pretrained, const TrainerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TrainState state;
    state.arch = pretrained.arch;
    state.sched = pretrained.sched;
    state.params = pretrained.params;
    state.opt = make_optim(state.params, cfg.lr_tune, cfg);
    state.ema = EmaState{state.params, cfg.ema_decay};
    state.phase = Phase::Tune;
    state.step = 0;
    state.rng = Rng(mix_seed(seed, 0x74756e65));
    state.masked_norm = cfg.masked_norm;
    state.precision = cfg.precision;
    state.config_fingerprint = pretrained.config_fingerprint;
    apply_precision(state);
    return state;
}

StepLog pretrain_step(TrainState& state, const Batch& batch, const TrainerConfig& cfg) {
    if (state.phase != Phase::Pretrain) throw UsageError("pretrain_step called outside the pretraining phase");
    const auto start = std::chrono::steady_clock::now();
    const std::size_t items = batch.x0.dim(0);
    std::vector<double> sigmas(items);
    for (double& s : sigmas) s = sample_training_sigma(state.rng, state.sched);
    const Tensor eps = masked_gaussian(batch.x0.shape(), batch.mask, state.rng);

    Tape tape;
    BoundParams bound(tape, state.params, true);
    Var loss = edm_loss(bound, {batch.x0, batch.mu, batch.mask, eps}, sigmas, state.arch, state.sched,
                        {state.masked_norm, cfg.edm_weighting});
    if (!std::isfinite(loss.value()[0])) throw NumericError("pretrain_step: non-finite loss");
    tape.backward(loss);
    std::vector<Tensor> grads = collect_grads(tape, bound);
    const double norm = global_norm(grads);
    adam_step(state.params, grads, state.opt);
    apply_precision(state);

    StepLog log;
    log.step = state.step++;
    log.phase = Phase::Pretrain;
    log.loss = loss.value()[0];
    log.t_mean = mean_of(sigmas);
    log.grad_norm = norm;
    log.wall_ms = elapsed_ms(start);
    return log;
}

StepLog tune_step(TrainState& state, const Batch& batch, const TrainerConfig& cfg) {
    if (state.phase != Phase::Tune) throw UsageError("tune_step called outside the tuning phase");
    if (!state.ema) throw UsageError("tune_step requires an EMA shadow");
    const auto start = std::chrono::steady_clock::now();
    const std::int64_t k = state.step;
    TuningPair pair = make_tuning_pair(state.rng, k, state.sched, batch.x0.shape(), batch.mask);

    Tape tape;
    BoundParams bound(tape, state.params, true);
    EctLoss loss = ect_loss(bound, {batch.x0, batch.mu, batch.mask, pair.eps}, pair.t, pair.r, state.arch,
                            state.sched, {state.masked_norm, false});
    if (!std::isfinite(loss.loss.value()[0])) throw NumericError("tune_step: non-finite loss");
    tape.backward(loss.loss);
    std::vector<Tensor> grads = collect_grads(tape, bound);
    const double norm = cfg.clip_enabled ? clip_global_norm(grads, cfg.clip_norm) : global_norm(grads);
    adam_step(state.params, grads, state.opt);
    ema_update(*state.ema, state.params);
    apply_precision(state);

    StepLog log;
    log.step = state.step++;
    log.phase = Phase::Tune;
    log.loss = loss.loss.value()[0];
    log.t_mean = mean_of(pair.t);
    log.r_mean = mean_of(pair.r);
    log.grad_norm = norm;
    log.wall_ms = elapsed_ms(start);
    return log;
}

std::uint64_t batch_index_for(Phase phase, std::int64_t step) {
    const auto s = static_cast<std::uint64_t>(step);
    return phase == Phase::Pretrain ? s : (std::uint64_t{1} << 40) + s;
}

std::string csv_log_header() { return "step,phase,loss,t_mean,r_mean,grad_norm,wall_ms"; }

std::string csv_log_row(const StepLog& log) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%s,%.9e,%.9e,%.9e,%.9e,%.3f", static_cast<long long>(log.step),
                  to_string(log.phase), log.loss, log.t_mean, log.r_mean, log.grad_norm, log.wall_ms);
    return buf;
}

TrainState run_phase(TrainState state, const TrainerConfig& cfg, std::int64_t total_steps, const DataSource& data,
                     const PhaseIo& io) {
    if (!data) throw ConfigError("data", "empty data source");
    if (total_steps < 0) throw ConfigError("trainer.steps", "must be >= 0");
    if (state.phase == Phase::Tune && total_steps > state.sched.total_tune_steps + 1) {
        throw ConfigError("trainer.tune_steps", "exceeds schedule.total_tune_steps");
    }
    const bool write = !io.out_dir.empty();
    std::ofstream csv;
    const auto log_path = io.out_dir / (std::string("train_") + to_string(state.phase) + ".csv");
    if (write) {
        std::error_code ec;
        std::filesystem::create_directories(io.out_dir, ec);
        if (ec) throw IoError(io.out_dir.string(), "cannot create output directory: " + ec.message());
        const bool fresh = state.step == 0 || !std::filesystem::exists(log_path);
        csv.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!csv) throw IoError(log_path.string(), "cannot open training log");
        if (fresh) csv << csv_log_header() << '\n';
    }
    auto checkpoint_path = [&](const std::string& tag) {
        return io.out_dir / (std::string(to_string(state.phase)) + tag + ".ckpt");
    };
    while (state.step < total_steps) {
        const Batch batch = data(batch_index_for(state.phase, state.step));
        const StepLog log =
            state.phase == Phase::Pretrain ? pretrain_step(state, batch, cfg) : tune_step(state, batch, cfg);
        if (write && (log.step % cfg.log_every == 0 || state.step == total_steps)) {
            csv << csv_log_row(log) << '\n';
            if (!csv) throw IoError(log_path.string(), "write failed");
        }
        if (!io.quiet && (state.step % 500 == 0 || state.step == total_steps)) {
            std::cerr << to_string(state.phase) << " step " << state.step << "/" << total_steps << " loss " << log.loss
                      << '\n';
        }
        if (write && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < total_steps) {
            save_checkpoint(state, checkpoint_path("_" + std::to_string(state.step)));
        }
    }
    if (write) save_checkpoint(state, checkpoint_path(""));
    return state;
}

}  // namespace ectlab
