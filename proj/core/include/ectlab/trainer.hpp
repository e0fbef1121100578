#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ectlab/denoiser.hpp"
#include "ectlab/noise_schedule.hpp"
#include "ectlab/rng.hpp"
#include "ectlab/synth_data.hpp"

namespace ectlab {

enum class Phase { Pretrain, Tune };
enum class Precision { Single, Double };

const char* to_string(Phase phase);

struct TrainerConfig {
    std::int64_t pretrain_steps = 2000;
    std::int64_t tune_steps = 1000;
    double lr_pretrain = 1e-4;
    double lr_tune = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_decay = 0.999;
    bool clip_enabled = true;  // global-norm clipping, tuning phase only
    double clip_norm = 1.0;
    bool masked_norm = true;
    bool edm_weighting = false;
    Precision precision = Precision::Double;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
    std::int64_t log_every = 1;

    void validate() const;
    friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

struct OptimState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    friend bool operator==(const OptimState&, const OptimState&) = default;
};

struct EmaState {
    ModelParams shadow;
    double decay = 0.999;

    friend bool operator==(const EmaState&, const EmaState&) = default;
};

// Complete resumable training state.
struct TrainState {
    ArchConfig arch;
    ScheduleConfig sched;
    ModelParams params;
    OptimState opt;
    std::optional<EmaState> ema;
    Phase phase = Phase::Pretrain;
    std::int64_t step = 0;  // completed steps in the current phase
    Rng rng;
    bool masked_norm = true;
    Precision precision = Precision::Double;
    std::uint64_t config_fingerprint = 0;

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct StepLog {
    std::int64_t step = 0;
    Phase phase = Phase::Pretrain;
    double loss = 0.0;
    double t_mean = 0.0;
    double r_mean = 0.0;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
};

OptimState make_optim(const ModelParams& params, double lr, const TrainerConfig& cfg);

// Bias-corrected Adam update in place. Throws NumericError naming the first tensor with a
// non-finite gradient; nothing is modified in that case.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, OptimState& opt);

// shadow <- decay * shadow + (1 - decay) * params
void ema_update(EmaState& ema, const ModelParams& params);

double global_norm(const std::vector<Tensor>& grads);
// Scales grads so their global norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

TrainState init_pretrain(const ArchConfig& arch, const ScheduleConfig& sched, const TrainerConfig& cfg,
                         std::uint64_t seed);

// Tuning state from a pretrained one: same denoiser parameters, fresh optimizer at lr_tune over
// exactly the denoiser parameter set, EMA shadow initialized to the parameters.
TrainState begin_tuning(const TrainState& pretrained, const TrainerConfig& cfg, std::uint64_t seed);

StepLog pretrain_step(TrainState& state, const Batch& batch, const TrainerConfig& cfg);
StepLog tune_step(TrainState& state, const Batch& batch, const TrainerConfig& cfg);

// Batch index used for step `step` of a phase, keeping the two phases' batches apart.
std::uint64_t batch_index_for(Phase phase, std::int64_t step);

struct PhaseIo {
    std::filesystem::path out_dir;  // empty: no files written
    bool quiet = true;
};

// Runs `state.phase` until `total_steps` completed steps, writing the CSV log and
// checkpoints under io.out_dir. Returns the final state.
TrainState run_phase(TrainState state, const TrainerConfig& cfg, std::int64_t total_steps, const DataSource& data,
                     const PhaseIo& io = {});

// CSV log layout.
std::string csv_log_header();
std::string csv_log_row(const StepLog& log);

}  // namespace ectlab
