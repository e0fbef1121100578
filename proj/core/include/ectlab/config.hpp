#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ectlab/denoiser.hpp"
#include "ectlab/noise_schedule.hpp"
#include "ectlab/synth_data.hpp"
#include "ectlab/trainer.hpp"

namespace ectlab {

enum class SamplerMethod { OneStep, Euler, Heun };

const char* to_string(SamplerMethod method);
SamplerMethod parse_sampler_method(std::string_view name);  // throws ConfigError("sampler.method")

struct SamplerSettings {
    SamplerMethod method = SamplerMethod::OneStep;
    int n_steps = 1;
    bool use_ema = true;

    friend bool operator==(const SamplerSettings&, const SamplerSettings&) = default;
};

struct EvalSettings {
    int n_samples = 256;
    int consistency_trajectories = 64;
    int consistency_steps = 18;  // Euler steps of the recorded diagnostic trajectories

    friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

// Full experiment configuration. The ablation switches live in the JSON "ablation" object and
// map onto arch.msgate_enabled, trainer.masked_norm and tuning_enabled.
struct RunConfig {
    std::string name = "default";
    DataConfig data;
    ScheduleConfig schedule;
    ArchConfig arch;
    TrainerConfig trainer;
    SamplerSettings sampler;
    EvalSettings eval;
    std::uint64_t seed = 0;
    std::string output_dir;  // empty: $ECTLAB_OUT or ./runs, joined with name
    bool tuning_enabled = true;

    void validate() const;
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Parses JSON text; missing fields keep their defaults, unknown fields and type mismatches
// raise ConfigError carrying the dotted field path.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical form: every field present, keys sorted, no insignificant whitespace.
std::string canonical_json(const RunConfig& cfg);
// FNV-1a 64 of canonical_json.
std::uint64_t config_fingerprint(const RunConfig& cfg);
std::string fingerprint_hex(std::uint64_t fingerprint);

std::filesystem::path resolve_output_dir(const RunConfig& cfg);

}  // namespace ectlab
