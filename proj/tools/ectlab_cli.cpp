// ectlab command-line driver: data export, two-stage training, sampling, evaluation and
// gradient checks. Exit codes: 0 ok, 1 check failed, 2 configuration/usage error, 3 I/O error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "ectlab/config.hpp"
#include "ectlab/error.hpp"
#include "ectlab/losses.hpp"
#include "ectlab/metrics.hpp"
#include "ectlab/persistence.hpp"
#include "ectlab/sampler.hpp"
#include "ectlab/synth_data.hpp"
#include "ectlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ectlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct CheckFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

// Records the resolved config next to the run outputs.
void write_run_manifest(const fs::path& dir, const RunConfig& cfg) {
    ensure_dir(dir);
    write_text(dir / "run_config.json", canonical_json(cfg) + "\n");
    write_text(dir / "fingerprint.txt", fingerprint_hex(config_fingerprint(cfg)) + "\n");
}

DataSource data_source_for(const RunConfig& cfg, const std::string& dataset_dir) {
    if (dataset_dir.empty()) return synthetic_source(cfg.data);
    auto batches = std::make_shared<std::vector<Batch>>(import_dataset(dataset_dir));
    if (batches->empty()) throw ConfigError("dataset", "pinned dataset has no batches");
    return [batches](std::uint64_t i) { return (*batches)[i % batches->size()]; };
}

int cmd_gen_data(const std::string& config, const std::string& out, std::size_t batches) {
    const RunConfig cfg = load_run_config(config);
    export_dataset(cfg.data, batches, out, config_fingerprint(cfg));
    std::cout << "wrote " << batches << " batches to " << out << "\n";
    return kExitOk;
}

int cmd_pretrain(const std::string& config, const std::string& resume, const std::string& dataset, bool quiet) {
    const RunConfig cfg = load_run_config(config);
    const fs::path dir = resolve_output_dir(cfg);
    write_run_manifest(dir, cfg);
    TrainState state;
    if (!resume.empty()) {
        state = load_checkpoint(resume);
        if (state.phase != Phase::Pretrain) throw ConfigError("--resume", "checkpoint is not a pretraining checkpoint");
    } else {
        state = init_pretrain(cfg.arch, cfg.schedule, cfg.trainer, cfg.seed);
    }
    state.config_fingerprint = config_fingerprint(cfg);
    state = run_phase(std::move(state), cfg.trainer, cfg.trainer.pretrain_steps, data_source_for(cfg, dataset),
                      {dir, quiet});
    std::cout << "pretrain finished at step " << state.step << "; checkpoint " << (dir / "pretrain.ckpt").string()
              << "\n";
    return kExitOk;
}

int cmd_tune(const std::string& config, const std::string& from, const std::string& resume, bool force,
             const std::string& dataset, bool quiet) {
    const RunConfig cfg = load_run_config(config);
    if (!cfg.tuning_enabled) {
        throw ConfigError("ablation.consistency_tuning",
                          "tuning is disabled for this config; evaluate the pretrained checkpoint directly");
    }
    const fs::path dir = resolve_output_dir(cfg);
    write_run_manifest(dir, cfg);
    TrainState state;
    if (!resume.empty()) {
        state = load_checkpoint(resume);
        if (state.phase != Phase::Tune) throw ConfigError("--resume", "checkpoint is not a tuning checkpoint");
    } else {
        const TrainState pre = load_checkpoint(from);
        if (pre.phase != Phase::Pretrain) throw ConfigError("--from", "checkpoint is not a pretraining checkpoint");
        if (pre.masked_norm != cfg.trainer.masked_norm && !force) {
            throw ConfigError("ablation.masked_norm", "disagrees with the checkpoint metadata (pass --force to override)");
        }
        state = begin_tuning(pre, cfg.trainer, cfg.seed);
        state.sched = cfg.schedule;
        state.masked_norm = cfg.trainer.masked_norm;
    }
    state.config_fingerprint = config_fingerprint(cfg);
    state = run_phase(std::move(state), cfg.trainer, cfg.trainer.tune_steps, data_source_for(cfg, dataset),
                      {dir, quiet});
    std::cout << "tune finished at step " << state.step << "; checkpoint " << (dir / "tune.ckpt").string() << "\n";
    return kExitOk;
}

bool resolve_ema(const TrainState& state, std::optional<bool> flag) {
    if (flag) {
        if (*flag && !state.ema) throw ConfigError("--use-ema", "checkpoint has no EMA shadow");
        return *flag;
    }
    return state.ema.has_value();
}

int cmd_sample(const std::string& ckpt, const std::string& config, const std::string& method_name, int steps,
               int count, const std::string& out, std::optional<bool> ema_flag) {
    const RunConfig cfg = load_run_config(config);
    const TrainState state = load_checkpoint(ckpt);
    const SamplerMethod method = parse_sampler_method(method_name);
    if (steps < 1) throw ConfigError("--steps", "must be >= 1");
    if (count < 1) throw ConfigError("--count", "must be >= 1");
    const bool use_ema = resolve_ema(state, ema_flag);
    const ModelParams& params = use_ema ? state.ema->shadow : state.params;
    ensure_dir(out);

    const auto bs = static_cast<std::size_t>(cfg.data.batch_size);
    HeldOutStream stream = held_out_stream(cfg.data, (static_cast<std::size_t>(count) + bs - 1) / bs);
    int written = 0, nfe = 0;
    double wall_ms = 0.0;
    for (std::uint64_t bi = 0; stream.has_next(); ++bi) {
        const Batch bt = stream.next();
        Rng rng(mix_seed(cfg.seed, 0x73616d70, bi));
        const Tensor x_init = init_state(bt.mu, bt.mask, rng, state.sched);
        const DenoiseFn f = model_denoiser(params, state.arch, state.sched, bt.mu, bt.mask);
        const auto t0 = std::chrono::steady_clock::now();
        SampleResult res;
        switch (method) {
            case SamplerMethod::OneStep: res = sample_onestep(f, x_init, state.sched); break;
            case SamplerMethod::Euler: res = sample_euler(f, x_init, steps, state.sched); break;
            case SamplerMethod::Heun: res = sample_heun(f, x_init, steps, state.sched); break;
        }
        wall_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        nfe = res.nfe;
        for (std::size_t b = 0; b < bt.mask.batch() && written < count; ++b, ++written) {
            char stem[32];
            std::snprintf(stem, sizeof stem, "sample_%05d", written);
            write_sample_dump(fs::path(out) / stem, res.x, b, bt.mask);
        }
    }
    std::ostringstream meta;
    meta << "{\n  \"config_fingerprint\": \"" << fingerprint_hex(config_fingerprint(cfg)) << "\",\n"
         << "  \"checkpoint\": \"" << ckpt << "\",\n"
         << "  \"checkpoint_fingerprint\": \"" << fingerprint_hex(state.config_fingerprint) << "\",\n"
         << "  \"method\": \"" << to_string(method) << "\",\n"
         << "  \"n_steps\": " << (method == SamplerMethod::OneStep ? 1 : steps) << ",\n"
         << "  \"nfe\": " << nfe << ",\n"
         << "  \"count\": " << written << ",\n"
         << "  \"used_ema\": " << (use_ema ? "true" : "false") << ",\n"
         << "  \"wall_ms_per_sample\": " << wall_ms / written << "\n}\n";
    write_text(fs::path(out) / "metadata.json", meta.str());
    std::cout << "wrote " << written << " samples to " << out << " (nfe " << nfe << ")\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& config, const std::string& method_name, int steps,
             std::optional<int> count, const std::string& out, std::optional<bool> ema_flag) {
    const RunConfig cfg = load_run_config(config);
    const TrainState state = load_checkpoint(ckpt);
    EvalRequest req;
    req.method = parse_sampler_method(method_name);
    req.n_steps = steps;
    if (steps < 1) throw ConfigError("--steps", "must be >= 1");
    req.n_samples = count.value_or(cfg.eval.n_samples);
    if (req.n_samples < 1) throw ConfigError("--count", "must be >= 1");
    req.use_ema = resolve_ema(state, ema_flag);
    req.consistency_trajectories = cfg.eval.consistency_trajectories;
    req.consistency_steps = cfg.eval.consistency_steps;
    const EvalReport rep = evaluate(state, cfg, req);

    const fs::path dir = out.empty() ? resolve_output_dir(cfg) : fs::path(out);
    ensure_dir(dir);
    const std::string tag = std::string(to_string(state.phase)) + "_" + rep.method + std::to_string(rep.n_steps);
    write_text(dir / ("eval_" + tag + ".json"), report_to_json(rep));
    const fs::path csv_path = dir / "eval.csv";
    const bool fresh = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw IoError(csv_path.string(), "cannot open");
    if (fresh) csv << eval_csv_header() << '\n';
    csv << eval_csv_row(rep) << '\n';
    if (!csv) throw IoError(csv_path.string(), "write failed");

    auto show = [](const char* name, std::optional<double> v) {
        if (v) std::printf("  %-20s %.6g\n", name, *v);
    };
    std::printf("eval %s (%s, step %lld) method %s n_steps %d nfe %d ema %s samples %d\n", rep.mode.c_str(),
                rep.checkpoint_phase.c_str(), static_cast<long long>(rep.checkpoint_step), rep.method.c_str(),
                rep.n_steps, rep.nfe, rep.used_ema ? "yes" : "no", rep.n_samples);
    std::printf("  %-20s %.6g\n", "masked_mse", rep.masked_mse);
    show("sharpness_mean", rep.sharpness_mean);
    show("sharpness_median", rep.sharpness_median);
    show("w2", rep.w2);
    show("consistency_dev", rep.consistency_dev);
    std::printf("  %-20s %.3f\n", "wall_ms_per_sample", rep.wall_ms_per_sample);
    std::printf("  %-20s %s\n", "config_fingerprint", fingerprint_hex(rep.config_fingerprint).c_str());
    return kExitOk;
}

int cmd_gradcheck(const std::string& config, double tolerance, double sabotage) {
    const RunConfig cfg = load_run_config(config);
    const GradcheckProblem problem = make_gradcheck_problem(cfg);
    GradcheckOptions opts;
    opts.tolerance = tolerance;
    opts.sabotage = sabotage;
    const GradcheckReport rep = gradcheck(problem.params, problem.loss(), opts);
    const StopGradReport sg = stop_gradient_probe(problem.params, problem.inputs(), problem.t, problem.r, problem.arch, problem.sched);

    std::printf("%-24s %8s %14s %14s\n", "tensor", "coords", "max_rel_err", "max_|grad|");
    for (const auto& tc : rep.tensors) {
        std::printf("%-24s %8zu %14.3e %14.3e\n", tc.name.c_str(), tc.coords, tc.max_rel_err, tc.max_abs_grad);
    }
    std::printf("checked %zu coordinates, max relative error %.3e (tolerance %.1e)\n", rep.coords, rep.max_rel_err,
                rep.tolerance);
    std::printf("stop-gradient target: %zu coordinates, max |analytic grad| %.3e\n", sg.coords, sg.max_abs_grad);
    std::printf("config_fingerprint %s\n", fingerprint_hex(config_fingerprint(cfg)).c_str());
    if (!rep.passed() || sg.max_abs_grad != 0.0) throw CheckFailed("gradient check failed");
    std::printf("gradcheck passed\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ectlab: consistency-tuning lab on synthetic spectrogram and point data"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

    std::string config, out, ckpt, resume, from, dataset, method = "onestep";
    std::size_t batches = 4;
    int steps = 1, count = 16;
    bool force = false;
    double tolerance = 1e-4, sabotage = 1.0;
    std::optional<bool> ema_flag;
    std::optional<int> eval_count;

    auto* gen = app.add_subcommand("gen-data", "Export a pinned dataset");
    gen->add_option("--config", config, "Run config (JSON)")->required();
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--batches", batches, "Number of batches to export");

    auto* pre = app.add_subcommand("pretrain", "Diffusion pretraining");
    pre->add_option("--config", config, "Run config (JSON)")->required();
    pre->add_option("--resume", resume, "Pretraining checkpoint to continue from");
    pre->add_option("--dataset", dataset, "Pinned dataset directory instead of on-the-fly data");

    auto* tune = app.add_subcommand("tune", "Consistency tuning from a pretrained checkpoint");
    tune->add_option("--config", config, "Run config (JSON)")->required();
    auto* from_opt = tune->add_option("--from", from, "Pretraining checkpoint");
    auto* resume_opt = tune->add_option("--resume", resume, "Tuning checkpoint to continue from");
    from_opt->excludes(resume_opt);
    tune->add_flag("--force", force, "Ignore a masked_norm mismatch with the checkpoint");
    tune->add_option("--dataset", dataset, "Pinned dataset directory instead of on-the-fly data");

    auto add_ema = [&](CLI::App* sub) {
        sub->add_flag_callback("--use-ema", [&] { ema_flag = true; }, "Sample with the EMA shadow (default if present)");
        sub->add_flag_callback("--no-ema", [&] { ema_flag = false; }, "Sample with the live parameters");
    };

    auto* sample = app.add_subcommand("sample", "Generate samples (PGM + raw float32)");
    sample->add_option("--ckpt", ckpt, "Checkpoint")->required();
    sample->add_option("--config", config, "Run config providing the conditioning data")->required();
    sample->add_option("--method", method, "onestep | euler | heun");
    sample->add_option("--steps", steps, "Sampler steps");
    sample->add_option("--count", count, "Number of samples");
    sample->add_option("--out", out, "Output directory")->required();
    add_ema(sample);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out data");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
    eval->add_option("--config", config, "Run config (JSON)")->required();
    eval->add_option("--method", method, "onestep | euler | heun");
    eval->add_option("--steps", steps, "Sampler steps");
    eval->add_option("--count", eval_count, "Number of samples (default eval.n_samples)");
    eval->add_option("--out", out, "Report directory (default: run output directory)");
    add_ema(eval);

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check on the tiny architecture");
    grad->add_option("--config", config, "Run config (JSON)")->required();
    grad->add_option("--tolerance", tolerance, "Maximum relative error");
    grad->add_option("--sabotage", sabotage)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen_data(config, out, batches);
        if (*pre) return cmd_pretrain(config, resume, dataset, quiet);
        if (*tune) {
            if (from.empty() && resume.empty()) throw ConfigError("--from", "a pretraining checkpoint is required");
            return cmd_tune(config, from, resume, force, dataset, quiet);
        }
        if (*sample) return cmd_sample(ckpt, config, method, steps, count, out, ema_flag);
        if (*eval) return cmd_eval(ckpt, config, method, steps, eval_count, out, ema_flag);
        if (*grad) return cmd_gradcheck(config, tolerance, sabotage);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const CheckFailed& e) {
        std::cerr << e.what() << "\n";
        return kExitCheck;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheck;
    }
    return kExitConfig;
}
