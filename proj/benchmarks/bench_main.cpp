#include <benchmark/benchmark.h>

#include "ectlab/ops.hpp"
#include "ectlab/sampler.hpp"
#include "ectlab/trainer.hpp"

using namespace ectlab;

namespace {

Tensor normal_tensor(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(shape);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

DataConfig mel_data(std::size_t frames) {
    DataConfig d;
    d.mel_bins = 16;
    d.n_min = frames;
    d.n_max = frames;
    d.batch_size = 8;
    return d;
}

// Forward and backward of one 3x3 convolution, [8, C, 16, N] -> [8, C, 16, N].
void BM_Conv2dForwardBackward(benchmark::State& st) {
    const std::size_t ch = st.range(0), frames = st.range(1);
    const Tensor x = normal_tensor({8, ch, 16, frames}, 1), w = normal_tensor({ch, ch, 3, 3}, 2),
                 b = normal_tensor({ch}, 3);
    for (auto _ : st) {
        Tape tape;
        Var out = ops::sum(ops::conv2d(tape.parameter(x), tape.parameter(w), tape.parameter(b)));
        tape.backward(out);
        benchmark::DoNotOptimize(tape.grad(out).data().data());
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({4, 32})->Args({8, 32})->Args({8, 96})->Unit(benchmark::kMicrosecond);

void BM_DenoiseEval(benchmark::State& st) {
    const ArchConfig arch = ArchConfig::tiny();
    const ScheduleConfig sched;
    Rng rng(1);
    const ModelParams params = init_params(arch, rng);
    const Batch batch = gen_mel_batch(mel_data(st.range(0)), 0);
    const std::vector<double> sigmas(batch.x0.dim(0), 1.0);
    for (auto _ : st) {
        benchmark::DoNotOptimize(denoise_eval(batch.x0, sigmas, batch.mu, batch.mask, params, arch, sched).data().data());
    }
}
BENCHMARK(BM_DenoiseEval)->Arg(32)->Arg(96)->Unit(benchmark::kMicrosecond);

void BM_PretrainStep(benchmark::State& st) {
    const TrainerConfig cfg;
    TrainState s = init_pretrain(ArchConfig::tiny(), ScheduleConfig{}, cfg, 1);
    const Batch batch = gen_mel_batch(mel_data(32), 0);
    for (auto _ : st) benchmark::DoNotOptimize(pretrain_step(s, batch, cfg).loss);
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

void BM_TuneStep(benchmark::State& st) {
    const TrainerConfig cfg;
    ScheduleConfig sched;
    sched.total_tune_steps = 1 << 30;
    TrainState s = begin_tuning(init_pretrain(ArchConfig::tiny(), sched, cfg, 1), cfg, 2);
    const Batch batch = gen_mel_batch(mel_data(32), 0);
    for (auto _ : st) benchmark::DoNotOptimize(tune_step(s, batch, cfg).loss);
}
BENCHMARK(BM_TuneStep)->Unit(benchmark::kMillisecond);

void BM_SampleHeun(benchmark::State& st) {
    const ArchConfig arch = ArchConfig::tiny();
    const ScheduleConfig sched;
    Rng rng(1);
    const ModelParams params = init_params(arch, rng);
    const Batch batch = gen_mel_batch(mel_data(32), 0);
    const DenoiseFn f = model_denoiser(params, arch, sched, batch.mu, batch.mask);
    const int n = static_cast<int>(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(sample_heun(f, batch.mu, n, sched).x.data().data());
    st.counters["nfe"] = 2 * n - 1;
}
BENCHMARK(BM_SampleHeun)->Arg(1)->Arg(18)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
