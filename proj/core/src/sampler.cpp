#include "ectlab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "ectlab/error.hpp"
#include "ectlab/losses.hpp"

namespace ectlab {

DenoiseFn model_denoiser(const ModelParams& params, const ArchConfig& arch, const ScheduleConfig& sched,
                         const Tensor& mu, const FrameMask& mask) {
    return [&params, arch, sched, &mu, &mask](const Tensor& x, double sigma) {
        const std::vector<double> sigmas(x.dim(0), sigma);
        return denoise_eval(x, sigmas, mu, mask, params, arch, sched);
    };
}

Tensor init_state(const Tensor& mu, const FrameMask& mask, Rng& rng, const ScheduleConfig& sched) {
    Tensor x = masked_gaussian(mu.shape(), mask, rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = mu[i] + sched.sigma_max * x[i];
    apply_mask_inplace(x, mask);
    return x;
}

namespace {

// x + (next - sigma) * (x - f) / sigma
void euler_update(Tensor& x, const Tensor& f, double sigma, double next) {
    const double h = next - sigma;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + h * ((x[i] - f[i]) / sigma);
}

void push_state(SampleResult& res, bool record, double sigma, const Tensor& x) {
    if (!record) return;
    res.trajectory.sigmas.push_back(sigma);
    res.trajectory.states.push_back(x);
}

}  // namespace

SampleResult sample_onestep(const DenoiseFn& f, const Tensor& x_init, const ScheduleConfig& sched) {
    SampleResult res;
    res.x = f(x_init, sched.sigma_max);
    res.nfe = 1;
    return res;
}

SampleResult sample_euler(const DenoiseFn& f, const Tensor& x_init, int n_steps, const ScheduleConfig& sched,
                          bool record) {
    const auto grid = karras_step_grid(n_steps, sched);
    SampleResult res;
    Tensor x = x_init;
    for (int i = 0; i < n_steps; ++i) {
        const double sigma = grid[i], next = grid[i + 1];
        push_state(res, record, sigma, x);
        Tensor d = f(x, sigma);
        ++res.nfe;
        if (next == 0.0) {
            x = std::move(d);
        } else {
            euler_update(x, d, sigma, next);
        }
    }
    push_state(res, record, 0.0, x);
    res.x = std::move(x);
    return res;
}

SampleResult sample_heun(const DenoiseFn& f, const Tensor& x_init, int n_steps, const ScheduleConfig& sched,
                         bool record) {
    const auto grid = karras_step_grid(n_steps, sched);
    SampleResult res;
    Tensor x = x_init;
    for (int i = 0; i < n_steps; ++i) {
        const double sigma = grid[i], next = grid[i + 1];
        push_state(res, record, sigma, x);
        Tensor d0 = f(x, sigma);
        ++res.nfe;
        if (next == 0.0) {
            x = std::move(d0);
            continue;
        }
        Tensor pred = x;
        euler_update(pred, d0, sigma, next);
        const Tensor d1 = f(pred, next);
        ++res.nfe;
        const double h = next - sigma;
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double slope0 = (x[k] - d0[k]) / sigma;
            const double slope1 = (pred[k] - d1[k]) / next;
            x[k] = x[k] + h * (0.5 * (slope0 + slope1));
        }
    }
    push_state(res, record, 0.0, x);
    res.x = std::move(x);
    return res;
}

double consistency_deviation(const DenoiseFn& f, const Trajectory& trajectory, const FrameMask& mask) {
    std::size_t last = trajectory.size();
    for (std::size_t i = 0; i < trajectory.size(); ++i) {
        if (trajectory.sigmas[i] > 0.0) last = i;
    }
    if (last == trajectory.size()) throw ArgumentError("consistency_deviation: trajectory has no state with sigma > 0");
    const Tensor ref = f(trajectory.states[last], trajectory.sigmas[last]);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i <= last; ++i) {
        if (!(trajectory.sigmas[i] > 0.0)) continue;
        ++count;
        if (i == last) continue;
        total += masked_mean_sq(f(trajectory.states[i], trajectory.sigmas[i]), ref, mask).value;
    }
    return total / static_cast<double>(count);
}

void write_sample_dump(const std::filesystem::path& stem, const Tensor& batch, std::size_t item,
                       const FrameMask& mask) {
    require_rank(batch, 4, "write_sample_dump");
    if (item >= batch.dim(0)) throw ArgumentError("write_sample_dump: item out of range");
    const std::size_t bins = batch.dim(2), len = mask.length(item);
    double lo = 0.0, hi = 0.0;
    for (std::size_t f = 0; f < bins; ++f) {
        for (std::size_t j = 0; j < len; ++j) {
            const double v = batch.at(item, 0, f, j);
            if ((f == 0 && j == 0) || v < lo) lo = v;
            if ((f == 0 && j == 0) || v > hi) hi = v;
        }
    }
    auto open = [](const std::filesystem::path& p) {
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError(p.string(), "cannot open for writing");
        return os;
    };
    auto with_ext = [&](const char* ext) {
        std::filesystem::path p = stem;
        p += ext;
        return p;
    };

    std::ofstream pgm = open(with_ext(".pgm"));
    pgm << "P5\n" << len << ' ' << bins << "\n65535\n";
    const double span = hi - lo;
    for (std::size_t f = 0; f < bins; ++f) {
        for (std::size_t j = 0; j < len; ++j) {
            const double u = span > 0.0 ? (batch.at(item, 0, f, j) - lo) / span : 0.0;
            const auto q = static_cast<unsigned>(std::lround(std::clamp(u, 0.0, 1.0) * 65535.0));
            const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
            pgm.write(bytes, 2);
        }
    }
    if (!pgm) throw IoError(with_ext(".pgm").string(), "write failed");

    std::ofstream range = open(with_ext(".range.txt"));
    char buf[64];
    std::snprintf(buf, sizeof buf, "min %.9e\nmax %.9e\n", lo, hi);
    range << buf;

    std::ofstream raw = open(with_ext(".f32"));
    for (std::size_t f = 0; f < bins; ++f) {
        for (std::size_t j = 0; j < len; ++j) {
            const float v = static_cast<float>(batch.at(item, 0, f, j));
            char b[4];
            std::memcpy(b, &v, 4);
            raw.write(b, 4);
        }
    }
    if (!raw) throw IoError(with_ext(".f32").string(), "write failed");
}

}  // namespace ectlab
