#pragma once

#include <cmath>
#include <functional>

#include "ectlab/autodiff.hpp"
#include "ectlab/rng.hpp"
#include "ectlab/tensor.hpp"

namespace ectlab::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor t(shape);
    for (double& v : t.data()) v = scale * rng.normal();
    return t;
}

// Appends `extra` zero frames to a [B, C, F, N] tensor.
inline Tensor pad_frames(const Tensor& x, std::size_t extra) {
    Tensor out({x.dim(0), x.dim(1), x.dim(2), x.dim(3) + extra});
    for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t c = 0; c < x.dim(1); ++c)
            for (std::size_t f = 0; f < x.dim(2); ++f)
                for (std::size_t j = 0; j < x.dim(3); ++j) out.at(b, c, f, j) = x.at(b, c, f, j);
    return out;
}

// Max relative error between the tape gradient of f at each input and central differences.
// f builds a scalar from the given parameter variables.
inline double fd_max_rel_err(std::vector<Tensor> inputs, const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                             double eps = 1e-6) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(tape.parameter(t));
        Var out = f(tape, vars);
        tape.backward(out);
        for (const auto& v : vars) analytic.push_back(tape.grad(v));
    }
    auto eval = [&]() {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(tape.constant(t));
        return f(tape, vars).value()[0];
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t c = 0; c < inputs[i].size(); ++c) {
            const double orig = inputs[i][c];
            inputs[i][c] = orig + eps;
            const double up = eval();
            inputs[i][c] = orig - eps;
            const double down = eval();
            inputs[i][c] = orig;
            const double fd = (up - down) / (2.0 * eps);
            const double a = analytic[i][c];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-7});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace ectlab::testing
