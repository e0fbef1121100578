#include "ectlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ectlab/error.hpp"

namespace ectlab {

namespace {

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
    }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(t.shape()));
    }
}

FrameMask::FrameMask(std::vector<std::size_t> lengths, std::size_t frames)
    : lengths_(std::move(lengths)), frames_(frames) {
    for (std::size_t len : lengths_) {
        if (len == 0) throw DomainError("frame mask row has no valid frames");
        if (len > frames_) throw ShapeError("frame mask length exceeds frame count");
    }
}

FrameMask FrameMask::from_binary(const Tensor& mask) {
    require_rank(mask, 2, "frame mask");
    const std::size_t batch = mask.dim(0), frames = mask.dim(1);
    std::vector<std::size_t> lengths(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t len = 0;
        while (len < frames && mask[b * frames + len] == 1.0) ++len;
        for (std::size_t j = len; j < frames; ++j) {
            if (mask[b * frames + j] != 0.0) {
                throw ArgumentError("frame mask row " + std::to_string(b) + " is not a contiguous valid prefix");
            }
        }
        lengths[b] = len;
    }
    return FrameMask(std::move(lengths), frames);
}

FrameMask FrameMask::all_valid(std::size_t batch, std::size_t frames) {
    return FrameMask(std::vector<std::size_t>(batch, frames), frames);
}

std::size_t FrameMask::valid_frames() const { return std::accumulate(lengths_.begin(), lengths_.end(), std::size_t{0}); }

FrameMask FrameMask::downsampled() const {
    std::vector<std::size_t> lengths(lengths_.size());
    std::transform(lengths_.begin(), lengths_.end(), lengths.begin(), [](std::size_t n) { return (n + 1) / 2; });
    return FrameMask(std::move(lengths), (frames_ + 1) / 2);
}

FrameMask FrameMask::with_frames(std::size_t frames) const { return FrameMask(lengths_, frames); }

Tensor FrameMask::to_binary() const {
    Tensor out({batch(), frames_});
    for (std::size_t b = 0; b < batch(); ++b) {
        for (std::size_t j = 0; j < lengths_[b]; ++j) out[b * frames_ + j] = 1.0;
    }
    return out;
}

void apply_mask_inplace(Tensor& x, const FrameMask& mask) {
    require_rank(x, 4, "apply_mask");
    if (x.dim(0) != mask.batch() || x.dim(3) != mask.frames()) {
        throw ShapeError("mask " + std::to_string(mask.batch()) + "x" + std::to_string(mask.frames()) +
                         " does not match feature map " + to_string(x.shape()));
    }
    const std::size_t rows = x.dim(1) * x.dim(2), frames = x.dim(3);
    for (std::size_t b = 0; b < x.dim(0); ++b) {
        double* base = x.ptr() + b * rows * frames;
        for (std::size_t r = 0; r < rows; ++r) {
            std::fill(base + r * frames + mask.length(b), base + (r + 1) * frames, 0.0);
        }
    }
}

}  // namespace ectlab
