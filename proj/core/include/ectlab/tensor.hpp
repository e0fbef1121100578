#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ectlab {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

// Dense row-major tensor of doubles. Feature maps use [batch, channels, bins, frames]
// with frames contiguous.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value) { return Tensor({1}, value); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(double value);
    bool all_finite() const;
    double max_abs() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
void require_rank(const Tensor& t, std::size_t rank, const char* what);

// Per-item valid-frame prefix lengths over a padded frame axis.
class FrameMask {
public:
    FrameMask() = default;
    FrameMask(std::vector<std::size_t> lengths, std::size_t frames);

    // Builds from a binary [B, N] tensor; each row must be a prefix of ones.
    static FrameMask from_binary(const Tensor& mask);
    static FrameMask all_valid(std::size_t batch, std::size_t frames);

    std::size_t batch() const { return lengths_.size(); }
    std::size_t frames() const { return frames_; }
    std::size_t length(std::size_t b) const { return lengths_[b]; }
    const std::vector<std::size_t>& lengths() const { return lengths_; }
    bool valid(std::size_t b, std::size_t frame) const { return frame < lengths_[b]; }
    std::size_t valid_frames() const;

    // Mask at half frame resolution (ceil), matching the U-Net pooling grid.
    FrameMask downsampled() const;
    FrameMask with_frames(std::size_t frames) const;
    Tensor to_binary() const;

    friend bool operator==(const FrameMask&, const FrameMask&) = default;

private:
    std::vector<std::size_t> lengths_;
    std::size_t frames_ = 0;
};

// Zeroes every frame of `x` ([B, C, F, N]) that `mask` marks as padding.
void apply_mask_inplace(Tensor& x, const FrameMask& mask);

}  // namespace ectlab
