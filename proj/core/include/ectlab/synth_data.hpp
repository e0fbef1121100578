#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ectlab/tensor.hpp"

namespace ectlab {

enum class DataMode { MelLike, Gmm2D };

struct GmmComponent {
    std::array<double, 2> mean{};
    std::array<double, 4> cov{};  // row-major 2x2
    double weight = 1.0;

    friend bool operator==(const GmmComponent&, const GmmComponent&) = default;
};

struct DataConfig {
    DataMode mode = DataMode::MelLike;
    int mel_bins = 32;
    int n_min = 24;
    int n_max = 96;
    int tracks_min = 2;
    int tracks_max = 5;
    double ridge_width = 1.2;   // Gaussian ridge std, in bins
    double blur_radius = 2.0;   // std of the blur producing mu; 0 disables
    double prior_noise = 0.05;  // std of the seeded noise added to mu
    double target_std = 0.5;
    std::vector<GmmComponent> gmm = default_gmm();
    std::uint64_t seed = 1234;
    int batch_size = 16;

    void validate() const;
    static std::vector<GmmComponent> default_gmm();

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct Batch {
    Tensor x0;
    Tensor mu;
    FrameMask mask;
    std::vector<std::size_t> lengths;
};

// Seed domains keep training and evaluation streams disjoint.
enum class SeedDomain : std::uint64_t { Train = 0x7261696e, HeldOut = 0x68656c64 };

Batch gen_mel_batch(const DataConfig& cfg, std::uint64_t batch_index, SeedDomain domain = SeedDomain::Train);
Batch gen_gmm_batch(const DataConfig& cfg, std::uint64_t batch_index, SeedDomain domain = SeedDomain::Train);

// Dispatches on cfg.mode.
Batch gen_batch(const DataConfig& cfg, std::uint64_t batch_index, SeedDomain domain = SeedDomain::Train);

// Pads per-item [F, len] maps to a batch; frames beyond each length are zero.
Batch assemble_batch(const std::vector<Tensor>& x0_items, const std::vector<Tensor>& mu_items);

// Gaussian blur along bins and frames of a single [F, N] map, renormalized at the borders.
Tensor gaussian_blur(const Tensor& map, double radius);

// Evaluation batches drawn from the held-out seed domain.
class HeldOutStream {
public:
    HeldOutStream(DataConfig cfg, std::size_t count) : cfg_(std::move(cfg)), count_(count) {}
    bool has_next() const { return next_ < count_; }
    Batch next();
    std::size_t count() const { return count_; }

private:
    DataConfig cfg_;
    std::size_t count_;
    std::size_t next_ = 0;
};

HeldOutStream held_out_stream(const DataConfig& cfg, std::size_t count);

using DataSource = std::function<Batch(std::uint64_t batch_index)>;

// Training batches generated on demand from cfg.
DataSource synthetic_source(const DataConfig& cfg);

// Pinned dataset: one raw little-endian float32 file per item and tensor plus manifest.json.
void export_dataset(const DataConfig& cfg, std::size_t batches, const std::filesystem::path& dir,
                    std::uint64_t config_fingerprint = 0);
// Reads a pinned dataset back; batch i of the source returns the i-th exported batch
// (cycling). Throws IoError on malformed files.
std::vector<Batch> import_dataset(const std::filesystem::path& dir);

}  // namespace ectlab
