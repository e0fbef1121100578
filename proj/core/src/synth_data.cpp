#include "ectlab/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ectlab/error.hpp"
#include "ectlab/rng.hpp"

namespace ectlab {

using nlohmann::json;

std::vector<GmmComponent> DataConfig::default_gmm() {
    std::vector<GmmComponent> out;
    for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
            out.push_back({{0.45 * sx, 0.45 * sy}, {0.0144, 0.0, 0.0, 0.0144}, 0.25});
        }
    }
    return out;
}

void DataConfig::validate() const {
    if (mode == DataMode::MelLike) {
        if (mel_bins < 3) throw ConfigError("data.mel_bins", "must be >= 3");
        if (n_min < 8) throw ConfigError("data.n_min", "must be >= 8");
        if (n_max < n_min) throw ConfigError("data.n_max", "must be >= n_min");
        if (tracks_min < 1) throw ConfigError("data.tracks_min", "must be >= 1");
        if (tracks_max < tracks_min) throw ConfigError("data.tracks_max", "must be >= tracks_min");
        if (!(ridge_width > 0.0)) throw ConfigError("data.ridge_width", "must be positive");
        if (!(blur_radius >= 0.0)) throw ConfigError("data.blur_radius", "must be non-negative");
        if (!(prior_noise >= 0.0)) throw ConfigError("data.prior_noise", "must be non-negative");
    } else {
        if (gmm.empty()) throw ConfigError("data.gmm", "needs at least one component");
        double total = 0.0;
        for (std::size_t i = 0; i < gmm.size(); ++i) {
            const auto& c = gmm[i];
            const std::string path = "data.gmm[" + std::to_string(i) + "]";
            if (!(c.weight > 0.0)) throw ConfigError(path + ".weight", "must be positive");
            total += c.weight;
            const double det = c.cov[0] * c.cov[3] - c.cov[1] * c.cov[2];
            if (c.cov[1] != c.cov[2] || !(c.cov[0] > 0.0) || !(det > 0.0)) {
                throw ConfigError(path + ".cov", "must be symmetric positive-definite");
            }
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("data.gmm", "weights must sum to 1");
    }
    if (!(target_std > 0.0)) throw ConfigError("data.target_std", "must be positive");
    if (batch_size < 1) throw ConfigError("data.batch_size", "must be >= 1");
}

Tensor gaussian_blur(const Tensor& map, double radius) {
    require_rank(map, 2, "gaussian_blur");
    if (radius <= 0.0) return map;
    const std::size_t rows = map.dim(0), cols = map.dim(1);
    const auto half = static_cast<std::ptrdiff_t>(std::ceil(3.0 * radius));
    std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
    for (std::ptrdiff_t i = -half; i <= half; ++i) {
        kernel[static_cast<std::size_t>(i + half)] = std::exp(-0.5 * static_cast<double>(i * i) / (radius * radius));
    }
    auto pass = [&](const Tensor& in, bool along_cols) {
        Tensor out(in.shape());
        const auto n = static_cast<std::ptrdiff_t>(along_cols ? cols : rows);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const auto pos = static_cast<std::ptrdiff_t>(along_cols ? c : r);
                double acc = 0.0, norm = 0.0;
                for (std::ptrdiff_t i = -half; i <= half; ++i) {
                    const std::ptrdiff_t q = pos + i;
                    if (q < 0 || q >= n) continue;
                    const double w = kernel[static_cast<std::size_t>(i + half)];
                    const auto uq = static_cast<std::size_t>(q);
                    acc += w * (along_cols ? in[r * cols + uq] : in[uq * cols + c]);
                    norm += w;
                }
                out[r * cols + c] = acc / norm;
            }
        }
        return out;
    };
    return pass(pass(map, true), false);
}

namespace {

struct Item {
    Tensor x0;  // [F, len]
    Tensor mu;
};

Item render_mel_item(const DataConfig& cfg, Rng& rng) {
    const auto bins = static_cast<std::size_t>(cfg.mel_bins);
    const auto len = static_cast<std::size_t>(rng.uniform_int(cfg.n_min, cfg.n_max));
    const auto tracks = rng.uniform_int(cfg.tracks_min, cfg.tracks_max);
    constexpr double two_pi = 2.0 * std::numbers::pi;

    // Harmonic stack over a slowly drifting fundamental; amplitudes decay with the harmonic index.
    const double top = static_cast<double>(bins) - 2.0;
    const double f0_base = 1.0 + rng.uniform() * std::max(0.5, top / static_cast<double>(tracks + 1) - 1.0);
    const double drift = 0.15 * f0_base * rng.uniform();
    const double period = 12.0 + 36.0 * rng.uniform();
    const double phase = two_pi * rng.uniform();
    Tensor x0({bins, len});
    for (std::int64_t k = 0; k < tracks; ++k) {
        const double amp = (0.6 + 0.8 * rng.uniform()) / static_cast<double>(k + 1);
        const double am_period = 8.0 + 40.0 * rng.uniform();
        const double am_phase = two_pi * rng.uniform();
        const double order = static_cast<double>(k + 1);
        for (std::size_t j = 0; j < len; ++j) {
            const double t = static_cast<double>(j);
            const double centre = order * (f0_base + drift * std::sin(two_pi * t / period + phase));
            const double a = amp * (0.7 + 0.3 * std::sin(two_pi * t / am_period + am_phase));
            for (std::size_t f = 0; f < bins; ++f) {
                const double d = (static_cast<double>(f) - centre) / cfg.ridge_width;
                x0[f * len + j] += a * std::exp(-0.5 * d * d);
            }
        }
    }

    double mean = 0.0;
    for (double v : x0.data()) mean += v;
    mean /= static_cast<double>(x0.size());
    double var = 0.0;
    for (double v : x0.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x0.size());
    if (!(var > 0.0)) throw NumericError("degenerate synthetic item (zero variance)");
    const double scale = cfg.target_std / std::sqrt(var);
    for (double& v : x0.data()) v = (v - mean) * scale;

    Tensor mu = gaussian_blur(x0, cfg.blur_radius);
    if (cfg.prior_noise > 0.0) {
        for (double& v : mu.data()) v += cfg.prior_noise * rng.normal();
    }
    return {std::move(x0), std::move(mu)};
}

std::array<double, 2> draw_gmm(const DataConfig& cfg, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    const GmmComponent* comp = &cfg.gmm.back();
    for (const auto& c : cfg.gmm) {
        acc += c.weight;
        if (u < acc) {
            comp = &c;
            break;
        }
    }
    // Cholesky of the 2x2 covariance.
    const double l00 = std::sqrt(comp->cov[0]);
    const double l10 = comp->cov[2] / l00;
    const double l11 = std::sqrt(comp->cov[3] - l10 * l10);
    const double z0 = rng.normal(), z1 = rng.normal();
    return {comp->mean[0] + l00 * z0, comp->mean[1] + l10 * z0 + l11 * z1};
}

}  // namespace

Batch assemble_batch(const std::vector<Tensor>& x0_items, const std::vector<Tensor>& mu_items) {
    if (x0_items.empty() || x0_items.size() != mu_items.size()) throw ArgumentError("assemble_batch: bad item lists");
    const std::size_t bins = x0_items.front().dim(0);
    std::size_t frames = 0;
    std::vector<std::size_t> lengths;
    for (std::size_t i = 0; i < x0_items.size(); ++i) {
        require_rank(x0_items[i], 2, "batch item");
        require_same_shape(x0_items[i], mu_items[i], "batch item x0 vs mu");
        if (x0_items[i].dim(0) != bins) throw ShapeError("assemble_batch: bin count differs between items");
        lengths.push_back(x0_items[i].dim(1));
        frames = std::max(frames, lengths.back());
    }
    Batch batch;
    const std::size_t n = x0_items.size();
    batch.x0 = Tensor({n, 1, bins, frames});
    batch.mu = Tensor({n, 1, bins, frames});
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t len = lengths[b];
        for (std::size_t f = 0; f < bins; ++f) {
            for (std::size_t j = 0; j < len; ++j) {
                batch.x0.at(b, 0, f, j) = x0_items[b][f * len + j];
                batch.mu.at(b, 0, f, j) = mu_items[b][f * len + j];
            }
        }
    }
    batch.mask = FrameMask(lengths, frames);
    batch.lengths = std::move(lengths);
    return batch;
}

Batch gen_mel_batch(const DataConfig& cfg, std::uint64_t batch_index, SeedDomain domain) {
    cfg.validate();
    std::vector<Tensor> xs, mus;
    for (int i = 0; i < cfg.batch_size; ++i) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(domain), batch_index, static_cast<std::uint64_t>(i)));
        Item item = render_mel_item(cfg, rng);
        xs.push_back(std::move(item.x0));
        mus.push_back(std::move(item.mu));
    }
    return assemble_batch(xs, mus);
}

Batch gen_gmm_batch(const DataConfig& cfg, std::uint64_t batch_index, SeedDomain domain) {
    if (cfg.mode != DataMode::Gmm2D) throw ConfigError("data.mode", "gen_gmm_batch requires Gmm2D mode");
    cfg.validate();
    std::array<double, 2> global{};
    for (const auto& c : cfg.gmm) {
        global[0] += c.weight * c.mean[0];
        global[1] += c.weight * c.mean[1];
    }
    std::vector<Tensor> xs, mus;
    for (int i = 0; i < cfg.batch_size; ++i) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(domain), batch_index, static_cast<std::uint64_t>(i)));
        const auto p = draw_gmm(cfg, rng);
        xs.emplace_back(Shape{2, 1}, std::vector<double>{p[0], p[1]});
        mus.emplace_back(Shape{2, 1}, std::vector<double>{global[0], global[1]});
    }
    return assemble_batch(xs, mus);
}

Batch gen_batch(const DataConfig& cfg, std::uint64_t batch_index, SeedDomain domain) {
    return cfg.mode == DataMode::MelLike ? gen_mel_batch(cfg, batch_index, domain)
                                         : gen_gmm_batch(cfg, batch_index, domain);
}

Batch HeldOutStream::next() {
    if (!has_next()) throw UsageError("held-out stream exhausted");
    return gen_batch(cfg_, next_++, SeedDomain::HeldOut);
}

HeldOutStream held_out_stream(const DataConfig& cfg, std::size_t count) { return HeldOutStream(cfg, count); }

DataSource synthetic_source(const DataConfig& cfg) {
    cfg.validate();
    return [cfg](std::uint64_t index) { return gen_batch(cfg, index, SeedDomain::Train); };
}

namespace {

void write_f32(const std::filesystem::path& path, const Tensor& t, std::size_t b, std::size_t len) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path.string(), "cannot open for writing");
    const std::size_t bins = t.dim(2);
    for (std::size_t f = 0; f < bins; ++f) {
        for (std::size_t j = 0; j < len; ++j) {
            const float v = static_cast<float>(t.at(b, 0, f, j));
            unsigned char bytes[4];
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            for (int k = 0; k < 4; ++k) bytes[k] = static_cast<unsigned char>((u >> (8 * k)) & 0xffu);
            os.write(reinterpret_cast<const char*>(bytes), 4);
        }
    }
    if (!os) throw IoError(path.string(), "write failed");
}

Tensor read_f32(const std::filesystem::path& path, std::size_t bins, std::size_t len) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path.string(), "cannot open for reading");
    Tensor out({bins, len});
    for (std::size_t i = 0; i < out.size(); ++i) {
        unsigned char bytes[4];
        if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw IoError(path.string(), "truncated float32 payload");
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(bytes[k]) << (8 * k);
        float v;
        std::memcpy(&v, &u, 4);
        out[i] = v;
    }
    return out;
}

}  // namespace

void export_dataset(const DataConfig& cfg, std::size_t batches, const std::filesystem::path& dir,
                    std::uint64_t config_fingerprint) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    json manifest;
    manifest["format"] = "ectlab-dataset";
    manifest["version"] = 1;
    manifest["mode"] = cfg.mode == DataMode::MelLike ? "mel_like" : "gmm2d";
    manifest["seed"] = cfg.seed;
    manifest["batch_size"] = cfg.batch_size;
    manifest["config_fingerprint"] = config_fingerprint;
    json items = json::array();
    for (std::size_t bi = 0; bi < batches; ++bi) {
        const Batch batch = gen_batch(cfg, bi);
        const std::size_t bins = batch.x0.dim(2);
        for (std::size_t b = 0; b < batch.lengths.size(); ++b) {
            char stem[64];
            std::snprintf(stem, sizeof stem, "b%05zu_i%03zu", bi, b);
            write_f32(dir / (std::string(stem) + ".x0.f32"), batch.x0, b, batch.lengths[b]);
            write_f32(dir / (std::string(stem) + ".mu.f32"), batch.mu, b, batch.lengths[b]);
            items.push_back({{"batch", bi},
                             {"item", b},
                             {"bins", bins},
                             {"frames", batch.lengths[b]},
                             {"x0", std::string(stem) + ".x0.f32"},
                             {"mu", std::string(stem) + ".mu.f32"},
                             {"item_seed", mix_seed(cfg.seed, static_cast<std::uint64_t>(SeedDomain::Train), bi, b)}});
        }
    }
    manifest["items"] = std::move(items);
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError((dir / "manifest.json").string(), "cannot open for writing");
    os << manifest.dump(2) << '\n';
}

std::vector<Batch> import_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw IoError(manifest_path.string(), "cannot open for reading");
    json manifest;
    try {
        manifest = json::parse(is);
    } catch (const json::exception& e) {
        throw IoError(manifest_path.string(), std::string("malformed manifest: ") + e.what());
    }
    if (manifest.value("format", "") != "ectlab-dataset") throw IoError(manifest_path.string(), "not an ectlab dataset");
    std::vector<Batch> out;
    std::vector<Tensor> xs, mus;
    std::size_t current = 0;
    auto flush = [&] {
        if (!xs.empty()) out.push_back(assemble_batch(xs, mus));
        xs.clear();
        mus.clear();
    };
    for (const auto& item : manifest.at("items")) {
        const auto bi = item.at("batch").get<std::size_t>();
        if (bi != current) {
            flush();
            current = bi;
        }
        const auto bins = item.at("bins").get<std::size_t>(), frames = item.at("frames").get<std::size_t>();
        xs.push_back(read_f32(dir / item.at("x0").get<std::string>(), bins, frames));
        mus.push_back(read_f32(dir / item.at("mu").get<std::string>(), bins, frames));
    }
    flush();
    return out;
}

}  // namespace ectlab
