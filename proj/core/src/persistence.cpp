#include "ectlab/persistence.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json_io.hpp"

namespace ectlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using json_io::json;

constexpr char kMagic[8] = {'E', 'C', 'T', 'L', 'A', 'B', 'C', 'K'};

struct Entry {
    std::string name;
    const Tensor* tensor;
};

std::vector<Entry> collect(const TrainState& s) {
    std::vector<Entry> out;
    for (std::size_t i = 0; i < s.params.size(); ++i) out.push_back({"param/" + s.params.name(i), &s.params[i]});
    for (std::size_t i = 0; i < s.opt.m.size(); ++i) out.push_back({"adam_m/" + s.params.name(i), &s.opt.m[i]});
    for (std::size_t i = 0; i < s.opt.v.size(); ++i) out.push_back({"adam_v/" + s.params.name(i), &s.opt.v[i]});
    if (s.ema) {
        for (std::size_t i = 0; i < s.ema->shadow.size(); ++i) {
            out.push_back({"ema/" + s.ema->shadow.name(i), &s.ema->shadow[i]});
        }
    }
    return out;
}

void put_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

std::uint64_t get_u64(const std::string& bytes, std::size_t at) {
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + at, 8);
    return v;
}

}  // namespace

std::string serialize_checkpoint(const TrainState& s) {
    const bool f32 = s.precision == Precision::Single;
    const auto entries = collect(s);
    json tensors = json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        tensors.push_back({{"name", e.name}, {"shape", e.tensor->shape()}, {"offset", offset}, {"count", e.tensor->size()}});
        offset += e.tensor->size();
    }
    json manifest = {{"format", "ectlab-checkpoint"},
                     {"version", kCheckpointVersion},
                     {"dtype", f32 ? "f32" : "f64"},
                     {"arch", json_io::to_json(s.arch)},
                     {"schedule", json_io::to_json(s.sched)},
                     {"phase", to_string(s.phase)},
                     {"step", s.step},
                     {"rng", s.rng.state()},
                     {"masked_norm", s.masked_norm},
                     {"precision", f32 ? "single" : "double"},
                     {"config_fingerprint", s.config_fingerprint},
                     {"optimizer",
                      {{"step", s.opt.step},
                       {"lr", s.opt.lr},
                       {"beta1", s.opt.beta1},
                       {"beta2", s.opt.beta2},
                       {"eps", s.opt.eps}}},
                     {"ema", s.ema ? json{{"decay", s.ema->decay}} : json(nullptr)},
                     {"tensors", tensors}};
    const std::string text = manifest.dump();

    std::string out(kMagic, 8);
    put_u64(out, text.size());
    out += text;
    out.append((8 - out.size() % 8) % 8, '\0');
    out.reserve(out.size() + offset * (f32 ? 4 : 8));
    for (const auto& e : entries) {
        for (double v : e.tensor->data()) {
            if (f32) {
                const float f = static_cast<float>(v);
                char buf[4];
                std::memcpy(buf, &f, 4);
                out.append(buf, 4);
            } else {
                char buf[8];
                std::memcpy(buf, &v, 8);
                out.append(buf, 8);
            }
        }
    }
    return out;
}

TrainState deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw CheckpointError(origin, "not an ectlab checkpoint");
    }
    const std::uint64_t len = get_u64(bytes, 8);
    if (len > bytes.size() - 16) throw CheckpointError(origin, "truncated manifest");
    json m;
    try {
        m = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const json::exception& e) {
        throw CheckpointError(origin, std::string("corrupt manifest: ") + e.what());
    }
    const std::size_t blob = (16 + len + 7) / 8 * 8;

    TrainState s;
    std::size_t elem = 8;
    try {
        if (m.at("format") != "ectlab-checkpoint") throw CheckpointError(origin, "wrong format tag");
        const int version = m.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError(origin, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                              std::to_string(kCheckpointVersion) + ")");
        }
        const std::string dtype = m.at("dtype").get<std::string>();
        if (dtype != "f32" && dtype != "f64") throw CheckpointError(origin, "unknown dtype " + dtype);
        elem = dtype == "f32" ? 4 : 8;
        json_io::from_json(m.at("arch"), "arch", s.arch);
        json_io::from_json(m.at("schedule"), "schedule", s.sched);
        const std::string phase = m.at("phase").get<std::string>();
        if (phase == "pretrain") {
            s.phase = Phase::Pretrain;
        } else if (phase == "tune") {
            s.phase = Phase::Tune;
        } else {
            throw CheckpointError(origin, "unknown phase " + phase);
        }
        s.step = m.at("step").get<std::int64_t>();
        s.rng.set_state(m.at("rng").get<std::string>());
        s.masked_norm = m.at("masked_norm").get<bool>();
        s.precision = m.at("precision").get<std::string>() == "single" ? Precision::Single : Precision::Double;
        s.config_fingerprint = m.at("config_fingerprint").get<std::uint64_t>();
        const json& o = m.at("optimizer");
        s.opt.step = o.at("step").get<std::int64_t>();
        s.opt.lr = o.at("lr").get<double>();
        s.opt.beta1 = o.at("beta1").get<double>();
        s.opt.beta2 = o.at("beta2").get<double>();
        s.opt.eps = o.at("eps").get<double>();
        if (!m.at("ema").is_null()) s.ema = EmaState{ModelParams{}, m.at("ema").at("decay").get<double>()};
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(origin, std::string("invalid manifest: ") + e.what());
    }

    struct Stored {
        Shape shape;
        std::uint64_t offset;
        std::uint64_t count;
    };
    std::unordered_map<std::string, Stored> stored;
    try {
        for (const auto& t : m.at("tensors")) {
            stored[t.at("name").get<std::string>()] = Stored{t.at("shape").get<Shape>(), t.at("offset").get<std::uint64_t>(),
                                                             t.at("count").get<std::uint64_t>()};
        }
    } catch (const std::exception& e) {
        throw CheckpointError(origin, std::string("invalid tensor table: ") + e.what());
    }
    const std::size_t blob_elems = bytes.size() >= blob ? (bytes.size() - blob) / elem : 0;

    auto load = [&](const std::string& key, const Shape& shape) {
        auto it = stored.find(key);
        if (it == stored.end()) throw CheckpointError(origin, "missing tensor " + key, key);
        const Stored& st = it->second;
        if (st.shape != shape) {
            throw CheckpointError(origin, "tensor " + key + " has shape " + to_string(st.shape) + ", expected " +
                                              to_string(shape), key);
        }
        std::size_t count = 1;
        for (auto d : shape) count *= d;
        if (st.count != count || st.offset + st.count > blob_elems) {
            throw CheckpointError(origin, "tensor " + key + " extends past the end of the file", key);
        }
        std::vector<double> values(count);
        const char* p = bytes.data() + blob + st.offset * elem;
        for (std::size_t i = 0; i < count; ++i) {
            if (elem == 4) {
                float f;
                std::memcpy(&f, p + 4 * i, 4);
                values[i] = f;
            } else {
                std::memcpy(&values[i], p + 8 * i, 8);
            }
        }
        return Tensor(shape, std::move(values));
    };

    const auto layout = param_layout(s.arch);
    for (const auto& [name, shape] : layout) s.params.add(name, load("param/" + name, shape));
    for (const auto& [name, shape] : layout) s.opt.m.push_back(load("adam_m/" + name, shape));
    for (const auto& [name, shape] : layout) s.opt.v.push_back(load("adam_v/" + name, shape));
    if (s.ema) {
        for (const auto& [name, shape] : layout) s.ema->shadow.add(name, load("ema/" + name, shape));
    }
    return s;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError(path.string(), "cannot open for writing");
        os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!os) throw IoError(path.string(), "write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(path.string(), "cannot open checkpoint");
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace ectlab
