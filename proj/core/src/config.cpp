#include "ectlab/config.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace ectlab {

namespace json_io {

namespace {

const char* type_name(const json& v) { return v.type_name(); }

}  // namespace

ObjectReader::ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
}

#define ECTLAB_READ_SCALAR(Type, check, what)                                                         \
    void ObjectReader::read(const char* key, Type& out) {                                             \
        auto it = object_.find(key);                                                                  \
        if (it == object_.end()) return;                                                              \
        seen_.insert(key);                                                                            \
        if (!(check)) throw ConfigError(child_path(key), std::string("expected ") + what + ", got " + \
                                                             type_name(*it));                         \
        out = it->get<Type>();                                                                        \
    }

ECTLAB_READ_SCALAR(double, it->is_number(), "a number")
ECTLAB_READ_SCALAR(int, it->is_number_integer(), "an integer")
ECTLAB_READ_SCALAR(std::int64_t, it->is_number_integer(), "an integer")
ECTLAB_READ_SCALAR(std::uint64_t, it->is_number_unsigned(), "a non-negative integer")
ECTLAB_READ_SCALAR(bool, it->is_boolean(), "a boolean")
ECTLAB_READ_SCALAR(std::string, it->is_string(), "a string")

#undef ECTLAB_READ_SCALAR

void ObjectReader::read(const char* key, std::vector<int>& out) {
    auto it = object_.find(key);
    if (it == object_.end()) return;
    seen_.insert(key);
    if (!it->is_array()) throw ConfigError(child_path(key), "expected an array of integers");
    std::vector<int> values;
    for (std::size_t i = 0; i < it->size(); ++i) {
        if (!(*it)[i].is_number_integer()) {
            throw ConfigError(child_path(key) + "[" + std::to_string(i) + "]", "expected an integer");
        }
        values.push_back((*it)[i].get<int>());
    }
    out = std::move(values);
}

const json* ObjectReader::child(const char* key) {
    auto it = object_.find(key);
    if (it == object_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
}

void ObjectReader::finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
        if (!seen_.contains(it.key())) throw ConfigError(child_path(it.key().c_str()), "unknown field");
    }
}

json to_json(const ArchConfig& a) {
    return {{"depth", a.depth},
            {"base_width", a.base_width},
            {"width_mult", a.width_mult},
            {"time_features", a.time_features},
            {"embed_dim", a.embed_dim},
            {"msgate_enabled", a.msgate_enabled},
            {"fuse_bias_init", a.fuse_bias_init}};
}

json to_json(const ScheduleConfig& s) {
    return {{"sigma_min", s.sigma_min},   {"sigma_max", s.sigma_max}, {"sigma_data", s.sigma_data},
            {"rho", s.rho},               {"p_mean", s.p_mean},       {"p_std", s.p_std},
            {"anneal_doublings", s.anneal_doublings}, {"total_tune_steps", s.total_tune_steps}};
}

json to_json(const DataConfig& d) {
    json gmm = json::array();
    for (const auto& c : d.gmm) {
        gmm.push_back({{"mean", c.mean}, {"cov", c.cov}, {"weight", c.weight}});
    }
    return {{"mode", d.mode == DataMode::MelLike ? "mel_like" : "gmm2d"},
            {"mel_bins", d.mel_bins},
            {"n_min", d.n_min},
            {"n_max", d.n_max},
            {"tracks_min", d.tracks_min},
            {"tracks_max", d.tracks_max},
            {"ridge_width", d.ridge_width},
            {"blur_radius", d.blur_radius},
            {"prior_noise", d.prior_noise},
            {"target_std", d.target_std},
            {"gmm", gmm},
            {"seed", d.seed},
            {"batch_size", d.batch_size}};
}

json to_json(const TrainerConfig& t) {
    return {{"pretrain_steps", t.pretrain_steps},
            {"tune_steps", t.tune_steps},
            {"lr_pretrain", t.lr_pretrain},
            {"lr_tune", t.lr_tune},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_eps", t.adam_eps},
            {"ema_decay", t.ema_decay},
            {"clip_enabled", t.clip_enabled},
            {"clip_norm", t.clip_norm},
            {"masked_norm", t.masked_norm},
            {"edm_weighting", t.edm_weighting},
            {"precision", t.precision == Precision::Single ? "single" : "double"},
            {"checkpoint_every", t.checkpoint_every},
            {"log_every", t.log_every}};
}

void from_json(const json& j, const std::string& path, ArchConfig& a) {
    ObjectReader r(j, path);
    r.read("depth", a.depth);
    r.read("base_width", a.base_width);
    r.read("width_mult", a.width_mult);
    r.read("time_features", a.time_features);
    r.read("embed_dim", a.embed_dim);
    r.read("msgate_enabled", a.msgate_enabled);
    r.read("fuse_bias_init", a.fuse_bias_init);
    r.finish();
}

void from_json(const json& j, const std::string& path, ScheduleConfig& s) {
    ObjectReader r(j, path);
    r.read("sigma_min", s.sigma_min);
    r.read("sigma_max", s.sigma_max);
    r.read("sigma_data", s.sigma_data);
    r.read("rho", s.rho);
    r.read("p_mean", s.p_mean);
    r.read("p_std", s.p_std);
    r.read("anneal_doublings", s.anneal_doublings);
    r.read("total_tune_steps", s.total_tune_steps);
    r.finish();
}

namespace {

template <std::size_t N>
std::array<double, N> read_array(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != N) throw ConfigError(path, "expected an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        if (!j[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
        out[i] = j[i].get<double>();
    }
    return out;
}

}  // namespace

void from_json(const json& j, const std::string& path, DataConfig& d) {
    ObjectReader r(j, path);
    std::string mode = d.mode == DataMode::MelLike ? "mel_like" : "gmm2d";
    r.read("mode", mode);
    if (mode == "mel_like") {
        d.mode = DataMode::MelLike;
    } else if (mode == "gmm2d") {
        d.mode = DataMode::Gmm2D;
    } else {
        throw ConfigError(r.child_path("mode"), "expected \"mel_like\" or \"gmm2d\"");
    }
    r.read("mel_bins", d.mel_bins);
    r.read("n_min", d.n_min);
    r.read("n_max", d.n_max);
    r.read("tracks_min", d.tracks_min);
    r.read("tracks_max", d.tracks_max);
    r.read("ridge_width", d.ridge_width);
    r.read("blur_radius", d.blur_radius);
    r.read("prior_noise", d.prior_noise);
    r.read("target_std", d.target_std);
    r.read("seed", d.seed);
    r.read("batch_size", d.batch_size);
    if (const json* gmm = r.child("gmm")) {
        const std::string gpath = r.child_path("gmm");
        if (!gmm->is_array()) throw ConfigError(gpath, "expected an array of components");
        d.gmm.clear();
        for (std::size_t i = 0; i < gmm->size(); ++i) {
            const std::string cpath = gpath + "[" + std::to_string(i) + "]";
            ObjectReader cr((*gmm)[i], cpath);
            GmmComponent c;
            const json* mean = cr.child("mean");
            const json* cov = cr.child("cov");
            if (!mean) throw ConfigError(cpath + ".mean", "missing");
            if (!cov) throw ConfigError(cpath + ".cov", "missing");
            c.mean = read_array<2>(*mean, cpath + ".mean");
            c.cov = read_array<4>(*cov, cpath + ".cov");
            cr.read("weight", c.weight);
            cr.finish();
            d.gmm.push_back(c);
        }
    }
    r.finish();
}

void from_json(const json& j, const std::string& path, TrainerConfig& t) {
    ObjectReader r(j, path);
    r.read("pretrain_steps", t.pretrain_steps);
    r.read("tune_steps", t.tune_steps);
    r.read("lr_pretrain", t.lr_pretrain);
    r.read("lr_tune", t.lr_tune);
    r.read("beta1", t.beta1);
    r.read("beta2", t.beta2);
    r.read("adam_eps", t.adam_eps);
    r.read("ema_decay", t.ema_decay);
    r.read("clip_enabled", t.clip_enabled);
    r.read("clip_norm", t.clip_norm);
    r.read("masked_norm", t.masked_norm);
    r.read("edm_weighting", t.edm_weighting);
    std::string precision = t.precision == Precision::Single ? "single" : "double";
    r.read("precision", precision);
    if (precision == "single") {
        t.precision = Precision::Single;
    } else if (precision == "double") {
        t.precision = Precision::Double;
    } else {
        throw ConfigError(r.child_path("precision"), "expected \"single\" or \"double\"");
    }
    r.read("checkpoint_every", t.checkpoint_every);
    r.read("log_every", t.log_every);
    r.finish();
}

}  // namespace json_io

using json_io::json;

const char* to_string(SamplerMethod method) {
    switch (method) {
        case SamplerMethod::OneStep: return "onestep";
        case SamplerMethod::Euler: return "euler";
        case SamplerMethod::Heun: return "heun";
    }
    return "?";
}

SamplerMethod parse_sampler_method(std::string_view name) {
    if (name == "onestep") return SamplerMethod::OneStep;
    if (name == "euler") return SamplerMethod::Euler;
    if (name == "heun") return SamplerMethod::Heun;
    throw ConfigError("sampler.method", "expected onestep, euler or heun, got \"" + std::string(name) + "\"");
}

void RunConfig::validate() const {
    data.validate();
    schedule.validate();
    arch.validate();
    trainer.validate();
    if (data.mode == DataMode::MelLike && std::abs(data.target_std - schedule.sigma_data) > 1e-12) {
        throw ConfigError("data.target_std", "must equal schedule.sigma_data");
    }
    if (trainer.tune_steps > schedule.total_tune_steps + 1) {
        throw ConfigError("trainer.tune_steps", "exceeds schedule.total_tune_steps");
    }
    if (sampler.n_steps < 1) throw ConfigError("sampler.n_steps", "must be >= 1");
    if (eval.n_samples < 1) throw ConfigError("eval.n_samples", "must be >= 1");
    if (eval.consistency_trajectories < 0) throw ConfigError("eval.consistency_trajectories", "must be >= 0");
    if (eval.consistency_steps < 1) throw ConfigError("eval.consistency_steps", "must be >= 1");
}

RunConfig parse_run_config(std::string_view json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
    }
    RunConfig cfg;
    json_io::ObjectReader r(root, "");
    r.read("name", cfg.name);
    r.read("seed", cfg.seed);
    r.read("output_dir", cfg.output_dir);
    if (const json* d = r.child("data")) json_io::from_json(*d, "data", cfg.data);
    bool explicit_total = false;
    if (const json* s = r.child("schedule")) {
        explicit_total = s->is_object() && s->contains("total_tune_steps");
        json_io::from_json(*s, "schedule", cfg.schedule);
    }
    if (const json* a = r.child("arch")) {
        if (a->is_object() && a->contains("msgate_enabled")) {
            throw ConfigError("arch.msgate_enabled", "set through ablation.msgate");
        }
        json_io::from_json(*a, "arch", cfg.arch);
    }
    if (const json* t = r.child("trainer")) {
        if (t->is_object() && t->contains("masked_norm")) {
            throw ConfigError("trainer.masked_norm", "set through ablation.masked_norm");
        }
        json_io::from_json(*t, "trainer", cfg.trainer);
    }
    if (const json* s = r.child("sampler")) {
        json_io::ObjectReader sr(*s, "sampler");
        std::string method = to_string(cfg.sampler.method);
        sr.read("method", method);
        cfg.sampler.method = parse_sampler_method(method);
        sr.read("n_steps", cfg.sampler.n_steps);
        sr.read("use_ema", cfg.sampler.use_ema);
        sr.finish();
    }
    if (const json* e = r.child("eval")) {
        json_io::ObjectReader er(*e, "eval");
        er.read("n_samples", cfg.eval.n_samples);
        er.read("consistency_trajectories", cfg.eval.consistency_trajectories);
        er.read("consistency_steps", cfg.eval.consistency_steps);
        er.finish();
    }
    if (const json* ab = r.child("ablation")) {
        json_io::ObjectReader ar(*ab, "ablation");
        ar.read("msgate", cfg.arch.msgate_enabled);
        ar.read("masked_norm", cfg.trainer.masked_norm);
        ar.read("consistency_tuning", cfg.tuning_enabled);
        ar.finish();
    }
    r.finish();
    if (!explicit_total) cfg.schedule.total_tune_steps = std::max<std::int64_t>(1, cfg.trainer.tune_steps);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError(path.string(), "cannot open config");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

std::string canonical_json(const RunConfig& cfg) {
    json arch = json_io::to_json(cfg.arch);
    arch.erase("msgate_enabled");
    json trainer = json_io::to_json(cfg.trainer);
    trainer.erase("masked_norm");
    json root = {{"name", cfg.name},
                 {"seed", cfg.seed},
                 {"output_dir", cfg.output_dir},
                 {"data", json_io::to_json(cfg.data)},
                 {"schedule", json_io::to_json(cfg.schedule)},
                 {"arch", arch},
                 {"trainer", trainer},
                 {"sampler",
                  {{"method", to_string(cfg.sampler.method)},
                   {"n_steps", cfg.sampler.n_steps},
                   {"use_ema", cfg.sampler.use_ema}}},
                 {"eval",
                  {{"n_samples", cfg.eval.n_samples},
                   {"consistency_trajectories", cfg.eval.consistency_trajectories},
                   {"consistency_steps", cfg.eval.consistency_steps}}},
                 {"ablation",
                  {{"msgate", cfg.arch.msgate_enabled},
                   {"masked_norm", cfg.trainer.masked_norm},
                   {"consistency_tuning", cfg.tuning_enabled}}}};
    return root.dump();
}

std::uint64_t config_fingerprint(const RunConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical_json(cfg)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fingerprint_hex(std::uint64_t fingerprint) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint));
    return buf;
}

std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    const char* root = std::getenv("ECTLAB_OUT");
    return std::filesystem::path(root && *root ? root : "runs") / cfg.name;
}

}  // namespace ectlab
