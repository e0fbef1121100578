#pragma once

// JSON mapping of the configuration structs, shared by the config loader and checkpoints.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ectlab/config.hpp"
#include "ectlab/error.hpp"

namespace ectlab::json_io {

using nlohmann::json;

// Typed access to one JSON object with field-path error messages. Reports keys that were
// never read as unknown.
class ObjectReader {
public:
    ObjectReader(const json& object, std::string path);

    void read(const char* key, double& out);
    void read(const char* key, int& out);
    void read(const char* key, std::int64_t& out);
    void read(const char* key, std::uint64_t& out);
    void read(const char* key, bool& out);
    void read(const char* key, std::string& out);
    void read(const char* key, std::vector<int>& out);

    const json* child(const char* key);
    std::string child_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
    void finish() const;

private:
    const json& object_;
    std::string path_;
    std::set<std::string> seen_;
};

json to_json(const ArchConfig& a);
json to_json(const ScheduleConfig& s);
json to_json(const DataConfig& d);
json to_json(const TrainerConfig& t);

void from_json(const json& j, const std::string& path, ArchConfig& a);
void from_json(const json& j, const std::string& path, ScheduleConfig& s);
void from_json(const json& j, const std::string& path, DataConfig& d);
void from_json(const json& j, const std::string& path, TrainerConfig& t);

}  // namespace ectlab::json_io
