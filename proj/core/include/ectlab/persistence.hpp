#pragma once

#include <filesystem>
#include <string>

#include "ectlab/error.hpp"
#include "ectlab/trainer.hpp"

namespace ectlab {

inline constexpr int kCheckpointVersion = 1;

// File layout (all integers little-endian):
//   bytes 0..7    magic "ECTLABCK"
//   bytes 8..15   u64 manifest length L
//   bytes 16..    L bytes of JSON manifest (sorted keys, no whitespace)
//   zero padding to the next multiple of 8
//   blob          tensors back to back as f32 or f64 (manifest "dtype")
// Manifest tensor entries carry name, shape, offset and count; offsets are in elements from
// the blob start.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

// Serialized bytes, exposed for golden-file tests.
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

// Structured failure while reading a checkpoint; `tensor` names the offending tensor when known.
struct CheckpointError : IoError {
    CheckpointError(std::string path, const std::string& message, std::string tensor = {})
        : IoError(std::move(path), message), tensor(std::move(tensor)) {}
    std::string tensor;
};

// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace ectlab
