#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "vlprompt/tensor.hpp"

namespace vlp {

struct CheckpointMeta {
    std::string config_hash;
    std::uint64_t seed = 0;
    int epoch = 0;
    std::map<std::string, std::string> extra;  // free-form, e.g. prompt mask flags
};

/// Named-tensor container behind the MPCK file format.
/// Layout (all integers little-endian):
///   "MPCK" | u32 version | u32 meta_len | meta json |
///   u32 count | count x ( u32 name_len | name | u8 dtype | u8 rank |
///                         u64 extents[rank] | f32 payload )
/// Payloads are stored as 32-bit floats regardless of in-memory dtype.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    CheckpointMeta meta;
    NamedTensors tensors;

    const Tensor* find(const std::string& name) const;
    Tensor at(const std::string& name) const;  // throws IoError when missing
    bool has(const std::string& name) const { return find(name) != nullptr; }
};

/// Writes to a temporary file in the target directory, then renames, so a
/// crash cannot leave a torn checkpoint at `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Verifies magic, version, and per-entry length consistency. Truncation or
/// corruption raises IoError with the failing byte offset; nothing partial
/// is returned.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into same-named destination tensors (shapes must
/// match; dtype is converted). Missing names raise IoError.
void restore_tensors(const Checkpoint& ckpt, const NamedTensors& dst);

}  // namespace vlp
