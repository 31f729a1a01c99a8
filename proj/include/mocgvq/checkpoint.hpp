#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mocgvq/tensor.hpp"

namespace mocgvq {

/// On-disk model state. Little-endian binary: magic "MOCGVQ1\0", version,
/// input_dim, step count, RNG state, length-prefixed canonical config JSON,
/// then length-prefixed (name, rows, cols, f64 data) records. Record order is
/// preserved verbatim, so save -> load -> save is byte-identical.
struct CheckpointData {
    std::uint32_t version = 1;
    std::uint32_t input_dim = 0;
    std::uint64_t step_count = 0;
    std::uint64_t rng_state = 0;
    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> records;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'C', 'G', 'V', 'Q', '1', '\0'};

/// Atomic write (temp file + rename).
void write_checkpoint(const std::string& path, const CheckpointData& data);

/// Throws ParseError on missing file, bad magic, version or truncation.
CheckpointData read_checkpoint(const std::string& path);

/// FNV-1a hash of the file bytes, as 16 hex digits. Names diagnostics outputs.
std::string checkpoint_hash_hex(const std::string& path);

} // namespace mocgvq
