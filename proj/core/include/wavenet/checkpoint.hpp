#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "wavenet/model.hpp"

namespace wavenet {

/// On-disk model format, little-endian throughout:
///   8-byte magic "WVNETCKP"
///   u32 format version (currently 1)
///   u32 config length, then that many bytes of ModelConfig JSON
///   u64 parameter count
///   float32 parameters in canonical traversal order (weights, then bias)
///   u64 FNV-1a checksum of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

void save_checkpoint(const WaveNetModel& model, const std::string& path);

/// Rebuilds the model from file. Throws FormatError on bad magic/version or
/// a header that disagrees with the payload, IntegrityError on truncation or
/// checksum mismatch, IoError when the file cannot be read.
WaveNetModel load_checkpoint(const std::string& path);

} // namespace wavenet
