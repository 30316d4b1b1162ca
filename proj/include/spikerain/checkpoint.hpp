#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spikerain/layers.hpp"

namespace spikerain {

/// Binary parameter container, all integers little-endian:
///
///   magic      8 bytes  "SPKRAIN\0"
///   version    u32      1
///   meta_len   u32      length of the UTF-8 metadata block
///   meta       bytes    run configuration text (key = value lines)
///   count      u32      number of entries
///   entry*     u32 name_len, name bytes, u8 dtype (0 = f64, 1 = f32),
///              u32 ndim, u64 extent * ndim, raw element data
struct Checkpoint {
  std::string meta;
  std::vector<NamedTensor> entries;

  const NamedTensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointDtype : std::uint8_t { kF64 = 0, kF32 = 1 };

std::string encode_checkpoint(const ParamList& tensors, const std::string& meta,
                              CheckpointDtype dtype = CheckpointDtype::kF64);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamList& tensors,
                     const std::string& meta, CheckpointDtype dtype = CheckpointDtype::kF64);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into same-named destination tensors. Every
/// destination must be present with a matching shape.
void restore_into(const ParamList& destination, const Checkpoint& ckpt);

}  // namespace spikerain
