#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "contmask/model.hpp"

namespace contmask {

inline constexpr char kCheckpointMagic[4] = {'C', 'M', 'F', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout: magic "CMFK", version u16, tensor count u32, then per tensor a
/// u16-length-prefixed UTF-8 name, rank u8, dims as u32, and the row-major
/// payload as little-endian f64. The model config travels as the rank-1
/// tensor "meta.config".
std::vector<std::uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace contmask
