#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "capgen/transformer.hpp"

namespace capgen {

// CAPM: "CAPM", u32 version=1, u32 config length + config JSON, then for every parameter
// u16 name_len, name, u8 rank, rank x u32 dims, f32 payload. Little-endian throughout.
inline constexpr std::uint32_t kCapmVersion = 1;

std::vector<std::uint8_t> save_checkpoint(const CaptionModel<float>& model);
CaptionModel<float> load_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace capgen
