#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "limcal/backbone.hpp"
#include "limcal/lim.hpp"

namespace limcal {

inline constexpr std::string_view kCheckpointMagic = "LIMCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian:
//   magic "LIMCKPT1" | u32 version | u32 section count
//   per section: str name | str config (`key=value` lines) | u32 tensor count
//     per tensor: str name | u32 rows | u32 cols | rows*cols f32 values
//   u64 FNV-1a digest of every preceding byte
// where str is a u32 byte length followed by the bytes.
struct Checkpoint {
  std::optional<BackboneParams> backbone;
  std::optional<LimParams> lim;      // nll objective
  std::optional<LimParams> lim_mse;  // reconstruction objective
};

std::string to_bytes(const Checkpoint& checkpoint);
// Throws ParseError on a bad magic, version, digest, layout or shape.
Checkpoint from_bytes(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace limcal
