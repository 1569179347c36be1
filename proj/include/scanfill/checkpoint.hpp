#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "scanfill/errors.hpp"
#include "scanfill/tensor.hpp"

namespace scanfill {

using NamedTensors = std::vector<std::pair<std::string, ad::Tensorf>>;

/// Flat binary parameter file: "PCCF", u32 version, then for each entry
/// u32 name length, name bytes, u32 rank, u32 dims, little-endian f32 values.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Looks up an entry by name; throws IoError naming the missing entry.
const ad::Tensorf& find_tensor(const NamedTensors& tensors, const std::string& name);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace scanfill
