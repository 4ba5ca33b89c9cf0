#pragma once

#include <filesystem>

#include "kdetect/net.hpp"

namespace kdetect {

// Versioned little-endian weights file:
//   magic "RDW1" | u32 version | u64 config fingerprint | i32 epoch |
//   u32 tensor count | per tensor { u32 name length, name bytes, u32 ndim,
//   u64 dims..., u64 element offset } | u64 element count | float32 payload.
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace kdetect
