#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace kdetect {

// FNV-1a, used for config fingerprints and artifact integrity bookkeeping.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t value);
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace kdetect
