#include "kdetect/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "kdetect/errors.hpp"

namespace kdetect {

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<char> chunk(1 << 16);
    while (in) {
        in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
        h = fnv1a64(chunk.data(), static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

}  // namespace kdetect
