#include "kdetect/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "kdetect/errors.hpp"

namespace kdetect {

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > size_) throw FormatError("truncated weights file");
        std::uint8_t buf[sizeof(T)];
        std::memcpy(buf, data_ + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, buf, sizeof(T));
        return value;
    }

    std::string get_string(std::size_t n) {
        if (pos_ + n > size_) throw FormatError("truncated weights file");
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    if (!weights.params.allFinite())
        throw NonFiniteUpdate("refusing to save non-finite weights");

    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), {'R', 'D', 'W', '1'});
    put<std::uint32_t>(bytes, 1);  // version
    put<std::uint64_t>(bytes, weights.fingerprint);
    put<std::int32_t>(bytes, weights.epoch);
    put<std::uint32_t>(bytes, static_cast<std::uint32_t>(weights.directory.size()));
    for (const TensorInfo& t : weights.directory) {
        put<std::uint32_t>(bytes, static_cast<std::uint32_t>(t.name.size()));
        bytes.insert(bytes.end(), t.name.begin(), t.name.end());
        put<std::uint32_t>(bytes, static_cast<std::uint32_t>(t.dims.size()));
        for (Eigen::Index d : t.dims) put<std::uint64_t>(bytes, static_cast<std::uint64_t>(d));
        put<std::uint64_t>(bytes, static_cast<std::uint64_t>(t.offset));
    }
    put<std::uint64_t>(bytes, static_cast<std::uint64_t>(weights.params.size()));
    for (Eigen::Index i = 0; i < weights.params.size(); ++i)
        put<float>(bytes, static_cast<float>(weights.params[i]));

    std::filesystem::path parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoFailure("write failed for " + path.string());
}

ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "RDW1", 4) != 0)
        throw BadMagic("not an RDW1 weights file: " + path.string());

    Reader r(bytes.data() + 4, bytes.size() - 4);
    const auto version = r.get<std::uint32_t>();
    if (version != 1) throw FormatError("unsupported weights version " + std::to_string(version));

    ModelWeights w;
    w.fingerprint = r.get<std::uint64_t>();
    w.epoch = r.get<std::int32_t>();
    const auto n_tensors = r.get<std::uint32_t>();
    Eigen::Index expected = 0;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        TensorInfo t;
        t.name = r.get_string(r.get<std::uint32_t>());
        const auto ndim = r.get<std::uint32_t>();
        Eigen::Index size = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            t.dims.push_back(static_cast<Eigen::Index>(r.get<std::uint64_t>()));
            size *= t.dims.back();
        }
        t.offset = static_cast<Eigen::Index>(r.get<std::uint64_t>());
        t.size = size;
        if (t.offset != expected)
            throw FormatError("tensor directory is not contiguous in " + path.string());
        expected += size;
        w.directory.push_back(std::move(t));
    }
    const auto count = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    if (count != expected)
        throw FormatError("payload length disagrees with the tensor directory");
    w.params.resize(count);
    for (Eigen::Index i = 0; i < count; ++i) w.params[i] = static_cast<double>(r.get<float>());
    if (!w.params.allFinite()) throw NonFiniteUpdate("weights file holds non-finite values");
    return w;
}

}  // namespace kdetect
