#include "kdetect/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "kdetect/errors.hpp"

namespace kdetect {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_gzip_path(const std::filesystem::path& path) {
    return has_suffix(path.string(), ".gz");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw IoFailure("no such file: " + path.string());
    std::vector<std::uint8_t> bytes;
    if (is_gzip_path(path)) {
        gzFile gz = gzopen(path.string().c_str(), "rb");
        if (!gz) throw IoFailure("cannot open " + path.string());
        std::array<std::uint8_t, 1 << 16> chunk;
        int n = 0;
        while ((n = gzread(gz, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0)
            bytes.insert(bytes.end(), chunk.data(), chunk.data() + n);
        const bool bad = n < 0;
        gzclose(gz);
        if (bad) throw IoFailure("gzip decompression failed for " + path.string());
    } else {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoFailure("cannot open " + path.string());
        in.seekg(0, std::ios::end);
        bytes.resize(static_cast<std::size_t>(in.tellg()));
        in.seekg(0);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!in) throw IoFailure("short read on " + path.string());
    }
    return bytes;
}

template <typename T>
T load_scalar(const std::uint8_t* p, bool swap) {
    std::array<std::uint8_t, sizeof(T)> buf;
    std::memcpy(buf.data(), p, sizeof(T));
    if (swap) std::reverse(buf.begin(), buf.end());
    T value;
    std::memcpy(&value, buf.data(), sizeof(T));
    return value;
}

template <typename T>
void store_le(std::uint8_t* p, T value) {
    std::memcpy(p, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(p, p + sizeof(T));
    }
}

struct DtypeInfo {
    NiftiDtype dtype;
    int bitpix;
};

const DtypeInfo kSupported[] = {
    {NiftiDtype::uint8, 8},   {NiftiDtype::int16, 16}, {NiftiDtype::int32, 32},
    {NiftiDtype::float32, 32}, {NiftiDtype::float64, 64},
};

const DtypeInfo* dtype_info(std::int16_t code) {
    for (const auto& info : kSupported)
        if (static_cast<std::int16_t>(info.dtype) == code) return &info;
    return nullptr;
}

double decode_voxel(const std::uint8_t* p, NiftiDtype dtype, bool swap) {
    switch (dtype) {
        case NiftiDtype::uint8:
            return static_cast<double>(*p);
        case NiftiDtype::int16:
            return static_cast<double>(load_scalar<std::int16_t>(p, swap));
        case NiftiDtype::int32:
            return static_cast<double>(load_scalar<std::int32_t>(p, swap));
        case NiftiDtype::float32:
            return static_cast<double>(load_scalar<float>(p, swap));
        case NiftiDtype::float64:
            return load_scalar<double>(p, swap);
    }
    throw UnsupportedDatatype("unreachable datatype code");
}

}  // namespace

int nifti_dtype_bitpix(NiftiDtype dtype) {
    const auto* info = dtype_info(static_cast<std::int16_t>(dtype));
    if (!info) throw UnsupportedDatatype("datatype code " + std::to_string(static_cast<int>(dtype)));
    return info->bitpix;
}

NiftiHeader parse_nifti_header(const std::uint8_t* bytes, std::size_t size) {
    if (size < kHeaderSize)
        throw TruncatedPixelData("file shorter than the 348-byte NIfTI-1 header");

    NiftiHeader hdr;
    hdr.sizeof_hdr = load_scalar<std::int32_t>(bytes + 0, false);
    if (hdr.sizeof_hdr != 348) {
        const std::int32_t swapped = load_scalar<std::int32_t>(bytes + 0, true);
        if (swapped != 348)
            throw BadMagic("sizeof_hdr is not 348 in either byte order");
        hdr.swapped = true;
        hdr.sizeof_hdr = swapped;
    }
    const bool swap = hdr.swapped;

    std::memcpy(hdr.magic.data(), bytes + 344, 4);
    const bool single_file = std::memcmp(hdr.magic.data(), "n+1\0", 4) == 0;
    if (!single_file) {
        if (std::memcmp(hdr.magic.data(), "ni1\0", 4) == 0)
            throw BadMagic("paired-file NIfTI (\"ni1\") is not supported");
        throw BadMagic("magic is neither \"n+1\" nor \"ni1\"");
    }

    for (int i = 0; i < 8; ++i)
        hdr.dim[i] = load_scalar<std::int16_t>(bytes + 40 + 2 * i, swap);
    hdr.datatype = load_scalar<std::int16_t>(bytes + 70, swap);
    hdr.bitpix = load_scalar<std::int16_t>(bytes + 72, swap);
    for (int i = 0; i < 8; ++i)
        hdr.pixdim[i] = load_scalar<float>(bytes + 76 + 4 * i, swap);
    hdr.vox_offset = load_scalar<float>(bytes + 108, swap);
    hdr.scl_slope = load_scalar<float>(bytes + 112, swap);
    hdr.scl_inter = load_scalar<float>(bytes + 116, swap);
    hdr.qform_code = load_scalar<std::int16_t>(bytes + 252, swap);
    hdr.sform_code = load_scalar<std::int16_t>(bytes + 254, swap);
    for (int i = 0; i < 6; ++i)
        hdr.quatern[i] = load_scalar<float>(bytes + 256 + 4 * i, swap);
    for (int i = 0; i < 12; ++i)
        hdr.srow[i] = load_scalar<float>(bytes + 280 + 4 * i, swap);

    if (hdr.dim[0] != 3 && hdr.dim[0] != 4)
        throw UnsupportedDimension("dim[0] must be 3 or 4, got " + std::to_string(hdr.dim[0]));
    if (hdr.dim[0] == 4 && hdr.dim[4] != 1)
        throw UnsupportedDimension("4-D volumes are accepted only with a single timepoint");
    for (int i = 1; i <= 3; ++i)
        if (hdr.dim[i] < 1)
            throw UnsupportedDimension("dim[" + std::to_string(i) + "] must be >= 1");

    const auto* info = dtype_info(hdr.datatype);
    if (!info)
        throw UnsupportedDatatype("datatype code " + std::to_string(hdr.datatype));
    if (hdr.bitpix != info->bitpix)
        throw UnsupportedDatatype("bitpix " + std::to_string(hdr.bitpix) +
                                  " inconsistent with datatype " + std::to_string(hdr.datatype));
    return hdr;
}

Volume read_nifti(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    const NiftiHeader hdr = parse_nifti_header(bytes.data(), bytes.size());

    const Eigen::Index nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
    const std::size_t nvox = static_cast<std::size_t>(nx) * ny * nz;
    const std::size_t voxel_bytes = static_cast<std::size_t>(hdr.bitpix) / 8;
    if (!(hdr.vox_offset >= 348.0f) || !std::isfinite(hdr.vox_offset))
        throw BadMagic("vox_offset must be >= 348 for single-file NIfTI");
    const std::size_t offset = static_cast<std::size_t>(hdr.vox_offset);
    if (bytes.size() < offset + nvox * voxel_bytes)
        throw TruncatedPixelData("need " + std::to_string(offset + nvox * voxel_bytes) +
                                 " bytes, file has " + std::to_string(bytes.size()));

    Volume vol;
    vol.shape = {nx, ny, nz};
    for (int i = 0; i < 3; ++i) {
        const double s = hdr.pixdim[i + 1];
        if (!(s > 0.0) || !std::isfinite(s))
            throw UnsupportedDimension("pixdim[" + std::to_string(i + 1) + "] must be positive");
        vol.spacing[i] = s;
    }

    const auto dtype = static_cast<NiftiDtype>(hdr.datatype);
    const bool rescale = hdr.scl_slope != 0.0f;
    const double slope = rescale ? static_cast<double>(hdr.scl_slope) : 1.0;
    const double inter = rescale ? static_cast<double>(hdr.scl_inter) : 0.0;
    vol.data.resize(static_cast<Eigen::Index>(nvox));
    const std::uint8_t* p = bytes.data() + offset;
    for (std::size_t v = 0; v < nvox; ++v, p += voxel_bytes) {
        const double raw = decode_voxel(p, dtype, hdr.swapped);
        const double value = raw * slope + inter;
        if (!std::isfinite(value))
            throw NonFiniteVoxel("voxel " + std::to_string(v) + " is not finite after scaling");
        vol.data[static_cast<Eigen::Index>(v)] = value;
    }

    // Geometry: prefer the affine sform, fall back to the qform quaternion,
    // else identity. Direction cosines are adopted verbatim, no reorientation.
    if (hdr.sform_code > 0) {
        Eigen::Matrix3d m;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m(r, c) = hdr.srow[4 * r + c];
        for (int c = 0; c < 3; ++c) {
            const double norm = m.col(c).norm();
            vol.orientation.col(c) = norm > 0 ? (m.col(c) / norm).eval() : Eigen::Vector3d::Unit(c);
        }
        vol.origin = Eigen::Vector3d(hdr.srow[3], hdr.srow[7], hdr.srow[11]);
    } else if (hdr.qform_code > 0) {
        const double b = hdr.quatern[0], c = hdr.quatern[1], d = hdr.quatern[2];
        const double a = std::sqrt(std::max(0.0, 1.0 - b * b - c * c - d * d));
        Eigen::Matrix3d r;
        r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
             2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
             2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c;
        const double qfac = hdr.pixdim[0] < 0.0f ? -1.0 : 1.0;
        r.col(2) *= qfac;
        vol.orientation = r;
        vol.origin = Eigen::Vector3d(hdr.quatern[3], hdr.quatern[4], hdr.quatern[5]);
    }

    vol.source_id = path.filename().string();
    validate(vol);
    return vol;
}

void write_nifti(const Volume& vol, const std::filesystem::path& path, NiftiDtype dtype) {
    validate(vol);
    const int bitpix = nifti_dtype_bitpix(dtype);
    const std::size_t voxel_bytes = static_cast<std::size_t>(bitpix) / 8;
    const std::size_t nvox = static_cast<std::size_t>(vol.size());

    double lo = 0.0, hi = 0.0;
    switch (dtype) {
        case NiftiDtype::uint8: lo = 0.0; hi = 255.0; break;
        case NiftiDtype::int16: lo = -32768.0; hi = 32767.0; break;
        case NiftiDtype::int32: lo = -2147483648.0; hi = 2147483647.0; break;
        default: break;
    }
    const bool integral = dtype == NiftiDtype::uint8 || dtype == NiftiDtype::int16 ||
                          dtype == NiftiDtype::int32;
    if (integral) {
        const double vmin = vol.data.minCoeff();
        const double vmax = vol.data.maxCoeff();
        if (vmin < lo || vmax > hi)
            throw ValueOutOfRangeForDtype("value range [" + std::to_string(vmin) + ", " +
                                          std::to_string(vmax) + "] exceeds dtype range");
    }

    std::vector<std::uint8_t> bytes(kVoxOffset + nvox * voxel_bytes, 0);

    store_le<std::int32_t>(bytes.data() + 0, 348);
    std::int16_t dim[8] = {3,
                           static_cast<std::int16_t>(vol.shape[0]),
                           static_cast<std::int16_t>(vol.shape[1]),
                           static_cast<std::int16_t>(vol.shape[2]),
                           1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) store_le<std::int16_t>(bytes.data() + 40 + 2 * i, dim[i]);
    store_le<std::int16_t>(bytes.data() + 70, static_cast<std::int16_t>(dtype));
    store_le<std::int16_t>(bytes.data() + 72, static_cast<std::int16_t>(bitpix));
    float pixdim[8] = {1.0f,
                       static_cast<float>(vol.spacing[0]),
                       static_cast<float>(vol.spacing[1]),
                       static_cast<float>(vol.spacing[2]),
                       1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) store_le<float>(bytes.data() + 76 + 4 * i, pixdim[i]);
    store_le<float>(bytes.data() + 108, static_cast<float>(kVoxOffset));
    store_le<float>(bytes.data() + 112, 1.0f);  // scl_slope
    store_le<float>(bytes.data() + 116, 0.0f);  // scl_inter
    store_le<std::int16_t>(bytes.data() + 252, 0);  // qform_code
    store_le<std::int16_t>(bytes.data() + 254, 1);  // sform_code
    const Eigen::Matrix3d m = vol.orientation * vol.spacing.asDiagonal();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c)
            store_le<float>(bytes.data() + 280 + 4 * (4 * r + c), static_cast<float>(m(r, c)));
        store_le<float>(bytes.data() + 280 + 4 * (4 * r + 3), static_cast<float>(vol.origin[r]));
    }
    std::memcpy(bytes.data() + 344, "n+1\0", 4);

    std::uint8_t* p = bytes.data() + kVoxOffset;
    for (std::size_t v = 0; v < nvox; ++v, p += voxel_bytes) {
        const double value = vol.data[static_cast<Eigen::Index>(v)];
        switch (dtype) {
            case NiftiDtype::uint8:
                *p = static_cast<std::uint8_t>(std::llround(value));
                break;
            case NiftiDtype::int16:
                store_le<std::int16_t>(p, static_cast<std::int16_t>(std::llround(value)));
                break;
            case NiftiDtype::int32:
                store_le<std::int32_t>(p, static_cast<std::int32_t>(std::llround(value)));
                break;
            case NiftiDtype::float32:
                store_le<float>(p, static_cast<float>(value));
                break;
            case NiftiDtype::float64:
                store_le<double>(p, value);
                break;
        }
    }

    std::filesystem::path parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    if (is_gzip_path(path)) {
        gzFile gz = gzopen(path.string().c_str(), "wb9");
        if (!gz) throw IoFailure("cannot open " + path.string() + " for writing");
        const int written = gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
        const int rc = gzclose(gz);
        if (written != static_cast<int>(bytes.size()) || rc != Z_OK)
            throw IoFailure("gzip write failed for " + path.string());
    } else {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoFailure("write failed for " + path.string());
    }
}

}  // namespace kdetect
