#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "kdetect/volume.hpp"

namespace kdetect {

// NIfTI-1 datatype codes supported by this reader/writer. Every load path
// widens to float64.
enum class NiftiDtype : std::int16_t {
    uint8 = 2,
    int16 = 4,
    int32 = 8,
    float32 = 16,
    float64 = 64,
};

int nifti_dtype_bitpix(NiftiDtype dtype);

// The subset of the 348-byte NIfTI-1 header this pipeline reads and writes.
// Field offsets in the file: sizeof_hdr@0, dim@40, datatype@70, bitpix@72,
// pixdim@76, vox_offset@108, scl_slope@112, scl_inter@116, magic@344.
struct NiftiHeader {
    std::int32_t sizeof_hdr = 348;
    std::array<std::int16_t, 8> dim{};
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    std::array<float, 8> pixdim{};
    float vox_offset = 352.0f;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    std::array<float, 6> quatern{};      // b, c, d, qoffset_x, qoffset_y, qoffset_z
    std::array<float, 12> srow{};        // srow_x, srow_y, srow_z
    std::array<char, 4> magic{};
    bool swapped = false;                // source bytes were big-endian
};

// Single-file NIfTI-1, plain or gzip (by .gz suffix). Intensities are scaled
// by scl_slope/scl_inter when scl_slope != 0 and widened to float64.
Volume read_nifti(const std::filesystem::path& path);

// Emits single-file little-endian NIfTI-1 with vox_offset 352, scl_slope 1,
// scl_inter 0; gzip-compressed when the path ends in .nii.gz.
void write_nifti(const Volume& vol, const std::filesystem::path& path,
                 NiftiDtype dtype = NiftiDtype::float32);

// Header-only parse of an in-memory file image (exposed for tests).
NiftiHeader parse_nifti_header(const std::uint8_t* bytes, std::size_t size);

}  // namespace kdetect
