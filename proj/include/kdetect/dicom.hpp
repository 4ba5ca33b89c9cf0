#pragma once

#include <filesystem>

#include "kdetect/volume.hpp"

namespace kdetect {

// Reads an uncompressed, monochrome DICOM series stored as Explicit VR
// Little Endian Part-10 files. Slices are ordered geometrically by the
// projection of ImagePositionPatient onto the slice normal; inter-slice
// spacing is the median positional gap. Anything outside that envelope
// (compressed syntaxes, missing geometry tags, mixed matrices) errors loudly.
Volume read_dicom_series(const std::filesystem::path& dir);

}  // namespace kdetect
