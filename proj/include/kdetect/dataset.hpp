#pragma once

#include <filesystem>

#include "kdetect/manifest.hpp"
#include "kdetect/net.hpp"

namespace kdetect {

// Slice basenames of a series, sorted (images/<series>/<base>.nii).
std::vector<std::string> list_slice_basenames(const std::filesystem::path& data_root,
                                              const std::string& series);

enum class LabelSource { human, pseudo, none };

// Loads every slice of a series as detector samples: images from
// data_root/images/<series>/, labels paired by basename from
// data_root/labels/ (human) or pseudo_root/ (pseudo; confidences dropped).
// Slices without boxes are kept unless include_empty is false.
std::vector<Sample> load_series_samples(const std::filesystem::path& data_root,
                                        const std::string& series, LabelSource source,
                                        const std::filesystem::path& pseudo_root, int image_size,
                                        bool include_empty = true);

}  // namespace kdetect
