#pragma once

#include <filesystem>

#include "kdetect/manifest.hpp"
#include "kdetect/volume.hpp"

namespace kdetect {

struct Ellipsoid {
    Eigen::Vector3d center;     // voxel coordinates
    Eigen::Vector3d semi_axes;  // mm
    double contrast = 0.5;      // added inside the ellipsoid
};

// Synthetic abdominal-like volume: flat background plus 1-2 ellipsoidal
// kidneys, edges softened by a triangular kernel, complex Gaussian noise
// taken in magnitude (Rician by construction; Rayleigh where the clean
// signal is zero). noise_sigma is a fraction of the largest kidney contrast.
struct PhantomSpec {
    std::array<Eigen::Index, 3> volume_shape{96, 96, 48};
    Eigen::Vector3d spacing{1.0, 1.0, 1.0};
    std::vector<Ellipsoid> kidneys;
    double background_level = 0.1;
    double noise_sigma = 0.1;
    std::uint64_t seed = 0;
};

struct PhantomResult {
    Volume image;  // noisy magnitude
    Volume mask;   // crisp 0/1 indicator, unsmoothed
    Volume clean;  // noise-free signal, smoothed
};

PhantomResult generate(const PhantomSpec& spec);

// Desk-scale corpus in the exact layout the pipeline consumes: raw volumes,
// normalized slice files, label files, JSONL manifest. A seeded fraction of
// patients is left unannotated, and some annotated patients get a second
// unannotated series so test-patient exclusion in the final training round
// has real work to do.
struct CorpusSpec {
    int n_patients = 25;
    int slices_per_patient = 16;
    Eigen::Index slice_extent = 96;  // square axial slices
    double unannotated_fraction = 0.30;
    int linked_series_every = 3;  // every k-th annotated patient gains an extra series
    double background_level = 0.1;
    double noise_sigma = 0.1;
    int min_area_px = 16;
    std::uint64_t seed = 0;
};

Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_root);

}  // namespace kdetect
