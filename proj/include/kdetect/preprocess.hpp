#pragma once

#include <filesystem>
#include <vector>

#include "kdetect/volume.hpp"

namespace kdetect {

// A single axial plane, pixels addressed pixels(x, y), values in [0, 1].
struct SliceImage {
    Eigen::ArrayXXd pixels;
    Eigen::Index width = 0;   // x extent
    Eigen::Index height = 0;  // y extent
    Eigen::Index slice_index = 0;
    std::string parent_id;
};

// Free parameters of the Rician normalization. sigma_hat < 0 means
// "estimate from the volume".
struct NormalizationParams {
    double sigma_hat = -1.0;
    double p_hi = 99.0;
    double background_fraction = 0.10;
};

void validate(const NormalizationParams& params);

// Trilinear resampling onto the target spacing, sampling at voxel centers
// with clamp-to-edge. Output extent per axis is round(n * s / t), floored
// at 1; DegenerateOutput only when all three extents would round to 0.
Volume resample_isotropic(const Volume& vol, const Eigen::Vector3d& target = {1.0, 1.0, 1.0});

// Rayleigh second-moment estimator over the darkest background_fraction of
// voxels: sigma = sqrt(mean(I^2) / 2). Unbiased only when the signal-free
// background occupies about that fraction of the volume.
double estimate_rician_sigma(const Volume& vol, const NormalizationParams& params);

// Bias correction sqrt(max(I^2 - 2 sigma^2, 0)), then scaling by the p_hi
// percentile of the corrected nonzero intensities, clipped to [0, 1].
Volume rician_normalize(const Volume& vol, const NormalizationParams& params);
Volume rician_normalize(const Volume& vol, const NormalizationParams& params, double& sigma_used);

// One SliceImage per index along the third axis; requires values in [0, 1].
std::vector<SliceImage> extract_axial_slices(const Volume& vol);

// Bilinear resize with the same center-based, clamp-to-edge convention as
// the volumetric resampler. Normalized box coordinates are unaffected.
Eigen::ArrayXXd resize_bilinear(const Eigen::Ref<const Eigen::ArrayXXd>& pixels,
                                Eigen::Index out_w, Eigen::Index out_h);

// 8-bit binary PGM, for eyeballing slices.
void write_pgm(const SliceImage& slice, const std::filesystem::path& path);

// Persist a slice as a 2-D (nz = 1) NIfTI file.
void write_slice_nifti(const SliceImage& slice, const std::filesystem::path& path);
SliceImage read_slice_nifti(const std::filesystem::path& path);

}  // namespace kdetect
