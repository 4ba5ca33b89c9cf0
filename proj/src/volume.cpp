#include "kdetect/volume.hpp"

#include <cmath>

#include "kdetect/errors.hpp"

namespace kdetect {

Volume make_volume(Eigen::Index nx, Eigen::Index ny, Eigen::Index nz,
                   const Eigen::Vector3d& spacing) {
    Volume vol;
    vol.shape = {nx, ny, nz};
    vol.spacing = spacing;
    vol.data = Eigen::ArrayXd::Zero(nx * ny * nz);
    return vol;
}

void validate(const Volume& vol) {
    for (int a = 0; a < 3; ++a) {
        if (vol.shape[a] < 1)
            throw UnsupportedDimension("volume shape must be >= 1 per axis");
        if (!(vol.spacing[a] > 0.0) || !std::isfinite(vol.spacing[a]))
            throw UnsupportedDimension("voxel spacing must be positive and finite");
    }
    if (vol.data.size() != vol.size())
        throw UnsupportedDimension("data length does not match shape");
    if (!vol.data.allFinite())
        throw NonFiniteVoxel("volume contains non-finite intensities");
    for (int c = 0; c < 3; ++c) {
        if (std::abs(vol.orientation.col(c).norm() - 1.0) > 1e-3)
            throw UnsupportedDimension("orientation columns must be unit norm");
    }
}

}  // namespace kdetect
