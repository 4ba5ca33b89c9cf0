#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>

namespace kdetect {

// A 3-D scalar grid with physical geometry. Voxels are stored x-fastest,
// matching NIfTI data order: data[i + nx*(j + ny*k)].
struct Volume {
    Eigen::ArrayXd data;
    std::array<Eigen::Index, 3> shape{0, 0, 0};  // nx, ny, nz
    Eigen::Vector3d spacing{1.0, 1.0, 1.0};      // mm per voxel
    Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();  // direction cosines, one axis per column
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();           // mm offset of voxel (0,0,0)
    std::string source_id;

    Eigen::Index nx() const { return shape[0]; }
    Eigen::Index ny() const { return shape[1]; }
    Eigen::Index nz() const { return shape[2]; }
    Eigen::Index size() const { return shape[0] * shape[1] * shape[2]; }

    double& at(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
        return data[i + shape[0] * (j + shape[1] * k)];
    }
    double at(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
        return data[i + shape[0] * (j + shape[1] * k)];
    }

    // Axial plane k as an (nx, ny) array addressed pixels(x, y); shares storage.
    Eigen::Map<const Eigen::ArrayXXd> slice(Eigen::Index k) const {
        return {data.data() + shape[0] * shape[1] * k, shape[0], shape[1]};
    }
    Eigen::Map<Eigen::ArrayXXd> slice(Eigen::Index k) {
        return {data.data() + shape[0] * shape[1] * k, shape[0], shape[1]};
    }
};

Volume make_volume(Eigen::Index nx, Eigen::Index ny, Eigen::Index nz,
                   const Eigen::Vector3d& spacing = {1.0, 1.0, 1.0});

// Throws on any structural invariant violation: positive finite spacing,
// shape >= 1 per axis, data length, finite voxels, unit-norm direction cosines.
void validate(const Volume& vol);

}  // namespace kdetect
