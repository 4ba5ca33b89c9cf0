#include "kdetect/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kdetect/errors.hpp"
#include "kdetect/nifti.hpp"

namespace kdetect {

namespace {

// Continuous source index for output center o: ((o + 0.5) * t) / s - 0.5,
// clamped to the valid grid.
struct AxisMap {
    std::vector<Eigen::Index> i0;
    std::vector<double> frac;
};

AxisMap build_axis_map(Eigen::Index n_out, Eigen::Index n_in, double t, double s) {
    AxisMap m;
    m.i0.resize(static_cast<std::size_t>(n_out));
    m.frac.resize(static_cast<std::size_t>(n_out));
    for (Eigen::Index o = 0; o < n_out; ++o) {
        double u = ((static_cast<double>(o) + 0.5) * t) / s - 0.5;
        u = std::clamp(u, 0.0, static_cast<double>(n_in - 1));
        Eigen::Index lo = static_cast<Eigen::Index>(std::floor(u));
        lo = std::clamp<Eigen::Index>(lo, 0, std::max<Eigen::Index>(n_in - 2, 0));
        m.i0[static_cast<std::size_t>(o)] = lo;
        m.frac[static_cast<std::size_t>(o)] = n_in > 1 ? u - static_cast<double>(lo) : 0.0;
    }
    return m;
}

}  // namespace

void validate(const NormalizationParams& params) {
    if (!(params.p_hi >= 90.0 && params.p_hi <= 100.0))
        throw ConfigError("p_hi must be in [90, 100]");
    if (!(params.background_fraction > 0.0 && params.background_fraction <= 0.5))
        throw ConfigError("background_fraction must be in (0, 0.5]");
    if (params.sigma_hat >= 0.0 && !std::isfinite(params.sigma_hat))
        throw ConfigError("sigma_hat must be finite");
}

Volume resample_isotropic(const Volume& vol, const Eigen::Vector3d& target) {
    validate(vol);
    for (int a = 0; a < 3; ++a)
        if (!(target[a] > 0.0) || !std::isfinite(target[a]))
            throw ConfigError("target spacing must be positive");

    std::array<Eigen::Index, 3> out_shape;
    int degenerate = 0;
    for (int a = 0; a < 3; ++a) {
        const Eigen::Index n =
            static_cast<Eigen::Index>(std::llround(static_cast<double>(vol.shape[a]) * vol.spacing[a] / target[a]));
        if (n == 0) ++degenerate;
        out_shape[a] = std::max<Eigen::Index>(n, 1);
    }
    if (degenerate == 3)
        throw DegenerateOutput("every output extent rounds to zero voxels");

    Volume out = make_volume(out_shape[0], out_shape[1], out_shape[2], target);
    out.orientation = vol.orientation;
    out.origin = vol.origin;
    out.source_id = vol.source_id;

    const AxisMap mx = build_axis_map(out_shape[0], vol.shape[0], target[0], vol.spacing[0]);
    const AxisMap my = build_axis_map(out_shape[1], vol.shape[1], target[1], vol.spacing[1]);
    const AxisMap mz = build_axis_map(out_shape[2], vol.shape[2], target[2], vol.spacing[2]);

    for (Eigen::Index k = 0; k < out_shape[2]; ++k) {
        const Eigen::Index k0 = mz.i0[static_cast<std::size_t>(k)];
        const double fz = mz.frac[static_cast<std::size_t>(k)];
        const Eigen::Index k1 = vol.shape[2] > 1 ? k0 + 1 : k0;
        for (Eigen::Index j = 0; j < out_shape[1]; ++j) {
            const Eigen::Index j0 = my.i0[static_cast<std::size_t>(j)];
            const double fy = my.frac[static_cast<std::size_t>(j)];
            const Eigen::Index j1 = vol.shape[1] > 1 ? j0 + 1 : j0;
            for (Eigen::Index i = 0; i < out_shape[0]; ++i) {
                const Eigen::Index i0 = mx.i0[static_cast<std::size_t>(i)];
                const double fx = mx.frac[static_cast<std::size_t>(i)];
                const Eigen::Index i1 = vol.shape[0] > 1 ? i0 + 1 : i0;

                const double c00 = vol.at(i0, j0, k0) * (1 - fx) + vol.at(i1, j0, k0) * fx;
                const double c10 = vol.at(i0, j1, k0) * (1 - fx) + vol.at(i1, j1, k0) * fx;
                const double c01 = vol.at(i0, j0, k1) * (1 - fx) + vol.at(i1, j0, k1) * fx;
                const double c11 = vol.at(i0, j1, k1) * (1 - fx) + vol.at(i1, j1, k1) * fx;
                const double c0 = c00 * (1 - fy) + c10 * fy;
                const double c1 = c01 * (1 - fy) + c11 * fy;
                out.at(i, j, k) = c0 * (1 - fz) + c1 * fz;
            }
        }
    }
    return out;
}

double estimate_rician_sigma(const Volume& vol, const NormalizationParams& params) {
    validate(vol);
    validate(params);
    const Eigen::Index n = vol.data.size();
    if (n < 1000)
        throw TooFewVoxels("need >= 1000 voxels, got " + std::to_string(n));

    const Eigen::Index k = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::llround(params.background_fraction * static_cast<double>(n))));
    std::vector<double> values(vol.data.data(), vol.data.data() + n);
    std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
    double sum_sq = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) sum_sq += values[static_cast<std::size_t>(i)] * values[static_cast<std::size_t>(i)];
    return std::sqrt(sum_sq / (2.0 * static_cast<double>(k)));
}

Volume rician_normalize(const Volume& vol, const NormalizationParams& params, double& sigma_used) {
    validate(vol);
    validate(params);
    const double sigma = params.sigma_hat >= 0.0 ? params.sigma_hat : estimate_rician_sigma(vol, params);
    sigma_used = sigma;

    Volume out = vol;
    out.data = (vol.data.square() - 2.0 * sigma * sigma).max(0.0).sqrt();

    std::vector<double> nonzero;
    nonzero.reserve(static_cast<std::size_t>(out.data.size()));
    for (Eigen::Index i = 0; i < out.data.size(); ++i)
        if (out.data[i] > 0.0) nonzero.push_back(out.data[i]);

    if (nonzero.empty()) {
        out.data.setZero();
        return out;
    }
    std::sort(nonzero.begin(), nonzero.end());
    const double pos = params.p_hi / 100.0 * static_cast<double>(nonzero.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, nonzero.size() - 1);
    const double f = pos - static_cast<double>(lo);
    const double scale = nonzero[lo] * (1.0 - f) + nonzero[hi] * f;
    if (!(scale > 0.0)) {
        out.data.setZero();
        return out;
    }
    out.data = (out.data / scale).min(1.0).max(0.0);
    return out;
}

Volume rician_normalize(const Volume& vol, const NormalizationParams& params) {
    double unused = 0.0;
    return rician_normalize(vol, params, unused);
}

std::vector<SliceImage> extract_axial_slices(const Volume& vol) {
    validate(vol);
    if (vol.data.minCoeff() < 0.0 || vol.data.maxCoeff() > 1.0)
        throw ConfigError("extract_axial_slices expects a volume normalized to [0, 1]");
    if (vol.nx() < 8 || vol.ny() < 8)
        throw UnsupportedDimension("slice extents must be >= 8 pixels");

    std::vector<SliceImage> slices;
    slices.reserve(static_cast<std::size_t>(vol.nz()));
    for (Eigen::Index k = 0; k < vol.nz(); ++k) {
        SliceImage s;
        s.pixels = vol.slice(k);
        s.width = vol.nx();
        s.height = vol.ny();
        s.slice_index = k;
        s.parent_id = vol.source_id;
        slices.push_back(std::move(s));
    }
    return slices;
}

Eigen::ArrayXXd resize_bilinear(const Eigen::Ref<const Eigen::ArrayXXd>& pixels,
                                Eigen::Index out_w, Eigen::Index out_h) {
    const Eigen::Index in_w = pixels.rows(), in_h = pixels.cols();
    if (out_w == in_w && out_h == in_h) return pixels;
    const AxisMap mx =
        build_axis_map(out_w, in_w, 1.0 / static_cast<double>(out_w), 1.0 / static_cast<double>(in_w));
    const AxisMap my =
        build_axis_map(out_h, in_h, 1.0 / static_cast<double>(out_h), 1.0 / static_cast<double>(in_h));
    Eigen::ArrayXXd out(out_w, out_h);
    for (Eigen::Index y = 0; y < out_h; ++y) {
        const Eigen::Index j0 = my.i0[static_cast<std::size_t>(y)];
        const double fy = my.frac[static_cast<std::size_t>(y)];
        const Eigen::Index j1 = in_h > 1 ? j0 + 1 : j0;
        for (Eigen::Index x = 0; x < out_w; ++x) {
            const Eigen::Index i0 = mx.i0[static_cast<std::size_t>(x)];
            const double fx = mx.frac[static_cast<std::size_t>(x)];
            const Eigen::Index i1 = in_w > 1 ? i0 + 1 : i0;
            const double a = pixels(i0, j0) * (1 - fx) + pixels(i1, j0) * fx;
            const double b = pixels(i0, j1) * (1 - fx) + pixels(i1, j1) * fx;
            out(x, y) = a * (1 - fy) + b * fy;
        }
    }
    return out;
}

void write_pgm(const SliceImage& slice, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    out << "P5\n" << slice.width << " " << slice.height << "\n255\n";
    for (Eigen::Index y = 0; y < slice.height; ++y)
        for (Eigen::Index x = 0; x < slice.width; ++x) {
            const double v = std::clamp(slice.pixels(x, y), 0.0, 1.0);
            out.put(static_cast<char>(std::llround(v * 255.0)));
        }
    if (!out) throw IoFailure("write failed for " + path.string());
}

void write_slice_nifti(const SliceImage& slice, const std::filesystem::path& path) {
    Volume vol = make_volume(slice.width, slice.height, 1);
    vol.slice(0) = slice.pixels;
    vol.source_id = slice.parent_id;
    write_nifti(vol, path, NiftiDtype::float32);
}

SliceImage read_slice_nifti(const std::filesystem::path& path) {
    const Volume vol = read_nifti(path);
    if (vol.nz() != 1)
        throw UnsupportedDimension("expected a 2-D slice file, got nz = " + std::to_string(vol.nz()));
    SliceImage s;
    s.pixels = vol.slice(0);
    s.width = vol.nx();
    s.height = vol.ny();
    s.slice_index = 0;
    s.parent_id = vol.source_id;
    return s;
}

}  // namespace kdetect
