#include "kdetect/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "kdetect/boxes.hpp"
#include "kdetect/errors.hpp"
#include "kdetect/nifti.hpp"
#include "kdetect/preprocess.hpp"
#include "kdetect/rng.hpp"

namespace kdetect {

namespace {

// separable triangular kernel, half-width one voxel, replicated edges
void smooth_triangular(Volume& vol) {
    const auto pass = [&](int axis) {
        Volume src = vol;
        const auto n = vol.shape;
        for (Eigen::Index k = 0; k < n[2]; ++k)
            for (Eigen::Index j = 0; j < n[1]; ++j)
                for (Eigen::Index i = 0; i < n[0]; ++i) {
                    Eigen::Index lo[3] = {i, j, k}, hi[3] = {i, j, k};
                    lo[axis] = std::max<Eigen::Index>(lo[axis] - 1, 0);
                    hi[axis] = std::min<Eigen::Index>(hi[axis] + 1, n[axis] - 1);
                    vol.at(i, j, k) = 0.25 * src.at(lo[0], lo[1], lo[2]) +
                                      0.5 * src.at(i, j, k) +
                                      0.25 * src.at(hi[0], hi[1], hi[2]);
                }
    };
    for (int axis = 0; axis < 3; ++axis) pass(axis);
}

std::string patient_id(int p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "P%03d", p + 1);
    return buf;
}

}  // namespace

PhantomResult generate(const PhantomSpec& spec) {
    const auto [nx, ny, nz] = spec.volume_shape;
    if (nx < 1 || ny < 1 || nz < 1) throw ConfigError("phantom shape must be >= 1 per axis");
    if (spec.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");

    for (const Ellipsoid& e : spec.kidneys) {
        for (int a = 0; a < 3; ++a) {
            if (!(e.semi_axes[a] > 0.0)) throw ConfigError("semi-axes must be positive");
            const double extent_vox = e.semi_axes[a] / spec.spacing[a];
            if (e.center[a] - extent_vox < 0.0 ||
                e.center[a] + extent_vox > static_cast<double>(spec.volume_shape[a] - 1))
                throw EllipsoidOutOfBounds("ellipsoid exceeds the volume along axis " +
                                           std::to_string(a));
        }
    }

    PhantomResult out;
    out.clean = make_volume(nx, ny, nz, spec.spacing);
    out.mask = make_volume(nx, ny, nz, spec.spacing);
    out.clean.data.setConstant(spec.background_level);

    for (const Ellipsoid& e : spec.kidneys) {
        // only voxels inside the bounding box can satisfy the inequality
        Eigen::Index lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            const double extent_vox = e.semi_axes[a] / spec.spacing[a];
            lo[a] = std::max<Eigen::Index>(static_cast<Eigen::Index>(std::floor(e.center[a] - extent_vox)), 0);
            hi[a] = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(e.center[a] + extent_vox)),
                                           spec.volume_shape[a] - 1);
        }
        for (Eigen::Index k = lo[2]; k <= hi[2]; ++k)
            for (Eigen::Index j = lo[1]; j <= hi[1]; ++j)
                for (Eigen::Index i = lo[0]; i <= hi[0]; ++i) {
                    const double dx = (static_cast<double>(i) - e.center[0]) * spec.spacing[0] / e.semi_axes[0];
                    const double dy = (static_cast<double>(j) - e.center[1]) * spec.spacing[1] / e.semi_axes[1];
                    const double dz = (static_cast<double>(k) - e.center[2]) * spec.spacing[2] / e.semi_axes[2];
                    if (dx * dx + dy * dy + dz * dz <= 1.0) {
                        out.clean.at(i, j, k) += e.contrast;
                        out.mask.at(i, j, k) = 1.0;
                    }
                }
    }
    smooth_triangular(out.clean);

    out.image = out.clean;
    double max_contrast = 0.0;
    for (const Ellipsoid& e : spec.kidneys) max_contrast = std::max(max_contrast, e.contrast);
    if (spec.kidneys.empty()) max_contrast = 1.0;
    const double sigma = spec.noise_sigma * max_contrast;
    if (sigma > 0.0) {
        Rng rng(derive_seed(spec.seed, 0x9057));
        for (Eigen::Index v = 0; v < out.image.data.size(); ++v) {
            const auto [n1, n2] = rng.normal_pair(sigma);
            out.image.data[v] = std::hypot(out.image.data[v] + n1, n2);
        }
    }
    return out;
}

Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_root) {
    if (spec.n_patients < 5) throw TooFewPatients("corpus needs >= 5 patients");
    if (spec.slices_per_patient < 14)
        throw ConfigError("slices_per_patient must be >= 14 so kidneys fit axially");
    // lateral kidney draws reach 0.73 * extent + 13 mm
    if (spec.slice_extent < 52)
        throw ConfigError("slice_extent must be >= 52 so kidneys fit laterally");
    if (!(spec.unannotated_fraction >= 0.0 && spec.unannotated_fraction < 1.0))
        throw ConfigError("unannotated_fraction must be in [0, 1)");

    std::filesystem::create_directories(out_root);

    // seeded choice of unannotated patients
    std::vector<int> order(static_cast<std::size_t>(spec.n_patients));
    for (int p = 0; p < spec.n_patients; ++p) order[static_cast<std::size_t>(p)] = p;
    Rng pick(derive_seed(spec.seed, 0xA0A0));
    pick.shuffle(order);
    const int n_unannotated = static_cast<int>(
        std::llround(spec.unannotated_fraction * static_cast<double>(spec.n_patients)));
    std::vector<char> unannotated(static_cast<std::size_t>(spec.n_patients), 0);
    for (int i = 0; i < n_unannotated; ++i) unannotated[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

    Manifest manifest;
    int annotated_seen = 0;

    for (int p = 0; p < spec.n_patients; ++p) {
        const std::string pid = patient_id(p);
        Rng rng(derive_seed(spec.seed, 0xBA5E + static_cast<std::uint64_t>(p)));

        const Eigen::Index nx = spec.slice_extent, ny = spec.slice_extent;
        const Eigen::Index nz = spec.slices_per_patient;

        PhantomSpec ph;
        ph.volume_shape = {nx, ny, nz};
        ph.background_level = spec.background_level;
        ph.noise_sigma = spec.noise_sigma;

        const int n_kidneys = rng.uniform() < 0.2 ? 1 : 2;
        for (int kd = 0; kd < n_kidneys; ++kd) {
            Ellipsoid e;
            const double fx = kd == 0 ? rng.uniform(0.27, 0.35) : rng.uniform(0.65, 0.73);
            e.semi_axes[0] = rng.uniform(9.5, 13.0);
            e.semi_axes[1] = rng.uniform(9.5, 12.0);
            e.semi_axes[2] = rng.uniform(6.0, std::min(7.5, (static_cast<double>(nz) - 1.0) / 2.0 - 0.6));
            e.center[0] = fx * static_cast<double>(nx);
            e.center[1] = rng.uniform(0.52, 0.62) * static_cast<double>(ny);
            const double zlo = e.semi_axes[2] + 0.2;
            const double zhi = static_cast<double>(nz - 1) - e.semi_axes[2] - 0.2;
            e.center[2] = rng.uniform(zlo, zhi);
            e.contrast = rng.uniform(0.6, 0.8);
            ph.kidneys.push_back(e);
        }

        const int n_series = (!unannotated[static_cast<std::size_t>(p)] &&
                              spec.linked_series_every > 0 &&
                              (annotated_seen % spec.linked_series_every) == 0)
                                 ? 2
                                 : 1;
        if (!unannotated[static_cast<std::size_t>(p)]) ++annotated_seen;

        for (int s = 0; s < n_series; ++s) {
            char sbuf[16];
            std::snprintf(sbuf, sizeof(sbuf), "S%03d", s + 1);
            const std::string study = sbuf;
            const std::string series = pid + "_" + study;

            ph.seed = derive_seed(spec.seed, 0x5E1D + static_cast<std::uint64_t>(p * 8 + s));
            PhantomResult phantom = generate(ph);
            phantom.image.source_id = series;
            phantom.mask.source_id = series;

            write_nifti(phantom.image, out_root / "volumes" / (series + ".nii.gz"),
                        NiftiDtype::float32);

            // only the first series of an annotated patient carries labels
            const bool annotated = !unannotated[static_cast<std::size_t>(p)] && s == 0;
            if (annotated)
                write_nifti(phantom.mask, out_root / "masks" / (series + ".nii.gz"),
                            NiftiDtype::uint8);

            NormalizationParams params;
            double sigma_used = 0.0;
            const Volume normalized = rician_normalize(phantom.image, params, sigma_used);
            const std::vector<SliceImage> slices = extract_axial_slices(normalized);

            ManifestEntry entry;
            entry.patient_id = pid;
            entry.study_id = study;
            entry.series_path = series;
            entry.slice_count = static_cast<int>(slices.size());
            entry.annotation_source = annotated ? AnnotationSource::human : AnnotationSource::none;

            for (const SliceImage& slice : slices) {
                char zbuf[16];
                std::snprintf(zbuf, sizeof(zbuf), "_z%03d", static_cast<int>(slice.slice_index));
                const std::string base = series + zbuf;
                write_slice_nifti(slice, out_root / "images" / series / (base + ".nii"));
                if (annotated) {
                    const std::vector<BoxLabel> boxes =
                        mask_to_boxes(phantom.mask.slice(slice.slice_index), spec.min_area_px);
                    write_labels(boxes, out_root / "labels" / series / (base + ".txt"));
                    if (boxes.empty())
                        entry.empty_slices.push_back(static_cast<int>(slice.slice_index));
                }
            }

            nlohmann::json sidecar;
            sidecar["sigma_hat"] = sigma_used;
            sidecar["p_hi"] = params.p_hi;
            sidecar["background_fraction"] = params.background_fraction;
            std::ofstream side(out_root / "images" / series / "normalization.json",
                               std::ios::binary | std::ios::trunc);
            side << sidecar.dump(2) << "\n";

            manifest.entries.push_back(std::move(entry));
        }
    }

    save_manifest(manifest, out_root / "manifest.jsonl");
    return manifest;
}

}  // namespace kdetect
