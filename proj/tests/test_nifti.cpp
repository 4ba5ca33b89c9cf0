#include "kdetect/nifti.hpp"

#include "doctest.h"
#include "kdetect/errors.hpp"
#include "kdetect/rng.hpp"
#include "support/test_support.hpp"

using namespace kdetect;
using test::TempDir;

namespace {

Volume random_volume(Rng& rng, Eigen::Index nx, Eigen::Index ny, Eigen::Index nz) {
    Volume vol = make_volume(nx, ny, nz, {rng.uniform(0.4, 3.0), rng.uniform(0.4, 3.0),
                                          rng.uniform(0.4, 3.0)});
    for (Eigen::Index i = 0; i < vol.data.size(); ++i) vol.data[i] = rng.uniform(-100.0, 900.0);
    return vol;
}

}  // namespace

TEST_CASE("nifti header parses little-endian sizeof_hdr 348") {
    TempDir tmp("nifti_hdr");
    Volume vol = make_volume(4, 4, 4);
    write_nifti(vol, tmp / "v.nii");
    const auto bytes = test::read_bytes(tmp / "v.nii");
    REQUIRE(bytes.size() >= 348);
    // bytes 0..3 must be 5C 01 00 00
    CHECK(bytes[0] == 0x5C);
    CHECK(bytes[1] == 0x01);
    CHECK(bytes[2] == 0x00);
    CHECK(bytes[3] == 0x00);
    const NiftiHeader hdr = parse_nifti_header(bytes.data(), bytes.size());
    CHECK(hdr.sizeof_hdr == 348);
    CHECK_FALSE(hdr.swapped);
}

TEST_CASE("write then read restores shape, spacing and exact voxels") {
    TempDir tmp("nifti_rt");
    Rng rng(7);
    Volume vol = random_volume(rng, 9, 7, 5);
    write_nifti(vol, tmp / "v.nii", NiftiDtype::float64);
    const Volume back = read_nifti(tmp / "v.nii");
    CHECK(back.shape == vol.shape);
    CHECK((back.spacing - vol.spacing).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.data == vol.data).all());

    // a second round trip reproduces the first read bit for bit
    write_nifti(back, tmp / "v2.nii", NiftiDtype::float64);
    const Volume again = read_nifti(tmp / "v2.nii");
    CHECK((again.data == back.data).all());
    CHECK(again.spacing == back.spacing);
}

TEST_CASE("gzip volumes round trip through .nii.gz") {
    TempDir tmp("nifti_gz");
    Rng rng(11);
    Volume vol = random_volume(rng, 6, 5, 4);
    write_nifti(vol, tmp / "v.nii.gz", NiftiDtype::float64);
    const Volume back = read_nifti(tmp / "v.nii.gz");
    CHECK((back.data == vol.data).all());
    CHECK((back.spacing - vol.spacing).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("float32 all-zero 2x2x2 volume is exactly 384 bytes") {
    TempDir tmp("nifti_size");
    Volume vol = make_volume(2, 2, 2);
    write_nifti(vol, tmp / "v.nii", NiftiDtype::float32);
    CHECK(std::filesystem::file_size(tmp / "v.nii") == 352 + 8 * 4);
}

TEST_CASE("spacing (1,1,1) written is read back as pixdim (1,1,1)") {
    TempDir tmp("nifti_pixdim");
    Volume vol = make_volume(3, 3, 3, {1.0, 1.0, 1.0});
    write_nifti(vol, tmp / "v.nii");
    const Volume back = read_nifti(tmp / "v.nii");
    CHECK(back.spacing == Eigen::Vector3d(1.0, 1.0, 1.0));
}

TEST_CASE("integer dtype rejects out-of-range values") {
    TempDir tmp("nifti_range");
    Volume vol = make_volume(2, 2, 2);
    vol.data[3] = 300.0;
    CHECK_THROWS_AS(write_nifti(vol, tmp / "v.nii", NiftiDtype::uint8), ValueOutOfRangeForDtype);
    CHECK_NOTHROW(write_nifti(vol, tmp / "v.nii", NiftiDtype::int16));
}

TEST_CASE("scl_slope and scl_inter rescale intensities on load") {
    TempDir tmp("nifti_scl");
    Volume vol = make_volume(3, 3, 3);
    for (Eigen::Index i = 0; i < vol.data.size(); ++i) vol.data[i] = static_cast<double>(i);
    write_nifti(vol, tmp / "v.nii", NiftiDtype::int16);

    auto bytes = test::read_bytes(tmp / "v.nii");
    // scl_slope@112 = 2.0f, scl_inter@116 = -5.0f
    const float slope = 2.0f, inter = -5.0f;
    std::memcpy(bytes.data() + 112, &slope, 4);
    std::memcpy(bytes.data() + 116, &inter, 4);
    test::write_bytes(tmp / "scaled.nii", bytes);

    const Volume back = read_nifti(tmp / "scaled.nii");
    for (Eigen::Index i = 0; i < back.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(2.0 * static_cast<double>(i) - 5.0));
}

TEST_CASE("big-endian files load to identical data") {
    TempDir tmp("nifti_be");
    Rng rng(23);
    for (const NiftiDtype dtype : {NiftiDtype::int16, NiftiDtype::float32, NiftiDtype::float64}) {
        Volume vol = random_volume(rng, 5, 4, 3);
        if (dtype == NiftiDtype::int16) vol.data = vol.data.round();
        write_nifti(vol, tmp / "le.nii", dtype);
        const auto le = test::read_bytes(tmp / "le.nii");
        test::write_bytes(tmp / "be.nii",
                          test::nifti_to_big_endian(le, nifti_dtype_bitpix(dtype), 352));
        const Volume a = read_nifti(tmp / "le.nii");
        const Volume b = read_nifti(tmp / "be.nii");
        CHECK((a.data == b.data).all());
        CHECK(a.spacing == b.spacing);
    }
}

TEST_CASE("paired-file magic is rejected") {
    TempDir tmp("nifti_magic");
    Volume vol = make_volume(2, 2, 2);
    write_nifti(vol, tmp / "v.nii");
    auto bytes = test::read_bytes(tmp / "v.nii");
    std::memcpy(bytes.data() + 344, "ni1\0", 4);
    test::write_bytes(tmp / "paired.nii", bytes);
    CHECK_THROWS_AS(read_nifti(tmp / "paired.nii"), BadMagic);

    std::memcpy(bytes.data() + 344, "zzz\0", 4);
    test::write_bytes(tmp / "junk.nii", bytes);
    CHECK_THROWS_AS(read_nifti(tmp / "junk.nii"), BadMagic);
}

TEST_CASE("unknown datatype and inconsistent bitpix are rejected") {
    TempDir tmp("nifti_dtype");
    Volume vol = make_volume(2, 2, 2);
    write_nifti(vol, tmp / "v.nii");
    auto bytes = test::read_bytes(tmp / "v.nii");

    auto mutated = bytes;
    const std::int16_t complex64 = 32;  // unsupported code
    std::memcpy(mutated.data() + 70, &complex64, 2);
    test::write_bytes(tmp / "dt.nii", mutated);
    CHECK_THROWS_AS(read_nifti(tmp / "dt.nii"), UnsupportedDatatype);

    mutated = bytes;
    const std::int16_t bad_bitpix = 16;  // float32 needs 32
    std::memcpy(mutated.data() + 72, &bad_bitpix, 2);
    test::write_bytes(tmp / "bp.nii", mutated);
    CHECK_THROWS_AS(read_nifti(tmp / "bp.nii"), UnsupportedDatatype);
}

TEST_CASE("truncated pixel data is detected from header arithmetic") {
    TempDir tmp("nifti_trunc");
    // dim = 64^3 float32 at vox_offset 352 needs 352 + 64^3*4 bytes
    Volume vol = make_volume(64, 64, 64);
    write_nifti(vol, tmp / "v.nii", NiftiDtype::float32);
    auto bytes = test::read_bytes(tmp / "v.nii");
    REQUIRE(bytes.size() == 352u + 64u * 64u * 64u * 4u);
    bytes.resize(bytes.size() - 1);
    test::write_bytes(tmp / "short.nii", bytes);
    CHECK_THROWS_AS(read_nifti(tmp / "short.nii"), TruncatedPixelData);
}

TEST_CASE("non-finite voxels fail the load") {
    TempDir tmp("nifti_nan");
    Volume vol = make_volume(2, 2, 2);
    write_nifti(vol, tmp / "v.nii", NiftiDtype::float32);
    auto bytes = test::read_bytes(tmp / "v.nii");
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + 352, &nan, 4);
    test::write_bytes(tmp / "nan.nii", bytes);
    CHECK_THROWS_AS(read_nifti(tmp / "nan.nii"), NonFiniteVoxel);
}

TEST_CASE("4-D volumes load only with a single timepoint") {
    TempDir tmp("nifti_4d");
    Volume vol = make_volume(3, 3, 2);
    write_nifti(vol, tmp / "v.nii");
    auto bytes = test::read_bytes(tmp / "v.nii");

    auto mutated = bytes;
    std::int16_t dim0 = 4, dim4 = 1;
    std::memcpy(mutated.data() + 40, &dim0, 2);
    std::memcpy(mutated.data() + 48, &dim4, 2);
    test::write_bytes(tmp / "ok4d.nii", mutated);
    CHECK(read_nifti(tmp / "ok4d.nii").nz() == 2);

    dim4 = 2;
    std::memcpy(mutated.data() + 48, &dim4, 2);
    test::write_bytes(tmp / "bad4d.nii", mutated);
    CHECK_THROWS_AS(read_nifti(tmp / "bad4d.nii"), UnsupportedDimension);
}

TEST_CASE("orientation and origin survive the round trip") {
    TempDir tmp("nifti_orient");
    Volume vol = make_volume(4, 4, 4, {2.0, 0.5, 1.5});
    vol.orientation.col(0) = Eigen::Vector3d(0, 1, 0);
    vol.orientation.col(1) = Eigen::Vector3d(-1, 0, 0);
    vol.orientation.col(2) = Eigen::Vector3d(0, 0, 1);
    vol.origin = Eigen::Vector3d(-12.5, 4.0, 77.0);
    write_nifti(vol, tmp / "v.nii");
    const Volume back = read_nifti(tmp / "v.nii");
    CHECK((back.orientation - vol.orientation).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.origin - vol.origin).cwiseAbs().maxCoeff() < 1e-5);
}
