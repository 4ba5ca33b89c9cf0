#include "kdetect/dicom.hpp"

#include "doctest.h"
#include "kdetect/errors.hpp"
#include "support/test_support.hpp"

using namespace kdetect;
using test::TempDir;
using test::write_dicom_slice;

TEST_CASE("slice gaps become the z spacing via the median") {
    TempDir tmp("dcm_gap");
    const std::vector<std::uint16_t> pixels(8 * 8, 100);
    write_dicom_slice(tmp / "a.dcm", 8, 8, 0.0, pixels);
    write_dicom_slice(tmp / "b.dcm", 8, 8, 2.5, pixels);
    write_dicom_slice(tmp / "c.dcm", 8, 8, 5.0, pixels);

    const Volume vol = read_dicom_series(tmp.path());
    CHECK(vol.shape == std::array<Eigen::Index, 3>{8, 8, 3});
    CHECK(vol.spacing[0] == doctest::Approx(0.78));
    CHECK(vol.spacing[1] == doctest::Approx(0.78));
    CHECK(vol.spacing[2] == doctest::Approx(2.5));
}

TEST_CASE("slice order comes from geometry, not the directory listing") {
    TempDir tmp("dcm_order");
    // filenames deliberately reversed relative to z
    for (int i = 0; i < 4; ++i) {
        const std::vector<std::uint16_t> pixels(4 * 4, static_cast<std::uint16_t>(10 * i));
        write_dicom_slice(tmp / ("slice_" + std::to_string(9 - i) + ".dcm"), 4, 4,
                          static_cast<double>(i) * 3.0, pixels);
    }
    const Volume vol = read_dicom_series(tmp.path());
    for (int k = 0; k < 4; ++k) CHECK(vol.at(0, 0, k) == doctest::Approx(10.0 * k));
}

TEST_CASE("rescale slope and intercept apply to stored values") {
    TempDir tmp("dcm_rescale");
    const std::vector<std::uint16_t> pixels(4 * 4, 1000);
    write_dicom_slice(tmp / "a.dcm", 4, 4, 0.0, pixels, "1\\1", "2", "-1024");
    const Volume vol = read_dicom_series(tmp.path());
    CHECK(vol.at(0, 0, 0) == doctest::Approx(1000.0 * 2.0 - 1024.0));  // 976
}

TEST_CASE("mixed matrix sizes are inconsistent geometry") {
    TempDir tmp("dcm_geom");
    write_dicom_slice(tmp / "a.dcm", 8, 8, 0.0, std::vector<std::uint16_t>(64, 1));
    write_dicom_slice(tmp / "b.dcm", 4, 4, 2.0, std::vector<std::uint16_t>(16, 1));
    CHECK_THROWS_AS(read_dicom_series(tmp.path()), InconsistentGeometry);
}

TEST_CASE("irregular slice gaps are rejected") {
    TempDir tmp("dcm_gaps");
    const std::vector<std::uint16_t> pixels(16, 1);
    write_dicom_slice(tmp / "a.dcm", 4, 4, 0.0, pixels);
    write_dicom_slice(tmp / "b.dcm", 4, 4, 2.0, pixels);
    write_dicom_slice(tmp / "c.dcm", 4, 4, 7.0, pixels);  // gap 5 vs median 3.5 -> >10%
    CHECK_THROWS_AS(read_dicom_series(tmp.path()), NonUniformSliceGap);
}

TEST_CASE("compressed transfer syntaxes are refused") {
    TempDir tmp("dcm_ts");
    test::DicomBuilder b;
    b.transfer_syntax("1.2.840.10008.1.2.4.70");  // JPEG lossless
    b.us(0x0028, 0x0010, 4);
    b.us(0x0028, 0x0011, 4);
    b.ds(0x0028, 0x0030, "1\\1");
    b.ds(0x0020, 0x0032, "0\\0\\0");
    b.ds(0x0020, 0x0037, "1\\0\\0\\0\\1\\0");
    b.pixel_data_u16(std::vector<std::uint16_t>(16, 0));
    b.save(tmp / "a.dcm");
    CHECK_THROWS_AS(read_dicom_series(tmp.path()), UnsupportedTransferSyntax);
}

TEST_CASE("missing required tags are named") {
    TempDir tmp("dcm_tags");
    test::DicomBuilder b;
    b.us(0x0028, 0x0010, 4);  // Rows only
    b.us(0x0028, 0x0011, 4);
    b.pixel_data_u16(std::vector<std::uint16_t>(16, 0));
    b.save(tmp / "a.dcm");
    CHECK_THROWS_AS(read_dicom_series(tmp.path()), MissingRequiredTag);
    try {
        read_dicom_series(tmp.path());
    } catch (const MissingRequiredTag& e) {
        CHECK(std::string(e.what()).find("PixelSpacing") != std::string::npos);
    }
}

TEST_CASE("truncated pixel payloads are detected") {
    TempDir tmp("dcm_trunc");
    test::DicomBuilder b;
    b.us(0x0028, 0x0010, 8);
    b.us(0x0028, 0x0011, 8);
    b.us(0x0028, 0x0100, 16);
    b.ds(0x0028, 0x0030, "1\\1");
    b.ds(0x0020, 0x0032, "0\\0\\0");
    b.ds(0x0020, 0x0037, "1\\0\\0\\0\\1\\0");
    b.pixel_data_u16(std::vector<std::uint16_t>(10, 0));  // needs 64
    b.save(tmp / "a.dcm");
    CHECK_THROWS_AS(read_dicom_series(tmp.path()), TruncatedPixelData);
}

TEST_CASE("files without the DICM marker are parse errors") {
    TempDir tmp("dcm_marker");
    test::write_bytes(tmp / "a.dcm", std::vector<std::uint8_t>(200, 0));
    CHECK_THROWS_AS(read_dicom_series(tmp.path()), DicomParseError);
}

TEST_CASE("pixel values land in x-fastest volume order") {
    TempDir tmp("dcm_layout");
    // 2x3 slice (rows=2, cols=3): stored row-major
    std::vector<std::uint16_t> pixels = {1, 2, 3, 4, 5, 6};
    write_dicom_slice(tmp / "a.dcm", 2, 3, 0.0, pixels, "1\\1");
    const Volume vol = read_dicom_series(tmp.path());
    CHECK(vol.shape == std::array<Eigen::Index, 3>{3, 2, 1});
    CHECK(vol.at(0, 0, 0) == 1.0);
    CHECK(vol.at(2, 0, 0) == 3.0);
    CHECK(vol.at(0, 1, 0) == 4.0);
    CHECK(vol.at(2, 1, 0) == 6.0);
}
