#include "kdetect/dicom.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "kdetect/errors.hpp"

namespace kdetect {

namespace {

constexpr const char* kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

struct Tag {
    std::uint16_t group = 0;
    std::uint16_t element = 0;
    bool operator==(const Tag&) const = default;
};

std::string tag_string(Tag t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "(%04X,%04X)", t.group, t.element);
    return buf;
}

constexpr Tag kTransferSyntax{0x0002, 0x0010};
constexpr Tag kRows{0x0028, 0x0010};
constexpr Tag kColumns{0x0028, 0x0011};
constexpr Tag kBitsAllocated{0x0028, 0x0100};
constexpr Tag kPixelRepresentation{0x0028, 0x0103};
constexpr Tag kSamplesPerPixel{0x0028, 0x0002};
constexpr Tag kPixelSpacing{0x0028, 0x0030};
constexpr Tag kRescaleIntercept{0x0028, 0x1052};
constexpr Tag kRescaleSlope{0x0028, 0x1053};
constexpr Tag kImagePosition{0x0020, 0x0032};
constexpr Tag kImageOrientation{0x0020, 0x0037};
constexpr Tag kPixelData{0x7FE0, 0x0010};

class Cursor {
public:
    Cursor(const std::uint8_t* data, std::size_t size, std::string name)
        : data_(data), size_(size), name_(std::move(name)) {}

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ >= size_; }

    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > size_)
            throw DicomParseError("unexpected end of file in " + name_);
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    std::uint16_t u16() {
        const std::uint8_t* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        return static_cast<std::uint32_t>(p[0] | (p[1] << 8) | (p[2] << 16) |
                                          (static_cast<std::uint32_t>(p[3]) << 24));
    }

    const std::string& name() const { return name_; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string name_;
};

struct Element {
    Tag tag;
    std::string vr;
    std::vector<std::uint8_t> value;

    std::string as_string() const {
        std::string s(value.begin(), value.end());
        while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
        return s;
    }
    std::uint16_t as_u16() const {
        if (value.size() < 2) throw DicomParseError("US value too short at " + tag_string(tag));
        return static_cast<std::uint16_t>(value[0] | (value[1] << 8));
    }
    std::vector<double> as_decimals() const {
        std::vector<double> out;
        std::stringstream ss(as_string());
        std::string item;
        while (std::getline(ss, item, '\\')) {
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw DicomParseError("bad decimal string at " + tag_string(tag));
            }
        }
        return out;
    }
};

bool is_long_vr(const std::string& vr) {
    return vr == "OB" || vr == "OW" || vr == "OF" || vr == "SQ" || vr == "UT" || vr == "UN";
}

Element read_element(Cursor& c) {
    Element e;
    e.tag.group = c.u16();
    e.tag.element = c.u16();
    const std::uint8_t* vr = c.take(2);
    e.vr.assign(reinterpret_cast<const char*>(vr), 2);
    std::uint32_t length = 0;
    if (is_long_vr(e.vr)) {
        c.take(2);  // reserved
        length = c.u32();
    } else {
        length = c.u16();
    }
    if (length == 0xFFFFFFFFu)
        throw DicomParseError("undefined-length element " + tag_string(e.tag) +
                              " (sequences are not supported)");
    const std::uint8_t* v = c.take(length);
    e.value.assign(v, v + length);
    return e;
}

struct SliceFile {
    std::filesystem::path path;
    std::uint16_t rows = 0, cols = 0;
    std::uint16_t bits_allocated = 16;
    std::uint16_t pixel_representation = 0;
    Eigen::Vector2d pixel_spacing{0, 0};  // (row spacing, column spacing)
    Eigen::Vector3d position{0, 0, 0};
    Eigen::Vector3d row_dir{1, 0, 0};
    Eigen::Vector3d col_dir{0, 1, 0};
    double slope = 1.0, intercept = 0.0;
    std::vector<std::uint8_t> pixel_data;
    double normal_pos = 0.0;
};

SliceFile parse_slice(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());

    if (bytes.size() < 132 || std::memcmp(bytes.data() + 128, "DICM", 4) != 0)
        throw DicomParseError(path.string() + " lacks the Part-10 DICM marker");

    Cursor c(bytes.data() + 132, bytes.size() - 132, path.filename().string());

    SliceFile slice;
    slice.path = path;

    std::optional<Element> rows, cols, spacing, position, orientation, pixel_data;
    std::string transfer_syntax;
    bool transfer_syntax_checked = false;

    while (!c.done()) {
        Element e = read_element(c);
        if (e.tag.group != 0x0002 && !transfer_syntax_checked) {
            // file meta group ended; the dataset syntax must be Explicit VR LE
            if (transfer_syntax.empty())
                throw MissingRequiredTag("TransferSyntaxUID (0002,0010) in " + path.string());
            if (transfer_syntax != kExplicitVrLittleEndian)
                throw UnsupportedTransferSyntax(transfer_syntax + " in " + path.string());
            transfer_syntax_checked = true;
        }
        if (e.tag == kTransferSyntax) transfer_syntax = e.as_string();
        else if (e.tag == kRows) slice.rows = e.as_u16();
        else if (e.tag == kColumns) slice.cols = e.as_u16();
        else if (e.tag == kBitsAllocated) slice.bits_allocated = e.as_u16();
        else if (e.tag == kPixelRepresentation) slice.pixel_representation = e.as_u16();
        else if (e.tag == kSamplesPerPixel) {
            if (e.as_u16() != 1)
                throw UnsupportedTransferSyntax("only monochrome pixel data is supported");
        } else if (e.tag == kPixelSpacing) spacing = e;
        else if (e.tag == kRescaleIntercept) slice.intercept = e.as_decimals().at(0);
        else if (e.tag == kRescaleSlope) slice.slope = e.as_decimals().at(0);
        else if (e.tag == kImagePosition) position = e;
        else if (e.tag == kImageOrientation) orientation = e;
        else if (e.tag == kPixelData) {
            pixel_data = std::move(e);
            break;  // PixelData is last in this profile
        }
    }

    if (!transfer_syntax_checked) {
        if (transfer_syntax.empty())
            throw MissingRequiredTag("TransferSyntaxUID (0002,0010) in " + path.string());
        if (transfer_syntax != kExplicitVrLittleEndian)
            throw UnsupportedTransferSyntax(transfer_syntax + " in " + path.string());
    }

    if (slice.rows == 0) throw MissingRequiredTag("Rows (0028,0010) in " + path.string());
    if (slice.cols == 0) throw MissingRequiredTag("Columns (0028,0011) in " + path.string());
    if (!spacing) throw MissingRequiredTag("PixelSpacing (0028,0030) in " + path.string());
    if (!position) throw MissingRequiredTag("ImagePositionPatient (0020,0032) in " + path.string());
    if (!orientation)
        throw MissingRequiredTag("ImageOrientationPatient (0020,0037) in " + path.string());
    if (!pixel_data) throw MissingRequiredTag("PixelData (7FE0,0010) in " + path.string());

    const auto sp = spacing->as_decimals();
    if (sp.size() != 2) throw DicomParseError("PixelSpacing needs 2 values in " + path.string());
    slice.pixel_spacing = {sp[0], sp[1]};

    const auto pos = position->as_decimals();
    if (pos.size() != 3)
        throw DicomParseError("ImagePositionPatient needs 3 values in " + path.string());
    slice.position = {pos[0], pos[1], pos[2]};

    const auto ori = orientation->as_decimals();
    if (ori.size() != 6)
        throw DicomParseError("ImageOrientationPatient needs 6 values in " + path.string());
    slice.row_dir = {ori[0], ori[1], ori[2]};
    slice.col_dir = {ori[3], ori[4], ori[5]};

    if (slice.bits_allocated != 8 && slice.bits_allocated != 16)
        throw UnsupportedDatatype("BitsAllocated " + std::to_string(slice.bits_allocated));
    const std::size_t need =
        static_cast<std::size_t>(slice.rows) * slice.cols * (slice.bits_allocated / 8);
    if (pixel_data->value.size() < need)
        throw TruncatedPixelData("PixelData holds " + std::to_string(pixel_data->value.size()) +
                                 " bytes, need " + std::to_string(need));
    slice.pixel_data = std::move(pixel_data->value);
    return slice;
}

double stored_value(const SliceFile& s, std::size_t idx) {
    if (s.bits_allocated == 8) {
        return s.pixel_representation
                   ? static_cast<double>(static_cast<std::int8_t>(s.pixel_data[idx]))
                   : static_cast<double>(s.pixel_data[idx]);
    }
    const std::uint16_t raw =
        static_cast<std::uint16_t>(s.pixel_data[2 * idx] | (s.pixel_data[2 * idx + 1] << 8));
    return s.pixel_representation ? static_cast<double>(static_cast<std::int16_t>(raw))
                                  : static_cast<double>(raw);
}

}  // namespace

Volume read_dicom_series(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw IoFailure(dir.string() + " is not a directory");

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoFailure("no files in " + dir.string());

    std::vector<SliceFile> slices;
    slices.reserve(files.size());
    for (const auto& f : files) slices.push_back(parse_slice(f));

    const SliceFile& ref = slices.front();
    for (const SliceFile& s : slices) {
        if (s.rows != ref.rows || s.cols != ref.cols)
            throw InconsistentGeometry("matrix size varies across slices");
        if ((s.pixel_spacing - ref.pixel_spacing).cwiseAbs().maxCoeff() > 1e-6)
            throw InconsistentGeometry("PixelSpacing varies across slices");
        if ((s.row_dir - ref.row_dir).cwiseAbs().maxCoeff() > 1e-4 ||
            (s.col_dir - ref.col_dir).cwiseAbs().maxCoeff() > 1e-4)
            throw InconsistentGeometry("ImageOrientationPatient varies across slices");
    }

    Eigen::Vector3d normal = ref.row_dir.cross(ref.col_dir);
    const double nn = normal.norm();
    if (nn < 1e-9) throw InconsistentGeometry("degenerate ImageOrientationPatient");
    normal /= nn;

    for (SliceFile& s : slices) s.normal_pos = normal.dot(s.position);
    std::sort(slices.begin(), slices.end(),
              [](const SliceFile& a, const SliceFile& b) { return a.normal_pos < b.normal_pos; });

    double slice_gap = 1.0;
    if (slices.size() > 1) {
        std::vector<double> gaps;
        for (std::size_t i = 1; i < slices.size(); ++i)
            gaps.push_back(slices[i].normal_pos - slices[i - 1].normal_pos);
        std::vector<double> sorted_gaps = gaps;
        std::sort(sorted_gaps.begin(), sorted_gaps.end());
        const std::size_t mid = sorted_gaps.size() / 2;
        const double median = sorted_gaps.size() % 2
                                  ? sorted_gaps[mid]
                                  : 0.5 * (sorted_gaps[mid - 1] + sorted_gaps[mid]);
        if (!(median > 0.0))
            throw InconsistentGeometry("duplicate slice positions");
        for (double g : gaps)
            if (std::abs(g - median) > 0.10 * median)
                throw NonUniformSliceGap("gap " + std::to_string(g) + " vs median " +
                                         std::to_string(median));
        slice_gap = median;
    }

    const Eigen::Index nx = ref.cols, ny = ref.rows, nz = static_cast<Eigen::Index>(slices.size());
    Volume vol = make_volume(nx, ny, nz);
    // PixelSpacing is (between-rows, between-columns): y then x.
    vol.spacing = {ref.pixel_spacing[1], ref.pixel_spacing[0], slice_gap};
    vol.orientation.col(0) = ref.row_dir.normalized();
    vol.orientation.col(1) = ref.col_dir.normalized();
    vol.orientation.col(2) = normal;
    vol.origin = slices.front().position;
    vol.source_id = dir.filename().string();

    for (Eigen::Index k = 0; k < nz; ++k) {
        const SliceFile& s = slices[static_cast<std::size_t>(k)];
        for (Eigen::Index r = 0; r < ny; ++r)
            for (Eigen::Index c = 0; c < nx; ++c) {
                const double raw = stored_value(s, static_cast<std::size_t>(r * nx + c));
                vol.at(c, r, k) = raw * s.slope + s.intercept;
            }
    }

    validate(vol);
    return vol;
}

}  // namespace kdetect
