#include "kdetect/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdetect/errors.hpp"

namespace kdetect {

namespace {

bool parse_double(const std::string& token, double& out) {
    std::size_t used = 0;
    try {
        out = std::stod(token, &used);
    } catch (const std::exception&) {
        return false;
    }
    return used == token.size() && std::isfinite(out);
}

void append_box_line(std::string& out, const BoxLabel& b, const double* conf) {
    char buf[160];
    if (conf)
        std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f %.6f\n", b.class_id, b.cx, b.cy,
                      b.w, b.h, *conf);
    else
        std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f\n", b.class_id, b.cx, b.cy, b.w,
                      b.h);
    out += buf;
}

void write_text_file(const std::string& text, const std::filesystem::path& path) {
    std::filesystem::path parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoFailure("write failed for " + path.string());
}

struct ParsedLine {
    BoxLabel box;
    double confidence = -1.0;
};

std::vector<ParsedLine> read_box_lines(const std::filesystem::path& path, bool with_confidence) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::vector<ParsedLine> out;
    std::string line;
    int lineno = 0;
    const std::size_t expect = with_confidence ? 6 : 5;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<std::string> tokens;
        std::string tok;
        while (ss >> tok) tokens.push_back(tok);
        if (tokens.size() != expect)
            throw MalformedLine(path.string() + ":" + std::to_string(lineno) + " has " +
                                std::to_string(tokens.size()) + " fields, expected " +
                                std::to_string(expect));
        double fields[6] = {0, 0, 0, 0, 0, 0};
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (!parse_double(tokens[i], fields[i]))
                throw MalformedLine(path.string() + ":" + std::to_string(lineno) +
                                    " non-numeric field '" + tokens[i] + "'");
        if (fields[0] != std::floor(fields[0]) || fields[0] < 0)
            throw MalformedLine(path.string() + ":" + std::to_string(lineno) +
                                " class id must be a non-negative integer");
        ParsedLine parsed;
        parsed.box.class_id = static_cast<int>(fields[0]);
        parsed.box.cx = fields[1];
        parsed.box.cy = fields[2];
        parsed.box.w = fields[3];
        parsed.box.h = fields[4];
        try {
            validate(parsed.box);
        } catch (const Error& e) {
            throw OutOfRangeValue(path.string() + ":" + std::to_string(lineno) + " " + e.what());
        }
        if (with_confidence) {
            parsed.confidence = fields[5];
            if (parsed.confidence < 0.0 || parsed.confidence > 1.0)
                throw OutOfRangeValue(path.string() + ":" + std::to_string(lineno) +
                                      " confidence outside [0, 1]");
        }
        out.push_back(parsed);
    }
    return out;
}

}  // namespace

void validate(const BoxLabel& box) {
    const bool finite = std::isfinite(box.cx) && std::isfinite(box.cy) && std::isfinite(box.w) &&
                        std::isfinite(box.h);
    if (!finite) throw OutOfRangeValue("box has non-finite coordinates");
    if (!(box.w > 0.0 && box.h > 0.0)) throw OutOfRangeValue("box area must be positive");
    if (box.cx - box.w / 2 < -kBoxEdgeTol || box.cx + box.w / 2 > 1.0 + kBoxEdgeTol ||
        box.cy - box.h / 2 < -kBoxEdgeTol || box.cy + box.h / 2 > 1.0 + kBoxEdgeTol)
        throw OutOfRangeValue("box extends outside the unit square");
}

void validate(const Detection& det) {
    validate(det.box);
    if (!std::isfinite(det.confidence) || det.confidence < 0.0 || det.confidence > 1.0)
        throw OutOfRangeValue("confidence outside [0, 1]");
}

double iou(const BoxLabel& a, const BoxLabel& b) {
    const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
    const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
    const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
    const double ih = std::min(ay1, by1) - std::max(ay0, by0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold, int max_boxes) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        return a.confidence > b.confidence;
    });
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        if (max_boxes >= 0 && static_cast<int>(kept.size()) >= max_boxes) break;
        bool suppressed = false;
        for (const Detection& k : kept)
            if (iou(d.box, k.box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<BoxLabel> mask_to_boxes(const Eigen::Ref<const Eigen::ArrayXXd>& mask,
                                    int min_area_px) {
    const Eigen::Index w = mask.rows(), h = mask.cols();
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x)
            if (mask(x, y) != 0.0 && mask(x, y) != 1.0)
                throw NonBinaryMask("mask value " + std::to_string(mask(x, y)) + " at (" +
                                    std::to_string(x) + ", " + std::to_string(y) + ")");

    std::vector<char> visited(static_cast<std::size_t>(w * h), 0);
    const auto idx = [w](Eigen::Index x, Eigen::Index y) {
        return static_cast<std::size_t>(x + w * y);
    };

    std::vector<BoxLabel> boxes;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
    for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index x = 0; x < w; ++x) {
            if (mask(x, y) != 1.0 || visited[idx(x, y)]) continue;
            Eigen::Index c0 = x, c1 = x, r0 = y, r1 = y;
            long area = 0;
            stack.clear();
            stack.emplace_back(x, y);
            visited[idx(x, y)] = 1;
            while (!stack.empty()) {
                const auto [px, py] = stack.back();
                stack.pop_back();
                ++area;
                c0 = std::min(c0, px);
                c1 = std::max(c1, px);
                r0 = std::min(r0, py);
                r1 = std::max(r1, py);
                const std::pair<Eigen::Index, Eigen::Index> nbrs[4] = {
                    {px - 1, py}, {px + 1, py}, {px, py - 1}, {px, py + 1}};
                for (const auto& [nx, ny] : nbrs) {
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    if (mask(nx, ny) != 1.0 || visited[idx(nx, ny)]) continue;
                    visited[idx(nx, ny)] = 1;
                    stack.emplace_back(nx, ny);
                }
            }
            if (area < min_area_px) continue;
            BoxLabel b;
            b.class_id = 0;
            b.cx = static_cast<double>(c0 + c1 + 1) / (2.0 * static_cast<double>(w));
            b.w = static_cast<double>(c1 - c0 + 1) / static_cast<double>(w);
            b.cy = static_cast<double>(r0 + r1 + 1) / (2.0 * static_cast<double>(h));
            b.h = static_cast<double>(r1 - r0 + 1) / static_cast<double>(h);
            boxes.push_back(b);
        }
    }
    return boxes;
}

void write_labels(const std::vector<BoxLabel>& boxes, const std::filesystem::path& path) {
    std::string text;
    for (const BoxLabel& b : boxes) {
        validate(b);
        append_box_line(text, b, nullptr);
    }
    write_text_file(text, path);
}

void write_predictions(const std::vector<Detection>& dets, const std::filesystem::path& path) {
    std::string text;
    for (const Detection& d : dets) {
        validate(d);
        append_box_line(text, d.box, &d.confidence);
    }
    write_text_file(text, path);
}

std::vector<BoxLabel> read_labels(const std::filesystem::path& path) {
    std::vector<BoxLabel> out;
    for (const ParsedLine& p : read_box_lines(path, false)) out.push_back(p.box);
    return out;
}

std::vector<Detection> read_predictions(const std::filesystem::path& path) {
    std::vector<Detection> out;
    for (const ParsedLine& p : read_box_lines(path, true)) out.push_back({p.box, p.confidence});
    return out;
}

}  // namespace kdetect
