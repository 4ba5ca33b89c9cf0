#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

namespace kdetect {

// Axis-aligned box in normalized image coordinates.
struct BoxLabel {
    int class_id = 0;
    double cx = 0.0, cy = 0.0;  // center
    double w = 0.0, h = 0.0;    // size
};

struct Detection {
    BoxLabel box;
    double confidence = 0.0;
};

// Edge tolerance admitted by the box invariants (and by 6-decimal file
// round trips).
inline constexpr double kBoxEdgeTol = 1e-6;

void validate(const BoxLabel& box);
void validate(const Detection& det);

double iou(const BoxLabel& a, const BoxLabel& b);

// Greedy non-maximum suppression: keep by descending confidence, drop any
// box with IoU >= iou_threshold against a kept one, cap at max_boxes.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold, int max_boxes);

// One box per 4-connected foreground component with at least min_area_px
// pixels. Boxes span pixel edges: columns [c0..c1] of a W-wide slice give
// cx = (c0+c1+1)/(2W), w = (c1-c0+1)/W. Mask values must be exactly 0 or 1.
std::vector<BoxLabel> mask_to_boxes(const Eigen::Ref<const Eigen::ArrayXXd>& mask,
                                    int min_area_px = 16);

// Label/prediction text files: one `class cx cy w h [conf]` line per box,
// six decimals, LF endings.
void write_labels(const std::vector<BoxLabel>& boxes, const std::filesystem::path& path);
void write_predictions(const std::vector<Detection>& dets, const std::filesystem::path& path);
std::vector<BoxLabel> read_labels(const std::filesystem::path& path);
std::vector<Detection> read_predictions(const std::filesystem::path& path);

}  // namespace kdetect
