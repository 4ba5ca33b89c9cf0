#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "kdetect/boxes.hpp"

namespace kdetect {

// Training hyperparameters plus the reference architecture knobs. beta1 is
// the momentum setting paired with Adam; weight decay is decoupled from the
// gradient step.
struct TrainConfig {
    double learning_rate = 0.001;
    int batch_size = 120;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.00005;
    int epochs = 100;
    std::uint64_t seed = 0;
    int grid_size = 8;    // S
    int image_size = 256;
    int boxes_per_cell = 1;  // B, fixed at 1
    bool hflip_augment = false;
    double lambda_box = 5.0;
    double lambda_obj = 1.0;
    double lambda_noobj = 0.5;
    double lambda_cls = 1.0;
    double anchor_prior = 0.3;
};

void validate(const TrainConfig& cfg);

// A detector input: one slice resized to image_size^2 with its boxes.
struct Sample {
    Eigen::ArrayXXd image;  // (image_size, image_size), pixels(x, y) in [0, 1]
    std::vector<BoxLabel> boxes;
    std::string id;
};

struct TensorInfo {
    std::string name;
    std::vector<Eigen::Index> dims;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

// All parameters flattened into one array; the directory names the slices.
struct ModelWeights {
    Eigen::ArrayXd params;
    std::vector<TensorInfo> directory;
    std::uint64_t fingerprint = 0;
    std::int32_t epoch = 0;
};

struct GridLoss {
    double value = 0.0;
    Eigen::MatrixXd dlogits;  // (S*S, 6)
};

// Compact single-class grid detector: stride-2 3x3 conv blocks with leaky
// ReLU down to an S x S grid, then a 1x1 head emitting per cell
// [t_x, t_y, t_w, t_h, t_obj, t_cls]. The block count is
// log2(image_size / grid_size); channels follow 16, 32, 64, 64, ...
class GridDetector {
public:
    explicit GridDetector(const TrainConfig& cfg);

    const TrainConfig& config() const { return cfg_; }
    const std::vector<int>& channels() const { return channels_; }
    Eigen::Index param_count() const { return param_count_; }
    std::uint64_t fingerprint() const { return fingerprint_; }

    ModelWeights init_weights(std::uint64_t seed) const;

    // Grid logits for one image, rows cell-major (row = i*S + j), columns
    // [t_x, t_y, t_w, t_h, t_obj, t_cls].
    Eigen::MatrixXd forward(const ModelWeights& weights, const Eigen::ArrayXXd& image) const;

    // Mean per-image loss over the batch and its gradient for every weight.
    double loss_and_grad(const ModelWeights& weights, const std::vector<Sample>& batch,
                         Eigen::ArrayXd& grad) const;

    std::vector<Detection> predict(const ModelWeights& weights, const Eigen::ArrayXXd& image,
                                   double conf_threshold = 0.25, double nms_iou = 0.45,
                                   int max_boxes = 2) const;

private:
    struct LayerCache;
    Eigen::MatrixXd forward_impl(const ModelWeights& weights, const Eigen::ArrayXXd& image,
                                 std::vector<LayerCache>* caches) const;

    TrainConfig cfg_;
    std::vector<int> channels_;      // per conv block
    std::vector<TensorInfo> directory_;
    Eigen::Index param_count_ = 0;
    std::uint64_t fingerprint_ = 0;
};

// Composite loss on one image's grid logits: squared error on the encoded
// box against sigmoid offsets and log sizes, binary cross-entropy on
// objectness (weighted lambda_obj / lambda_noobj), cross-entropy on the
// single-class channel. Targets are assigned to the cell holding their
// center; at most boxes_per_cell survive per cell, largest area first.
GridLoss grid_loss(const Eigen::MatrixXd& logits, const std::vector<BoxLabel>& targets,
                   const TrainConfig& cfg);

// Decode without confidence filtering (exposed for tests).
std::vector<Detection> decode_grid(const Eigen::MatrixXd& logits, const TrainConfig& cfg);

}  // namespace kdetect
