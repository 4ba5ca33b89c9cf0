#include "kdetect/net.hpp"

#include <algorithm>
#include <cmath>

#include "kdetect/errors.hpp"
#include "kdetect/hash.hpp"
#include "kdetect/rng.hpp"

namespace kdetect {

namespace {

constexpr double kLeakySlope = 0.1;
constexpr int kOutChannels = 6;  // tx, ty, tw, th, tobj, tcls

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + e^x), overflow-safe
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// binary cross-entropy on a logit
double bce_logit(double z, double y) { return softplus(z) - z * y; }

int int_log2(int v) {
    int p = 0;
    while ((1 << p) < v) ++p;
    return (1 << p) == v ? p : -1;
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
    if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
    if (!(cfg.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.grid_size < 1) throw ConfigError("grid_size must be >= 1");
    if (cfg.boxes_per_cell != 1) throw ConfigError("boxes_per_cell is fixed at 1");
    if (cfg.image_size < 8 || cfg.image_size % cfg.grid_size != 0)
        throw ConfigError("image_size must be >= 8 and divisible by grid_size");
    const int factor = cfg.image_size / cfg.grid_size;
    if (int_log2(factor) < 1)
        throw ConfigError("image_size / grid_size must be a power of two >= 2");
    if (!(cfg.anchor_prior > 0.0 && cfg.anchor_prior <= 1.0))
        throw ConfigError("anchor_prior must be in (0, 1]");
    for (double l : {cfg.lambda_box, cfg.lambda_obj, cfg.lambda_noobj, cfg.lambda_cls})
        if (l < 0.0) throw ConfigError("loss weights must be >= 0");
}

struct GridDetector::LayerCache {
    Eigen::MatrixXd cols;  // im2col matrix
    Eigen::MatrixXd pre;   // pre-activation
    Eigen::MatrixXd act;   // post-activation
};

GridDetector::GridDetector(const TrainConfig& cfg) : cfg_(cfg) {
    validate(cfg);
    const int n_blocks = int_log2(cfg.image_size / cfg.grid_size);
    const int schedule[4] = {16, 32, 64, 64};
    for (int b = 0; b < n_blocks; ++b)
        channels_.push_back(b < 4 ? schedule[b] : 64);

    Eigen::Index offset = 0;
    const auto add_tensor = [&](const std::string& name, std::vector<Eigen::Index> dims) {
        Eigen::Index size = 1;
        for (Eigen::Index d : dims) size *= d;
        directory_.push_back({name, std::move(dims), offset, size});
        offset += size;
    };
    int c_in = 1;
    for (std::size_t b = 0; b < channels_.size(); ++b) {
        const int c_out = channels_[b];
        add_tensor("conv" + std::to_string(b + 1) + "/weight", {c_out, 9 * c_in});
        add_tensor("conv" + std::to_string(b + 1) + "/bias", {c_out});
        c_in = c_out;
    }
    add_tensor("head/weight", {kOutChannels, c_in});
    add_tensor("head/bias", {kOutChannels});
    param_count_ = offset;

    std::string canon = "gd1|S=" + std::to_string(cfg.grid_size) +
                        "|img=" + std::to_string(cfg.image_size) +
                        "|B=" + std::to_string(cfg.boxes_per_cell) + "|classes=1|anchor=";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", cfg.anchor_prior);
    canon += buf;
    canon += "|ch=";
    for (int c : channels_) canon += std::to_string(c) + ",";
    fingerprint_ = fnv1a64(canon);
}

ModelWeights GridDetector::init_weights(std::uint64_t seed) const {
    ModelWeights w;
    w.params = Eigen::ArrayXd::Zero(param_count_);
    w.directory = directory_;
    w.fingerprint = fingerprint_;
    Rng rng(derive_seed(seed, 0x1417));
    for (const TensorInfo& t : directory_) {
        if (t.name.ends_with("/bias")) {
            continue;  // biases start at zero
        }
        const bool head = t.name.starts_with("head/");
        const double fan_in = static_cast<double>(t.dims.at(1));
        const double stddev = head ? 0.01 : std::sqrt(2.0 / fan_in);
        for (Eigen::Index i = 0; i < t.size; ++i)
            w.params[t.offset + i] = rng.normal(0.0, stddev);
    }
    // negative objectness prior: most cells are empty
    const TensorInfo& head_bias = directory_.back();
    w.params[head_bias.offset + 4] = -2.0;
    return w;
}

Eigen::MatrixXd GridDetector::forward_impl(const ModelWeights& weights,
                                           const Eigen::ArrayXXd& image,
                                           std::vector<LayerCache>* caches) const {
    if (weights.fingerprint != fingerprint_)
        throw FingerprintMismatch("weights were built for a different architecture");
    if (weights.params.size() != param_count_)
        throw ShapeMismatch("parameter vector has wrong length");
    if (image.rows() != cfg_.image_size || image.cols() != cfg_.image_size)
        throw ShapeMismatch("input image must be " + std::to_string(cfg_.image_size) + "^2, got " +
                            std::to_string(image.rows()) + "x" + std::to_string(image.cols()));

    const auto tensor = [&](std::size_t idx) {
        const TensorInfo& t = directory_[idx];
        return Eigen::Map<const Eigen::MatrixXd>(weights.params.data() + t.offset,
                                                 t.dims.size() == 2 ? t.dims[1] : t.dims[0],
                                                 t.dims.size() == 2 ? t.dims[0] : 1);
    };
    // Note: tensors are stored row-major-logical (c_out, fan_in); the map
    // above loads them as (fan_in, c_out), so GEMMs use the transpose.

    int size = cfg_.image_size;
    // channel-major activation: row = channel, column = y*W + x
    Eigen::MatrixXd act(1, size * size);
    for (Eigen::Index y = 0; y < size; ++y)
        for (Eigen::Index x = 0; x < size; ++x) act(0, y * size + x) = image(x, y);

    if (caches) caches->clear();

    for (std::size_t b = 0; b < channels_.size(); ++b) {
        const int c_in = b == 0 ? 1 : channels_[b - 1];
        const int out_size = size / 2;

        Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(9 * c_in, out_size * out_size);
        for (int oy = 0; oy < out_size; ++oy) {
            for (int ox = 0; ox < out_size; ++ox) {
                const int col = oy * out_size + ox;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = oy * 2 - 1 + ky;
                    if (iy < 0 || iy >= size) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = ox * 2 - 1 + kx;
                        if (ix < 0 || ix >= size) continue;
                        cols.block((ky * 3 + kx) * c_in, col, c_in, 1) =
                            act.col(iy * size + ix);
                    }
                }
            }
        }

        const auto wmat = tensor(2 * b);      // (9*c_in, c_out) mapped
        const auto bias = tensor(2 * b + 1);  // (c_out, 1)
        Eigen::MatrixXd pre = wmat.transpose() * cols;
        pre.colwise() += bias.col(0);
        Eigen::MatrixXd next =
            pre.unaryExpr([](double z) { return z > 0.0 ? z : kLeakySlope * z; });

        if (caches) caches->push_back({std::move(cols), std::move(pre), act});
        act = std::move(next);
        size = out_size;
    }

    const auto wh = tensor(directory_.size() - 2);  // (c_last, 6) mapped
    const auto bh = tensor(directory_.size() - 1);
    Eigen::MatrixXd head = wh.transpose() * act;
    head.colwise() += bh.col(0);

    if (caches) caches->push_back({Eigen::MatrixXd(), Eigen::MatrixXd(), act});

    Eigen::MatrixXd logits = head.transpose();  // (S*S, 6)
    if (!logits.allFinite())
        throw NonFiniteActivation("non-finite logits; training has diverged");
    return logits;
}

Eigen::MatrixXd GridDetector::forward(const ModelWeights& weights,
                                      const Eigen::ArrayXXd& image) const {
    return forward_impl(weights, image, nullptr);
}

namespace {

struct CellTarget {
    double sx, sy, tw, th;  // encoded: sigmoid offsets and log sizes
};

}  // namespace

GridLoss grid_loss(const Eigen::MatrixXd& logits, const std::vector<BoxLabel>& targets,
                   const TrainConfig& cfg) {
    const int s = cfg.grid_size;
    if (logits.rows() != s * s || logits.cols() != kOutChannels)
        throw ShapeMismatch("logits must be (S*S, 6)");

    // cell -> surviving target; largest area wins when a cell is contested
    std::vector<const BoxLabel*> chosen(static_cast<std::size_t>(s * s), nullptr);
    std::vector<const BoxLabel*> ordered;
    ordered.reserve(targets.size());
    for (const BoxLabel& t : targets) ordered.push_back(&t);
    std::stable_sort(ordered.begin(), ordered.end(), [](const BoxLabel* a, const BoxLabel* b) {
        return a->w * a->h > b->w * b->h;
    });
    for (const BoxLabel* t : ordered) {
        const int j = std::min(s - 1, static_cast<int>(std::floor(t->cx * s)));
        const int i = std::min(s - 1, static_cast<int>(std::floor(t->cy * s)));
        auto& slot = chosen[static_cast<std::size_t>(i * s + j)];
        if (!slot) slot = t;  // excess targets in a cell are dropped
    }

    GridLoss out;
    out.dlogits = Eigen::MatrixXd::Zero(s * s, kOutChannels);
    double loss = 0.0;
    for (int cell = 0; cell < s * s; ++cell) {
        const double tobj = logits(cell, 4);
        if (const BoxLabel* t = chosen[static_cast<std::size_t>(cell)]) {
            const int i = cell / s, j = cell % s;
            CellTarget enc;
            enc.sx = t->cx * s - j;
            enc.sy = t->cy * s - i;
            enc.tw = std::log(std::max(t->w, 1e-9) / cfg.anchor_prior);
            enc.th = std::log(std::max(t->h, 1e-9) / cfg.anchor_prior);

            const double sx = sigmoid(logits(cell, 0));
            const double sy = sigmoid(logits(cell, 1));
            const double tw = logits(cell, 2);
            const double th = logits(cell, 3);
            loss += cfg.lambda_box * ((sx - enc.sx) * (sx - enc.sx) + (sy - enc.sy) * (sy - enc.sy) +
                                      (tw - enc.tw) * (tw - enc.tw) + (th - enc.th) * (th - enc.th));
            out.dlogits(cell, 0) = cfg.lambda_box * 2.0 * (sx - enc.sx) * sx * (1.0 - sx);
            out.dlogits(cell, 1) = cfg.lambda_box * 2.0 * (sy - enc.sy) * sy * (1.0 - sy);
            out.dlogits(cell, 2) = cfg.lambda_box * 2.0 * (tw - enc.tw);
            out.dlogits(cell, 3) = cfg.lambda_box * 2.0 * (th - enc.th);

            loss += cfg.lambda_obj * bce_logit(tobj, 1.0);
            out.dlogits(cell, 4) = cfg.lambda_obj * (sigmoid(tobj) - 1.0);

            const double tcls = logits(cell, 5);
            loss += cfg.lambda_cls * bce_logit(tcls, 1.0);
            out.dlogits(cell, 5) = cfg.lambda_cls * (sigmoid(tcls) - 1.0);
        } else {
            loss += cfg.lambda_noobj * bce_logit(tobj, 0.0);
            out.dlogits(cell, 4) = cfg.lambda_noobj * sigmoid(tobj);
        }
    }
    out.value = loss;
    return out;
}

double GridDetector::loss_and_grad(const ModelWeights& weights, const std::vector<Sample>& batch,
                                   Eigen::ArrayXd& grad) const {
    if (batch.empty()) throw EmptyDataset("loss over an empty batch");
    grad = Eigen::ArrayXd::Zero(param_count_);

    const auto tensor = [&](std::size_t idx) {
        const TensorInfo& t = directory_[idx];
        return Eigen::Map<const Eigen::MatrixXd>(weights.params.data() + t.offset,
                                                 t.dims.size() == 2 ? t.dims[1] : t.dims[0],
                                                 t.dims.size() == 2 ? t.dims[0] : 1);
    };
    const auto grad_tensor = [&](std::size_t idx) {
        const TensorInfo& t = directory_[idx];
        return Eigen::Map<Eigen::MatrixXd>(grad.data() + t.offset,
                                           t.dims.size() == 2 ? t.dims[1] : t.dims[0],
                                           t.dims.size() == 2 ? t.dims[0] : 1);
    };

    double total = 0.0;
    std::vector<LayerCache> caches;
    for (const Sample& sample : batch) {
        const Eigen::MatrixXd logits = forward_impl(weights, sample.image, &caches);
        GridLoss gl = grid_loss(logits, sample.boxes, cfg_);
        total += gl.value;

        // head backward
        const Eigen::MatrixXd dhead = gl.dlogits.transpose();  // (6, S*S)
        const Eigen::MatrixXd& act_last = caches.back().act;
        grad_tensor(directory_.size() - 2) += act_last * dhead.transpose();  // (c_last, 6)
        grad_tensor(directory_.size() - 1).col(0) += dhead.rowwise().sum();
        const auto wh = tensor(directory_.size() - 2);
        Eigen::MatrixXd dact = wh * dhead;  // (c_last, S*S)

        int out_size = cfg_.grid_size;
        for (int b = static_cast<int>(channels_.size()) - 1; b >= 0; --b) {
            const LayerCache& cache = caches[static_cast<std::size_t>(b)];
            const int c_in = b == 0 ? 1 : channels_[static_cast<std::size_t>(b - 1)];
            const int in_size = out_size * 2;

            Eigen::MatrixXd dpre = (cache.pre.array() > 0.0)
                                       .select(dact.array(), dact.array() * kLeakySlope)
                                       .matrix();

            grad_tensor(2 * static_cast<std::size_t>(b)) += cache.cols * dpre.transpose();
            grad_tensor(2 * static_cast<std::size_t>(b) + 1).col(0) += dpre.rowwise().sum();

            if (b > 0) {  // gradients wrt the input image are never used
                const auto wmat = tensor(2 * static_cast<std::size_t>(b));
                Eigen::MatrixXd dcols = wmat * dpre;  // (9*c_in, out^2)
                Eigen::MatrixXd dprev = Eigen::MatrixXd::Zero(c_in, in_size * in_size);
                for (int oy = 0; oy < out_size; ++oy)
                    for (int ox = 0; ox < out_size; ++ox) {
                        const int col = oy * out_size + ox;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = oy * 2 - 1 + ky;
                            if (iy < 0 || iy >= in_size) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox * 2 - 1 + kx;
                                if (ix < 0 || ix >= in_size) continue;
                                dprev.col(iy * in_size + ix) +=
                                    dcols.block((ky * 3 + kx) * c_in, col, c_in, 1);
                            }
                        }
                    }
                dact = std::move(dprev);
            }
            out_size = in_size;
        }
    }

    const double scale = 1.0 / static_cast<double>(batch.size());
    grad *= scale;
    return total * scale;
}

std::vector<Detection> decode_grid(const Eigen::MatrixXd& logits, const TrainConfig& cfg) {
    const int s = cfg.grid_size;
    if (logits.rows() != s * s || logits.cols() != kOutChannels)
        throw ShapeMismatch("logits must be (S*S, 6)");
    std::vector<Detection> dets;
    dets.reserve(static_cast<std::size_t>(s * s));
    for (int cell = 0; cell < s * s; ++cell) {
        const int i = cell / s, j = cell % s;
        Detection d;
        d.box.class_id = 0;
        d.box.cx = (j + sigmoid(logits(cell, 0))) / s;
        d.box.cy = (i + sigmoid(logits(cell, 1))) / s;
        const double tw = std::clamp(logits(cell, 2), -12.0, 12.0);
        const double th = std::clamp(logits(cell, 3), -12.0, 12.0);
        d.box.w = std::clamp(std::exp(tw) * cfg.anchor_prior, 1e-6, 1.0);
        d.box.h = std::clamp(std::exp(th) * cfg.anchor_prior, 1e-6, 1.0);
        // clip to the unit square; centers are strictly inside so the
        // clipped box keeps positive area
        const double x0 = std::max(0.0, d.box.cx - d.box.w / 2);
        const double x1 = std::min(1.0, d.box.cx + d.box.w / 2);
        const double y0 = std::max(0.0, d.box.cy - d.box.h / 2);
        const double y1 = std::min(1.0, d.box.cy + d.box.h / 2);
        d.box.cx = (x0 + x1) / 2;
        d.box.w = x1 - x0;
        d.box.cy = (y0 + y1) / 2;
        d.box.h = y1 - y0;
        // single class: softmax over one logit is 1
        d.confidence = sigmoid(logits(cell, 4));
        dets.push_back(d);
    }
    return dets;
}

std::vector<Detection> GridDetector::predict(const ModelWeights& weights,
                                             const Eigen::ArrayXXd& image, double conf_threshold,
                                             double nms_iou, int max_boxes) const {
    const Eigen::MatrixXd logits = forward(weights, image);
    std::vector<Detection> dets = decode_grid(logits, cfg_);
    std::vector<Detection> kept;
    for (const Detection& d : dets)
        if (d.confidence >= conf_threshold) kept.push_back(d);
    return nms(std::move(kept), nms_iou, max_boxes);
}

}  // namespace kdetect
