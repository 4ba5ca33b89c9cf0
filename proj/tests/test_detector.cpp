#include <cmath>

#include "doctest.h"
#include "kdetect/errors.hpp"
#include "kdetect/net.hpp"
#include "kdetect/rng.hpp"
#include "kdetect/train.hpp"
#include "kdetect/weights_io.hpp"
#include "support/test_support.hpp"

using namespace kdetect;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.image_size = 16;
    cfg.grid_size = 4;  // two conv blocks
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.seed = 5;
    return cfg;
}

Eigen::ArrayXXd random_image(Rng& rng, int size) {
    Eigen::ArrayXXd img(size, size);
    for (Eigen::Index c = 0; c < size; ++c)
        for (Eigen::Index r = 0; r < size; ++r) img(r, c) = rng.uniform();
    return img;
}

BoxLabel random_target(Rng& rng) {
    BoxLabel b;
    b.w = rng.uniform(0.1, 0.5);
    b.h = rng.uniform(0.1, 0.5);
    b.cx = rng.uniform(b.w / 2 + 0.01, 0.99 - b.w / 2);
    b.cy = rng.uniform(b.h / 2 + 0.01, 0.99 - b.h / 2);
    return b;
}

double max_grad_rel_error(const TrainConfig& cfg, int n_pairs, std::uint64_t seed,
                          int param_stride) {
    const GridDetector net(cfg);
    Rng rng(seed);
    double worst = 0.0;
    for (int pair = 0; pair < n_pairs; ++pair) {
        ModelWeights w = net.init_weights(rng.uniform_int(1, 1 << 30));
        std::vector<Sample> batch(1);
        batch[0].image = random_image(rng, cfg.image_size);
        const int n_boxes = static_cast<int>(rng.uniform_int(0, 2));
        for (int b = 0; b < n_boxes; ++b) batch[0].boxes.push_back(random_target(rng));

        Eigen::ArrayXd grad;
        net.loss_and_grad(w, batch, grad);

        // epsilon below the distance of any pre-activation to the leaky-ReLU
        // kink; sub-1e-3 gradients are held to the matching absolute tolerance
        const double eps = 1e-6;
        Eigen::ArrayXd probe;
        for (Eigen::Index p = 0; p < w.params.size(); p += param_stride) {
            const double saved = w.params[p];
            w.params[p] = saved + eps;
            const double up = net.loss_and_grad(w, batch, probe);
            w.params[p] = saved - eps;
            const double down = net.loss_and_grad(w, batch, probe);
            w.params[p] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double denom = std::max({std::abs(numeric), std::abs(grad[p]), 1e-3});
            worst = std::max(worst, std::abs(numeric - grad[p]) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("zero weights give zero logits everywhere") {
    const TrainConfig cfg = tiny_config();
    const GridDetector net(cfg);
    ModelWeights w = net.init_weights(0);
    w.params.setZero();
    Rng rng(1);
    const Eigen::MatrixXd logits = net.forward(w, random_image(rng, cfg.image_size));
    CHECK(logits.rows() == 16);
    CHECK(logits.cols() == 6);
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
    // decoded objectness is sigmoid(0) = 0.5 in every cell
    for (const Detection& d : decode_grid(logits, cfg)) CHECK(d.confidence == doctest::Approx(0.5));
}

TEST_CASE("forward output shape follows the grid") {
    TrainConfig cfg;
    cfg.image_size = 128;
    cfg.grid_size = 8;  // four blocks, channels 16..64
    const GridDetector net(cfg);
    CHECK(net.channels() == std::vector<int>{16, 32, 64, 64});
    const ModelWeights w = net.init_weights(3);
    Rng rng(2);
    const Eigen::ArrayXXd img = random_image(rng, cfg.image_size);
    const Eigen::MatrixXd logits = net.forward(w, img);
    CHECK(logits.rows() == 64);
    CHECK(logits.cols() == 6);
    CHECK(logits.allFinite());

    // purity: the same input gives the same output
    const Eigen::MatrixXd again = net.forward(w, img);
    CHECK((logits - again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mismatched input shapes are refused") {
    const TrainConfig cfg = tiny_config();
    const GridDetector net(cfg);
    const ModelWeights w = net.init_weights(0);
    CHECK_THROWS_AS(net.forward(w, Eigen::ArrayXXd::Zero(8, 8)), ShapeMismatch);
}

TEST_CASE("a perfectly fitted prediction has near-zero loss") {
    const TrainConfig cfg = tiny_config();
    const int s = cfg.grid_size;
    // target decoded from logits (0,0,0,0): center of cell (1,2), size = anchor
    BoxLabel target;
    target.cx = (2 + 0.5) / s;
    target.cy = (1 + 0.5) / s;
    target.w = cfg.anchor_prior;
    target.h = cfg.anchor_prior;

    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(s * s, 6);
    logits.col(4).setConstant(-20.0);
    const int cell = 1 * s + 2;
    logits(cell, 4) = 20.0;
    logits(cell, 5) = 20.0;
    const GridLoss gl = grid_loss(logits, {target}, cfg);
    CHECK(gl.value < 1e-6);
}

TEST_CASE("an empty image with confident negatives has near-zero loss") {
    const TrainConfig cfg = tiny_config();
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(cfg.grid_size * cfg.grid_size, 6);
    logits.col(4).setConstant(-20.0);
    CHECK(grid_loss(logits, {}, cfg).value < 1e-6);
}

TEST_CASE("loss gradient wrt logits matches finite differences") {
    const TrainConfig cfg = tiny_config();
    Rng rng(11);
    Eigen::MatrixXd logits(cfg.grid_size * cfg.grid_size, 6);
    for (Eigen::Index r = 0; r < logits.rows(); ++r)
        for (Eigen::Index c = 0; c < logits.cols(); ++c) logits(r, c) = rng.normal(0.0, 1.0);
    const std::vector<BoxLabel> targets = {random_target(rng), random_target(rng)};

    const GridLoss gl = grid_loss(logits, targets, cfg);
    const double eps = 1e-6;
    for (Eigen::Index r = 0; r < logits.rows(); r += 3)
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            Eigen::MatrixXd probe = logits;
            probe(r, c) += eps;
            const double up = grid_loss(probe, targets, cfg).value;
            probe(r, c) -= 2 * eps;
            const double down = grid_loss(probe, targets, cfg).value;
            const double numeric = (up - down) / (2 * eps);
            CHECK(std::abs(numeric - gl.dlogits(r, c)) <
                  1e-4 * std::max(1.0, std::abs(numeric)));
        }
}

TEST_CASE("analytic gradients match central differences through the whole net") {
    const double worst = max_grad_rel_error(tiny_config(), 2, 77, 1);
    CHECK(worst < 1e-3);
}

TEST_CASE("excess targets in one cell are dropped by area") {
    const TrainConfig cfg = tiny_config();
    const int s = cfg.grid_size;
    // both targets land in cell (0,0); the larger one must drive the loss
    BoxLabel small{0, 0.06, 0.06, 0.05, 0.05};
    BoxLabel large{0, 0.10, 0.10, 0.19, 0.19};
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(s * s, 6);
    const GridLoss both = grid_loss(logits, {small, large}, cfg);
    const GridLoss only_large = grid_loss(logits, {large}, cfg);
    CHECK(both.value == doctest::Approx(only_large.value));
}

TEST_CASE("decoded boxes always satisfy the box invariants") {
    const TrainConfig cfg = tiny_config();
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::MatrixXd logits(cfg.grid_size * cfg.grid_size, 6);
        for (Eigen::Index r = 0; r < logits.rows(); ++r)
            for (Eigen::Index c = 0; c < logits.cols(); ++c)
                logits(r, c) = rng.normal(0.0, 5.0);
        for (const Detection& d : decode_grid(logits, cfg)) CHECK_NOTHROW(validate(d));
    }
}

TEST_CASE("prediction keeps disjoint boxes and drops suppressed or weak ones") {
    const TrainConfig cfg = tiny_config();
    const GridDetector net(cfg);
    ModelWeights w = net.init_weights(0);
    w.params.setZero();

    // all objectness at -20: nothing comes back
    const TensorInfo& head_bias = w.directory.back();
    w.params[head_bias.offset + 4] = -20.0;
    Rng rng(3);
    CHECK(net.predict(w, random_image(rng, cfg.image_size)).empty());
}

TEST_CASE("weights files round trip through RDW1") {
    test::TempDir tmp("weights");
    const TrainConfig cfg = tiny_config();
    const GridDetector net(cfg);
    ModelWeights w = net.init_weights(9);
    w.epoch = 17;
    save_weights(w, tmp / "w.rdw");
    const ModelWeights back = load_weights(tmp / "w.rdw");
    CHECK(back.fingerprint == w.fingerprint);
    CHECK(back.epoch == 17);
    REQUIRE(back.directory.size() == w.directory.size());
    for (std::size_t i = 0; i < w.directory.size(); ++i) {
        CHECK(back.directory[i].name == w.directory[i].name);
        CHECK(back.directory[i].dims == w.directory[i].dims);
    }
    // float32 payload: equality after one round of float casting
    for (Eigen::Index i = 0; i < w.params.size(); ++i)
        CHECK(back.params[i] == static_cast<double>(static_cast<float>(w.params[i])));

    // a second save of the loaded weights is byte-identical
    save_weights(back, tmp / "w2.rdw");
    CHECK(test::read_bytes(tmp / "w.rdw") == test::read_bytes(tmp / "w2.rdw"));
}

TEST_CASE("weights magic and fingerprint are enforced") {
    test::TempDir tmp("weights_bad");
    test::write_bytes(tmp / "junk.rdw", {'J', 'U', 'N', 'K', 0, 0, 0, 0});
    CHECK_THROWS_AS(load_weights(tmp / "junk.rdw"), BadMagic);

    const TrainConfig cfg = tiny_config();
    const GridDetector net(cfg);
    TrainConfig other = cfg;
    other.grid_size = 2;
    const GridDetector other_net(other);
    const ModelWeights w = other_net.init_weights(0);
    CHECK_THROWS_AS(net.forward(w, Eigen::ArrayXXd::Zero(cfg.image_size, cfg.image_size)),
                    FingerprintMismatch);
}

TEST_CASE("training is reproducible and rejects fingerprint mismatches") {
    TrainConfig cfg = tiny_config();
    cfg.epochs = 4;
    Rng rng(55);
    std::vector<Sample> data;
    for (int i = 0; i < 6; ++i) {
        Sample s;
        s.image = random_image(rng, cfg.image_size);
        s.boxes = {random_target(rng)};
        data.push_back(std::move(s));
    }
    const TrainResult a = train_detector(cfg, data);
    const TrainResult b = train_detector(cfg, data);
    CHECK((a.weights.params == b.weights.params).all());
    CHECK(a.epoch_loss == b.epoch_loss);
    CHECK(a.best_epoch == b.best_epoch);

    CHECK_THROWS_AS(train_detector(cfg, {}), EmptyDataset);

    TrainConfig other = cfg;
    other.grid_size = 2;
    const ModelWeights wrong = GridDetector(other).init_weights(0);
    CHECK_THROWS_AS(train_detector(cfg, data, &wrong), FingerprintMismatch);
}

TEST_CASE("training on a small phantom-like set drives the loss down") {
    TrainConfig cfg = tiny_config();
    cfg.epochs = 30;
    cfg.batch_size = 20;
    Rng rng(123);
    std::vector<Sample> data;
    for (int i = 0; i < 20; ++i) {
        // bright square blob on dark background
        Sample s;
        s.image = Eigen::ArrayXXd::Constant(cfg.image_size, cfg.image_size, 0.05);
        const int cx = static_cast<int>(rng.uniform_int(4, 11));
        const int cy = static_cast<int>(rng.uniform_int(4, 11));
        for (int y = cy - 2; y <= cy + 2; ++y)
            for (int x = cx - 2; x <= cx + 2; ++x) s.image(x, y) = 0.9;
        BoxLabel b;
        b.cx = (cx + 0.5) / cfg.image_size;
        b.cy = (cy + 0.5) / cfg.image_size;
        b.w = 5.0 / cfg.image_size;
        b.h = 5.0 / cfg.image_size;
        s.boxes = {b};
        data.push_back(std::move(s));
    }
    const TrainResult result = train_detector(cfg, data);
    // monotone decrease in at least 80% of consecutive epoch pairs
    int down = 0;
    for (std::size_t e = 1; e < result.epoch_loss.size(); ++e)
        down += result.epoch_loss[e] < result.epoch_loss[e - 1];
    CHECK(down >= static_cast<int>(0.8 * (result.epoch_loss.size() - 1)));
    CHECK(result.epoch_loss.back() < result.epoch_loss.front());
}
