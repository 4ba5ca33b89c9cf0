#include "kdetect/train.hpp"

#include <cmath>
#include <numeric>

#include "kdetect/adam.hpp"
#include "kdetect/errors.hpp"
#include "kdetect/rng.hpp"

namespace kdetect {

namespace {

Sample hflip(const Sample& s) {
    Sample out;
    out.id = s.id;
    out.image = s.image.colwise().reverse();
    out.boxes = s.boxes;
    for (BoxLabel& b : out.boxes) b.cx = 1.0 - b.cx;
    return out;
}

void emit(const ProgressFn& progress, const std::string& json) {
    if (progress) progress(json);
}

}  // namespace

TrainResult train_detector(const TrainConfig& cfg, const std::vector<Sample>& data,
                           const ModelWeights* init, const ProgressFn& progress) {
    validate(cfg);
    if (data.empty()) throw EmptyDataset("no training samples");

    const GridDetector net(cfg);
    ModelWeights weights;
    if (init) {
        if (init->fingerprint != net.fingerprint())
            throw FingerprintMismatch("warm-start weights do not match the configured architecture");
        weights = *init;
    } else {
        weights = net.init_weights(cfg.seed);
    }

    const int n = static_cast<int>(data.size());
    const int batch_size = std::min(cfg.batch_size, n);
    if (batch_size != cfg.batch_size)
        emit(progress, "{\"event\":\"batch_size_reduced\",\"requested\":" +
                           std::to_string(cfg.batch_size) + ",\"effective\":" +
                           std::to_string(batch_size) + "}");

    AdamState state = make_adam_state(weights.params.size());
    TrainResult result;
    double best_loss = std::numeric_limits<double>::infinity();

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Eigen::ArrayXd grad;
    std::vector<Sample> batch;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 0xE70C0000ULL + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double epoch_sum = 0.0;
        long epoch_count = 0;
        for (int start = 0; start < n; start += batch_size) {
            const int count = std::min(batch_size, n - start);
            batch.clear();
            for (int b = 0; b < count; ++b) {
                const Sample& s = data[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
                if (cfg.hflip_augment && rng.uniform() < 0.5)
                    batch.push_back(hflip(s));
                else
                    batch.push_back(s);
            }
            const double loss = net.loss_and_grad(weights, batch, grad);
            if (!std::isfinite(loss))
                throw DivergedTraining("non-finite loss at epoch " + std::to_string(epoch));
            adam_step(weights.params, grad, state, cfg);
            epoch_sum += loss * count;
            epoch_count += count;
        }

        const double mean_loss = epoch_sum / static_cast<double>(epoch_count);
        result.epoch_loss.push_back(mean_loss);
        weights.epoch = epoch;
        emit(progress, "{\"event\":\"epoch\",\"epoch\":" + std::to_string(epoch) +
                           ",\"mean_loss\":" + std::to_string(mean_loss) + "}");
        if (mean_loss < best_loss) {
            best_loss = mean_loss;
            result.best_weights = weights;
            result.best_epoch = epoch;
        }
    }

    result.weights = std::move(weights);
    return result;
}

}  // namespace kdetect
