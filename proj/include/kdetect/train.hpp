#pragma once

#include <functional>

#include "kdetect/net.hpp"

namespace kdetect {

// Receives one line-delimited JSON event per notable training milestone.
using ProgressFn = std::function<void(const std::string& event_json)>;

struct TrainResult {
    ModelWeights weights;       // after the last epoch
    ModelWeights best_weights;  // lowest epoch-mean loss
    std::vector<double> epoch_loss;
    int best_epoch = 0;  // 1-based
};

// Seeded-shuffle minibatch training with Adam. The batch size is reduced to
// the dataset size when larger (announced via progress). Identical
// (config, seed, data, init) inputs give bitwise-identical weights.
TrainResult train_detector(const TrainConfig& cfg, const std::vector<Sample>& data,
                           const ModelWeights* init = nullptr, const ProgressFn& progress = {});

}  // namespace kdetect
