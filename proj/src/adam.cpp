#include "kdetect/adam.hpp"

#include <cmath>

#include "kdetect/errors.hpp"

namespace kdetect {

AdamState make_adam_state(Eigen::Index n) {
    AdamState s;
    s.m = Eigen::ArrayXd::Zero(n);
    s.v = Eigen::ArrayXd::Zero(n);
    s.t = 0;
    return s;
}

void adam_step(Eigen::ArrayXd& weights, const Eigen::ArrayXd& grad, AdamState& state,
               const TrainConfig& cfg) {
    if (weights.size() != grad.size() || weights.size() != state.m.size() ||
        weights.size() != state.v.size())
        throw ShapeMismatch("weights, gradients and moments must have equal length");

    state.t += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.square();

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    const Eigen::ArrayXd m_hat = state.m / bc1;
    const Eigen::ArrayXd v_hat = state.v / bc2;

    weights -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    if (cfg.weight_decay > 0.0) weights -= cfg.learning_rate * cfg.weight_decay * weights;

    if (!weights.allFinite()) throw NonFiniteUpdate("weights left the finite range");
}

}  // namespace kdetect
