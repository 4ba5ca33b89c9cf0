#pragma once

#include <Eigen/Dense>

#include "kdetect/net.hpp"

namespace kdetect {

struct AdamState {
    Eigen::ArrayXd m;  // first moment
    Eigen::ArrayXd v;  // second moment
    long t = 0;        // completed steps
};

AdamState make_adam_state(Eigen::Index n);

// One Adam update with bias correction and decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w
void adam_step(Eigen::ArrayXd& weights, const Eigen::ArrayXd& grad, AdamState& state,
               const TrainConfig& cfg);

}  // namespace kdetect
