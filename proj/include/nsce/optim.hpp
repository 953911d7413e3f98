#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nsce/math.hpp"

namespace nsce {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Decoupled weight decay adaptive-moment update for one parameter tensor.
struct AdamWState {
    Vec m;  // first moment
    Vec v;  // second moment
    std::int64_t step = 0;

    void init(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        step = 0;
    }

    void update(Vec& params, const Vec& grad, const AdamWConfig& cfg) {
        if (m.size() != params.size()) init(params.size());
        ++step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
};

}  // namespace nsce
