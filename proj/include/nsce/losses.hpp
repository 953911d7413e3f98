#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "nsce/heads.hpp"
#include "nsce/math.hpp"

namespace nsce {

class LossError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Ideal simplex ETF target: p_ij = C_t/(C_t-1) * delta_ij - 1/(C_t-1),
// i.e. 1 on the diagonal and -1/(C_t-1) off it.
struct EtfTargets {
    std::size_t active_classes;  // C_t

    explicit EtfTargets(std::size_t c_t) : active_classes(c_t) {
        if (c_t < 2) throw LossError("ETF targets undefined for fewer than 2 classes");
    }

    double operator()(std::size_t i, std::size_t j) const {
        const double c = static_cast<double>(active_classes);
        const double delta = (i == j) ? 1.0 : 0.0;
        return delta * c / (c - 1.0) - 1.0 / (c - 1.0);
    }
};

struct LossBreakdown {
    double ce = 0.0;
    double ls = 0.0;
    double lp = 0.0;
    double lb = 0.0;
    double gamma = 0.0;
    double total = 0.0;
};

inline double total_loss(double ce, double ls, double lp, double gamma) {
    if (gamma < 0.0) throw LossError("gamma must be nonnegative");
    return ce + gamma * (lp + ls);
}

// --- cross entropy -----------------------------------------------------

struct CeResult {
    double loss = 0.0;
    std::vector<Vec> grad_logits;  // d(mean loss)/d(logits), per sample
};

inline CeResult cross_entropy(const std::vector<Vec>& logits, const std::vector<int>& labels) {
    const std::size_t n = logits.size();
    CeResult out;
    out.grad_logits.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto [probs, arg] = softmax_predict(logits[i]);
        (void)arg;
        const auto y = static_cast<std::size_t>(labels[i]);
        out.loss += -std::log(std::max(probs[y], 1e-300));
        Vec g = probs;
        g[y] -= 1.0;
        for (double& v : g) v /= static_cast<double>(n);
        out.grad_logits[i] = std::move(g);
    }
    out.loss /= static_cast<double>(n);
    return out;
}

// --- non-sparse regularizer --------------------------------------------

struct SparsityResult {
    double loss = 0.0;
    Matrix grad;  // same shape as W
};

// L_s = -sum_c (mean_i |w_i^c|) / ||w^c||_2. A zero column contributes
// zero loss and zero gradient. sign(0) is taken as 0.
inline SparsityResult sparsity_regularizer(const Matrix& w) {
    SparsityResult out;
    out.grad = Matrix(w.rows, w.cols);
    const double d = static_cast<double>(w.rows);
    for (std::size_t c = 0; c < w.cols; ++c) {
        double abs_sum = 0.0, sq_sum = 0.0;
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double v = w(i, c);
            abs_sum += std::abs(v);
            sq_sum += v * v;
        }
        if (sq_sum == 0.0) continue;
        const double norm = std::sqrt(sq_sum);
        const double mean_abs = abs_sum / d;
        out.loss -= mean_abs / norm;
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double v = w(i, c);
            const double sgn = (v > 0.0) - (v < 0.0);
            out.grad(i, c) = -(sgn / d / norm - mean_abs * v / (norm * norm * norm));
        }
    }
    return out;
}

// --- maximum separation ------------------------------------------------

// One representative per active class: either the (mean) batch
// representation of that class, or a prototype fallback that receives no
// gradient.
struct ClassRepresentative {
    int cls = 0;
    Vec representation;   // unnormalized
    bool from_batch = true;
};

struct SeparationResult {
    double loss = 0.0;
    std::vector<Vec> grad;  // d loss / d representation, zero for fallbacks
};

// L_p = (1/C_t^2) sum_{i,j} (<r_i, r_j> - p_ij)^2 over unit-normalized
// representatives, including the i = j terms.
inline SeparationResult max_separation(const std::vector<ClassRepresentative>& reps) {
    const std::size_t c_t = reps.size();
    EtfTargets targets(c_t);

    std::vector<Vec> unit(c_t);
    std::vector<double> norms(c_t);
    for (std::size_t i = 0; i < c_t; ++i) {
        norms[i] = l2_norm(reps[i].representation);
        if (norms[i] == 0.0) throw LossError("zero-norm class representative");
        unit[i] = reps[i].representation;
        for (double& v : unit[i]) v /= norms[i];
    }

    SeparationResult out;
    out.grad.assign(c_t, Vec{});
    const double inv_c2 = 1.0 / (static_cast<double>(c_t) * static_cast<double>(c_t));

    std::vector<Vec> grad_unit(c_t);
    for (std::size_t i = 0; i < c_t; ++i) grad_unit[i].assign(unit[i].size(), 0.0);

    for (std::size_t i = 0; i < c_t; ++i) {
        for (std::size_t j = 0; j < c_t; ++j) {
            const double diff = dot(unit[i], unit[j]) - targets(i, j);
            out.loss += inv_c2 * diff * diff;
            axpy(2.0 * inv_c2 * diff, unit[j], grad_unit[i]);
            axpy(2.0 * inv_c2 * diff, unit[i], grad_unit[j]);
        }
    }

    // through the normalization: dr/du = (I - r r^T) / ||u||
    for (std::size_t i = 0; i < c_t; ++i) {
        if (!reps[i].from_batch) {
            out.grad[i].assign(unit[i].size(), 0.0);
            continue;
        }
        const double radial = dot(grad_unit[i], unit[i]);
        Vec g = grad_unit[i];
        axpy(-radial, unit[i], g);
        for (double& v : g) v /= norms[i];
        out.grad[i] = std::move(g);
    }
    return out;
}

// --- targeted binary replay loss ---------------------------------------

struct BinaryLossResult {
    double loss = 0.0;
    std::vector<Vec> grad_logits;
};

// For each confused pair {m, n} and each sample whose label lies in the
// pair, a two-class cross-entropy over the pair's logits. Summed, not
// averaged. With pair_softmax = false the full-softmax components are used
// instead of renormalizing over the pair.
inline BinaryLossResult targeted_binary_loss(const std::vector<Vec>& logits,
                                             const std::vector<int>& labels,
                                             const std::vector<std::pair<int, int>>& pairs,
                                             bool pair_softmax = true) {
    BinaryLossResult out;
    out.grad_logits.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad_logits[i].assign(logits[i].size(), 0.0);

    for (const auto& [m, n] : pairs) {
        if (m == n) throw LossError("confused pair with identical classes");
        const auto um = static_cast<std::size_t>(m);
        const auto un = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const int y = labels[i];
            if (y != m && y != n) continue;
            const Vec& z = logits[i];
            if (pair_softmax) {
                const double top = std::max(z[um], z[un]);
                const double em = std::exp(z[um] - top);
                const double en = std::exp(z[un] - top);
                const double qm = em / (em + en);
                const double qn = en / (em + en);
                out.loss += -std::log(std::max(y == m ? qm : qn, 1e-300));
                out.grad_logits[i][um] += qm - (y == m ? 1.0 : 0.0);
                out.grad_logits[i][un] += qn - (y == n ? 1.0 : 0.0);
            } else {
                auto [probs, arg] = softmax_predict(z);
                (void)arg;
                const auto uy = static_cast<std::size_t>(y);
                out.loss += -std::log(std::max(probs[uy], 1e-300));
                for (std::size_t k = 0; k < z.size(); ++k)
                    out.grad_logits[i][k] += probs[k] - (k == uy ? 1.0 : 0.0);
            }
        }
    }
    return out;
}

}  // namespace nsce
