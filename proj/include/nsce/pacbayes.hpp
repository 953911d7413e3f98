#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nsce/math.hpp"

namespace nsce {

class BoundError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct BoundInputs {
    double loss_bound = 1.0;  // K
    double lambda = 1.0;      // lambda_pb, trade-off parameter
    double delta = 0.05;
    std::vector<double> samples_per_task;   // m_t = min(v_s, v_m) * dt
    std::vector<double> empirical_risk;     // per task
    std::vector<double> kl;                 // KL(Q_t || Q_{t-1}) per task
    // The appendix proof carries lambda K^2 / (2 m_t) while the main-text
    // statement drops the 2; the half form is the default.
    bool half_factor = true;
};

struct BoundTerms {
    double empirical_risk = 0.0;  // R_hat
    double throughput = 0.0;      // M
    double divergence = 0.0;      // D
    double constant = 0.0;
    double total = 0.0;
};

inline BoundTerms bound_terms(const BoundInputs& in) {
    const std::size_t t = in.samples_per_task.size();
    if (in.empirical_risk.size() != t || in.kl.size() != t)
        throw BoundError("bound_terms: per-task vectors disagree in length");
    if (in.lambda <= 0.0 || in.loss_bound <= 0.0) throw BoundError("bound_terms: lambda and K must be positive");
    if (in.delta <= 0.0 || in.delta >= 1.0) throw BoundError("bound_terms: delta must lie in (0,1)");
    BoundTerms out;
    const double denom_scale = in.half_factor ? 2.0 : 1.0;
    for (std::size_t i = 0; i < t; ++i) {
        if (in.samples_per_task[i] < 1.0) throw BoundError("bound_terms: each m_t must be >= 1");
        if (in.kl[i] < 0.0) throw BoundError("bound_terms: negative KL");
        out.empirical_risk += in.empirical_risk[i];
        out.throughput += in.lambda * in.loss_bound * in.loss_bound / (denom_scale * in.samples_per_task[i]);
        out.divergence += in.kl[i] / in.lambda;
    }
    const double tt = static_cast<double>(t);
    out.constant = tt * std::log(tt / in.delta) / in.lambda;
    out.total = out.empirical_risk + out.throughput + out.divergence + out.constant;
    return out;
}

// Isotropic Gaussian posterior proxy centered at parameter checkpoints:
// KL(N(mu_t, s^2 I) || N(mu_{t-1}, s^2 I)) = ||mu_t - mu_{t-1}||^2 / (2 s^2).
inline double gaussian_kl(const Vec& mean_t, const Vec& mean_prev, double sigma) {
    if (mean_t.size() != mean_prev.size()) throw BoundError("gaussian_kl: dimension mismatch");
    if (sigma <= 0.0) throw BoundError("gaussian_kl: sigma must be positive");
    double sq = 0.0;
    for (std::size_t i = 0; i < mean_t.size(); ++i) {
        const double d = mean_t[i] - mean_prev[i];
        sq += d * d;
    }
    return sq / (2.0 * sigma * sigma);
}

// Grid search over lambda in {2^-10 .. 2^10} for the minimizing total.
inline std::pair<double, BoundTerms> optimize_lambda(BoundInputs in) {
    double best_lambda = 0.0;
    BoundTerms best{};
    for (int e = -10; e <= 10; ++e) {
        in.lambda = std::ldexp(1.0, e);
        const BoundTerms terms = bound_terms(in);
        if (best_lambda == 0.0 || terms.total < best.total) {
            best_lambda = in.lambda;
            best = terms;
        }
    }
    return {best_lambda, best};
}

}  // namespace nsce
