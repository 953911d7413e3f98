#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsce/data.hpp"
#include "nsce/heads.hpp"
#include "nsce/math.hpp"
#include "nsce/stream.hpp"

namespace nsce {

class MetricsError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct EvalRecord {
    std::size_t iteration = 0;
    std::size_t samples_seen = 0;
    double accuracy_softmax = 0.0;
    double accuracy_ncm = 0.0;
    std::vector<Vec> confusion;  // C x C, row-normalized by true class
    Vec per_class_s;             // s(w^c)
    Vec per_class_m;             // m(w^c)
    double v_m_measured = 0.0;
};

struct RunLog {
    std::vector<EvalRecord> records;
    std::vector<ThroughputRecord> throughput;
    std::string checkpoint_path;
    std::string config_echo;  // JSON text
    bool complete = false;
    // per-task training artifacts consumed by the bound diagnostics
    std::vector<double> task_mean_ce;
    std::vector<std::size_t> task_processed;
    std::vector<Vec> task_checkpoints;  // flattened params after each task
};

// Eq-style column diagnostics: m(w) = l2 norm, s(w) = mean|w_i| / max|w_i|.
// A zero column gets s = 1 by convention (and m = 0); callers can spot it
// by the zero norm.
inline std::pair<Vec, Vec> sparsity_stats(const Matrix& w) {
    Vec s(w.cols), m(w.cols);
    const double d = static_cast<double>(w.rows);
    for (std::size_t c = 0; c < w.cols; ++c) {
        double abs_sum = 0.0, sq_sum = 0.0, abs_max = 0.0;
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double v = std::abs(w(i, c));
            abs_sum += v;
            sq_sum += v * v;
            abs_max = std::max(abs_max, v);
        }
        m[c] = std::sqrt(sq_sum);
        s[c] = abs_max == 0.0 ? 1.0 : (abs_sum / d) / abs_max;
    }
    return {std::move(m), std::move(s)};
}

inline EvalRecord evaluate(const LinearHead& head, const AdapterHead& adapter, const NcmState& ncm,
                           const std::vector<Sample>& eval_set, std::size_t num_classes) {
    if (eval_set.empty()) throw MetricsError("evaluate: empty eval set");
    EvalRecord rec;
    rec.confusion.assign(num_classes, Vec(num_classes, 0.0));
    Vec row_counts(num_classes, 0.0);
    std::size_t hits_softmax = 0, hits_ncm = 0;
    const bool ncm_ready = ncm.any_seen();
    for (const Sample& s : eval_set) {
        const auto fwd = forward(s.features, adapter, head);
        const auto [probs, pred] = softmax_predict(fwd.logits);
        (void)probs;
        if (pred == s.label) ++hits_softmax;
        rec.confusion[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(pred)] += 1.0;
        row_counts[static_cast<std::size_t>(s.label)] += 1.0;
        if (ncm_ready && ncm_predict(ncm, fwd.representation) == s.label) ++hits_ncm;
    }
    for (std::size_t r = 0; r < num_classes; ++r)
        if (row_counts[r] > 0.0)
            for (double& v : rec.confusion[r]) v /= row_counts[r];
    rec.accuracy_softmax = static_cast<double>(hits_softmax) / static_cast<double>(eval_set.size());
    rec.accuracy_ncm = ncm_ready
                           ? static_cast<double>(hits_ncm) / static_cast<double>(eval_set.size())
                           : 0.0;
    auto [m, s] = sparsity_stats(head.W);
    rec.per_class_m = std::move(m);
    rec.per_class_s = std::move(s);
    return rec;
}

// Mean of evaluation-point accuracies: the printed accuracy-curve sum
// sum_i f(i*dn)*dn normalized by the total span t*dn.
inline double a_auc(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw MetricsError("a_auc: empty record list");
    double sum = 0.0;
    for (const EvalRecord& r : records) sum += r.accuracy_softmax;
    return sum / static_cast<double>(records.size());
}

// Unnormalized accuracy-curve sum with explicit spacing, kept for logging.
inline double a_auc_raw(const std::vector<EvalRecord>& records, double delta_n) {
    double sum = 0.0;
    for (const EvalRecord& r : records) sum += r.accuracy_softmax * delta_n;
    return sum;
}

inline double last_accuracy(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw MetricsError("last_accuracy: empty record list");
    return records.back().accuracy_softmax;
}

// v_m = batch_size / median(batch_times); median over mean for robustness
// to stalled batches.
inline double measure_throughput(std::vector<double> batch_times, int batch_size) {
    if (batch_times.empty()) throw MetricsError("measure_throughput: no batch times");
    std::sort(batch_times.begin(), batch_times.end());
    const std::size_t n = batch_times.size();
    const double median = n % 2 == 1 ? batch_times[n / 2]
                                     : 0.5 * (batch_times[n / 2 - 1] + batch_times[n / 2]);
    return static_cast<double>(batch_size) / median;
}

}  // namespace nsce
