#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "nsce/math.hpp"

namespace nsce {

class HeadError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Final fully connected layer: W is d_out x C with one column per class.
struct LinearHead {
    Matrix W;
    Vec bias;

    LinearHead() = default;
    LinearHead(std::size_t d_in, std::size_t num_classes, Rng& rng)
        : W(d_in, num_classes), bias(num_classes, 0.0) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
        for (double& v : W.a) v = rng.uniform(-bound, bound);
    }

    std::size_t in_dim() const { return W.rows; }
    std::size_t num_classes() const { return W.cols; }
};

// Optional one-hidden-layer ReLU adapter in front of the head. When disabled
// it is the identity; when frozen its parameters must not change.
struct AdapterHead {
    bool enabled = false;
    bool frozen = false;
    Matrix W1;  // d x h
    Vec b1;

    AdapterHead() = default;
    AdapterHead(std::size_t d_in, std::size_t hidden, Rng& rng)
        : enabled(true), W1(d_in, hidden), b1(hidden, 0.0) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
        for (double& v : W1.a) v = rng.uniform(-bound, bound);
    }

    std::size_t out_dim(std::size_t d_in) const { return enabled ? W1.cols : d_in; }

    // pre-activation, kept for backprop
    Vec pre_activation(const Vec& x) const { return affine_transpose(W1, b1, x); }

    Vec forward(const Vec& x) const {
        if (!enabled) return x;
        Vec z = pre_activation(x);
        for (double& v : z) v = std::max(v, 0.0);
        return z;
    }
};

struct ForwardResult {
    Vec representation;
    Vec logits;
};

inline ForwardResult forward(const Vec& features, const AdapterHead& adapter, const LinearHead& head) {
    ForwardResult out;
    out.representation = adapter.forward(features);
    if (out.representation.size() != head.in_dim())
        throw HeadError("forward: representation dim " + std::to_string(out.representation.size()) +
                        " does not match head input dim " + std::to_string(head.in_dim()));
    out.logits = affine_transpose(head.W, head.bias, out.representation);
    return out;
}

// Stabilized softmax; argmax breaks ties toward the lowest index.
inline std::pair<Vec, int> softmax_predict(const Vec& logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    Vec probs(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - top);
        z += probs[i];
    }
    int arg = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        probs[i] /= z;
        if (probs[i] > probs[static_cast<std::size_t>(arg)]) arg = static_cast<int>(i);
    }
    return {std::move(probs), arg};
}

// Online nearest-class-mean prototypes with momentum update
//   mu_c <- (1 - lambda) mu_c + lambda * (batch mean of class c),
// first sighting initializes mu_c to the batch mean directly.
struct NcmState {
    std::vector<std::optional<Vec>> prototypes;
    std::vector<std::size_t> counts_seen;
    double momentum = 0.1;  // lambda_ncm

    explicit NcmState(std::size_t num_classes, double lambda = 0.1)
        : prototypes(num_classes), counts_seen(num_classes, 0), momentum(lambda) {}

    bool any_seen() const {
        return std::any_of(prototypes.begin(), prototypes.end(),
                           [](const auto& p) { return p.has_value(); });
    }
};

inline void update_class_means(NcmState& ncm, const std::vector<Vec>& representations,
                               const std::vector<int>& labels) {
    const std::size_t num_classes = ncm.prototypes.size();
    std::vector<Vec> sums(num_classes);
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < representations.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        if (sums[c].empty()) sums[c].assign(representations[i].size(), 0.0);
        axpy(1.0, representations[i], sums[c]);
        counts[c]++;
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) continue;
        Vec mean = sums[c];
        for (double& v : mean) v /= static_cast<double>(counts[c]);
        if (!ncm.prototypes[c]) {
            ncm.prototypes[c] = std::move(mean);
        } else {
            Vec& mu = *ncm.prototypes[c];
            for (std::size_t i = 0; i < mu.size(); ++i)
                mu[i] = (1.0 - ncm.momentum) * mu[i] + ncm.momentum * mean[i];
        }
        ncm.counts_seen[c] += counts[c];
    }
}

// Euclidean nearest prototype over seen classes; lowest-index tie-break.
inline int ncm_predict(const NcmState& ncm, const Vec& representation) {
    int best = -1;
    double best_d = 0.0;
    for (std::size_t c = 0; c < ncm.prototypes.size(); ++c) {
        if (!ncm.prototypes[c]) continue;
        Vec diff = representation;
        axpy(-1.0, *ncm.prototypes[c], diff);
        const double d = dot(diff, diff);
        if (best < 0 || d < best_d) {
            best = static_cast<int>(c);
            best_d = d;
        }
    }
    if (best < 0) throw HeadError("ncm_predict called before any prototype exists");
    return best;
}

// --- checkpointing -----------------------------------------------------

namespace detail {

inline void write_doubles(std::ofstream& out, const Vec& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::ifstream& in, Vec& v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != v.size() * sizeof(double))
        throw HeadError("checkpoint payload truncated");
}

}  // namespace detail

// JSON metadata next to a raw little-endian double payload; round-trip is
// bit-exact.
inline void save_heads(const std::filesystem::path& meta_path, const LinearHead& head,
                       const AdapterHead& adapter, std::uint64_t seed) {
    const auto dir = meta_path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    const std::string payload = meta_path.stem().string() + ".params.f64";
    nlohmann::json j{{"d", head.in_dim()},
                     {"C", head.num_classes()},
                     {"h", adapter.enabled ? adapter.W1.cols : 0},
                     {"adapter_input", adapter.enabled ? adapter.W1.rows : 0},
                     {"seed", seed},
                     {"payload", payload}};
    std::ofstream mf(meta_path);
    mf << j.dump(2) << "\n";
    std::ofstream pf(dir / payload, std::ios::binary);
    detail::write_doubles(pf, head.W.a);
    detail::write_doubles(pf, head.bias);
    if (adapter.enabled) {
        detail::write_doubles(pf, adapter.W1.a);
        detail::write_doubles(pf, adapter.b1);
    }
}

inline std::pair<LinearHead, AdapterHead> load_heads(const std::filesystem::path& meta_path) {
    std::ifstream mf(meta_path);
    if (!mf) throw HeadError("cannot open head checkpoint: " + meta_path.string());
    nlohmann::json j;
    mf >> j;
    const std::size_t d = j.at("d").get<std::size_t>();
    const std::size_t c = j.at("C").get<std::size_t>();
    const std::size_t h = j.at("h").get<std::size_t>();
    LinearHead head;
    head.W = Matrix(d, c);
    head.bias.assign(c, 0.0);
    AdapterHead adapter;
    std::ifstream pf(meta_path.parent_path() / j.at("payload").get<std::string>(), std::ios::binary);
    if (!pf) throw HeadError("cannot open head payload");
    detail::read_doubles(pf, head.W.a);
    detail::read_doubles(pf, head.bias);
    if (h > 0) {
        adapter.enabled = true;
        adapter.W1 = Matrix(j.at("adapter_input").get<std::size_t>(), h);
        adapter.b1.assign(h, 0.0);
        detail::read_doubles(pf, adapter.W1.a);
        detail::read_doubles(pf, adapter.b1);
    }
    return {std::move(head), std::move(adapter)};
}

// Flattened parameter vector, used by the divergence diagnostics.
inline Vec flatten_params(const LinearHead& head, const AdapterHead& adapter) {
    Vec out;
    out.insert(out.end(), head.W.a.begin(), head.W.a.end());
    out.insert(out.end(), head.bias.begin(), head.bias.end());
    if (adapter.enabled) {
        out.insert(out.end(), adapter.W1.a.begin(), adapter.W1.a.end());
        out.insert(out.end(), adapter.b1.begin(), adapter.b1.end());
    }
    return out;
}

}  // namespace nsce
