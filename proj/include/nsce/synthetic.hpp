#pragma once

#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "nsce/data.hpp"
#include "nsce/math.hpp"

namespace nsce {

// Gaussian cluster generator. Class means are dense sign vectors scaled to
// length `separation`; confusable pairs relocate the second class next to
// the first at the given reduced separation, emulating look-alike category
// pairs.
struct SyntheticSpec {
    std::size_t num_classes = 2;
    std::size_t dim = 2;
    double separation = 1.0;       // ||mean_a - origin|| scale between regular classes
    double sigma = 0.1;            // within-class standard deviation
    std::size_t per_class = 100;
    std::uint64_t seed = 0;
    std::vector<std::tuple<int, int, double>> confusable_pairs;  // (a, b, pair_separation)
};

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.per_class == 0) throw DataError("synthetic: per-class count must be positive");
    if (spec.separation <= 0.0 || spec.sigma <= 0.0)
        throw DataError("synthetic: separation and sigma must be positive");

    Rng rng(spec.seed);
    const double coord = spec.separation / std::sqrt(static_cast<double>(spec.dim));
    std::vector<Vec> means(spec.num_classes, Vec(spec.dim, 0.0));
    for (auto& mean : means)
        for (double& v : mean) v = rng.bernoulli(0.5) ? coord : -coord;

    for (const auto& [a, b, pair_sep] : spec.confusable_pairs) {
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= spec.num_classes ||
            static_cast<std::size_t>(b) >= spec.num_classes || a == b)
            throw DataError("synthetic: invalid confusable pair");
        Vec dir(spec.dim);
        for (double& v : dir) v = rng.normal(0.0, 1.0);
        const double norm = l2_norm(dir);
        for (std::size_t i = 0; i < spec.dim; ++i)
            means[static_cast<std::size_t>(b)][i] =
                means[static_cast<std::size_t>(a)][i] + pair_sep * dir[i] / norm;
    }

    Dataset ds;
    ds.dim = spec.dim;
    ds.num_classes = spec.num_classes;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t k = 0; k < spec.per_class; ++k) {
            Sample s;
            s.label = static_cast<int>(c);
            s.features.resize(spec.dim);
            for (std::size_t i = 0; i < spec.dim; ++i)
                s.features[i] = means[c][i] + rng.normal(0.0, spec.sigma);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

}  // namespace nsce
