#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace nsce {

using Vec = std::vector<double>;

// Dense row-major matrix. Columns index classes throughout this library.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    std::size_t size() const { return a.size(); }

    Vec column(std::size_t j) const {
        Vec out(rows);
        for (std::size_t i = 0; i < rows; ++i) out[i] = a[i * cols + j];
        return out;
    }
};

inline double dot(const Vec& x, const Vec& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double l2_norm(const Vec& x) { return std::sqrt(dot(x, x)); }

inline void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(const Vec& x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

// logits = W^T r + bias, W is d x C
inline Vec affine_transpose(const Matrix& w, const Vec& bias, const Vec& r) {
    if (r.size() != w.rows) throw std::invalid_argument("affine_transpose: dimension mismatch");
    Vec out(bias);
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double ri = r[i];
        const double* row = &w.a[i * w.cols];
        for (std::size_t c = 0; c < w.cols; ++c) out[c] += row[c] * ri;
    }
    return out;
}

struct Rng {
    std::mt19937_64 engine;

    explicit Rng(std::uint64_t seed) : engine(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine);
    }
    double normal(double mean, double sigma) {
        return std::normal_distribution<double>(mean, sigma)(engine);
    }
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine);
    }
};

}  // namespace nsce
