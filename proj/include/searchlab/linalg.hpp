// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace searchlab
{

/// Dense row-major matrix of per-option feature rows.
struct FeatureMatrix
{
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c): rows(r), cols(c), data(r * c, 0.0) {}

    [[nodiscard]] std::span<double> row(std::size_t i) { return { data.data() + i * cols, cols }; }
    [[nodiscard]] std::span<const double> row(std::size_t i) const { return { data.data() + i * cols, cols }; }

    bool operator==(const FeatureMatrix&) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b)
{
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline std::vector<double> scores(const FeatureMatrix& m, std::span<const double> w)
{
    std::vector<double> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        out[i] = dot(m.row(i), w);
    return out;
}

inline std::vector<double> log_softmax(std::span<const double> logits)
{
    double hi = -INFINITY;
    for (double z: logits)
        hi = std::max(hi, z);
    double sum = 0.0;
    for (double z: logits)
        sum += std::exp(z - hi);
    const double lse = hi + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out[i] = logits[i] - lse;
    return out;
}

inline double sigmoid(double z)
{
    if (z >= 0.0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(sigmoid(z)) without overflow.
inline double log_sigmoid(double z)
{
    return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

} // namespace searchlab
