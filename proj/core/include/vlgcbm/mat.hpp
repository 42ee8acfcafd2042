#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace vlgcbm {

/// Minimal dense row-major matrix of doubles. All in-memory numerics run at
/// 64-bit; 32-bit floats appear only in on-disk payloads.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

    static Mat zeros(std::size_t r, std::size_t c) { return Mat(r, c); }

    double& operator()(std::size_t i, std::size_t j) {
        assert(i < rows && j < cols);
        return v[i * cols + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        assert(i < rows && j < cols);
        return v[i * cols + j];
    }

    std::span<double> row(std::size_t i) {
        assert(i < rows);
        return {v.data() + i * cols, cols};
    }
    std::span<const double> row(std::size_t i) const {
        assert(i < rows);
        return {v.data() + i * cols, cols};
    }

    std::size_t size() const { return v.size(); }

    bool operator==(const Mat& o) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// y = A x, A is rows x cols, x has cols entries.
inline std::vector<double> matvec(const Mat& a, std::span<const double> x) {
    assert(x.size() == a.cols);
    std::vector<double> y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) y[i] = dot(a.row(i), x);
    return y;
}

/// y = A^T x, x has rows entries, result has cols entries.
inline std::vector<double> matvec_t(const Mat& a, std::span<const double> x) {
    assert(x.size() == a.rows);
    std::vector<double> y(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double xi = x[i];
        auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) y[j] += xi * r[j];
    }
    return y;
}

inline double squared_norm(const Mat& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

}  // namespace vlgcbm
