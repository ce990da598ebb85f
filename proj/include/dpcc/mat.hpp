#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace dpcc {

// Dense row-major matrix of doubles. Feature blocks, weights and gradients
// all use this type; shape mismatches throw from the few places that check.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(std::size_t(r) * c, fill) {}

    double& operator()(int r, int c) { return v[std::size_t(r) * cols + c]; }
    double operator()(int r, int c) const { return v[std::size_t(r) * cols + c]; }
    double* row(int r) { return v.data() + std::size_t(r) * cols; }
    const double* row(int r) const { return v.data() + std::size_t(r) * cols; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

}  // namespace dpcc
