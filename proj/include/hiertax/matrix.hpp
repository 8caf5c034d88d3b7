#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hiertax/error.hpp"

namespace hiertax {

// Dense row-major matrix of doubles. Value type; 64-bit precision throughout.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    void fill(double value) { std::fill(data.begin(), data.end(), value); }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

// c = a * b^T   (a: m x k, b: n x k) -> m x n. Forward pass of a linear layer.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// c = a * b     (a: m x k, b: k x n) -> m x n. Input gradient: dX = dY * W.
Matrix matmul_nn(const Matrix& a, const Matrix& b);

// c = a^T * b   (a: m x k, b: m x n) -> k x n. Weight gradient: dW = dY^T * X.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// out[r] += v for every row.
void add_row_vector(Matrix& m, const std::vector<double>& v);

// Column sums, length = cols. Bias gradient reduction.
std::vector<double> column_sums(const Matrix& m);

bool all_finite(const Matrix& m);
bool all_finite(const std::vector<double>& v);

}  // namespace hiertax
