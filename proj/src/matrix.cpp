#include "hiertax/matrix.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace hiertax {

namespace {

using EigenMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EigenMapMut =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

EigenMap map(const Matrix& m) {
    return EigenMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
                    static_cast<Eigen::Index>(m.cols));
}

}  // namespace

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw ContractError("matmul_nt shape mismatch: " + a.shape_str() + " vs " +
                            b.shape_str());
    }
    Matrix c(a.rows, b.rows);
    EigenMapMut(c.data.data(), static_cast<Eigen::Index>(c.rows),
                static_cast<Eigen::Index>(c.cols))
        .noalias() = map(a) * map(b).transpose();
    return c;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ContractError("matmul_nn shape mismatch: " + a.shape_str() + " vs " +
                            b.shape_str());
    }
    Matrix c(a.rows, b.cols);
    EigenMapMut(c.data.data(), static_cast<Eigen::Index>(c.rows),
                static_cast<Eigen::Index>(c.cols))
        .noalias() = map(a) * map(b);
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) {
        throw ContractError("matmul_tn shape mismatch: " + a.shape_str() + " vs " +
                            b.shape_str());
    }
    Matrix c(a.cols, b.cols);
    EigenMapMut(c.data.data(), static_cast<Eigen::Index>(c.rows),
                static_cast<Eigen::Index>(c.cols))
        .noalias() = map(a).transpose() * map(b);
    return c;
}

void add_row_vector(Matrix& m, const std::vector<double>& v) {
    if (v.size() != m.cols) {
        throw ContractError("add_row_vector length mismatch: " + m.shape_str() +
                            " vs vector of " + std::to_string(v.size()));
    }
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* row = m.row_ptr(r);
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += v[c];
    }
}

std::vector<double> column_sums(const Matrix& m) {
    std::vector<double> sums(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.row_ptr(r);
        for (std::size_t c = 0; c < m.cols; ++c) sums[c] += row[c];
    }
    return sums;
}

bool all_finite(const Matrix& m) { return all_finite(m.data); }

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace hiertax
