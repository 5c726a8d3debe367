#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sonalign/common.hpp"

#ifdef SONALIGN_USE_BLAS
#include <cblas.h>
#endif

namespace sonalign {

// Dense row-major matrix of 64-bit floats. The only tensor rank in the
// project; vectors are 1×n or n×1.
class Matrix {
public:
    Matrix() = default;

    Matrix(size_t rows, size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(size_t rows, size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) +
                             "x" + std::to_string(cols_));
    }

    static Matrix filled(size_t rows, size_t cols, double v) {
        Matrix m(rows, cols);
        for (auto& x : m.data_) x = v;
        return m;
    }

    static Matrix identity(size_t n) {
        Matrix m(n, n);
        for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
    double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& vec() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

    double scalar() const {
        if (!is_scalar()) throw ShapeError("expected 1x1 matrix, got " + shape_str());
        return data_[0];
    }

private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<double> data_;
};

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// C = A·B. Backed by BLAS when available; the loop fallback keeps the build
// dependency-free. Tests compare both against an independent oracle.
inline Matrix matmul_values(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " x " + b.shape_str());
    Matrix c(a.rows(), b.cols());
#ifdef SONALIGN_USE_BLAS
    if (a.rows() > 0 && b.cols() > 0 && a.cols() > 0) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(a.rows()),
                    static_cast<int>(b.cols()), static_cast<int>(a.cols()), 1.0, a.data(),
                    static_cast<int>(a.cols()), b.data(), static_cast<int>(b.cols()), 0.0, c.data(),
                    static_cast<int>(b.cols()));
    }
#else
    const size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (size_t i = 0; i < n; ++i) {
        double* crow = c.data() + i * m;
        for (size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            const double* brow = b.data() + p * m;
            for (size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
#endif
    return c;
}

// C = A·Bᵀ without materializing the transpose
inline Matrix matmul_nt_values(const Matrix& a, const Matrix& bt) {
    if (a.cols() != bt.cols())
        throw ShapeError("matmul_nt: inner dimensions disagree, " + a.shape_str() + " x " + bt.shape_str() + "ᵀ");
    Matrix c(a.rows(), bt.rows());
#ifdef SONALIGN_USE_BLAS
    if (a.rows() > 0 && bt.rows() > 0 && a.cols() > 0) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(a.rows()),
                    static_cast<int>(bt.rows()), static_cast<int>(a.cols()), 1.0, a.data(),
                    static_cast<int>(a.cols()), bt.data(), static_cast<int>(bt.cols()), 0.0, c.data(),
                    static_cast<int>(bt.rows()));
    }
#else
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < bt.rows(); ++j) {
            double s = 0.0;
            const double* arow = a.data() + i * a.cols();
            const double* brow = bt.data() + j * bt.cols();
            for (size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
            c(i, j) = s;
        }
#endif
    return c;
}

// C = Aᵀ·B without materializing the transpose
inline Matrix matmul_tn_values(const Matrix& at, const Matrix& b) {
    if (at.rows() != b.rows())
        throw ShapeError("matmul_tn: inner dimensions disagree, " + at.shape_str() + "ᵀ x " + b.shape_str());
    Matrix c(at.cols(), b.cols());
#ifdef SONALIGN_USE_BLAS
    if (at.cols() > 0 && b.cols() > 0 && at.rows() > 0) {
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(at.cols()),
                    static_cast<int>(b.cols()), static_cast<int>(at.rows()), 1.0, at.data(),
                    static_cast<int>(at.cols()), b.data(), static_cast<int>(b.cols()), 0.0, c.data(),
                    static_cast<int>(b.cols()));
    }
#else
    for (size_t k = 0; k < at.rows(); ++k) {
        const double* arow = at.data() + k * at.cols();
        const double* brow = b.data() + k * b.cols();
        for (size_t i = 0; i < at.cols(); ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c.data() + i * b.cols();
            for (size_t j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
        }
    }
#endif
    return c;
}

inline Matrix transpose_values(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline double frobenius_norm_values(const Matrix& a) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return std::sqrt(s);
}

inline double frobenius_inner_values(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "frobenius_inner");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Pins the number of threads BLAS may use. Called once at startup by tools
// and tests: single-threaded GEMM keeps results bitwise reproducible while
// parallelism happens at the per-sample tape level.
#ifdef SONALIGN_USE_BLAS
extern "C" void openblas_set_num_threads(int);
inline void pin_blas_threads() { openblas_set_num_threads(1); }
#else
inline void pin_blas_threads() {}
#endif

}  // namespace sonalign
