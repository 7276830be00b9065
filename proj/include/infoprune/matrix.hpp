#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "infoprune/error.hpp"

namespace infoprune {

/// Dense 2-D real matrix, row-major, 64-bit floats. The universal carrier
/// for weights and activations.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    /// Construct from externally supplied data; validates length and that
    /// every entry is finite.
    static Matrix fromData(std::size_t rows, std::size_t cols, std::vector<double> data) {
        if (rows == 0 || cols == 0) {
            raise(Error::Kind::DimensionMismatch, "matrix dimensions must be positive");
        }
        if (data.size() != rows * cols) {
            raise(Error::Kind::DimensionMismatch,
                  "data length " + std::to_string(data.size()) + " does not match " +
                      std::to_string(rows) + "x" + std::to_string(cols));
        }
        for (double v : data) {
            if (!std::isfinite(v)) {
                raise(Error::Kind::NonFiniteValue, "matrix entry is not finite");
            }
        }
        Matrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(data);
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool sameShape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    /// Copy of columns [c0, c0+count).
    Matrix colBlock(std::size_t c0, std::size_t count) const {
        Matrix out(rows_, count);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < count; ++c) out(r, c) = (*this)(r, c0 + c);
        return out;
    }

    /// Copy of rows [r0, r0+count).
    Matrix rowBlock(std::size_t r0, std::size_t count) const {
        Matrix out(count, cols_);
        for (std::size_t r = 0; r < count; ++r)
            for (std::size_t c = 0; c < cols_; ++c) out(r, c) = (*this)(r0 + r, c);
        return out;
    }

    void setColBlock(std::size_t c0, const Matrix& block) {
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < block.cols(); ++c) (*this)(r, c0 + c) = block(r, c);
    }

    void setRowBlock(std::size_t r0, const Matrix& block) {
        for (std::size_t r = 0; r < block.rows(); ++r)
            for (std::size_t c = 0; c < cols_; ++c) (*this)(r0 + r, c) = block(r, c);
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        raise(Error::Kind::DimensionMismatch,
              "matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                  " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    // ikj order keeps the inner loop contiguous for both operands
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    return out;
}

inline double frobeniusNorm(const Matrix& a) {
    double sum = 0.0;
    for (double v : a.data()) sum += v * v;
    return std::sqrt(sum);
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (!a.sameShape(b)) raise(Error::Kind::DimensionMismatch, "operator+: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (!a.sameShape(b)) raise(Error::Kind::DimensionMismatch, "operator-: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

inline void addInPlace(Matrix& a, const Matrix& b, double scale = 1.0) {
    if (!a.sameShape(b)) raise(Error::Kind::DimensionMismatch, "addInPlace: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += scale * b.data()[i];
}

/// u (m-vector as mx1 or 1xm) outer v -> m x n.
inline Matrix outer(const std::vector<double>& u, const std::vector<double>& v) {
    Matrix out(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = u[i] * v[j];
    return out;
}

inline double maxAbsDiff(const Matrix& a, const Matrix& b) {
    if (!a.sameShape(b)) raise(Error::Kind::DimensionMismatch, "maxAbsDiff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

} // namespace infoprune
