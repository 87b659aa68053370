#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace graphfm {

// Row-major dense matrix. Deliberately minimal: the kernels below cover
// everything the tokenizer, transformer and oracles need.
template <typename T>
class Mat {
public:
    Mat() = default;
    Mat(std::int64_t rows, std::int64_t cols, T value = T{})
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), value) {
        require(rows >= 0 && cols >= 0, Status::shape_error, "Mat: negative dimension");
    }

    std::int64_t rows() const { return rows_; }
    std::int64_t cols() const { return cols_; }
    std::int64_t size() const { return rows_ * cols_; }
    bool empty() const { return data_.empty(); }

    T* row(std::int64_t i) { return data_.data() + i * cols_; }
    const T* row(std::int64_t i) const { return data_.data() + i * cols_; }

    T& operator()(std::int64_t i, std::int64_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::int64_t i, std::int64_t j) const { return data_[i * cols_ + j]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    void set_row(std::int64_t i, const T* src) { std::memcpy(row(i), src, sizeof(T) * cols_); }

private:
    std::int64_t rows_ = 0;
    std::int64_t cols_ = 0;
    std::vector<T> data_;
};

using MatD = Mat<double>;
using MatF = Mat<float>;

template <typename T, typename U>
Mat<U> cast_mat(const Mat<T>& a) {
    Mat<U> out(a.rows(), a.cols());
    const T* src = a.data();
    U* dst = out.data();
    for (std::int64_t i = 0; i < a.size(); ++i) dst[i] = static_cast<U>(src[i]);
    return out;
}

// c = a * b
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    require(a.cols() == b.rows(), Status::shape_error, "matmul: inner dimensions differ");
    Mat<T> c(a.rows(), b.cols());
    const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
#pragma omp parallel for schedule(static) if (m * n * k > 65536)
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c.row(i);
        const T* arow = a.row(i);
        for (std::int64_t p = 0; p < k; ++p) {
            const T aip = arow[p];
            if (aip == T{}) continue;
            const T* brow = b.row(p);
            for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

// c = a * b^T
template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
    require(a.cols() == b.cols(), Status::shape_error, "matmul_nt: inner dimensions differ");
    Mat<T> c(a.rows(), b.rows());
    const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
#pragma omp parallel for schedule(static) if (m * n * k > 65536)
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (std::int64_t j = 0; j < n; ++j) {
            const T* brow = b.row(j);
            T acc{};
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
    return c;
}

// c = a^T * b
template <typename T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
    require(a.rows() == b.rows(), Status::shape_error, "matmul_tn: inner dimensions differ");
    Mat<T> c(a.cols(), b.cols());
    const std::int64_t m = a.cols(), k = a.rows(), n = b.cols();
#pragma omp parallel for schedule(static) if (m * n * k > 65536)
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c.row(i);
        for (std::int64_t p = 0; p < k; ++p) {
            const T api = a(p, i);
            if (api == T{}) continue;
            const T* brow = b.row(p);
            for (std::int64_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
    return c;
}

template <typename T>
void add_inplace(Mat<T>& a, const Mat<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), Status::shape_error, "add: shape mismatch");
    T* pa = a.data();
    const T* pb = b.data();
    for (std::int64_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

template <typename T>
void scale_inplace(Mat<T>& a, T s) {
    T* pa = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) pa[i] *= s;
}

template <typename T>
Mat<T> transpose(const Mat<T>& a) {
    Mat<T> out(a.cols(), a.rows());
    for (std::int64_t i = 0; i < a.rows(); ++i)
        for (std::int64_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

// Numerically-stable softmax over each row, in place.
template <typename T>
void softmax_rows(Mat<T>& a) {
    for (std::int64_t i = 0; i < a.rows(); ++i) {
        T* r = a.row(i);
        T hi = r[0];
        for (std::int64_t j = 1; j < a.cols(); ++j) hi = std::max(hi, r[j]);
        T sum{};
        for (std::int64_t j = 0; j < a.cols(); ++j) {
            r[j] = std::exp(r[j] - hi);
            sum += r[j];
        }
        const T inv = T(1) / sum;
        for (std::int64_t j = 0; j < a.cols(); ++j) r[j] *= inv;
    }
}

template <typename T>
bool all_finite(const Mat<T>& a) {
    const T* p = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

template <typename T>
double frob_norm(const Mat<T>& a) {
    double acc = 0.0;
    const T* p = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) acc += static_cast<double>(p[i]) * static_cast<double>(p[i]);
    return std::sqrt(acc);
}

template <typename T>
double max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), Status::shape_error, "max_abs_diff: shape mismatch");
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return worst;
}

// Per-row layer normalization without affine parameters: (x - mean) / sqrt(var + eps),
// population variance. Rows that are identically zero stay zero.
template <typename T>
void layer_norm_rows(Mat<T>& a, double eps = 1e-8) {
    for (std::int64_t i = 0; i < a.rows(); ++i) {
        T* r = a.row(i);
        double mean = 0.0;
        bool all_zero = true;
        for (std::int64_t j = 0; j < a.cols(); ++j) {
            mean += r[j];
            all_zero = all_zero && r[j] == T{};
        }
        if (all_zero) continue;
        mean /= static_cast<double>(a.cols());
        double var = 0.0;
        for (std::int64_t j = 0; j < a.cols(); ++j) {
            const double d = static_cast<double>(r[j]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(a.cols());
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < a.cols(); ++j)
            r[j] = static_cast<T>((static_cast<double>(r[j]) - mean) * inv);
    }
}

// Fill with N(0,1) / U(lo,hi) deviates, row-major order.
inline void fill_gaussian(MatD& a, Rng& rng) {
    double* p = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) p[i] = rng.normal();
}

template <typename T>
void fill_uniform(Mat<T>& a, Rng& rng, double lo, double hi) {
    T* p = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) p[i] = static_cast<T>(rng.uniform(lo, hi));
}

// Orthonormalizes the columns of a in place (modified Gram-Schmidt, two passes).
// Columns that collapse to zero norm are redrawn from the supplied rng and
// re-orthogonalized, so the result always has full column rank.
void orthonormalize_columns(MatD& a, Rng& rng);

struct EigResult {
    std::vector<double> values;  // descending
    MatD vectors;                // column i pairs with values[i]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
EigResult jacobi_eigh(MatD a);

}  // namespace graphfm
