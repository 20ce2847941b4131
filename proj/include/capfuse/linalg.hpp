#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capfuse/error.hpp"

namespace capfuse {

inline constexpr double kNormEpsilon = 1e-12;

template <std::floating_point A, std::floating_point B>
double dot(std::span<const A> a, std::span<const B> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <std::floating_point T>
double l2_norm(std::span<const T> v) {
    return std::sqrt(dot(v, v));
}

/// Dense real vector. Non-empty, every entry finite.
class Vec {
public:
    Vec() = default;
    explicit Vec(std::vector<double> data) : data_(std::move(data)) {
        if (data_.empty()) fail(Errc::InvalidArgument, "vector must have dim > 0");
        for (double x : data_)
            if (!std::isfinite(x)) fail(Errc::InvalidArgument, "vector entries must be finite");
    }
    Vec(std::initializer_list<double> xs) : Vec(std::vector<double>(xs)) {}

    std::size_t dim() const noexcept { return data_.size(); }
    std::span<const double> values() const noexcept { return data_; }
    double operator[](std::size_t i) const { return data_[i]; }
    double norm() const { return l2_norm(values()); }

    friend bool operator==(const Vec&, const Vec&) = default;

private:
    std::vector<double> data_;
};

/// A Vec known to have unit L2 norm. Only produced by normalization.
class UnitVec {
public:
    UnitVec() = default;

    std::size_t dim() const noexcept { return v_.dim(); }
    std::span<const double> values() const noexcept { return v_.values(); }
    double operator[](std::size_t i) const { return v_[i]; }
    const Vec& vec() const noexcept { return v_; }

    friend bool operator==(const UnitVec&, const UnitVec&) = default;

private:
    explicit UnitVec(Vec v) : v_(std::move(v)) {}
    friend UnitVec l2_normalize(std::span<const double>);

    Vec v_;
};

/// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) fail(Errc::ShapeMismatch, "matrix data length != rows*cols");
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    Mat transposed() const {
        Mat t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline UnitVec l2_normalize(std::span<const double> v) {
    const double n = l2_norm(v);
    if (!(n > kNormEpsilon)) fail(Errc::ZeroNorm, "cannot normalize a vector with norm " + std::to_string(n));
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return UnitVec(Vec(std::move(out)));
}

inline UnitVec l2_normalize(const Vec& v) { return l2_normalize(v.values()); }

/// out(i, j) = <a_i, b_j> / (|a_i| |b_j|).
inline Mat cosine_sim_matrix(std::span<const Vec> a, std::span<const Vec> b) {
    if (a.empty() || b.empty()) return Mat(a.size(), b.size());
    const std::size_t d = a.front().dim();
    for (const auto* side : {&a, &b})
        for (const Vec& v : *side)
            if (v.dim() != d) fail(Errc::DimMismatch, "cosine_sim_matrix: all vectors must share dim " + std::to_string(d));

    std::vector<double> na(a.size()), nb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        na[i] = a[i].norm();
        if (!(na[i] > kNormEpsilon)) fail(Errc::ZeroNorm, "cosine_sim_matrix: zero-norm row in A");
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
        nb[j] = b[j].norm();
        if (!(nb[j] > kNormEpsilon)) fail(Errc::ZeroNorm, "cosine_sim_matrix: zero-norm row in B");
    }
    Mat out(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            out(i, j) = std::clamp(dot(a[i].values(), b[j].values()) / (na[i] * nb[j]), -1.0, 1.0);
    return out;
}

/// normalize(sum(vs) / n). Summation runs in a canonical (sorted) order so the
/// result does not depend on the order of the input list.
inline UnitVec mean_renormalize(std::span<const UnitVec> vs) {
    if (vs.empty()) fail(Errc::InvalidArgument, "mean_renormalize: empty input");
    const std::size_t d = vs.front().dim();
    for (const UnitVec& v : vs)
        if (v.dim() != d) fail(Errc::DimMismatch, "mean_renormalize: mixed dims");

    std::vector<const UnitVec*> order;
    order.reserve(vs.size());
    for (const UnitVec& v : vs) order.push_back(&v);
    std::sort(order.begin(), order.end(), [](const UnitVec* x, const UnitVec* y) {
        return std::lexicographical_compare(x->values().begin(), x->values().end(), y->values().begin(),
                                            y->values().end());
    });

    std::vector<double> mean(d, 0.0);
    for (const UnitVec* v : order)
        for (std::size_t i = 0; i < d; ++i) mean[i] += (*v)[i];
    for (double& x : mean) x /= static_cast<double>(vs.size());
    if (!(l2_norm(std::span<const double>(mean)) > kNormEpsilon))
        fail(Errc::DegenerateMean, "mean of unit vectors cancels to zero");
    return l2_normalize(std::span<const double>(mean));
}

/// Row-wise normalization of a matrix; the pre-normalization norms are returned
/// through `norms` for use in backpropagation.
inline Mat normalize_rows(const Mat& m, std::vector<double>* norms = nullptr) {
    Mat out(m.rows(), m.cols());
    if (norms) norms->assign(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = l2_norm(m.row(r));
        if (!(n > kNormEpsilon)) fail(Errc::ZeroNorm, "row " + std::to_string(r) + " has zero norm");
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c) / n;
        if (norms) (*norms)[r] = n;
    }
    return out;
}

/// Given dL/du for u = x / |x| (row-wise), returns dL/dx = (g - u <u, g>) / |x|.
inline Mat normalize_rows_backward(const Mat& unit, std::span<const double> norms, const Mat& grad_unit) {
    Mat out(unit.rows(), unit.cols());
    for (std::size_t r = 0; r < unit.rows(); ++r) {
        const double proj = dot(unit.row(r), grad_unit.row(r));
        for (std::size_t c = 0; c < unit.cols(); ++c)
            out(r, c) = (grad_unit(r, c) - unit(r, c) * proj) / norms[r];
    }
    return out;
}

/// a * b^T
inline Mat matmul_transposed(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) fail(Errc::DimMismatch, "matmul_transposed: inner dims differ");
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

inline Mat stack_rows(std::span<const Vec> vs) {
    if (vs.empty()) return {};
    const std::size_t d = vs.front().dim();
    Mat m(vs.size(), d);
    for (std::size_t r = 0; r < vs.size(); ++r) {
        if (vs[r].dim() != d) fail(Errc::DimMismatch, "stack_rows: mixed dims");
        std::copy(vs[r].values().begin(), vs[r].values().end(), m.row(r).begin());
    }
    return m;
}

} // namespace capfuse
