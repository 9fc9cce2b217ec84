#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

namespace micpq {

/// Span parameter whose element type is fixed by another argument.
template <typename T>
using ConstSpan = std::type_identity_t<std::span<const T>>;

/// Dense row-major matrix. Deliberately minimal: storage, shape and row views.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        data_.resize(rows_ * cols_);
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Converts element type, e.g. a float model to double for oracle checks.
template <typename To, typename From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
    std::vector<To> out(m.values().begin(), m.values().end());
    return Matrix<To>(m.rows(), m.cols(), std::move(out));
}

/// Gathers the listed rows into a new matrix.
template <typename T, typename Index>
Matrix<T> gather_rows(const Matrix<T>& m, std::span<const Index> rows) {
    Matrix<T> out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row(static_cast<std::size_t>(rows[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace micpq
