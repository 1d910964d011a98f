#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace pso {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
    friend bool operator==(Vec2 a, Vec2 b) = default;

    double squared_norm() const { return x * x + y * y; }
    double norm() const { return std::sqrt(squared_norm()); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline double squared_distance(Vec2 a, Vec2 b) { return (a - b).squared_norm(); }

/// Dense row-major matrix used for batched activations. Rows are features and
/// columns are batch elements, so every kernel below runs its innermost loop
/// over a contiguous batch row. Each column is computed independently with a
/// fixed summation order, which makes results bitwise independent of how
/// many columns share a batch.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::size_t size() const noexcept { return data_.size(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Vec2 column2(std::size_t c) const {
        assert(rows_ == 2);
        return {data_[c], data_[cols_ + c]};
    }
    void set_column2(std::size_t c, Vec2 v) {
        assert(rows_ == 2);
        data_[c] = v.x;
        data_[cols_ + c] = v.y;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix points_to_matrix(const std::vector<Vec2>& pts) {
    Matrix m(2, pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) m.set_column2(i, pts[i]);
    return m;
}

inline std::vector<Vec2> matrix_to_points(const Matrix& m) {
    std::vector<Vec2> out(m.cols());
    for (std::size_t i = 0; i < m.cols(); ++i) out[i] = m.column2(i);
    return out;
}

} // namespace pso
