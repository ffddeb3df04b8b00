#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace atome {

/// Dense row-major float32 matrix.
///
/// Storage is always rows * cols floats; the layout is fixed because the ATMX
/// file format writes the buffer as-is.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);
    Matrix(std::initializer_list<std::initializer_list<float>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    bool all_finite() const noexcept;

    // Bitwise-equal shape and contents.
    friend bool operator==(const Matrix& a, const Matrix& b);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

using Vector = std::vector<float>;

// Products accumulate in double and round once per output entry.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// x * w + bias (bias broadcast over rows; empty bias means none).
Matrix affine(const Matrix& x, const Matrix& w, std::span<const float> bias);
// Single-row affine: returns x^T w + bias.
Vector affine(std::span<const float> x, const Matrix& w, std::span<const float> bias);

// Row-max-stabilized softmax, computed in double.
Matrix softmax_rows(const Matrix& m);
void softmax_inplace(std::span<float> row);

Vector layer_norm(std::span<const float> x, std::span<const float> gain,
                  std::span<const float> bias, float eps);
Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain,
                       std::span<const float> bias, float eps);

/// Cosine similarity clamped to [-1, 1]; 0 when either norm is below 1e-12.
double cosine(std::span<const float> u, std::span<const float> v);

void add_inplace(Matrix& acc, const Matrix& x);

}  // namespace atome
