#include "atome/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <string>

#include "atome/error.hpp"

namespace atome {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw InputError("matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<float>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw InputError("ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool operator==(const Matrix& a, const Matrix& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_) return false;
    return std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(),
                      [](float x, float y) {
                          return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
                      });
}

namespace {

// Adds x^T w into a double accumulator row: acc[j] += sum_k x[k] * w[k][j].
void accumulate_row(std::span<const float> x, const Matrix& w, std::vector<double>& acc) {
    const std::size_t n = w.cols();
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double xk = x[k];
        if (xk == 0.0) continue;
        const float* wr = w.row(k).data();
        double* a = acc.data();
        for (std::size_t j = 0; j < n; ++j) a[j] += xk * static_cast<double>(wr[j]);
    }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw InputError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    std::vector<double> acc(b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        accumulate_row(a.row(i), b, acc);
        auto o = out.row(i);
        for (std::size_t j = 0; j < acc.size(); ++j) o[j] = static_cast<float>(acc[j]);
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return t;
}

Matrix affine(const Matrix& x, const Matrix& w, std::span<const float> bias) {
    if (x.cols() != w.rows() || (!bias.empty() && bias.size() != w.cols())) {
        throw InputError("affine: input width " + std::to_string(x.cols()) + ", weight " +
                         std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ", bias " +
                         std::to_string(bias.size()));
    }
    Matrix out(x.rows(), w.cols());
    std::vector<double> acc(w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        if (bias.empty()) {
            std::fill(acc.begin(), acc.end(), 0.0);
        } else {
            std::copy(bias.begin(), bias.end(), acc.begin());
        }
        accumulate_row(x.row(i), w, acc);
        auto o = out.row(i);
        for (std::size_t j = 0; j < acc.size(); ++j) o[j] = static_cast<float>(acc[j]);
    }
    return out;
}

Vector affine(std::span<const float> x, const Matrix& w, std::span<const float> bias) {
    if (x.size() != w.rows() || (!bias.empty() && bias.size() != w.cols())) {
        throw InputError("affine: input width " + std::to_string(x.size()) + ", weight " +
                         std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
    }
    std::vector<double> acc(w.cols(), 0.0);
    if (!bias.empty()) std::copy(bias.begin(), bias.end(), acc.begin());
    accumulate_row(x, w, acc);
    return Vector(acc.begin(), acc.end());
}

void softmax_inplace(std::span<float> row) {
    if (row.empty()) return;
    const float mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (float& v : row) {
        const double e = std::exp(static_cast<double>(v) - mx);
        v = static_cast<float>(e);
        total += e;
    }
    const double inv = 1.0 / total;
    for (float& v : row) v = static_cast<float>(v * inv);
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
    return out;
}

Vector layer_norm(std::span<const float> x, std::span<const float> gain,
                  std::span<const float> bias, float eps) {
    if (gain.size() != x.size() || bias.size() != x.size()) {
        throw InputError("layer_norm: dimension mismatch");
    }
    const std::size_t n = x.size();
    Vector out(n);
    if (n == 0) return out;
    double mean = 0.0;
    for (float v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<float>((x[i] - mean) * inv * gain[i] + bias[i]);
    }
    return out;
}

Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain,
                       std::span<const float> bias, float eps) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const Vector y = layer_norm(x.row(r), gain, bias, eps);
        std::copy(y.begin(), y.end(), out.row(r).begin());
    }
    return out;
}

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw InputError("cosine: dimension mismatch");
    double dot = 0.0;
    double nu = 0.0;
    double nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu < 1e-12 || nv < 1e-12) return 0.0;
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

void add_inplace(Matrix& acc, const Matrix& x) {
    if (acc.rows() != x.rows() || acc.cols() != x.cols()) throw InputError("add: shape mismatch");
    auto a = acc.data();
    auto b = x.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace atome
