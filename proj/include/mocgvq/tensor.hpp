#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mocgvq/errors.hpp"

namespace mocgvq {

/// Dense row-major matrix of doubles. The sole numeric carrier; vectors are
/// 1xN or Nx1 tensors or spans over a row.
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols);
    Tensor(int rows, int cols, double fill);
    Tensor(std::initializer_list<std::initializer_list<double>> rows);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
    std::span<const double> row(int r) const { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Tensor& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
    std::string shape_str() const;

    void fill(double v);
    void zero() { fill(0.0); }

    bool operator==(const Tensor& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

bool all_finite(const Tensor& t);

/// Throws NumericError naming `what` if any entry of t is NaN/Inf.
void require_finite(const Tensor& t, const std::string& what);

// --- kernels (OpenMP-parallel; bitwise deterministic for any thread count) ---

/// Standard matrix product. Throws ShapeError naming both shapes on mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Gradients of sum(grad_out * (a@b)) w.r.t. a and b.
/// grad_a = grad_out @ b^T, grad_b = a^T @ grad_out.
Tensor matmul_backward_a(const Tensor& grad_out, const Tensor& b);
Tensor matmul_backward_b(const Tensor& a, const Tensor& grad_out);

Tensor transpose(const Tensor& a);

/// Elementwise max(0, x).
Tensor relu(const Tensor& x);

/// Backward of relu: passes grad where x > 0, zero elsewhere (subgradient at 0 is 0).
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);

/// Accumulate src into dst (dst += src). Shapes must match.
void add_in_place(Tensor& dst, const Tensor& src);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// a.b / (max(|a|,eps) * max(|b|,eps)) with eps = 1e-12, clamped to [-1, 1].
/// Throws ShapeError on length mismatch.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// Gradient of cosine_sim w.r.t. both arguments, written into grad_a/grad_b
/// (same lengths as a/b). Clamp and eps guard are treated as inactive.
void cosine_sim_grad(std::span<const double> a, std::span<const double> b,
                     std::span<double> grad_a, std::span<double> grad_b);

namespace serial {

/// Naive triple-loop product. Reference implementation; kept as the oracle for
/// the parallel kernel and as the benchmark baseline.
Tensor matmul(const Tensor& a, const Tensor& b);

} // namespace serial

} // namespace mocgvq
