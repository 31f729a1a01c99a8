#include "mocgvq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mocgvq {

Tensor::Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) {
        throw ArgumentError("Tensor dimensions must be non-negative, got " + std::to_string(rows) +
                            "x" + std::to_string(cols));
    }
    data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Tensor::Tensor(int rows, int cols, double fill) : Tensor(rows, cols) {
    std::fill(data_.begin(), data_.end(), fill);
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = static_cast<int>(rows.size());
    cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    data_.reserve(static_cast<std::size_t>(rows_) * cols_);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != cols_) {
            throw ShapeError("ragged initializer: expected " + std::to_string(cols_) +
                             " columns, got " + std::to_string(r.size()));
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

std::string Tensor::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Tensor::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

bool all_finite(const Tensor& t) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void require_finite(const Tensor& t, const std::string& what) {
    if (!all_finite(t)) {
        throw NumericError("non-finite value in " + what);
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul dimension mismatch: " + a.shape_str() + " by " + b.shape_str());
    }
    Tensor out(a.rows(), b.cols());
    const int n = a.rows(), k = a.cols(), m = b.cols();
    // Each output row is owned by one iteration; inner summation order is
    // fixed (left-to-right over k), so results are identical for any thread count.
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* arow = a.data() + static_cast<std::size_t>(i) * k;
        double* orow = out.data() + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.data() + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul dimension mismatch: " + a.shape_str() + " by " + b.shape_str());
    }
    Tensor out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (int p = 0; p < a.cols(); ++p) {
                acc += a.at(i, p) * b.at(p, j);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

} // namespace serial

Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

Tensor matmul_backward_a(const Tensor& grad_out, const Tensor& b) {
    return matmul(grad_out, transpose(b));
}

Tensor matmul_backward_b(const Tensor& a, const Tensor& grad_out) {
    return matmul(transpose(a), grad_out);
}

Tensor relu(const Tensor& x) {
    Tensor out(x.rows(), x.cols());
    const std::size_t total = x.size();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(total); ++i) {
        out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    }
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    if (!x.same_shape(grad_out)) {
        throw ShapeError("relu_backward shape mismatch: " + x.shape_str() + " vs " + grad_out.shape_str());
    }
    Tensor out(x.rows(), x.cols());
    const std::size_t total = x.size();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(total); ++i) {
        out.data()[i] = x.data()[i] > 0.0 ? grad_out.data()[i] : 0.0;
    }
    return out;
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + " shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

void add_in_place(Tensor& dst, const Tensor& src) {
    require_same_shape(dst, src, "add_in_place");
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm(std::span<const double> a) {
    double acc = 0.0;
    for (double v : a) acc += v * v;
    return std::sqrt(acc);
}

namespace {
constexpr double kNormGuard = 1e-12;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
    const double d = dot(a, b);
    const double na = std::max(norm(a), kNormGuard);
    const double nb = std::max(norm(b), kNormGuard);
    return std::clamp(d / (na * nb), -1.0, 1.0);
}

void cosine_sim_grad(std::span<const double> a, std::span<const double> b,
                     std::span<double> grad_a, std::span<double> grad_b) {
    if (a.size() != b.size() || grad_a.size() != a.size() || grad_b.size() != b.size()) {
        throw ShapeError("cosine_sim_grad length mismatch");
    }
    const double d = dot(a, b);
    const double na = std::max(norm(a), kNormGuard);
    const double nb = std::max(norm(b), kNormGuard);
    const double inv = 1.0 / (na * nb);
    const double s = d * inv;
    // dS/da = b/(|a||b|) - S a/|a|^2, symmetric for b.
    const double inv_na2 = 1.0 / (na * na);
    const double inv_nb2 = 1.0 / (nb * nb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        grad_a[i] = b[i] * inv - s * a[i] * inv_na2;
        grad_b[i] = a[i] * inv - s * b[i] * inv_nb2;
    }
}

} // namespace mocgvq
