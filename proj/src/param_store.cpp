#include "mocgvq/param_store.hpp"

#include <cmath>

namespace mocgvq {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
    if (index_.count(name)) {
        throw StateError("parameter already registered: " + name);
    }
    ParamEntry e;
    e.name = name;
    e.grad = Tensor(value.rows(), value.cols());
    e.moment1 = Tensor(value.rows(), value.cols());
    e.moment2 = Tensor(value.rows(), value.cols());
    e.value = std::move(value);
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().value;
}

ParamEntry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter: " + name);
    return entries_[it->second];
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter: " + name);
    return entries_[it->second];
}

void ParamStore::accumulate_grad(const std::string& name, const Tensor& g) {
    add_in_place(entry(name).grad, g);
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.grad.zero();
}

double ParamStore::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& e : entries_) {
        for (double v : e.grad.values()) sq += v * v;
    }
    const double total = std::sqrt(sq);
    if (total > max_norm && total > 0.0) {
        const double s = max_norm / total;
        for (auto& e : entries_) {
            for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad.data()[i] *= s;
        }
    }
    return total;
}

void adamw_step(ParamStore& params, double lr, double weight_decay,
                double beta1, double beta2, double eps) {
    // Validate every gradient before touching any value so a failed step
    // leaves the store unchanged.
    for (const auto& e : params.entries_) {
        if (!all_finite(e.grad)) {
            throw NumericError("non-finite gradient for parameter: " + e.name);
        }
    }
    const std::uint64_t t = params.step_count_ + 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& e : params.entries_) {
        double* v = e.value.data();
        double* g = e.grad.data();
        double* m1 = e.moment1.data();
        double* m2 = e.moment2.data();
        const std::size_t n = e.value.size();
        for (std::size_t i = 0; i < n; ++i) {
            m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
            m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = m1[i] / bc1;
            const double vhat = m2[i] / bc2;
            // Decoupled decay: applied to the value, not through the gradient.
            v[i] -= lr * weight_decay * v[i];
            v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        e.grad.zero();
    }
    params.step_count_ = t;
}

} // namespace mocgvq
