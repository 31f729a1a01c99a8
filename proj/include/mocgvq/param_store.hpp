#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mocgvq/tensor.hpp"

namespace mocgvq {

/// One trainable tensor with its gradient accumulator and moment buffers.
struct ParamEntry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor moment1;
    Tensor moment2;
};

/// Ordered collection of named parameters. Iteration follows insertion order
/// so every reduction and optimizer sweep is deterministic. Single-writer:
/// the training loop owns mutation.
class ParamStore {
public:
    /// Registers a parameter initialized to `value`. Grad/moments start at zero.
    /// Throws StateError on duplicate name.
    Tensor& add(const std::string& name, Tensor value);

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;

    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }
    Tensor& grad(const std::string& name) { return entry(name).grad; }

    /// Adds g into the gradient accumulator of `name`.
    void accumulate_grad(const std::string& name, const Tensor& g);

    void zero_grads();

    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::uint64_t step_count() const { return step_count_; }
    void set_step_count(std::uint64_t s) { step_count_ = s; }

    /// Global-norm gradient clipping. Returns the pre-clip norm.
    double clip_grad_norm(double max_norm);

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t step_count_ = 0;

    friend void adamw_step(ParamStore&, double, double, double, double, double);
};

/// One decoupled-weight-decay adaptive-moment update over every entry:
/// bias-corrected first/second moments, decay applied directly to the value.
/// Increments step_count and zeroes gradients. Throws NumericError naming the
/// parameter if its gradient is non-finite (store left untouched).
void adamw_step(ParamStore& params, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

} // namespace mocgvq
