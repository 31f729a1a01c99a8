#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mocgvq/param_store.hpp"
#include "mocgvq/rng.hpp"

namespace mocgvq {

/// Shape of the mixture-of-codebooks: M codebooks of K vectors in R^d, plus a
/// per-codebook scoring MLP (one hidden layer of width d, ReLU, scalar output
/// through softplus so scores stay positive).
struct BankConfig {
    int num_codebooks = 2; // M
    int codes_per_book = 32; // K
    int dim = 32; // d

    int total_codes() const { return num_codebooks * codes_per_book; }
};

/// Registers bank.codes ((M*K) x d, i.i.d. Gaussian sigma = 1/sqrt(d)) and the
/// gating parameters bank.gate{i}.{Wh,bh,wo,bo}.
void init_bank(ParamStore& params, const BankConfig& cfg, Rng& rng);

std::string bank_gate_param_name(int codebook, const std::string& leaf);

/// Nearest code by Euclidean distance; ties break to the lowest index.
/// Returns the index within the codebook. Throws StateError on an empty
/// codebook, ShapeError on dim mismatch.
int vq_lookup(std::span<const double> z, const Tensor& codebook);

/// Per-node, per-codebook positive activation scores with the cache needed
/// for the backward pass.
struct GateResult {
    Tensor scores;                     // n x M, all entries > 0
    Tensor logits;                     // n x M, pre-softplus
    std::vector<Tensor> hidden_preact; // per codebook: n x d
};

GateResult gate(const Tensor& h, const ParamStore& params, const BankConfig& cfg);

/// Backward of gate: accumulates gate-parameter gradients and returns the
/// gradient w.r.t. h.
Tensor gate_backward(const Tensor& h, const GateResult& fwd, const Tensor& grad_scores,
                     ParamStore& params, const BankConfig& cfg);

/// Result of Top-k mixture quantization. Row u of zq is the score-normalized
/// combination of the nearest code from each active codebook.
struct QuantizeOutcome {
    int top_k = 0;
    std::vector<int> active_ids;   // n*k, ascending codebook id per node
    std::vector<int> code_indices; // n*k, index within the codebook
    Tensor weights;                // n x k, non-negative, rows sum to 1
    Tensor zq;                     // n x d
    Tensor h_detached;             // copy of the input h
    GateResult gating;

    int active_id(int node, int slot) const { return active_ids[static_cast<std::size_t>(node) * top_k + slot]; }
    int code_index(int node, int slot) const { return code_indices[static_cast<std::size_t>(node) * top_k + slot]; }
};

/// Top-k codebooks by gating score (ties to the lower codebook id), nearest
/// code within each active codebook, normalized score mixture.
QuantizeOutcome quantize(const Tensor& h, const ParamStore& params, const BankConfig& cfg, int top_k);

struct SteGrads {
    Tensor grad_h;      // identity pass-through of grad_zq
    Tensor grad_scores; // n x M; zero for inactive codebooks
    Tensor grad_codes;  // (M*K) x d
};

/// Straight-through backward: the code selection is treated as constant, the
/// normalized weights stay differentiable through the scores.
SteGrads ste_backward(const QuantizeOutcome& outcome, const Tensor& grad_zq,
                      const ParamStore& params, const BankConfig& cfg);

} // namespace mocgvq
