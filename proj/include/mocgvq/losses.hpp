#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mocgvq/param_store.hpp"
#include "mocgvq/rng.hpp"

namespace mocgvq {

/// The two reconstruction heads: a feature head d -> d_in producing z^f and a
/// topology head d -> d producing z^t. Parameters live in the store as
/// dec.{Wf,bf,Wt,bt}.
struct HeadConfig {
    int dim = 32;      // d
    int input_dim = 32; // d_in
};

void init_heads(ParamStore& params, const HeadConfig& cfg, Rng& rng);

/// Term weights of the combined objective.
struct LossWeights {
    double feat = 100.0;
    double topo = 0.01;
    double con = 0.001;
    double load = 0.01;
};

struct LossParts {
    double feat = 0.0;
    double topo = 0.0;
    double con = 0.0;
    double load = 0.0;
};

/// Weighted sum of the four parts. Throws NumericError naming the first
/// non-finite term.
double total_loss(const LossParts& parts, const LossWeights& w);

/// Every loss returns its unweighted scalar value; gradients (returned and
/// accumulated into the store) are pre-multiplied by `weight` so the engine
/// can backpropagate the weighted objective in one pass.

struct FeatLossGrads {
    double value = 0.0;
    Tensor grad_zq;
};

/// Mean squared reconstruction error (1/n) sum_i ||z_i^f - x_i||^2 through the
/// feature head. Accumulates dec.Wf/dec.bf gradients.
FeatLossGrads loss_feat(const Tensor& zq, const HeadConfig& cfg, ParamStore& params,
                        const Tensor& x, double weight = 1.0);

struct TopoLossGrads {
    double value = 0.0;
    Tensor grad_zq;
};

/// Edge reconstruction: -mean log sigma(z_i^t . z_j^t) over positives minus
/// mean log(1 - sigma) over negatives; logits clamped to [-30, 30].
/// Accumulates dec.Wt/dec.bt gradients. Empty positive set is an error; an
/// empty negative set contributes zero.
TopoLossGrads loss_topo(const Tensor& zq, const HeadConfig& cfg, ParamStore& params,
                        const std::vector<std::pair<int, int>>& pos_edges,
                        const std::vector<std::pair<int, int>>& neg_edges,
                        double weight = 1.0);

struct ConLossGrads {
    double value = 0.0;
    Tensor grad_h;
    Tensor grad_zq;
};

/// Triple-contrastive loss over cosine similarities at temperature tau. Per
/// anchor i the denominator sums exp(S(h_i,z_j)/tau) + exp(S(h_i,h_j)/tau) +
/// exp(S(z_i,z_j)/tau) over all j; `exclude_self_sim` drops only the j=i
/// h-h and z-z self terms. Evaluated with a max-shifted log-sum-exp.
ConLossGrads loss_con(const Tensor& h, const Tensor& zq, double tau,
                      bool exclude_self_sim = false, double weight = 1.0);

/// Ablation stand-in for loss_con: mean ||h_i - zq_i||^2 with a stop-gradient
/// on zq (grad_zq stays zero).
ConLossGrads commitment_loss(const Tensor& h, const Tensor& zq, double weight = 1.0);

struct LoadLossGrads {
    double value = 0.0;
    Tensor grad_scores;
};

/// Domain-aware load balancing: cross-entropy between the row-normalized
/// gating distribution (over all M codebooks) and the one-hot domain label.
LoadLossGrads loss_load(const Tensor& scores, const std::vector<int>& domain_labels,
                        double weight = 1.0);

/// Ablation stand-in: squared coefficient of variation of per-codebook
/// importance (summed normalized scores), the classic mixture-of-experts
/// balancing penalty. Zero iff importance is uniform.
LoadLossGrads classic_load_loss(const Tensor& scores, double weight = 1.0);

} // namespace mocgvq
