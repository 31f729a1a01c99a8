#pragma once

#include <cstdint>
#include <vector>

#include "mocgvq/config.hpp"
#include "mocgvq/trainer.hpp"

namespace mocgvq {

/// Downstream classifier: cosine-scored class prototypes fused with a linear
/// head at trade-off t (t=0 pure prototype, t=1 pure linear).
struct FinetuneHead {
    Tensor prototypes; // C x d, row-normalized
    Tensor linear_w;   // d x C
    Tensor linear_b;   // 1 x C
    double t = 0.5;
    int num_classes = 0;
};

/// Per-row fused class scores: t * linear_softmax + (1 - t) * proto_softmax.
Tensor head_scores(const FinetuneHead& head, const Tensor& zq);

/// Argmax of head_scores; ties resolve to the lowest class index.
std::vector<int> head_predict(const FinetuneHead& head, const Tensor& zq);

/// Class-mean prototypes over `subset` rows of zq, row-normalized. Throws
/// StateError naming the first class with no samples.
Tensor class_prototypes(const Tensor& zq, const std::vector<int>& labels,
                        const std::vector<int>& subset, int num_classes);

struct FinetuneResult {
    FinetuneHead head;
    double final_train_loss = 0.0;
    double test_accuracy = 0.0;
    std::vector<int> train_nodes;
    std::vector<int> test_nodes;
};

/// Frozen-backbone fine-tuning on one labeled graph: prototypes are fixed
/// class means of the quantized train embeddings, the linear head trains by
/// cross-entropy, the combined loss is lambda_proto * CE(proto) +
/// lambda_lin * CE(linear). Deterministic split and training given seed.
FinetuneResult finetune(Model& model, const TAGraph& g, const FinetuneConfig& cfg,
                        std::uint64_t seed);

/// One n-way k-shot prototype episode over precomputed embeddings (k >= 1).
/// query_size counts queries per class. Throws StateError when fewer than
/// n_way classes have k_shot labeled rows or no queries remain.
double episode_accuracy(const Tensor& zq, const std::vector<int>& labels, int n_way, int k_shot,
                        int query_size, std::uint64_t seed);

/// Episodic evaluation on a graph through the frozen backbone. k_shot = 0
/// takes prototypes from the graph's class descriptors encoded as isolated
/// nodes instead of sampled supports.
double few_shot_episode(Model& model, const TAGraph& g, int n_way, int k_shot, int query_size,
                        std::uint64_t seed);

} // namespace mocgvq
