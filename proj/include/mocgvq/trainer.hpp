#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mocgvq/checkpoint.hpp"
#include "mocgvq/config.hpp"
#include "mocgvq/encoder.hpp"
#include "mocgvq/graph.hpp"
#include "mocgvq/losses.hpp"
#include "mocgvq/quantizer.hpp"

namespace mocgvq {

/// Backbone + heads: every trainable tensor lives in `params`, batch-norm
/// running stats in `buffers`. Built deterministically from (config, input_dim).
struct Model {
    EncoderConfig enc_cfg;
    BankConfig bank_cfg;
    HeadConfig head_cfg;
    int top_k = 1;
    ParamStore params;
    EncoderBuffers buffers;
};

Model build_model(const TrainConfig& cfg, int input_dim);

/// Batch of graphs as one disconnected union; node_domains carries the source
/// domain id per union node.
struct UnionBatch {
    TAGraph graph;
    std::vector<int> node_domains;
};

UnionBatch make_union(const DomainCorpus& corpus, const std::vector<int>& indices);

/// Uniform rejection sampling over unordered non-edges (no self loops).
/// Duplicates are allowed, matching sampling with replacement. Returns fewer
/// than `count` only if the graph is too dense to find candidates.
std::vector<std::pair<int, int>> sample_negative_edges(const TAGraph& g, int count,
                                                       std::uint64_t seed);

struct StepMetrics {
    int step = 0;
    LossParts parts;
    double total = 0.0;
    double codebook_entropy = 0.0;
    double mean_angular_dist = 0.0;
};

struct StepResult {
    StepMetrics metrics;
    double grad_norm = 0.0;
};

/// One optimization step: sample -> mask -> encode -> quantize -> losses ->
/// backward -> clip(5.0) -> update. Deterministic given step_seed.
StepResult train_step(Model& model, const DomainCorpus& corpus, const TrainConfig& cfg,
                      int step_index, std::uint64_t step_seed);

struct Pretrained {
    TrainConfig cfg;
    int input_dim = 0;
    Model model;
    std::vector<StepMetrics> metrics;
    std::uint64_t rng_state = 0; // master step-seed stream after the last step
};

/// Full pretraining run from a fresh model. Step count is max_steps when
/// positive, otherwise epochs * (corpus size / batch size).
Pretrained pretrain(const DomainCorpus& corpus, const TrainConfig& cfg);

/// Continues a checkpointed run until the step target of `cfg` (normally the
/// checkpoint's own config with a raised max_steps). Bit-for-bit identical to
/// the uninterrupted run. Model-shape fields of cfg must match the checkpoint.
Pretrained resume_pretrain(const DomainCorpus& corpus, const CheckpointData& ckpt,
                           const TrainConfig& cfg);

CheckpointData pack_model(const TrainConfig& cfg, int input_dim, const Model& model,
                          std::uint64_t rng_state);

struct Restored {
    TrainConfig cfg;
    int input_dim = 0;
    Model model;
    std::uint64_t rng_state = 0;
};

/// Rebuilds the model skeleton from the embedded config and fills every
/// parameter, moment and buffer from the records. Throws ParseError on
/// unknown or missing records.
Restored restore_model(const CheckpointData& ckpt);

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics);

/// Frozen-backbone pass over a full, unmasked graph in eval mode.
struct Embedded {
    Tensor h;
    QuantizeOutcome outcome;
};

Embedded embed_graph(const TAGraph& g, Model& model);

} // namespace mocgvq
