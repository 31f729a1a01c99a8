#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mocgvq/graph.hpp"
#include "mocgvq/param_store.hpp"
#include "mocgvq/rng.hpp"

namespace mocgvq {

/// Architecture of the edge-wise fusion encoder. Per layer, node states take
/// linear fusion -> ReLU -> batch norm -> dropout; edge states take linear
/// fusion -> ReLU only. With fuse_edges off the aggregation drops the edge
/// term and edge states stay frozen at zero (plain mean message passing).
struct EncoderConfig {
    int num_layers = 2;
    int input_dim = 32;
    int hidden_dim = 32;
    double dropout = 0.0;
    bool batch_norm = true;
    bool fuse_edges = true;

    int layer_in_dim(int layer) const { return layer == 0 ? input_dim : hidden_dim; }
};

/// Batch-norm running statistics, one row pair per layer. Not trainable;
/// updated in training mode with momentum 0.9, read in eval mode.
struct EncoderBuffers {
    std::vector<Tensor> bn_running_mean; // 1 x d each
    std::vector<Tensor> bn_running_var;  // 1 x d each
};

/// Registers enc.l{i}.{W1..W4,bn_scale,bn_shift} in the store and returns
/// zeroed running-stat buffers (variance initialized to 1).
EncoderBuffers init_encoder(ParamStore& params, const EncoderConfig& cfg, Rng& rng);

/// Final node and (kept-)edge embeddings plus the per-layer activation cache
/// needed by the backward pass. edge_hidden has one row per kept edge.
struct EncodeResult {
    Tensor node_hidden;
    Tensor edge_hidden;

    struct LayerCache {
        Tensor node_in;       // h^l
        Tensor edge_in;       // e^l (kept edges)
        Tensor neighbor_mean; // per-node mean of (h_v [+ e_uv]) over kept neighbors
        Tensor node_preact;
        Tensor bn_xhat;       // normalized activations (when batch_norm)
        Tensor bn_mean;       // stats used by this pass (batch or running)
        Tensor bn_var;
        Tensor dropout_mask;  // 0 or 1/(1-rate); empty when dropout inactive
        Tensor edge_preact;
    };
    std::vector<LayerCache> cache;
    bool has_cache = false;
    bool training = false;
};

/// Forward pass over a masked graph. Dropped edges take no part in either
/// update; isolated nodes aggregate a zero vector. Deterministic given seed
/// (the seed feeds the dropout streams only).
EncodeResult encode(const MaskedGraph& g, const ParamStore& params, const EncoderConfig& cfg,
                    EncoderBuffers& buffers, bool training, std::uint64_t seed,
                    bool keep_cache = true);

struct EncoderInputGrads {
    Tensor node_features; // n x input_dim
    Tensor edge_features; // kept_m x input_dim
};

/// Exact reverse of the forward composition. Accumulates parameter gradients
/// into the store and returns gradients w.r.t. the corrupted node features and
/// kept edge features. Throws StateError if the result carries no cache.
EncoderInputGrads encode_backward(const MaskedGraph& g, const EncodeResult& result,
                                  const Tensor& grad_node_hidden, const Tensor& grad_edge_hidden,
                                  ParamStore& params, const EncoderConfig& cfg);

/// Parameter-name helper: "enc.l{layer}.{leaf}".
std::string encoder_param_name(int layer, const std::string& leaf);

} // namespace mocgvq
