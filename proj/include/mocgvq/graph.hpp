#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mocgvq/tensor.hpp"

namespace mocgvq {

/// Attributed graph for one domain. Undirected: one ordered pair per edge,
/// message passing treats endpoints symmetrically. Labels are optional.
struct TAGraph {
    int num_nodes = 0;
    std::vector<std::pair<int, int>> edges;
    Tensor node_features;               // n x d_in
    Tensor edge_features;               // m x d_in
    std::vector<int> node_labels;       // empty when absent
    int domain_id = 0;
    std::optional<int> graph_label;
    Tensor class_descriptors;           // optional, C x d_in: per-class feature anchors

    int num_edges() const { return static_cast<int>(edges.size()); }
    int feature_dim() const { return node_features.cols(); }
    bool has_labels() const { return !node_labels.empty(); }

    /// Throws ValidationError on the first violated invariant (endpoint range,
    /// self-loop, duplicate unordered pair, shape or finiteness of features).
    void validate() const;
};

/// A graph after dual masking. kept_edge_indices index into base.edges.
struct MaskedGraph {
    const TAGraph* base = nullptr;
    Tensor feature_mask;                         // n x d_in, entries in {0,1}
    std::vector<std::uint8_t> edge_mask;         // length m, 1 = kept
    Tensor corrupted_features;                   // node_features ⊙ feature_mask
    std::vector<std::pair<int, int>> kept_edge_list;
    std::vector<int> kept_edge_indices;

    int num_kept_edges() const { return static_cast<int>(kept_edge_list.size()); }
};

struct DomainCorpus {
    std::vector<TAGraph> graphs;
    std::vector<double> sampling_weights;
    std::uint64_t rng_seed = 0;

    /// Validating constructor path: weights must be strictly positive and the
    /// graph list non-empty.
    static DomainCorpus create(std::vector<TAGraph> graphs, std::vector<double> weights,
                               std::uint64_t rng_seed);
};

struct SyntheticDomainSpec {
    int domain_id = 0;
    int num_nodes = 300;
    double avg_degree = 8.0;
    int feature_dim = 32;
    int num_classes = 4;
};

/// Planted-partition generator. Classes uniform; intra-class edge probability
/// is 4x inter-class, scaled so the expected average degree matches. Node
/// features are class centroid + domain offset + N(0, 0.25^2) noise. Edge
/// features are one shared domain-level vector + N(0, 0.01^2) noise, so edge
/// attributes are near-constant within a domain.
TAGraph generate_synthetic_domain(const SyntheticDomainSpec& spec, std::uint64_t seed);

/// Dual masking: each feature entry zeroed independently with probability p_f,
/// each edge dropped independently with probability p_t. Feature and topology
/// masks come from separate seeded streams.
MaskedGraph apply_masks(const TAGraph& g, double p_f, double p_t, std::uint64_t seed);

/// Weighted draw with replacement; returns indices into corpus.graphs.
/// Deterministic given seed. Throws StateError on an empty corpus.
std::vector<int> sample_batch(const DomainCorpus& corpus, int batch_size, std::uint64_t seed);

// --- file formats ---

TAGraph read_graph_file(const std::string& path);
void write_graph_file(const TAGraph& g, const std::string& path);

/// Manifest: JSON list of {"path", "weight"}. Relative paths resolve against
/// the manifest's directory.
DomainCorpus load_corpus(const std::string& manifest_path, std::uint64_t rng_seed);
void write_corpus_manifest(const std::vector<std::string>& paths,
                           const std::vector<double>& weights,
                           const std::string& manifest_path);

} // namespace mocgvq
