#include "mocgvq/graph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mocgvq/rng.hpp"

namespace mocgvq {

using nlohmann::json;

void TAGraph::validate() const {
    if (num_nodes < 0) throw ValidationError("num_nodes is negative");
    if (node_features.rows() != num_nodes) {
        throw ValidationError("node_features has " + std::to_string(node_features.rows()) +
                              " rows, expected " + std::to_string(num_nodes));
    }
    if (edge_features.rows() != num_edges()) {
        throw ValidationError("edge_features has " + std::to_string(edge_features.rows()) +
                              " rows, expected " + std::to_string(num_edges()));
    }
    if (num_edges() > 0 && edge_features.cols() != node_features.cols()) {
        throw ValidationError("edge feature dim " + std::to_string(edge_features.cols()) +
                              " differs from node feature dim " + std::to_string(node_features.cols()));
    }
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto [u, v] = edges[i];
        if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes) {
            throw ValidationError("edge " + std::to_string(i) + " endpoint out of range: (" +
                                  std::to_string(u) + "," + std::to_string(v) + ") with n=" +
                                  std::to_string(num_nodes));
        }
        if (u == v) throw ValidationError("edge " + std::to_string(i) + " is a self-loop");
        auto key = std::minmax(u, v);
        if (!seen.insert({key.first, key.second}).second) {
            throw ValidationError("edge " + std::to_string(i) + " duplicates unordered pair (" +
                                  std::to_string(key.first) + "," + std::to_string(key.second) + ")");
        }
    }
    if (!node_labels.empty()) {
        if (static_cast<int>(node_labels.size()) != num_nodes) {
            throw ValidationError("node_labels size mismatch");
        }
        for (int lbl : node_labels) {
            if (lbl < 0) throw ValidationError("negative node label");
        }
    }
    if (!all_finite(node_features)) throw ValidationError("non-finite node feature");
    if (!all_finite(edge_features)) throw ValidationError("non-finite edge feature");
}

DomainCorpus DomainCorpus::create(std::vector<TAGraph> graphs, std::vector<double> weights,
                                  std::uint64_t rng_seed) {
    if (graphs.empty()) throw ArgumentError("corpus must contain at least one graph");
    if (graphs.size() != weights.size()) {
        throw ArgumentError("corpus has " + std::to_string(graphs.size()) + " graphs but " +
                            std::to_string(weights.size()) + " weights");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
            throw ArgumentError("sampling weight " + std::to_string(i) +
                                " must be strictly positive and finite");
        }
    }
    DomainCorpus c;
    c.graphs = std::move(graphs);
    c.sampling_weights = std::move(weights);
    c.rng_seed = rng_seed;
    return c;
}

namespace {

// Stream tags for deriving independent substreams from one seed.
constexpr std::uint64_t kTagClasses = 1;
constexpr std::uint64_t kTagStructure = 2;
constexpr std::uint64_t kTagFeatures = 3;
constexpr std::uint64_t kTagFeatureMask = 0x11;
constexpr std::uint64_t kTagTopoMask = 0x22;
// Domain-level anchors are pure functions of domain_id, independent of the
// per-graph seed.
constexpr std::uint64_t kTagDomainOffset = 0xD0FF5E7;
constexpr std::uint64_t kTagEdgeBase = 0xED6EBA5E;

} // namespace

TAGraph generate_synthetic_domain(const SyntheticDomainSpec& spec, std::uint64_t seed) {
    if (spec.num_nodes < 2) throw ArgumentError("num_nodes must be >= 2");
    if (spec.avg_degree < 1.0) throw ArgumentError("avg_degree must be >= 1");
    if (spec.num_classes < 2) throw ArgumentError("num_classes must be >= 2");
    if (spec.feature_dim < 1) throw ArgumentError("feature_dim must be >= 1");

    const int n = spec.num_nodes;
    const int d = spec.feature_dim;
    const int c = spec.num_classes;

    Rng class_rng(mix_seed(seed, kTagClasses));
    Rng struct_rng(mix_seed(seed, kTagStructure));
    Rng feat_rng(mix_seed(seed, kTagFeatures));
    Rng offset_rng(mix_seed(kTagDomainOffset, static_cast<std::uint64_t>(spec.domain_id)));
    Rng edge_base_rng(mix_seed(kTagEdgeBase, static_cast<std::uint64_t>(spec.domain_id)));

    std::vector<double> domain_offset(d);
    for (double& v : domain_offset) v = offset_rng.next_normal();
    std::vector<double> edge_base(d);
    for (double& v : edge_base) v = edge_base_rng.next_normal();

    Tensor centroids(c, d);
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < d; ++j) centroids.at(i, j) = class_rng.next_normal();
    }

    TAGraph g;
    g.num_nodes = n;
    g.domain_id = spec.domain_id;
    g.node_labels.resize(n);
    for (int u = 0; u < n; ++u) {
        g.node_labels[u] = static_cast<int>(class_rng.next_below(static_cast<std::uint64_t>(c)));
    }

    // Edge probabilities: intra = 4 * inter, average degree matched in
    // expectation over uniform class assignment.
    const double q = spec.avg_degree * c / (static_cast<double>(n - 1) * (c + 3));
    const double p_inter = std::min(q, 1.0);
    const double p_intra = std::min(4.0 * q, 1.0);
    for (int u = 0; u < n; ++u) {
        for (int v = u + 1; v < n; ++v) {
            const double p = g.node_labels[u] == g.node_labels[v] ? p_intra : p_inter;
            if (struct_rng.next_double() < p) g.edges.emplace_back(u, v);
        }
    }

    g.node_features = Tensor(n, d);
    for (int u = 0; u < n; ++u) {
        const int lbl = g.node_labels[u];
        for (int j = 0; j < d; ++j) {
            g.node_features.at(u, j) =
                centroids.at(lbl, j) + domain_offset[j] + 0.25 * feat_rng.next_normal();
        }
    }

    g.edge_features = Tensor(g.num_edges(), d);
    for (int e = 0; e < g.num_edges(); ++e) {
        for (int j = 0; j < d; ++j) {
            g.edge_features.at(e, j) = edge_base[j] + 0.01 * feat_rng.next_normal();
        }
    }

    // Class anchors double as zero-shot descriptors: the noiseless feature a
    // node of this class would carry.
    g.class_descriptors = Tensor(c, d);
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < d; ++j) g.class_descriptors.at(i, j) = centroids.at(i, j) + domain_offset[j];
    }
    return g;
}

MaskedGraph apply_masks(const TAGraph& g, double p_f, double p_t, std::uint64_t seed) {
    if (p_f < 0.0 || p_f > 1.0 || p_t < 0.0 || p_t > 1.0) {
        throw ArgumentError("mask probabilities must lie in [0,1]");
    }
    Rng feat_rng(mix_seed(seed, kTagFeatureMask));
    Rng topo_rng(mix_seed(seed, kTagTopoMask));

    MaskedGraph mg;
    mg.base = &g;
    mg.feature_mask = Tensor(g.num_nodes, g.feature_dim());
    for (std::size_t i = 0; i < mg.feature_mask.size(); ++i) {
        mg.feature_mask.data()[i] = feat_rng.next_double() < p_f ? 0.0 : 1.0;
    }
    mg.corrupted_features = hadamard(g.node_features, mg.feature_mask);

    mg.edge_mask.resize(g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const bool kept = !(topo_rng.next_double() < p_t);
        mg.edge_mask[e] = kept ? 1 : 0;
        if (kept) {
            mg.kept_edge_list.push_back(g.edges[e]);
            mg.kept_edge_indices.push_back(static_cast<int>(e));
        }
    }
    return mg;
}

std::vector<int> sample_batch(const DomainCorpus& corpus, int batch_size, std::uint64_t seed) {
    if (corpus.graphs.empty()) throw StateError("cannot sample from an empty corpus");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    std::vector<double> cumulative(corpus.sampling_weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < corpus.sampling_weights.size(); ++i) {
        total += corpus.sampling_weights[i];
        cumulative[i] = total;
    }
    Rng rng(seed);
    std::vector<int> out(batch_size);
    for (int b = 0; b < batch_size; ++b) {
        const double x = rng.next_double() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
        out[b] = static_cast<int>(std::min<std::size_t>(it - cumulative.begin(), cumulative.size() - 1));
    }
    return out;
}

namespace {

Tensor tensor_from_json_rows(const json& arr, const std::string& key) {
    if (!arr.is_array()) throw ParseError("field '" + key + "' must be an array of rows");
    const int rows = static_cast<int>(arr.size());
    int cols = 0;
    if (rows > 0) {
        if (!arr[0].is_array()) throw ParseError("field '" + key + "' rows must be arrays");
        cols = static_cast<int>(arr[0].size());
    }
    Tensor t(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (!arr[i].is_array() || static_cast<int>(arr[i].size()) != cols) {
            throw ParseError("field '" + key + "' row " + std::to_string(i) + " has wrong length");
        }
        for (int j = 0; j < cols; ++j) {
            if (!arr[i][j].is_number()) {
                throw ParseError("field '" + key + "' entry (" + std::to_string(i) + "," +
                                 std::to_string(j) + ") is not a number");
            }
            t.at(i, j) = arr[i][j].get<double>();
        }
    }
    return t;
}

json tensor_to_json_rows(const Tensor& t) {
    json arr = json::array();
    for (int i = 0; i < t.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
        arr.push_back(std::move(row));
    }
    return arr;
}

} // namespace

TAGraph read_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open graph file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ParseError("malformed JSON in " + path + ": " + e.what());
    }
    for (const char* key : {"n", "domain_id", "edges", "node_features", "edge_features"}) {
        if (!j.contains(key)) throw ParseError("graph file " + path + " missing required key '" + key + "'");
    }
    TAGraph g;
    g.num_nodes = j.at("n").get<int>();
    g.domain_id = j.at("domain_id").get<int>();
    for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw ParseError("edge entries must be [u,v] pairs");
        g.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    g.node_features = tensor_from_json_rows(j.at("node_features"), "node_features");
    g.edge_features = tensor_from_json_rows(j.at("edge_features"), "edge_features");
    if (j.contains("node_labels")) g.node_labels = j.at("node_labels").get<std::vector<int>>();
    if (j.contains("graph_label") && !j.at("graph_label").is_null()) {
        g.graph_label = j.at("graph_label").get<int>();
    }
    if (j.contains("class_descriptors")) {
        g.class_descriptors = tensor_from_json_rows(j.at("class_descriptors"), "class_descriptors");
    }
    g.validate();
    return g;
}

void write_graph_file(const TAGraph& g, const std::string& path) {
    g.validate();
    json j;
    j["n"] = g.num_nodes;
    j["domain_id"] = g.domain_id;
    json edges = json::array();
    for (const auto& [u, v] : g.edges) edges.push_back(json::array({u, v}));
    j["edges"] = std::move(edges);
    j["node_features"] = tensor_to_json_rows(g.node_features);
    j["edge_features"] = tensor_to_json_rows(g.edge_features);
    if (!g.node_labels.empty()) j["node_labels"] = g.node_labels;
    if (g.graph_label) j["graph_label"] = *g.graph_label;
    if (g.class_descriptors.rows() > 0) j["class_descriptors"] = tensor_to_json_rows(g.class_descriptors);
    std::ofstream out(path);
    if (!out) throw StateError("cannot write graph file: " + path);
    out << j.dump();
}

DomainCorpus load_corpus(const std::string& manifest_path, std::uint64_t rng_seed) {
    std::ifstream in(manifest_path);
    if (!in) throw ParseError("cannot open corpus manifest: " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ParseError("malformed JSON in " + manifest_path + ": " + e.what());
    }
    if (!j.is_array() || j.empty()) throw ParseError("corpus manifest must be a non-empty JSON list");
    const auto base_dir = std::filesystem::path(manifest_path).parent_path();
    std::vector<TAGraph> graphs;
    std::vector<double> weights;
    for (const auto& item : j) {
        if (!item.contains("path") || !item.contains("weight")) {
            throw ParseError("corpus manifest entries need 'path' and 'weight'");
        }
        std::filesystem::path p = item.at("path").get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        graphs.push_back(read_graph_file(p.string()));
        weights.push_back(item.at("weight").get<double>());
    }
    return DomainCorpus::create(std::move(graphs), std::move(weights), rng_seed);
}

void write_corpus_manifest(const std::vector<std::string>& paths,
                           const std::vector<double>& weights,
                           const std::string& manifest_path) {
    if (paths.size() != weights.size()) throw ArgumentError("manifest paths/weights size mismatch");
    json j = json::array();
    for (std::size_t i = 0; i < paths.size(); ++i) {
        j.push_back({{"path", paths[i]}, {"weight", weights[i]}});
    }
    std::ofstream out(manifest_path);
    if (!out) throw StateError("cannot write corpus manifest: " + manifest_path);
    out << j.dump(2);
}

} // namespace mocgvq
