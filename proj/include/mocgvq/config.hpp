#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace mocgvq {

struct AblationFlags {
    bool no_fusion = false;
    bool single_codebook = false;
    bool commitment_loss = false;
    bool classic_load_loss = false;
    bool no_load_loss = false;
};

struct GenConfig {
    int num_domains = 2;
    int nodes_per_domain = 300;
    double avg_degree = 8.0;
    int feature_dim = 32;
    int num_classes = 4;
};

struct FinetuneConfig {
    int epochs = 60;
    double lr = 0.01;
    double weight_decay = 0.0;
    double lambda_proto = 1.0;
    double lambda_lin = 1.0;
    double t = 0.5;
    double train_fraction = 0.6;
    int graph_index = 0;
};

struct FewshotConfig {
    int n_way = 2;
    int k_shot = 5;
    int query_size = 15;
    int episodes = 50;
    int graph_index = 0;
};

/// Full run configuration. Defaults are the desk-scale baseline; larger
/// deployments (hidden 768, M=16, K=256, batch 1024, 5 epochs) load through
/// the same fields.
struct TrainConfig {
    double lr = 3e-3; // desk-scale default; production runs load 1e-4 via config
    double weight_decay = 3e-4;
    int epochs = 5;
    int batch_size = 2;
    int num_layers = 2;
    int hidden_dim = 32;
    double dropout = 0.15;
    bool batch_norm = true;
    double p_f = 0.1; // feature-entry masking probability
    double p_t = 0.1; // edge masking probability
    double lambda1 = 100.0;  // feature reconstruction
    double lambda2 = 0.01;   // topology reconstruction
    double lambda3 = 0.001;  // triple-contrastive
    double lambda4 = 0.01;   // load balancing
    double tau = 0.5;
    int num_codebooks = 2;   // M
    int codes_per_book = 32; // K
    int top_k = 2;           // k
    double negative_ratio = 1.0;
    std::uint64_t seed = 42;
    /// 0 = derive the step count as epochs * (corpus size / batch size).
    int max_steps = 200;
    bool contrastive_exclude_self = false;
    std::string corpus; // manifest path; empty = synthesize from gen
    AblationFlags ablations;
    GenConfig gen;
    FinetuneConfig finetune;
    FewshotConfig fewshot;
};

/// Parses and validates; unknown keys, wrong types and out-of-range values
/// all raise ConfigError naming the offending key.
TrainConfig parse_config(const nlohmann::json& j);

/// Canonical JSON form (alphabetical keys, every default materialized).
/// parse_config(to_json(cfg)) round-trips.
nlohmann::json to_json(const TrainConfig& cfg);

/// Splits "dotted.key=value" and writes into j; the value is parsed as JSON
/// when possible and taken as a string otherwise. Throws ConfigError on a
/// missing '=' or empty key.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads a config file (empty path = all defaults), applies dotted overrides
/// and the ablation flag names in order, then validates.
TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                        const std::vector<std::string>& ablation_names);

/// Normalizes the config for the requested ablations: single_codebook forces
/// M=1, k=1; no_load_loss forces lambda4=0. Contradictory combinations raise
/// ConfigError.
void apply_ablation(TrainConfig& cfg);

} // namespace mocgvq
