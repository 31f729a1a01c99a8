#include "mocgvq/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "mocgvq/diagnostics.hpp"
#include "mocgvq/errors.hpp"

namespace mocgvq {

namespace {

constexpr std::uint64_t kTagInit = 0x717;
constexpr std::uint64_t kTagTrain = 0x7EA1;
constexpr double kClipNorm = 5.0;

// Substream tags within one step seed.
constexpr std::uint64_t kStepBatch = 1;
constexpr std::uint64_t kStepMask = 2;
constexpr std::uint64_t kStepDropout = 3;
constexpr std::uint64_t kStepNegatives = 4;

std::uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

int planned_steps(const TrainConfig& cfg, std::size_t corpus_size) {
    if (cfg.max_steps > 0) return cfg.max_steps;
    int per_epoch = static_cast<int>(corpus_size) / cfg.batch_size;
    if (per_epoch < 1) per_epoch = 1;
    return cfg.epochs * per_epoch;
}

void check_corpus_for_load(const DomainCorpus& corpus, const TrainConfig& cfg) {
    if (cfg.lambda4 <= 0.0 || cfg.ablations.classic_load_loss) return;
    for (const TAGraph& g : corpus.graphs) {
        if (g.domain_id < 0 || g.domain_id >= cfg.num_codebooks) {
            throw ConfigError("pretrain: domain id " + std::to_string(g.domain_id) +
                              " outside [0, M=" + std::to_string(cfg.num_codebooks) +
                              ") with load loss enabled");
        }
    }
}

Pretrained run_steps(const DomainCorpus& corpus, const TrainConfig& cfg, Model model,
                     Rng master, int first_step, int last_step) {
    Pretrained out;
    out.cfg = cfg;
    out.input_dim = model.enc_cfg.input_dim;
    out.model = std::move(model);
    for (int step = first_step; step <= last_step; ++step) {
        std::uint64_t step_seed = master.next_u64();
        try {
            StepResult r = train_step(out.model, corpus, cfg, step, step_seed);
            out.metrics.push_back(r.metrics);
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(step) + ": " + e.what());
        }
    }
    out.rng_state = master.state();
    return out;
}

} // namespace

Model build_model(const TrainConfig& cfg, int input_dim) {
    Model m;
    m.enc_cfg = EncoderConfig{cfg.num_layers, input_dim, cfg.hidden_dim, cfg.dropout,
                              cfg.batch_norm, !cfg.ablations.no_fusion};
    m.bank_cfg = BankConfig{cfg.num_codebooks, cfg.codes_per_book, cfg.hidden_dim};
    m.head_cfg = HeadConfig{cfg.hidden_dim, input_dim};
    m.top_k = cfg.top_k;
    Rng rng(mix_seed(cfg.seed, kTagInit));
    m.buffers = init_encoder(m.params, m.enc_cfg, rng);
    init_bank(m.params, m.bank_cfg, rng);
    init_heads(m.params, m.head_cfg, rng);
    return m;
}

UnionBatch make_union(const DomainCorpus& corpus, const std::vector<int>& indices) {
    if (indices.empty()) throw ArgumentError("make_union: empty batch");
    UnionBatch out;
    int total_nodes = 0;
    int total_edges = 0;
    for (int idx : indices) {
        const TAGraph& g = corpus.graphs[static_cast<std::size_t>(idx)];
        total_nodes += g.num_nodes;
        total_edges += g.num_edges();
    }
    const int d_in = corpus.graphs[static_cast<std::size_t>(indices[0])].feature_dim();
    out.graph.num_nodes = total_nodes;
    out.graph.node_features = Tensor(total_nodes, d_in);
    out.graph.edge_features = Tensor(total_edges, d_in);
    out.graph.edges.reserve(static_cast<std::size_t>(total_edges));
    out.node_domains.reserve(static_cast<std::size_t>(total_nodes));

    int node_base = 0;
    int edge_base = 0;
    for (int idx : indices) {
        const TAGraph& g = corpus.graphs[static_cast<std::size_t>(idx)];
        if (g.feature_dim() != d_in) {
            throw ShapeError("make_union: feature dim " + std::to_string(g.feature_dim()) +
                             " vs " + std::to_string(d_in));
        }
        for (int u = 0; u < g.num_nodes; ++u) {
            auto dst = out.graph.node_features.row(node_base + u);
            auto src = g.node_features.row(u);
            std::copy(src.begin(), src.end(), dst.begin());
            out.node_domains.push_back(g.domain_id);
        }
        for (int e = 0; e < g.num_edges(); ++e) {
            out.graph.edges.emplace_back(g.edges[static_cast<std::size_t>(e)].first + node_base,
                                         g.edges[static_cast<std::size_t>(e)].second + node_base);
            auto dst = out.graph.edge_features.row(edge_base + e);
            auto src = g.edge_features.row(e);
            std::copy(src.begin(), src.end(), dst.begin());
        }
        if (g.has_labels()) {
            out.graph.node_labels.insert(out.graph.node_labels.end(), g.node_labels.begin(),
                                         g.node_labels.end());
        }
        node_base += g.num_nodes;
        edge_base += g.num_edges();
    }
    if (static_cast<int>(out.graph.node_labels.size()) != total_nodes) {
        out.graph.node_labels.clear(); // mixed labeled/unlabeled batches carry no labels
    }
    return out;
}

std::vector<std::pair<int, int>> sample_negative_edges(const TAGraph& g, int count,
                                                       std::uint64_t seed) {
    std::vector<std::pair<int, int>> out;
    if (count <= 0 || g.num_nodes < 2) return out;
    std::unordered_set<std::uint64_t> edges;
    edges.reserve(g.edges.size() * 2);
    for (auto [a, b] : g.edges) edges.insert(edge_key(a, b));

    Rng rng(seed);
    out.reserve(static_cast<std::size_t>(count));
    std::uint64_t attempts_left = static_cast<std::uint64_t>(count) * 200 + 1000;
    while (static_cast<int>(out.size()) < count && attempts_left-- > 0) {
        int a = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(g.num_nodes)));
        int b = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(g.num_nodes)));
        if (a == b || edges.count(edge_key(a, b))) continue;
        out.emplace_back(a, b);
    }
    return out;
}

StepResult train_step(Model& model, const DomainCorpus& corpus, const TrainConfig& cfg,
                      int step_index, std::uint64_t step_seed) {
    std::vector<int> picked =
        sample_batch(corpus, cfg.batch_size, mix_seed(step_seed, kStepBatch));
    UnionBatch batch = make_union(corpus, picked);
    MaskedGraph masked =
        apply_masks(batch.graph, cfg.p_f, cfg.p_t, mix_seed(step_seed, kStepMask));

    EncodeResult enc = encode(masked, model.params, model.enc_cfg, model.buffers,
                              /*training=*/true, mix_seed(step_seed, kStepDropout));
    QuantizeOutcome outcome = quantize(enc.node_hidden, model.params, model.bank_cfg, cfg.top_k);

    LossWeights weights{cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4};
    LossParts parts;

    FeatLossGrads feat = loss_feat(outcome.zq, model.head_cfg, model.params,
                                   batch.graph.node_features, weights.feat);
    parts.feat = feat.value;

    int neg_count = static_cast<int>(std::llround(
        cfg.negative_ratio * static_cast<double>(batch.graph.num_edges())));
    std::vector<std::pair<int, int>> negatives =
        sample_negative_edges(batch.graph, neg_count, mix_seed(step_seed, kStepNegatives));
    TopoLossGrads topo = loss_topo(outcome.zq, model.head_cfg, model.params, batch.graph.edges,
                                   negatives, weights.topo);
    parts.topo = topo.value;

    ConLossGrads con = cfg.ablations.commitment_loss
                           ? commitment_loss(enc.node_hidden, outcome.zq, weights.con)
                           : loss_con(enc.node_hidden, outcome.zq, cfg.tau,
                                      cfg.contrastive_exclude_self, weights.con);
    parts.con = con.value;

    bool domains_in_range = true;
    for (int d : batch.node_domains) {
        if (d < 0 || d >= cfg.num_codebooks) { domains_in_range = false; break; }
    }
    LoadLossGrads load;
    if (cfg.ablations.classic_load_loss) {
        load = classic_load_loss(outcome.gating.scores, weights.load);
    } else if (domains_in_range) {
        load = loss_load(outcome.gating.scores, batch.node_domains, weights.load);
    } else {
        // Single-book runs on multi-domain corpora have no routing target;
        // the term is dropped by apply_ablation, so just log zero.
        load.value = 0.0;
        load.grad_scores = Tensor(outcome.gating.scores.rows(), outcome.gating.scores.cols());
    }
    parts.load = load.value;

    StepResult result;
    result.metrics.step = step_index;
    result.metrics.parts = parts;
    result.metrics.total = total_loss(parts, weights);

    // Backward. Decoder-head and gate gradients were already accumulated by
    // the loss calls; here the graph from zq back to the encoder closes.
    Tensor grad_zq = feat.grad_zq;
    add_in_place(grad_zq, topo.grad_zq);
    add_in_place(grad_zq, con.grad_zq);

    SteGrads ste = ste_backward(outcome, grad_zq, model.params, model.bank_cfg);
    model.params.accumulate_grad("bank.codes", ste.grad_codes);

    Tensor grad_scores = ste.grad_scores;
    add_in_place(grad_scores, load.grad_scores);
    Tensor grad_h = gate_backward(enc.node_hidden, outcome.gating, grad_scores, model.params,
                                  model.bank_cfg);
    add_in_place(grad_h, ste.grad_h);
    add_in_place(grad_h, con.grad_h);

    Tensor grad_edges(enc.edge_hidden.rows(), enc.edge_hidden.cols());
    encode_backward(masked, enc, grad_h, grad_edges, model.params, model.enc_cfg);

    result.grad_norm = model.params.clip_grad_norm(kClipNorm);
    adamw_step(model.params, cfg.lr, cfg.weight_decay);
    for (const ParamEntry& e : model.params.entries()) {
        require_finite(e.value, "parameter " + e.name);
    }

    result.metrics.codebook_entropy =
        utilization_entropy(usage_counts(outcome, model.bank_cfg));
    result.metrics.mean_angular_dist = angular_uniformity(model.params.value("bank.codes"));
    return result;
}

Pretrained pretrain(const DomainCorpus& corpus, const TrainConfig& cfg) {
    check_corpus_for_load(corpus, cfg);
    if (corpus.graphs.empty()) throw ArgumentError("pretrain: empty corpus");
    Model model = build_model(cfg, corpus.graphs.front().feature_dim());
    Rng master(mix_seed(cfg.seed, kTagTrain));
    int steps = planned_steps(cfg, corpus.graphs.size());
    return run_steps(corpus, cfg, std::move(model), master, 1, steps);
}

Pretrained resume_pretrain(const DomainCorpus& corpus, const CheckpointData& ckpt,
                           const TrainConfig& cfg) {
    check_corpus_for_load(corpus, cfg);
    Restored restored = restore_model(ckpt);
    const TrainConfig& old = restored.cfg;
    if (old.hidden_dim != cfg.hidden_dim || old.num_layers != cfg.num_layers ||
        old.num_codebooks != cfg.num_codebooks || old.codes_per_book != cfg.codes_per_book ||
        old.batch_norm != cfg.batch_norm ||
        old.ablations.no_fusion != cfg.ablations.no_fusion) {
        throw ConfigError("resume: model shape in config differs from checkpoint");
    }
    Rng master(0);
    master.set_state(ckpt.rng_state);
    int done = static_cast<int>(ckpt.step_count);
    int target = planned_steps(cfg, corpus.graphs.size());
    return run_steps(corpus, cfg, std::move(restored.model), master, done + 1, target);
}

CheckpointData pack_model(const TrainConfig& cfg, int input_dim, const Model& model,
                          std::uint64_t rng_state) {
    CheckpointData data;
    data.input_dim = static_cast<std::uint32_t>(input_dim);
    data.step_count = model.params.step_count();
    data.rng_state = rng_state;
    data.config_json = to_json(cfg).dump();
    for (const ParamEntry& e : model.params.entries()) {
        data.records.emplace_back("p." + e.name, e.value);
        data.records.emplace_back("m1." + e.name, e.moment1);
        data.records.emplace_back("m2." + e.name, e.moment2);
    }
    for (std::size_t l = 0; l < model.buffers.bn_running_mean.size(); ++l) {
        std::string base = "b." + encoder_param_name(static_cast<int>(l), "bn");
        data.records.emplace_back(base + "_mean", model.buffers.bn_running_mean[l]);
        data.records.emplace_back(base + "_var", model.buffers.bn_running_var[l]);
    }
    return data;
}

Restored restore_model(const CheckpointData& ckpt) {
    nlohmann::json j = nlohmann::json::parse(ckpt.config_json, nullptr, false);
    if (j.is_discarded()) throw ParseError("checkpoint: embedded config is not valid JSON");
    Restored out;
    out.cfg = parse_config(j);
    out.rng_state = ckpt.rng_state;
    out.input_dim = static_cast<int>(ckpt.input_dim);
    out.model = build_model(out.cfg, out.input_dim);
    out.model.params.set_step_count(ckpt.step_count);

    std::size_t consumed = 0;
    for (const auto& [name, tensor] : ckpt.records) {
        Tensor* dst = nullptr;
        if (name.rfind("p.", 0) == 0 && out.model.params.has(name.substr(2))) {
            dst = &out.model.params.entry(name.substr(2)).value;
        } else if (name.rfind("m1.", 0) == 0 && out.model.params.has(name.substr(3))) {
            dst = &out.model.params.entry(name.substr(3)).moment1;
        } else if (name.rfind("m2.", 0) == 0 && out.model.params.has(name.substr(3))) {
            dst = &out.model.params.entry(name.substr(3)).moment2;
        } else if (name.rfind("b.", 0) == 0) {
            for (std::size_t l = 0; l < out.model.buffers.bn_running_mean.size(); ++l) {
                std::string base = "b." + encoder_param_name(static_cast<int>(l), "bn");
                if (name == base + "_mean") dst = &out.model.buffers.bn_running_mean[l];
                if (name == base + "_var") dst = &out.model.buffers.bn_running_var[l];
            }
        }
        if (dst == nullptr) throw ParseError("checkpoint: unknown record \"" + name + "\"");
        if (!dst->same_shape(tensor)) {
            throw ParseError("checkpoint: record \"" + name + "\" has shape " + tensor.shape_str() +
                             ", expected " + dst->shape_str());
        }
        *dst = tensor;
        ++consumed;
    }
    std::size_t expected =
        3 * out.model.params.size() + 2 * out.model.buffers.bn_running_mean.size();
    if (consumed != expected) {
        throw ParseError("checkpoint: " + std::to_string(consumed) + " records, expected " +
                         std::to_string(expected));
    }
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StateError("metrics: cannot open \"" + path + "\"");
    out << "step,loss_total,loss_feat,loss_topo,loss_con,loss_load,codebook_entropy,mean_angular_dist\n";
    char line[512];
    for (const StepMetrics& m : metrics) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.step,
                      m.total, m.parts.feat, m.parts.topo, m.parts.con, m.parts.load,
                      m.codebook_entropy, m.mean_angular_dist);
        out << line;
    }
}

Embedded embed_graph(const TAGraph& g, Model& model) {
    MaskedGraph full = apply_masks(g, 0.0, 0.0, 0);
    EncodeResult enc = encode(full, model.params, model.enc_cfg, model.buffers,
                              /*training=*/false, 0, /*keep_cache=*/false);
    Embedded out;
    out.outcome = quantize(enc.node_hidden, model.params, model.bank_cfg, model.top_k);
    out.h = std::move(enc.node_hidden);
    return out;
}

} // namespace mocgvq
