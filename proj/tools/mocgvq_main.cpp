#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mocgvq/checkpoint.hpp"
#include "mocgvq/config.hpp"
#include "mocgvq/diagnostics.hpp"
#include "mocgvq/errors.hpp"
#include "mocgvq/finetune.hpp"
#include "mocgvq/graph.hpp"
#include "mocgvq/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace mocgvq;

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

LogLevel g_log_level = LogLevel::kWarn;

void init_log_level() {
    const char* env = std::getenv("MOCGVQ_LOG");
    if (env == nullptr) return;
    std::string v(env);
    if (v == "error") {
        g_log_level = LogLevel::kError;
    } else if (v == "warn") {
        g_log_level = LogLevel::kWarn;
    } else if (v == "info") {
        g_log_level = LogLevel::kInfo;
    } else if (v == "debug") {
        g_log_level = LogLevel::kDebug;
    } else {
        std::cerr << "[warn] MOCGVQ_LOG value \"" << v << "\" ignored (use error|warn|info|debug)\n";
    }
}

void log_line(LogLevel level, const std::string& msg) {
    if (level > g_log_level) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

/// Advisory single-writer lock on the output directory.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".mocgvq.lock") {
        if (fs::exists(path_)) {
            throw StateError("out dir \"" + dir.string() + "\" is locked by another run (" +
                             path_.string() + ")");
        }
        std::ofstream out(path_);
        out << "locked\n";
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

struct CliArgs {
    std::string config_path;
    std::string out_dir;
    std::string ckpt_path;
    std::vector<std::string> overrides;
    std::vector<std::string> ablations;
    std::int64_t seed = -1;
    bool has_seed = false;
};

/// Effective config: checkpoint-embedded base when --ckpt is set (then
/// --config must stay empty), else the config file; --set, --seed and
/// --ablation apply on top in that order.
TrainConfig resolve_config(const CliArgs& args, const CheckpointData* ckpt) {
    nlohmann::json base = nlohmann::json::object();
    if (ckpt != nullptr) {
        if (!args.config_path.empty()) {
            throw ConfigError("config: --config cannot be combined with --ckpt; use --set");
        }
        base = nlohmann::json::parse(ckpt->config_json);
    } else if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw ConfigError("config: cannot open \"" + args.config_path + "\"");
        base = nlohmann::json::parse(in, nullptr, false);
        if (base.is_discarded()) {
            throw ConfigError("config: \"" + args.config_path + "\" is not valid JSON");
        }
    }
    for (const std::string& o : args.overrides) apply_override(base, o);
    if (args.has_seed) base["seed"] = args.seed;
    for (const std::string& name : args.ablations) {
        static const std::vector<std::string> known = {"no_fusion", "single_codebook",
                                                       "commitment_loss", "classic_load_loss",
                                                       "no_load_loss"};
        if (std::find(known.begin(), known.end(), name) == known.end()) {
            throw ConfigError("config: unknown ablation \"" + name + "\"");
        }
        base["ablations"][name] = true;
    }
    TrainConfig cfg = parse_config(base);
    apply_ablation(cfg);
    return cfg;
}

void write_resolved_snapshot(const TrainConfig& cfg, const fs::path& out_dir) {
    std::ofstream out(out_dir / "resolved_config.json", std::ios::trunc);
    if (!out) throw StateError("cannot write resolved config snapshot");
    out << to_json(cfg).dump(2) << "\n";
}

std::uint64_t domain_seed(const TrainConfig& cfg, int domain) {
    return mix_seed(cfg.seed, 0x6E40, static_cast<std::uint64_t>(domain));
}

DomainCorpus build_corpus(const TrainConfig& cfg) {
    if (!cfg.corpus.empty()) return load_corpus(cfg.corpus, cfg.seed);
    std::vector<TAGraph> graphs;
    std::vector<double> weights;
    for (int d = 0; d < cfg.gen.num_domains; ++d) {
        SyntheticDomainSpec spec;
        spec.domain_id = d;
        spec.num_nodes = cfg.gen.nodes_per_domain;
        spec.avg_degree = cfg.gen.avg_degree;
        spec.feature_dim = cfg.gen.feature_dim;
        spec.num_classes = cfg.gen.num_classes;
        graphs.push_back(generate_synthetic_domain(spec, domain_seed(cfg, d)));
        weights.push_back(1.0);
    }
    return DomainCorpus::create(std::move(graphs), std::move(weights), cfg.seed);
}

const TAGraph& pick_graph(const DomainCorpus& corpus, int index, const char* what) {
    if (index < 0 || index >= static_cast<int>(corpus.graphs.size())) {
        throw ConfigError(std::string("config: ") + what + ".graph_index " + std::to_string(index) +
                          " outside corpus of " + std::to_string(corpus.graphs.size()));
    }
    return corpus.graphs[static_cast<std::size_t>(index)];
}

int cmd_gen(const CliArgs& args) {
    TrainConfig cfg = resolve_config(args, nullptr);
    fs::create_directories(args.out_dir);
    DirLock lock{args.out_dir};
    write_resolved_snapshot(cfg, args.out_dir);

    std::vector<std::string> names;
    std::vector<double> weights;
    for (int d = 0; d < cfg.gen.num_domains; ++d) {
        SyntheticDomainSpec spec;
        spec.domain_id = d;
        spec.num_nodes = cfg.gen.nodes_per_domain;
        spec.avg_degree = cfg.gen.avg_degree;
        spec.feature_dim = cfg.gen.feature_dim;
        spec.num_classes = cfg.gen.num_classes;
        TAGraph g = generate_synthetic_domain(spec, domain_seed(cfg, d));
        std::string name = "domain" + std::to_string(d) + ".json";
        write_graph_file(g, (fs::path(args.out_dir) / name).string());
        names.push_back(name);
        weights.push_back(1.0);
        log_line(LogLevel::kInfo, "wrote " + name + " (" + std::to_string(g.num_nodes) + " nodes, " +
                                     std::to_string(g.num_edges()) + " edges)");
    }
    write_corpus_manifest(names, weights, (fs::path(args.out_dir) / "corpus.json").string());
    std::cout << "gen: " << cfg.gen.num_domains << " domains under " << args.out_dir << "\n";
    return 0;
}

int cmd_pretrain(const CliArgs& args) {
    CheckpointData ckpt;
    bool resuming = !args.ckpt_path.empty();
    if (resuming) ckpt = read_checkpoint(args.ckpt_path);
    TrainConfig cfg = resolve_config(args, resuming ? &ckpt : nullptr);
    fs::create_directories(args.out_dir);
    DirLock lock{args.out_dir};
    write_resolved_snapshot(cfg, args.out_dir);

    DomainCorpus corpus = build_corpus(cfg);
    log_line(LogLevel::kInfo, resuming ? "resuming pretrain" : "starting pretrain");
    Pretrained run = resuming ? resume_pretrain(corpus, ckpt, cfg) : pretrain(corpus, cfg);

    fs::path out(args.out_dir);
    write_metrics_csv((out / "metrics.csv").string(), run.metrics);
    write_loss_curve_svg(run.metrics, (out / "metrics.svg").string());
    CheckpointData packed = pack_model(run.cfg, run.input_dim, run.model, run.rng_state);
    write_checkpoint((out / "checkpoint.bin").string(), packed);

    if (g_log_level >= LogLevel::kDebug) {
        for (const StepMetrics& m : run.metrics) {
            log_line(LogLevel::kDebug, "step " + std::to_string(m.step) + " total " +
                                            std::to_string(m.total));
        }
    }
    double first = run.metrics.empty() ? 0.0 : run.metrics.front().total;
    double last = run.metrics.empty() ? 0.0 : run.metrics.back().total;
    std::cout << "pretrain: " << run.metrics.size() << " steps, total " << first << " -> " << last
              << ", checkpoint " << (out / "checkpoint.bin").string() << "\n";
    return 0;
}

int cmd_finetune(const CliArgs& args) {
    if (args.ckpt_path.empty()) throw ConfigError("config: finetune requires --ckpt");
    CheckpointData ckpt = read_checkpoint(args.ckpt_path);
    TrainConfig cfg = resolve_config(args, &ckpt);
    fs::create_directories(args.out_dir);
    DirLock lock{args.out_dir};
    write_resolved_snapshot(cfg, args.out_dir);

    Restored restored = restore_model(ckpt);
    DomainCorpus corpus = build_corpus(cfg);
    const TAGraph& g = pick_graph(corpus, cfg.finetune.graph_index, "finetune");
    FinetuneResult result = finetune(restored.model, g, cfg.finetune, cfg.seed);

    nlohmann::json j;
    j["test_accuracy"] = result.test_accuracy;
    j["final_train_loss"] = result.final_train_loss;
    j["train_size"] = result.train_nodes.size();
    j["test_size"] = result.test_nodes.size();
    j["t"] = cfg.finetune.t;
    std::ofstream out(fs::path(args.out_dir) / "finetune.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    std::cout << "finetune: accuracy " << result.test_accuracy << "\n";
    return 0;
}

int cmd_fewshot(const CliArgs& args) {
    if (args.ckpt_path.empty()) throw ConfigError("config: fewshot requires --ckpt");
    CheckpointData ckpt = read_checkpoint(args.ckpt_path);
    TrainConfig cfg = resolve_config(args, &ckpt);
    fs::create_directories(args.out_dir);
    DirLock lock{args.out_dir};
    write_resolved_snapshot(cfg, args.out_dir);

    Restored restored = restore_model(ckpt);
    DomainCorpus corpus = build_corpus(cfg);
    const TAGraph& g = pick_graph(corpus, cfg.fewshot.graph_index, "fewshot");

    std::vector<double> accs;
    double sum = 0.0;
    for (int e = 0; e < cfg.fewshot.episodes; ++e) {
        double a = few_shot_episode(restored.model, g, cfg.fewshot.n_way, cfg.fewshot.k_shot,
                                    cfg.fewshot.query_size,
                                    mix_seed(cfg.seed, 0xEE, static_cast<std::uint64_t>(e)));
        accs.push_back(a);
        sum += a;
    }
    double mean = sum / cfg.fewshot.episodes;

    nlohmann::json j;
    j["episodes"] = accs;
    j["mean_accuracy"] = mean;
    j["n_way"] = cfg.fewshot.n_way;
    j["k_shot"] = cfg.fewshot.k_shot;
    std::ofstream out(fs::path(args.out_dir) / "fewshot.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    std::cout << "fewshot: mean accuracy " << mean << " over " << cfg.fewshot.episodes
              << " episodes\n";
    return 0;
}

int cmd_diagnose(const CliArgs& args) {
    if (args.ckpt_path.empty()) throw ConfigError("config: diagnose requires --ckpt");
    CheckpointData ckpt = read_checkpoint(args.ckpt_path);
    TrainConfig cfg = resolve_config(args, &ckpt);
    fs::create_directories(args.out_dir);
    DirLock lock{args.out_dir};
    write_resolved_snapshot(cfg, args.out_dir);

    Restored restored = restore_model(ckpt);
    DomainCorpus corpus = build_corpus(cfg);
    DiagnosticsReport report = run_diagnostics(restored.model, corpus);
    std::string hash = checkpoint_hash_hex(args.ckpt_path);
    write_report_files(report, args.out_dir, hash);
    std::cout << "diagnose: report " << (fs::path(args.out_dir) / (hash + ".report.json")).string()
              << "\n";
    return 0;
}

int cmd_inspect(const CliArgs& args) {
    if (args.ckpt_path.empty()) throw ConfigError("config: inspect-ckpt requires --ckpt");
    CheckpointData ckpt = read_checkpoint(args.ckpt_path);
    std::cout << "version: " << ckpt.version << "\n";
    std::cout << "input_dim: " << ckpt.input_dim << "\n";
    std::cout << "step_count: " << ckpt.step_count << "\n";
    std::cout << "rng_state: " << ckpt.rng_state << "\n";
    std::cout << "records: " << ckpt.records.size() << "\n";
    for (const auto& [name, tensor] : ckpt.records) {
        std::cout << "  " << name << " " << tensor.shape_str() << "\n";
    }
    std::cout << "config: " << nlohmann::json::parse(ckpt.config_json).dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    init_log_level();
    CLI::App app{"mixture-of-codebooks graph VQ masked autoencoder"};
    app.require_subcommand(1);

    CliArgs args;
    struct SubDef {
        const char* name;
        const char* help;
        bool needs_out;
        int (*run)(const CliArgs&);
    };
    const SubDef defs[] = {
        {"gen", "generate a synthetic corpus", true, cmd_gen},
        {"pretrain", "run masked-autoencoder pretraining", true, cmd_pretrain},
        {"finetune", "train prototype+linear heads on a frozen checkpoint", true, cmd_finetune},
        {"fewshot", "episodic few-/zero-shot evaluation", true, cmd_fewshot},
        {"diagnose", "collapse diagnostics over a checkpoint", true, cmd_diagnose},
        {"inspect-ckpt", "print checkpoint contents", false, cmd_inspect},
    };
    for (const SubDef& def : defs) {
        CLI::App* sub = app.add_subcommand(def.name, def.help);
        sub->add_option("--config", args.config_path, "JSON config file");
        auto* out = sub->add_option("--out", args.out_dir, "output directory");
        if (def.needs_out) out->required();
        sub->add_option("--ckpt", args.ckpt_path, "checkpoint path");
        sub->add_option("--set", args.overrides, "dotted config override key=value");
        sub->add_option("--ablation", args.ablations, "ablation flag name");
        sub->add_option("--seed", args.seed, "seed override");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            std::cout << app.help();
            return 0;
        }
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }
    for (const SubDef& def : defs) {
        CLI::App* sub = app.get_subcommand(def.name);
        if (sub->parsed() && sub->count("--seed") > 0) args.has_seed = true;
    }

    try {
        for (const SubDef& def : defs) {
            if (app.get_subcommand(def.name)->parsed()) return def.run(args);
        }
        std::cerr << app.help();
        return 1;
    } catch (const ConfigError& e) {
        log_line(LogLevel::kError, e.what());
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const ValidationError& e) {
        log_line(LogLevel::kError, e.what());
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const ArgumentError& e) {
        log_line(LogLevel::kError, e.what());
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        log_line(LogLevel::kError, e.what());
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        log_line(LogLevel::kError, e.what());
        std::cerr << e.what() << "\n";
        return 2;
    }
}
