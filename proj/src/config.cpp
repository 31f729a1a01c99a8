#include "mocgvq/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "mocgvq/errors.hpp"

namespace mocgvq {

namespace {

using nlohmann::json;

/// Tracks which keys of one JSON object were consumed so leftovers can be
/// reported by their full dotted path.
class KeyReader {
public:
    KeyReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object()) throw ConfigError("config: " + label("") + "must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return obj_.contains(key);
    }

    void read_double(const std::string& key, double& out) {
        if (!has(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_number()) throw ConfigError("config: " + label(key) + " must be a number");
        out = v.get<double>();
    }

    void read_int(const std::string& key, int& out) {
        if (!has(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_number_integer()) throw ConfigError("config: " + label(key) + " must be an integer");
        out = v.get<int>();
    }

    void read_u64(const std::string& key, std::uint64_t& out) {
        if (!has(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
            throw ConfigError("config: " + label(key) + " must be a non-negative integer");
        }
        out = v.get<std::uint64_t>();
    }

    void read_bool(const std::string& key, bool& out) {
        if (!has(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_boolean()) throw ConfigError("config: " + label(key) + " must be a boolean");
        out = v.get<bool>();
    }

    void read_string(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const json& v = obj_.at(key);
        if (!v.is_string()) throw ConfigError("config: " + label(key) + " must be a string");
        out = v.get<std::string>();
    }

    const json* sub(const std::string& key) {
        if (!has(key)) return nullptr;
        return &obj_.at(key);
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError("config: unknown key \"" + prefix_ + it.key() + "\"");
            }
        }
    }

private:
    std::string label(const std::string& key) const { return "\"" + prefix_ + key + "\""; }

    const json& obj_;
    std::string prefix_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError("config: " + message);
}

} // namespace

TrainConfig parse_config(const nlohmann::json& j) {
    TrainConfig cfg;
    KeyReader top(j, "");
    top.read_double("lr", cfg.lr);
    top.read_double("weight_decay", cfg.weight_decay);
    top.read_int("epochs", cfg.epochs);
    top.read_int("batch_size", cfg.batch_size);
    top.read_int("num_layers", cfg.num_layers);
    top.read_int("hidden_dim", cfg.hidden_dim);
    top.read_double("dropout", cfg.dropout);
    top.read_bool("batch_norm", cfg.batch_norm);
    top.read_double("p_f", cfg.p_f);
    top.read_double("p_t", cfg.p_t);
    top.read_double("lambda1", cfg.lambda1);
    top.read_double("lambda2", cfg.lambda2);
    top.read_double("lambda3", cfg.lambda3);
    top.read_double("lambda4", cfg.lambda4);
    top.read_double("tau", cfg.tau);
    top.read_int("M", cfg.num_codebooks);
    top.read_int("K", cfg.codes_per_book);
    top.read_int("k", cfg.top_k);
    top.read_double("negative_ratio", cfg.negative_ratio);
    top.read_u64("seed", cfg.seed);
    top.read_int("max_steps", cfg.max_steps);
    top.read_bool("contrastive_exclude_self", cfg.contrastive_exclude_self);
    top.read_string("corpus", cfg.corpus);

    if (const json* a = top.sub("ablations")) {
        KeyReader r(*a, "ablations.");
        r.read_bool("no_fusion", cfg.ablations.no_fusion);
        r.read_bool("single_codebook", cfg.ablations.single_codebook);
        r.read_bool("commitment_loss", cfg.ablations.commitment_loss);
        r.read_bool("classic_load_loss", cfg.ablations.classic_load_loss);
        r.read_bool("no_load_loss", cfg.ablations.no_load_loss);
        r.finish();
    }
    if (const json* g = top.sub("gen")) {
        KeyReader r(*g, "gen.");
        r.read_int("num_domains", cfg.gen.num_domains);
        r.read_int("nodes_per_domain", cfg.gen.nodes_per_domain);
        r.read_double("avg_degree", cfg.gen.avg_degree);
        r.read_int("feature_dim", cfg.gen.feature_dim);
        r.read_int("num_classes", cfg.gen.num_classes);
        r.finish();
    }
    if (const json* f = top.sub("finetune")) {
        KeyReader r(*f, "finetune.");
        r.read_int("epochs", cfg.finetune.epochs);
        r.read_double("lr", cfg.finetune.lr);
        r.read_double("weight_decay", cfg.finetune.weight_decay);
        r.read_double("lambda_proto", cfg.finetune.lambda_proto);
        r.read_double("lambda_lin", cfg.finetune.lambda_lin);
        r.read_double("t", cfg.finetune.t);
        r.read_double("train_fraction", cfg.finetune.train_fraction);
        r.read_int("graph_index", cfg.finetune.graph_index);
        r.finish();
    }
    if (const json* f = top.sub("fewshot")) {
        KeyReader r(*f, "fewshot.");
        r.read_int("n_way", cfg.fewshot.n_way);
        r.read_int("k_shot", cfg.fewshot.k_shot);
        r.read_int("query_size", cfg.fewshot.query_size);
        r.read_int("episodes", cfg.fewshot.episodes);
        r.read_int("graph_index", cfg.fewshot.graph_index);
        r.finish();
    }
    top.finish();

    require(cfg.lr > 0.0 && std::isfinite(cfg.lr), "lr must be positive");
    require(cfg.weight_decay >= 0.0 && std::isfinite(cfg.weight_decay), "weight_decay must be non-negative");
    require(cfg.epochs >= 0, "epochs must be non-negative");
    require(cfg.batch_size >= 1, "batch_size must be positive");
    require(cfg.num_layers >= 1, "num_layers must be positive");
    require(cfg.hidden_dim >= 1, "hidden_dim must be positive");
    require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, "dropout must lie in [0, 1)");
    require(cfg.p_f >= 0.0 && cfg.p_f <= 1.0, "p_f must lie in [0, 1]");
    require(cfg.p_t >= 0.0 && cfg.p_t <= 1.0, "p_t must lie in [0, 1]");
    require(cfg.lambda1 >= 0.0 && std::isfinite(cfg.lambda1), "lambda1 must be non-negative");
    require(cfg.lambda2 >= 0.0 && std::isfinite(cfg.lambda2), "lambda2 must be non-negative");
    require(cfg.lambda3 >= 0.0 && std::isfinite(cfg.lambda3), "lambda3 must be non-negative");
    require(cfg.lambda4 >= 0.0 && std::isfinite(cfg.lambda4), "lambda4 must be non-negative");
    require(cfg.tau > 0.0 && std::isfinite(cfg.tau), "tau must be positive");
    require(cfg.num_codebooks >= 1, "M must be positive");
    require(cfg.codes_per_book >= 1, "K must be positive");
    require(cfg.top_k >= 1 && cfg.top_k <= cfg.num_codebooks, "k must lie in [1, M]");
    require(cfg.negative_ratio >= 0.0 && std::isfinite(cfg.negative_ratio), "negative_ratio must be non-negative");
    require(cfg.max_steps >= 0, "max_steps must be non-negative");
    require(cfg.gen.num_domains >= 1, "gen.num_domains must be positive");
    require(cfg.gen.nodes_per_domain >= 2, "gen.nodes_per_domain must be at least 2");
    require(cfg.gen.avg_degree > 0.0, "gen.avg_degree must be positive");
    require(cfg.gen.feature_dim >= 1, "gen.feature_dim must be positive");
    require(cfg.gen.num_classes >= 1, "gen.num_classes must be positive");
    require(cfg.finetune.epochs >= 1, "finetune.epochs must be positive");
    require(cfg.finetune.lr > 0.0, "finetune.lr must be positive");
    require(cfg.finetune.weight_decay >= 0.0, "finetune.weight_decay must be non-negative");
    require(cfg.finetune.lambda_proto >= 0.0, "finetune.lambda_proto must be non-negative");
    require(cfg.finetune.lambda_lin >= 0.0, "finetune.lambda_lin must be non-negative");
    require(cfg.finetune.t >= 0.0 && cfg.finetune.t <= 1.0, "finetune.t must lie in [0, 1]");
    require(cfg.finetune.train_fraction > 0.0 && cfg.finetune.train_fraction < 1.0,
            "finetune.train_fraction must lie in (0, 1)");
    require(cfg.finetune.graph_index >= 0, "finetune.graph_index must be non-negative");
    require(cfg.fewshot.n_way >= 2, "fewshot.n_way must be at least 2");
    require(cfg.fewshot.k_shot >= 0, "fewshot.k_shot must be non-negative");
    require(cfg.fewshot.query_size >= 1, "fewshot.query_size must be positive");
    require(cfg.fewshot.episodes >= 1, "fewshot.episodes must be positive");
    require(cfg.fewshot.graph_index >= 0, "fewshot.graph_index must be non-negative");
    return cfg;
}

nlohmann::json to_json(const TrainConfig& cfg) {
    json j;
    j["lr"] = cfg.lr;
    j["weight_decay"] = cfg.weight_decay;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["num_layers"] = cfg.num_layers;
    j["hidden_dim"] = cfg.hidden_dim;
    j["dropout"] = cfg.dropout;
    j["batch_norm"] = cfg.batch_norm;
    j["p_f"] = cfg.p_f;
    j["p_t"] = cfg.p_t;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["lambda3"] = cfg.lambda3;
    j["lambda4"] = cfg.lambda4;
    j["tau"] = cfg.tau;
    j["M"] = cfg.num_codebooks;
    j["K"] = cfg.codes_per_book;
    j["k"] = cfg.top_k;
    j["negative_ratio"] = cfg.negative_ratio;
    j["seed"] = cfg.seed;
    j["max_steps"] = cfg.max_steps;
    j["contrastive_exclude_self"] = cfg.contrastive_exclude_self;
    j["corpus"] = cfg.corpus;
    j["ablations"] = {
        {"no_fusion", cfg.ablations.no_fusion},
        {"single_codebook", cfg.ablations.single_codebook},
        {"commitment_loss", cfg.ablations.commitment_loss},
        {"classic_load_loss", cfg.ablations.classic_load_loss},
        {"no_load_loss", cfg.ablations.no_load_loss},
    };
    j["gen"] = {
        {"num_domains", cfg.gen.num_domains},
        {"nodes_per_domain", cfg.gen.nodes_per_domain},
        {"avg_degree", cfg.gen.avg_degree},
        {"feature_dim", cfg.gen.feature_dim},
        {"num_classes", cfg.gen.num_classes},
    };
    j["finetune"] = {
        {"epochs", cfg.finetune.epochs},
        {"lr", cfg.finetune.lr},
        {"weight_decay", cfg.finetune.weight_decay},
        {"lambda_proto", cfg.finetune.lambda_proto},
        {"lambda_lin", cfg.finetune.lambda_lin},
        {"t", cfg.finetune.t},
        {"train_fraction", cfg.finetune.train_fraction},
        {"graph_index", cfg.finetune.graph_index},
    };
    j["fewshot"] = {
        {"n_way", cfg.fewshot.n_way},
        {"k_shot", cfg.fewshot.k_shot},
        {"query_size", cfg.fewshot.query_size},
        {"episodes", cfg.fewshot.episodes},
        {"graph_index", cfg.fewshot.graph_index},
    };
    return j;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("config: override \"" + assignment + "\" is missing '='");
    }
    std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    if (key.empty()) throw ConfigError("config: override \"" + assignment + "\" has an empty key");

    std::string pointer = "/";
    for (char c : key) pointer += c == '.' ? '/' : c;
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value; // plain strings stay strings
    j[nlohmann::json::json_pointer(pointer)] = parsed;
}

TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                        const std::vector<std::string>& ablation_names) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open \"" + path + "\"");
        j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ConfigError("config: \"" + path + "\" is not valid JSON");
    }
    for (const std::string& o : overrides) apply_override(j, o);
    static const std::set<std::string> kAblationNames = {
        "no_fusion", "single_codebook", "commitment_loss", "classic_load_loss", "no_load_loss"};
    for (const std::string& name : ablation_names) {
        if (!kAblationNames.count(name)) {
            throw ConfigError("config: unknown ablation \"" + name + "\"");
        }
        j["ablations"][name] = true;
    }
    TrainConfig cfg = parse_config(j);
    apply_ablation(cfg);
    return cfg;
}

void apply_ablation(TrainConfig& cfg) {
    if (cfg.ablations.classic_load_loss && cfg.ablations.no_load_loss) {
        throw ConfigError("config: ablations classic_load_loss and no_load_loss contradict");
    }
    if (cfg.ablations.single_codebook) {
        cfg.num_codebooks = 1;
        cfg.top_k = 1;
        // Domain-to-codebook routing is undefined with one book on a
        // multi-domain corpus, so this ablation drops the load term too.
        cfg.lambda4 = 0.0;
    }
    if (cfg.ablations.no_load_loss) cfg.lambda4 = 0.0;
}

} // namespace mocgvq
