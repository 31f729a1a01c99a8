#include <doctest.h>

#include <cctype>
#include <filesystem>
#include <fstream>

#include "mocgvq/checkpoint.hpp"
#include "mocgvq/config.hpp"
#include "mocgvq/errors.hpp"
#include "test_support.hpp"

using namespace mocgvq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto p = fs::temp_directory_path() / "mocgvq_ckpt_test";
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointData sample_checkpoint() {
    CheckpointData d;
    d.input_dim = 3;
    d.step_count = 17;
    d.rng_state = 0xDEADBEEFCAFEF00DULL;
    d.config_json = to_json(TrainConfig{}).dump();
    Rng rng(5);
    d.records.emplace_back("p.enc.l0.W1", test::random_tensor(3, 4, rng));
    d.records.emplace_back("p.bank.codes", test::random_tensor(8, 4, rng));
    d.records.emplace_back("b.enc.l0.bn_mean", test::random_tensor(1, 4, rng));
    return d;
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("canonical JSON round-trips every field") {
    TrainConfig cfg;
    cfg.lr = 0.123;
    cfg.weight_decay = 0.007;
    cfg.epochs = 9;
    cfg.batch_size = 3;
    cfg.num_layers = 4;
    cfg.hidden_dim = 17;
    cfg.dropout = 0.4;
    cfg.batch_norm = false;
    cfg.p_f = 0.3;
    cfg.p_t = 0.2;
    cfg.lambda1 = 7.0;
    cfg.lambda2 = 0.5;
    cfg.lambda3 = 0.25;
    cfg.lambda4 = 0.125;
    cfg.tau = 0.9;
    cfg.num_codebooks = 3;
    cfg.codes_per_book = 5;
    cfg.top_k = 3;
    cfg.negative_ratio = 2.5;
    cfg.seed = 777;
    cfg.max_steps = 55;
    cfg.contrastive_exclude_self = true;
    cfg.corpus = "some/corpus.json";
    cfg.ablations.no_fusion = true;
    cfg.gen.num_domains = 5;
    cfg.gen.nodes_per_domain = 44;
    cfg.finetune.t = 0.25;
    cfg.finetune.train_fraction = 0.8;
    cfg.fewshot.n_way = 3;
    cfg.fewshot.k_shot = 2;

    TrainConfig back = parse_config(to_json(cfg));
    CHECK(back.lr == cfg.lr);
    CHECK(back.weight_decay == cfg.weight_decay);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.num_layers == cfg.num_layers);
    CHECK(back.hidden_dim == cfg.hidden_dim);
    CHECK(back.dropout == cfg.dropout);
    CHECK(back.batch_norm == cfg.batch_norm);
    CHECK(back.p_f == cfg.p_f);
    CHECK(back.p_t == cfg.p_t);
    CHECK(back.lambda1 == cfg.lambda1);
    CHECK(back.lambda2 == cfg.lambda2);
    CHECK(back.lambda3 == cfg.lambda3);
    CHECK(back.lambda4 == cfg.lambda4);
    CHECK(back.tau == cfg.tau);
    CHECK(back.num_codebooks == cfg.num_codebooks);
    CHECK(back.codes_per_book == cfg.codes_per_book);
    CHECK(back.top_k == cfg.top_k);
    CHECK(back.negative_ratio == cfg.negative_ratio);
    CHECK(back.seed == cfg.seed);
    CHECK(back.max_steps == cfg.max_steps);
    CHECK(back.contrastive_exclude_self == cfg.contrastive_exclude_self);
    CHECK(back.corpus == cfg.corpus);
    CHECK(back.ablations.no_fusion == true);
    CHECK(back.ablations.single_codebook == false);
    CHECK(back.gen.num_domains == 5);
    CHECK(back.gen.nodes_per_domain == 44);
    CHECK(back.finetune.t == 0.25);
    CHECK(back.finetune.train_fraction == 0.8);
    CHECK(back.fewshot.n_way == 3);
    CHECK(back.fewshot.k_shot == 2);

    // to_json(parse_config(j)) is a fixed point.
    CHECK(to_json(back) == to_json(cfg));
}

TEST_CASE("unknown keys are named with their full dotted path") {
    nlohmann::json j = to_json(TrainConfig{});
    j["learning_rate"] = 0.1;
    CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("learning_rate"), ConfigError);

    nlohmann::json j2 = to_json(TrainConfig{});
    j2["gen"]["nodescount"] = 4;
    CHECK_THROWS_WITH_AS(parse_config(j2), doctest::Contains("gen.nodescount"), ConfigError);

    nlohmann::json j3 = to_json(TrainConfig{});
    j3["ablations"]["no_fusionn"] = true;
    CHECK_THROWS_WITH_AS(parse_config(j3), doctest::Contains("ablations.no_fusionn"),
                         ConfigError);
}

TEST_CASE("type mismatches and range violations name the key") {
    nlohmann::json j = to_json(TrainConfig{});
    j["lambda1"] = "abc";
    CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("lambda1"), ConfigError);

    nlohmann::json j2 = to_json(TrainConfig{});
    j2["epochs"] = 2.5;
    CHECK_THROWS_WITH_AS(parse_config(j2), doctest::Contains("epochs"), ConfigError);

    nlohmann::json j3 = to_json(TrainConfig{});
    j3["batch_norm"] = 1;
    CHECK_THROWS_WITH_AS(parse_config(j3), doctest::Contains("batch_norm"), ConfigError);

    nlohmann::json j4 = to_json(TrainConfig{});
    j4["dropout"] = 1.5;
    CHECK_THROWS_WITH_AS(parse_config(j4), doctest::Contains("dropout"), ConfigError);

    nlohmann::json j5 = to_json(TrainConfig{});
    j5["k"] = 10; // exceeds M
    CHECK_THROWS_WITH_AS(parse_config(j5), doctest::Contains("k must lie in [1, M]"),
                         ConfigError);

    nlohmann::json j6 = to_json(TrainConfig{});
    j6["tau"] = 0.0;
    CHECK_THROWS_WITH_AS(parse_config(j6), doctest::Contains("tau"), ConfigError);
}

TEST_CASE("dotted overrides parse values as JSON with string fallback") {
    nlohmann::json j = to_json(TrainConfig{});
    apply_override(j, "lr=0.5");
    CHECK(j["lr"] == 0.5);
    apply_override(j, "gen.num_domains=7");
    CHECK(j["gen"]["num_domains"] == 7);
    apply_override(j, "batch_norm=false");
    CHECK(j["batch_norm"] == false);
    apply_override(j, "corpus=data/my corpus.json");
    CHECK(j["corpus"] == "data/my corpus.json");

    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "=5"), ConfigError);
}

TEST_CASE("load_config applies file, overrides and ablations in order") {
    fs::path p = temp_dir() / "cfg.json";
    {
        std::ofstream out(p);
        out << R"({"lr": 0.111, "hidden_dim": 16})";
    }
    TrainConfig cfg = load_config(p.string(), {"lr=0.222"}, {"no_fusion"});
    CHECK(cfg.lr == 0.222);
    CHECK(cfg.hidden_dim == 16);
    CHECK(cfg.ablations.no_fusion == true);

    CHECK_THROWS_WITH_AS(load_config(p.string(), {}, {"bogus_ablation"}),
                         doctest::Contains("bogus_ablation"), ConfigError);
    CHECK_THROWS_AS(load_config((temp_dir() / "missing.json").string(), {}, {}), ConfigError);
    fs::remove(p);
}

TEST_CASE("ablation normalization") {
    TrainConfig cfg;
    cfg.ablations.single_codebook = true;
    apply_ablation(cfg);
    CHECK(cfg.num_codebooks == 1);
    CHECK(cfg.top_k == 1);
    CHECK(cfg.lambda4 == 0.0);

    TrainConfig cfg2;
    cfg2.ablations.no_load_loss = true;
    apply_ablation(cfg2);
    CHECK(cfg2.lambda4 == 0.0);

    TrainConfig cfg3;
    cfg3.ablations.classic_load_loss = true;
    cfg3.ablations.no_load_loss = true;
    CHECK_THROWS_AS(apply_ablation(cfg3), ConfigError);
}

} // TEST_SUITE

TEST_SUITE("checkpoint") {

TEST_CASE("write then read preserves every field") {
    fs::path p = temp_dir() / "a.ckpt";
    CheckpointData d = sample_checkpoint();
    write_checkpoint(p.string(), d);
    CheckpointData r = read_checkpoint(p.string());
    CHECK(r.version == 1);
    CHECK(r.input_dim == d.input_dim);
    CHECK(r.step_count == d.step_count);
    CHECK(r.rng_state == d.rng_state);
    CHECK(r.config_json == d.config_json);
    REQUIRE(r.records.size() == d.records.size());
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        CHECK(r.records[i].first == d.records[i].first);
        CHECK(r.records[i].second == d.records[i].second);
    }
    fs::remove(p);
}

TEST_CASE("save, load, save is byte-identical") {
    fs::path a = temp_dir() / "b1.ckpt";
    fs::path b = temp_dir() / "b2.ckpt";
    CheckpointData d = sample_checkpoint();
    write_checkpoint(a.string(), d);
    CheckpointData r = read_checkpoint(a.string());
    write_checkpoint(b.string(), r);
    CHECK(slurp(a) == slurp(b));
    fs::remove(a);
    fs::remove(b);
}

TEST_CASE("corrupt files raise parse errors") {
    fs::path dir = temp_dir();
    CHECK_THROWS_AS(read_checkpoint((dir / "nope.ckpt").string()), ParseError);

    fs::path good = dir / "good.ckpt";
    write_checkpoint(good.string(), sample_checkpoint());
    std::string bytes = slurp(good);

    fs::path bad_magic = dir / "bad_magic.ckpt";
    {
        std::string copy = bytes;
        copy[0] = 'X';
        std::ofstream out(bad_magic, std::ios::binary);
        out << copy;
    }
    CHECK_THROWS_WITH_AS(read_checkpoint(bad_magic.string()), doctest::Contains("magic"),
                         ParseError);

    fs::path bad_version = dir / "bad_version.ckpt";
    {
        std::string copy = bytes;
        copy[8] = 99; // version word follows the magic
        std::ofstream out(bad_version, std::ios::binary);
        out << copy;
    }
    CHECK_THROWS_WITH_AS(read_checkpoint(bad_version.string()), doctest::Contains("version"),
                         ParseError);

    // Truncation at several depths: header, config, record payload.
    for (std::size_t keep : {4ul, 20ul, bytes.size() / 2, bytes.size() - 3}) {
        fs::path cut = dir / ("cut" + std::to_string(keep) + ".ckpt");
        std::ofstream out(cut, std::ios::binary);
        out << bytes.substr(0, keep);
        out.close();
        CHECK_THROWS_AS(read_checkpoint(cut.string()), ParseError);
        fs::remove(cut);
    }

    fs::remove(good);
    fs::remove(bad_magic);
    fs::remove(bad_version);
}

TEST_CASE("hash is 16 hex digits, stable, and content-sensitive") {
    fs::path a = temp_dir() / "h1.ckpt";
    fs::path b = temp_dir() / "h2.ckpt";
    CheckpointData d = sample_checkpoint();
    write_checkpoint(a.string(), d);
    d.step_count += 1;
    write_checkpoint(b.string(), d);

    std::string ha = checkpoint_hash_hex(a.string());
    std::string hb = checkpoint_hash_hex(b.string());
    CHECK(ha.size() == 16);
    for (char c : ha) CHECK(std::isxdigit(static_cast<unsigned char>(c)));
    CHECK(ha == checkpoint_hash_hex(a.string()));
    CHECK(ha != hb);
    fs::remove(a);
    fs::remove(b);
}

} // TEST_SUITE
