#include <doctest.h>

#include <random>

#include "foundry/config.hpp"
#include "testing.hpp"

using namespace foundry::config;
using foundry::ConfigError;
using foundry::testing::TempDir;
using foundry::testing::write_text;

namespace {

ConfigSchema model_schema() {
    ConfigSchema s;
    s.add("model.hidden_dim", TypeTag::integer, 1024);
    s.add("model.n_layers", TypeTag::integer, 4);
    s.add("model.vit.patch", TypeTag::integer, 16);
    s.add("model.vit.name", TypeTag::string, "none");
    s.add("hparams.lr", TypeTag::floating, 3e-4);
    s.add("hparams.global_batch_size", TypeTag::integer, 32);
    s.add("hparams.per_gpu_batch_size", TypeTag::integer, 4);
    s.add("hparams.precision", TypeTag::string, "fp32");
    s.add("hparams.compile", TypeTag::boolean, false);
    s.add("data.weights", TypeTag::list, List{});
    return s;
}

// The appendix layout: config.yaml includes two presets by relative path.
void write_layered_tree(const TempDir& dir) {
    write_text(dir / "config.yaml",
               "model:\n"
               "  include: vla_foundry/config_presets/models/transformer_11m.yaml\n"
               "  hidden_dim: 2048  # overrides the preset value\n"
               "  vit:\n"
               "    include: vla_foundry/config_presets/models/vit_paligemma.yaml\n"
               "hparams:\n"
               "  lr: 1e-4\n"
               "  global_batch_size: 256\n"
               "  per_gpu_batch_size: 8\n"
               "  precision: amp_bfloat16\n");
    write_text(dir / "vla_foundry/config_presets/models/transformer_11m.yaml", "hidden_dim: 512\nn_layers: 6\n");
    write_text(dir / "vla_foundry/config_presets/models/vit_paligemma.yaml", "patch: 14\nname: paligemma\n");
}

}  // namespace

TEST_CASE("schema rejects collisions and mistyped defaults") {
    ConfigSchema s;
    s.add("a.b", TypeTag::integer, 1);
    CHECK_THROWS_AS(s.add("a.b", TypeTag::integer, 2), ConfigError);
    CHECK_THROWS_AS(s.add("a", TypeTag::integer, 2), ConfigError);
    CHECK_THROWS_AS(s.add("a.b.c", TypeTag::integer, 2), ConfigError);
    CHECK_THROWS_AS(s.add("x", TypeTag::integer, "text"), ConfigError);
    CHECK_THROWS_AS(s.add("y", TypeTag::list, 3), ConfigError);
}

TEST_CASE("include siblings override the included values") {
    TempDir dir;
    write_layered_tree(dir);
    auto tree = load_tree(dir / "config.yaml");
    auto cfg = resolve(model_schema(), &tree);
    CHECK(cfg.get_int("model.hidden_dim") == 2048);
    CHECK(cfg.provenance("model.hidden_dim") == Source::preset);
    CHECK(cfg.get_int("model.n_layers") == 6);
    CHECK(cfg.provenance("model.n_layers") == Source::include);
    CHECK(cfg.get_int("model.vit.patch") == 14);
    CHECK(cfg.get_string("model.vit.name") == "paligemma");
    CHECK(cfg.get_float("hparams.lr") == 1e-4);
    CHECK(cfg.get_int("hparams.global_batch_size") == 256);
    CHECK(cfg.get_int("hparams.per_gpu_batch_size") == 8);
    CHECK(cfg.get_string("hparams.precision") == "amp_bfloat16");
    CHECK(cfg.get_bool("hparams.compile") == false);
    CHECK(cfg.provenance("hparams.compile") == Source::default_value);
}

TEST_CASE("cli beats preset beats include beats default") {
    TempDir dir;
    write_layered_tree(dir);
    auto tree = load_tree(dir / "config.yaml");
    auto cfg = resolve(model_schema(), &tree, std::vector<std::string>{"--model.hidden_dim=1024"});
    CHECK(cfg.get_int("model.hidden_dim") == 1024);
    CHECK(cfg.provenance("model.hidden_dim") == Source::cli);
}

TEST_CASE("a file without include is returned unchanged") {
    TempDir dir;
    write_text(dir / "plain.yaml", "model:\n  hidden_dim: 7\n");
    auto tree = load_tree(dir / "plain.yaml");
    REQUIRE(tree.root.contains("model"));
    CHECK(tree.root.at("model").as_map().at("hidden_dim").as_string() == "7");
    CHECK(tree.sources.at("model.hidden_dim") == Source::preset);
}

TEST_CASE("include cycles name the chain") {
    TempDir dir;
    write_text(dir / "a.yaml", "include: b.yaml\nx: 1\n");
    write_text(dir / "b.yaml", "include: a.yaml\ny: 2\n");
    try {
        load_tree(dir / "a.yaml");
        FAIL("expected a cycle error");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("cycle") != std::string::npos);
        auto a1 = msg.find("a.yaml");
        auto b = msg.find("b.yaml", a1);
        auto a2 = msg.find("a.yaml", b);
        CHECK(a1 != std::string::npos);
        CHECK(b != std::string::npos);
        CHECK(a2 != std::string::npos);
    }
}

TEST_CASE("load errors") {
    TempDir dir;
    CHECK_THROWS_AS(load_tree(dir / "missing.yaml"), ConfigError);
    write_text(dir / "bad.yaml", "a: [1, 2\n");
    CHECK_THROWS_AS(load_tree(dir / "bad.yaml"), ConfigError);
    write_text(dir / "list.yaml", "- 1\n- 2\n");
    CHECK_THROWS_AS(load_tree(dir / "list.yaml"), ConfigError);
}

TEST_CASE("resolve errors") {
    auto s = model_schema();
    CHECK_THROWS_AS(resolve(s, nullptr, std::vector<std::string>{"hparams.lr=abc"}), ConfigError);
    CHECK_THROWS_AS(resolve(s, nullptr, std::vector<std::string>{"hparams.nope=1"}), ConfigError);
    CHECK_THROWS_AS(resolve(s, nullptr, std::vector<std::string>{"hparams.lr"}), ConfigError);
    auto tree = parse_tree("model:\n  depth: 3\n");
    CHECK_THROWS_AS(resolve(s, &tree), ConfigError);
    auto typed = parse_tree("model:\n  hidden_dim: big\n");
    CHECK_THROWS_AS(resolve(s, &typed), ConfigError);

    ConfigSchema req;
    req.add("run.name", TypeTag::string, std::nullopt, true);
    CHECK_THROWS_AS(resolve(req), ConfigError);
    CHECK(resolve(req, nullptr, std::vector<std::string>{"run.name=x"}).get_string("run.name") == "x");
}

TEST_CASE("defaults only") {
    auto schema = model_schema();
    auto cfg = resolve(schema);
    for (const auto& [path, entry] : schema.entries()) {
        CHECK(cfg.at(path) == *entry.default_value);
        CHECK(cfg.provenance(path) == Source::default_value);
    }
}

TEST_CASE("values are typed by the schema, not inferred") {
    ConfigSchema s;
    s.add("a", TypeTag::string, "");
    s.add("b", TypeTag::floating, 0.0);
    auto cfg = resolve(s, nullptr, std::vector<std::string>{"a=1e-4", "b=1e-4"});
    CHECK(cfg.get_string("a") == "1e-4");
    CHECK(cfg.get_float("b") == 1e-4);
}

TEST_CASE("resolved configs are frozen") {
    auto cfg = resolve(model_schema());
    for (int i = 0; i < 100; ++i) CHECK_THROWS_AS(cfg.set("model.hidden_dim", Value(i)), FrozenConfigError);
    CHECK(cfg.frozen());
}

TEST_CASE("lists replace rather than merge") {
    TempDir dir;
    write_text(dir / "base.yaml", "weights: [1, 2, 3]\n");
    write_text(dir / "top.yaml", "data:\n  include: base.yaml\n  weights: [4]\n");
    auto tree = load_tree(dir / "top.yaml");
    auto cfg = resolve(model_schema(), &tree);
    CHECK(cfg.get_floats("data.weights") == std::vector<double>{4.0});
}

TEST_CASE("nested keys accept arbitrary subtrees and deep overrides") {
    ConfigSchema s;
    s.add("model", TypeTag::nested, Map{});
    auto tree = parse_tree("model:\n  hidden_dim: 2048\n  vit:\n    patch: 14\n");
    auto cfg = resolve(s, &tree, std::vector<std::string>{"model.vit.patch=16", "model.extra=x"});
    const auto& m = cfg.at("model").as_map();
    CHECK(m.at("hidden_dim").as_string() == "2048");
    CHECK(m.at("vit").as_map().at("patch").as_string() == "16");
    CHECK(m.at("extra").as_string() == "x");
    CHECK(cfg.provenance("model") == Source::cli);
}

TEST_CASE("empty schema emits an empty mapping") {
    ConfigSchema s;
    auto text = emit_resolved(resolve(s));
    auto tree = parse_tree(text);
    CHECK(tree.root.empty());
}

TEST_CASE("emit does not carry provenance and round-trips the appendix config") {
    TempDir dir;
    write_layered_tree(dir);
    auto tree = load_tree(dir / "config.yaml");
    auto cfg = resolve(model_schema(), &tree, std::vector<std::string>{"model.hidden_dim=1024"});
    auto text = emit_resolved(cfg);
    CHECK(text.find("cli") == std::string::npos);
    CHECK(text.find("include") == std::string::npos);
    auto again = parse_tree(text);
    auto cfg2 = resolve(model_schema(), &again);
    CHECK(cfg2.values() == cfg.values());
    CHECK(emit_resolved(cfg2) == text);
}

TEST_CASE("emitted keys are sorted") {
    auto text = emit_resolved(resolve(model_schema()));
    CHECK(text.find("data:") < text.find("hparams:"));
    CHECK(text.find("hparams:") < text.find("model:"));
    CHECK(text.find("compile:") < text.find("global_batch_size:"));
}

TEST_CASE("float formatting survives a parse") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
        CHECK(parse_scalar(format_float(v), TypeTag::floating).as_float() == v);
    }
    CHECK(format_float(2.0) == "2.0");
}
