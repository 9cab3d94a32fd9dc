#include <doctest.h>

#include "coclr/config.hpp"
#include "test_util.hpp"

using namespace coclr;

namespace {

std::string error_field(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "<none>";
}

std::string without_line(const std::string& text, const std::string& key) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string line = text.substr(pos, nl - pos);
        if (line.rfind(key + " =", 0) != 0) out += line + "\n";
        pos = nl == std::string::npos ? text.size() : nl + 1;
    }
    return out;
}

}  // namespace

TEST_CASE("config round trip") {
    ExperimentConfig cfg = default_config("probe", LossKind::CoClr, Granularity::Simultaneous);
    cfg.plan.tau = 0.1 / 3.0;
    cfg.plan.augment[1].dropout = 0.25;
    cfg.plan.optimizer = OptimizerKind::Sgd;
    cfg.plan.eval.layer = FeatureLayer::Backbone;
    cfg.seeds = {3, 7};
    const std::string text = serialize_config(cfg);
    CHECK(text.find("schema = 1\n") != std::string::npos);
    CHECK(parse_config(text) == cfg);
    CHECK(serialize_config(parse_config(text)) == text);

    const auto dir = testutil::scratch_dir("config");
    save_config(cfg, (dir / "c.cfg").string());
    CHECK(load_config((dir / "c.cfg").string()) == cfg);
    CHECK_THROWS_AS(load_config((dir / "missing.cfg").string()), std::runtime_error);

    // Every key is written exactly once and in order.
    std::size_t last = 0;
    for (const auto& k : config_keys()) {
        const auto at = text.find("\n" + k + " = ");
        REQUIRE(at != std::string::npos);
        CHECK(at > last);
        last = at;
    }
}

TEST_CASE("config errors name the key") {
    const std::string text = serialize_config(default_config());
    CHECK(error_field(without_line(text, "plan.k")) == "plan.k");
    CHECK(error_field(without_line(text, "schema")) == "schema");
    CHECK(error_field(text + "plan.bogus = 1\n") == "plan.bogus");
    CHECK(error_field(text + "plan.k = 3\n") == "plan.k");
    CHECK(error_field(text + "just words\n").empty());

    auto with = [&](const std::string& key, const std::string& value) {
        return without_line(text, key) + key + " = " + value + "\n";
    };
    CHECK(error_field(with("plan.k", "five")) == "plan.k");
    CHECK(error_field(with("plan.k", "-1")) == "plan.k");
    CHECK(error_field(with("plan.tau", "0")) == "plan.tau");
    CHECK(error_field(with("plan.optimizer", "rmsprop")) == "plan.optimizer");
    CHECK(error_field(with("plan.stages", "coclr:1:5")) == "plan.stages[0]");
    CHECK(error_field(with("eval.layer", "middle")) == "eval.layer");
    CHECK(error_field(with("dataset.classes", "1")) == "dataset.classes");
    CHECK(error_field(with("schema", "2")) == "schema");
    CHECK(error_field(with("name", "a/b")) == "name");
    CHECK(error_field(with("seeds", "")) == "seeds");
    CHECK(error_field(text) == "<none>");
}

TEST_CASE("get and set single keys") {
    ExperimentConfig cfg = default_config();
    for (const auto& k : config_keys()) {
        const std::string v = get_config_value(cfg, k);
        ExperimentConfig copy = cfg;
        set_config_value(copy, k, v);
        CHECK(copy == cfg);
    }
    set_config_value(cfg, "plan.tau", "0.2");
    CHECK(cfg.plan.tau == 0.2);
    set_config_value(cfg, "plan.backbone", "32,16");
    CHECK(cfg.plan.backbone == std::vector<std::size_t>{32, 16});
    set_config_value(cfg, "plan.augment1.noise", "0");
    CHECK(cfg.plan.augment[0].noise_sigma == 0.0);
    CHECK_THROWS_AS(set_config_value(cfg, "plan.nope", "1"), ConfigError);
    CHECK_THROWS_AS(get_config_value(cfg, "plan.nope"), ConfigError);
    CHECK_THROWS_AS(set_config_value(cfg, "plan.queue_capacity", "x"), ConfigError);
}

TEST_CASE("default_config variants validate") {
    for (auto loss : {LossKind::InfoNce, LossKind::UberNce, LossKind::CoClr, LossKind::Cmc})
        CHECK_NOTHROW(validate_config(default_config("x", loss)));
    CHECK_NOTHROW(validate_config(default_config("x", LossKind::CoClr, Granularity::Simultaneous)));
    CHECK(default_config("x").seeds.size() == 5);
}
