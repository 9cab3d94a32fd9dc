#include "coclr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

namespace coclr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw ConfigError(key, "expected an integer, got '" + v + "'");
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        return parse_double(v);
    } catch (const std::exception&) {
        throw ConfigError(key, "expected a number, got '" + v + "'");
    }
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
    std::vector<T> out;
    if (v.empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_integer<T>(key, trim(item)));
    return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
    return out;
}

std::string layer_name(FeatureLayer l) { return l == FeatureLayer::Backbone ? "backbone" : "embedding"; }

FeatureLayer parse_layer(const std::string& key, const std::string& v) {
    if (v == "backbone") return FeatureLayer::Backbone;
    if (v == "embedding") return FeatureLayer::Embedding;
    throw ConfigError(key, "expected backbone or embedding, got '" + v + "'");
}

// Wraps a parser that throws std::invalid_argument so the error names the key.
template <class F>
auto keyed(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(key, e.what());
    }
}

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

Field int_field(std::string key, int DatasetSpec::*m) {
    return {key, [m](const ExperimentConfig& c) { return std::to_string(c.dataset.*m); },
            [m, key](ExperimentConfig& c, const std::string& v) { c.dataset.*m = parse_integer<int>(key, v); }};
}

Field real_field(std::string key, double DatasetSpec::*m) {
    return {key, [m](const ExperimentConfig& c) { return format_double(c.dataset.*m); },
            [m, key](ExperimentConfig& c, const std::string& v) { c.dataset.*m = parse_real(key, v); }};
}

Field plan_int(std::string key, int TrainPlan::*m) {
    return {key, [m](const ExperimentConfig& c) { return std::to_string(c.plan.*m); },
            [m, key](ExperimentConfig& c, const std::string& v) { c.plan.*m = parse_integer<int>(key, v); }};
}

Field plan_real(std::string key, double TrainPlan::*m) {
    return {key, [m](const ExperimentConfig& c) { return format_double(c.plan.*m); },
            [m, key](ExperimentConfig& c, const std::string& v) { c.plan.*m = parse_real(key, v); }};
}

Field augment_field(std::string key, int view, double AugmentSpec::*m) {
    return {key, [view, m](const ExperimentConfig& c) { return format_double(c.plan.augment[view].*m); },
            [view, m, key](ExperimentConfig& c, const std::string& v) { c.plan.augment[view].*m = parse_real(key, v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"name", [](const ExperimentConfig& c) { return c.name; },
                     [](ExperimentConfig& c, const std::string& v) {
                         if (v.empty() || v.find_first_of("/\\ \t") != std::string::npos)
                             throw ConfigError("name", "must be a non-empty word without path separators");
                         c.name = v;
                     }});
        f.push_back({"seeds", [](const ExperimentConfig& c) { return join(c.seeds); },
                     [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_list<std::uint64_t>("seeds", v); }});
        f.push_back({"out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
                     [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }});

        f.push_back(int_field("dataset.classes", &DatasetSpec::classes));
        f.push_back(int_field("dataset.per_class", &DatasetSpec::per_class));
        f.push_back(int_field("dataset.signal_dims", &DatasetSpec::signal_dims));
        f.push_back(int_field("dataset.nuisance_dims", &DatasetSpec::nuisance_dims));
        f.push_back(int_field("dataset.view2_dims", &DatasetSpec::view2_dims));
        f.push_back(real_field("dataset.signal_scale", &DatasetSpec::signal_scale));
        f.push_back(real_field("dataset.sigma_signal", &DatasetSpec::sigma_signal));
        f.push_back(real_field("dataset.sigma_nuisance", &DatasetSpec::sigma_nuisance));
        f.push_back(real_field("dataset.sigma_view2", &DatasetSpec::sigma_view2));
        f.push_back(real_field("dataset.train_fraction", &DatasetSpec::train_fraction));

        f.push_back({"plan.stages", [](const ExperimentConfig& c) { return format_stages(c.plan.stages); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.stages = keyed("plan.stages", [&] { return parse_stages(v); });
                     }});
        f.push_back({"plan.granularity", [](const ExperimentConfig& c) { return to_string(c.plan.granularity); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.granularity = keyed("plan.granularity", [&] { return parse_granularity(v); });
                     }});
        f.push_back(plan_int("plan.k", &TrainPlan::k));
        f.push_back(plan_real("plan.tau", &TrainPlan::tau));
        f.push_back(plan_real("plan.momentum", &TrainPlan::momentum));
        f.push_back(plan_int("plan.queue_capacity", &TrainPlan::queue_capacity));
        f.push_back(plan_int("plan.batch_size", &TrainPlan::batch_size));
        f.push_back({"plan.optimizer", [](const ExperimentConfig& c) { return to_string(c.plan.optimizer); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.optimizer = keyed("plan.optimizer", [&] { return parse_optimizer(v); });
                     }});
        f.push_back(plan_real("plan.lr", &TrainPlan::lr));
        f.push_back(plan_real("plan.weight_decay", &TrainPlan::weight_decay));
        f.push_back({"plan.backbone", [](const ExperimentConfig& c) { return join(c.plan.backbone); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.backbone = parse_list<std::size_t>("plan.backbone", v);
                     }});
        f.push_back({"plan.head", [](const ExperimentConfig& c) { return join(c.plan.head); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.head = parse_list<std::size_t>("plan.head", v);
                     }});
        f.push_back(augment_field("plan.augment1.noise", 0, &AugmentSpec::noise_sigma));
        f.push_back(augment_field("plan.augment1.dropout", 0, &AugmentSpec::dropout));
        f.push_back(augment_field("plan.augment2.noise", 1, &AugmentSpec::noise_sigma));
        f.push_back(augment_field("plan.augment2.dropout", 1, &AugmentSpec::dropout));

        f.push_back({"eval.every_epochs", [](const ExperimentConfig& c) { return std::to_string(c.plan.eval.every_epochs); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.eval.every_epochs = parse_integer<int>("eval.every_epochs", v);
                     }});
        f.push_back({"eval.layer", [](const ExperimentConfig& c) { return layer_name(c.plan.eval.layer); },
                     [](ExperimentConfig& c, const std::string& v) { c.plan.eval.layer = parse_layer("eval.layer", v); }});
        f.push_back({"eval.probe_steps", [](const ExperimentConfig& c) { return std::to_string(c.plan.eval.probe.steps); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.eval.probe.steps = parse_integer<int>("eval.probe_steps", v);
                     }});
        f.push_back({"eval.probe_lr", [](const ExperimentConfig& c) { return format_double(c.plan.eval.probe.lr); },
                     [](ExperimentConfig& c, const std::string& v) { c.plan.eval.probe.lr = parse_real("eval.probe_lr", v); }});
        f.push_back({"eval.probe_l2", [](const ExperimentConfig& c) { return format_double(c.plan.eval.probe.l2); },
                     [](ExperimentConfig& c, const std::string& v) { c.plan.eval.probe.l2 = parse_real("eval.probe_l2", v); }});
        f.push_back({"eval.probe_tolerance",
                     [](const ExperimentConfig& c) { return format_double(c.plan.eval.probe.tolerance); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.plan.eval.probe.tolerance = parse_real("eval.probe_tolerance", v);
                     }});
        return f;
    }();
    return table;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return f;
    throw ConfigError(key, "unknown config key");
}

std::string leading_key(const std::string& msg) {
    const auto e = msg.find_first_of(" :");
    return msg.substr(0, e);
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    find_field(key).set(cfg, value);
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
    try {
        cfg.dataset.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(leading_key(e.what()), e.what());
    }
    try {
        cfg.plan.validate();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        const auto colon = msg.find(": ");
        throw ConfigError(msg.substr(0, colon), colon == std::string::npos ? msg : msg.substr(colon + 2));
    }
}

ExperimentConfig parse_config(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::map<std::string, std::string> values;
    std::optional<int> schema;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("", "line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "schema") {
            if (schema) throw ConfigError("schema", "given twice");
            schema = parse_integer<int>("schema", value);
            continue;
        }
        find_field(key);
        if (!values.emplace(key, value).second) throw ConfigError(key, "given twice");
    }
    if (!schema) throw ConfigError("schema", "missing required field");
    if (*schema != kConfigSchemaVersion)
        throw ConfigError("schema", "unsupported version " + std::to_string(*schema) + " (expected " +
                                        std::to_string(kConfigSchemaVersion) + ")");
    ExperimentConfig cfg;
    for (const auto& f : fields()) {
        auto it = values.find(f.key);
        if (it == values.end()) throw ConfigError(f.key, "missing required field");
        f.set(cfg, it->second);
    }
    validate_config(cfg);
    return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out = "# coclr experiment config\nschema = " + std::to_string(kConfigSchemaVersion) + "\n";
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string s = dot == std::string::npos ? "" : f.key.substr(0, dot);
        if (s != section) {
            out += "\n";
            section = s;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write config " + path);
    out << serialize_config(cfg);
}

ExperimentConfig default_config(const std::string& name, LossKind loss, Granularity g) {
    ExperimentConfig cfg;
    cfg.name = name;
    cfg.plan = default_plan(loss, g);
    return cfg;
}

}  // namespace coclr
