#include "coclr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace coclr {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string format_record(const MetricsRecord& r) {
    ordered_json j;
    j["schema"] = r.schema;
    j["run"] = r.run;
    j["seed"] = r.seed;
    j["stage"] = r.stage;
    j["stage_name"] = r.stage_name;
    j["epoch"] = r.epoch;
    j["metric"] = r.metric;
    j["value"] = r.value;
    j["wall_clock"] = r.wall_clock;
    if (!r.message.empty()) j["message"] = r.message;
    return j.dump();
}

MetricsRecord parse_record(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.schema = j.at("schema").get<int>();
    if (r.schema != kMetricsSchemaVersion)
        throw std::runtime_error("metrics record: unsupported schema " + std::to_string(r.schema));
    r.run = j.at("run").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.stage = j.at("stage").get<int>();
    r.stage_name = j.at("stage_name").get<std::string>();
    r.epoch = j.at("epoch").get<int>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").is_null() ? std::nan("") : j.at("value").get<double>();
    r.wall_clock = j.at("wall_clock").get<double>();
    if (j.contains("message")) r.message = j.at("message").get<std::string>();
    return r;
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(parse_record(line));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SummaryTable summarize(const std::map<std::uint64_t, std::vector<MetricsRecord>>& by_seed) {
    // Metric order: first appearance across seeds in seed order.
    std::vector<std::string> order;
    std::set<std::string> seen;
    std::map<std::string, std::map<std::uint64_t, double>> last;
    for (const auto& [seed, recs] : by_seed)
        for (const auto& r : recs) {
            if (r.metric == "error") continue;
            if (seen.insert(r.metric).second) order.push_back(r.metric);
            last[r.metric][seed] = r.value;
        }
    SummaryTable t;
    for (const auto& m : order) {
        SummaryRow row{m, 0.0, last[m]};
        std::vector<double> vals;
        for (const auto& [s, v] : row.per_seed) vals.push_back(v);
        row.median = median(vals);
        t.push_back(std::move(row));
    }
    return t;
}

std::map<std::uint64_t, std::vector<MetricsRecord>> read_run(const std::string& run_dir) {
    if (!fs::is_directory(run_dir)) throw std::runtime_error("run directory not found: " + run_dir);
    std::map<std::uint64_t, std::vector<MetricsRecord>> out;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(run_dir))
        if (e.is_directory() && e.path().filename().string().rfind("seed-", 0) == 0) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
        const auto file = d / "metrics.jsonl";
        if (!fs::exists(file)) continue;
        const auto seed = std::stoull(d.filename().string().substr(5));
        out[seed] = read_metrics(file.string());
    }
    if (out.empty()) throw std::runtime_error("no seed-*/metrics.jsonl under " + run_dir);
    return out;
}

namespace {

std::string fixed(double v, int prec = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
}

}  // namespace

std::string format_summary(const SummaryTable& t) {
    std::ostringstream out;
    out << "metric\tmedian";
    std::set<std::uint64_t> seeds;
    for (const auto& r : t)
        for (const auto& [s, v] : r.per_seed) seeds.insert(s);
    for (auto s : seeds) out << "\tseed" << s;
    out << '\n';
    for (const auto& r : t) {
        out << r.metric << '\t' << fixed(r.median);
        for (auto s : seeds) {
            auto it = r.per_seed.find(s);
            out << '\t' << (it == r.per_seed.end() ? "-" : fixed(it->second));
        }
        out << '\n';
    }
    return out.str();
}

bool ExperimentOutcome::ok() const {
    return std::all_of(seeds.begin(), seeds.end(), [](const SeedOutcome& s) { return !s.error; });
}

std::string resolve_out_root(const std::optional<std::string>& flag, const ExperimentConfig& cfg) {
    if (flag && !flag->empty()) return *flag;
    if (const char* env = std::getenv("COCLR_OUT_DIR"); env && *env) return env;
    return cfg.out_dir;
}

TwoViewDataset dataset_for(const ExperimentConfig& cfg, std::uint64_t seed) {
    DatasetSpec spec = cfg.dataset;
    spec.seed = seed;
    return generate(spec);
}

namespace {

std::string checkpoint_name(int stage, int view) {
    return "stage" + std::to_string(stage) + "_v" + std::to_string(view + 1) + ".ckpt";
}

std::string queue_name(int stage, int view) {
    return "stage" + std::to_string(stage) + "_queue_v" + std::to_string(view + 1) + ".bin";
}

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& run_dir, const RunOptions& opts) {
    SeedOutcome out;
    out.seed = seed;
    const fs::path dir = run_dir / ("seed-" + std::to_string(seed));
    out.dir = dir.string();
    fs::create_directories(dir / "checkpoints");
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.jsonl").string());

    const auto t0 = std::chrono::steady_clock::now();
    auto clock = [&] {
        if (opts.normalize_timestamps) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    std::vector<MetricsRecord> records;
    auto write = [&](MetricsRecord r) {
        metrics << format_record(r) << '\n';
        metrics.flush();
        records.push_back(std::move(r));
    };

    TrainPlan plan = cfg.plan;
    plan.seed = seed;
    int last_stage = 0;
    std::string last_name;
    try {
        const TwoViewDataset data = dataset_for(cfg, seed);
        RunHooks hooks;
        hooks.on_metric = [&](const MetricPoint& p) {
            last_stage = p.stage;
            last_name = p.stage_name;
            write({kMetricsSchemaVersion, cfg.name, seed, p.stage, p.stage_name, p.epoch, p.metric, p.value, clock(), ""});
        };
        if (opts.checkpoints)
            hooks.on_stage_end = [&](int stage, const CoTrainState& st) {
                for (int v = 0; v < 2; ++v) {
                    save_params(st.views[v].encoder.query, (dir / "checkpoints" / checkpoint_name(stage, v)).string());
                    save_queue(st.views[v].queue, (dir / "checkpoints" / queue_name(stage, v)).string());
                }
            };
        run_plan(plan, data, hooks);
    } catch (const std::exception& e) {
        out.error = e.what();
        write({kMetricsSchemaVersion, cfg.name, seed, last_stage, last_name, 0, "error", 0.0, clock(), e.what()});
    }
    if (opts.plots && !records.empty()) write_plots(records, plan, (dir / "plots").string());
    return out;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
    validate_config(cfg);
    const fs::path run_dir = fs::path(opts.out_root.empty() ? cfg.out_dir : opts.out_root) / cfg.name;
    fs::create_directories(run_dir);
    save_config(cfg, (run_dir / "config.cfg").string());

    ExperimentOutcome res;
    res.dir = run_dir.string();
    res.seeds.resize(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    auto worker = [&] {
        for (std::size_t i; (i = next++) < cfg.seeds.size();) {
            try {
                res.seeds[i] = run_seed(cfg, cfg.seeds[i], run_dir, opts);
            } catch (const std::exception& e) {
                res.seeds[i] = {cfg.seeds[i], (run_dir / ("seed-" + std::to_string(cfg.seeds[i]))).string(), e.what()};
            }
            if (opts.log) {
                std::lock_guard lock(log_mu);
                const auto& s = res.seeds[i];
                *opts.log << cfg.name << " seed " << s.seed << (s.error ? " failed: " + *s.error : " done") << '\n';
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(cfg.seeds.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::map<std::uint64_t, std::vector<MetricsRecord>> by_seed;
    for (const auto& s : res.seeds) by_seed[s.seed] = read_metrics((fs::path(s.dir) / "metrics.jsonl").string());
    res.summary = summarize(by_seed);
    std::ofstream(run_dir / "summary.tsv", std::ios::binary) << format_summary(res.summary);
    return res;
}

double sign_test_p(int wins, int losses) {
    const int n = wins + losses;
    if (n == 0) return 1.0;
    const int k = std::min(wins, losses);
    // P(X <= k) for X ~ Bin(n, 1/2), accumulated in log space.
    double tail = 0.0;
    for (int i = 0; i <= k; ++i)
        tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    return std::min(1.0, 2.0 * tail);
}

std::vector<CompareRow> compare_runs(const std::string& root, const std::string& baseline,
                                     const std::string& candidate) {
    std::vector<std::string> missing;
    for (const auto& tag : {baseline, candidate})
        if (!fs::is_directory(fs::path(root) / tag)) missing.push_back(tag);
    if (!missing.empty()) {
        std::string msg = "compare: no run directory for tag(s):";
        for (const auto& m : missing) msg += " " + m;
        throw std::runtime_error(msg + " under " + root);
    }
    const auto base = summarize(read_run((fs::path(root) / baseline).string()));
    const auto cand = summarize(read_run((fs::path(root) / candidate).string()));

    auto seeds_of = [](const SummaryTable& t) {
        std::set<std::uint64_t> s;
        for (const auto& r : t)
            for (const auto& [k, v] : r.per_seed) s.insert(k);
        return s;
    };
    if (seeds_of(base) != seeds_of(cand))
        throw std::runtime_error("compare: runs '" + baseline + "' and '" + candidate + "' cover different seeds");

    std::vector<CompareRow> rows;
    for (const auto& b : base) {
        auto it = std::find_if(cand.begin(), cand.end(), [&](const SummaryRow& c) { return c.metric == b.metric; });
        if (it == cand.end() || it->per_seed.size() != b.per_seed.size()) continue;
        CompareRow row;
        row.metric = b.metric;
        row.median_baseline = b.median;
        row.median_candidate = it->median;
        std::vector<double> ds;
        for (const auto& [seed, bv] : b.per_seed) {
            auto cv = it->per_seed.find(seed);
            if (cv == it->per_seed.end()) throw std::runtime_error("compare: seed " + std::to_string(seed) + " missing");
            const double d = cv->second - bv;
            row.deltas[seed] = d;
            ds.push_back(d);
            if (d > 0) ++row.wins;
            else if (d < 0) ++row.losses;
            else ++row.ties;
        }
        row.median_delta = median(ds);
        row.sign_test_p = sign_test_p(row.wins, row.losses);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_compare(const std::vector<CompareRow>& rows, const std::string& baseline,
                           const std::string& candidate) {
    std::ostringstream out;
    out << "metric\t" << baseline << "\t" << candidate << "\tdelta\twins\tlosses\tties\tsign_p\n";
    for (const auto& r : rows)
        out << r.metric << '\t' << fixed(r.median_baseline) << '\t' << fixed(r.median_candidate) << '\t'
            << fixed(r.median_delta) << '\t' << r.wins << '\t' << r.losses << '\t' << r.ties << '\t'
            << fixed(r.sign_test_p) << '\n';
    return out.str();
}

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values,
                            const RunOptions& opts) {
    if (values.empty()) throw std::invalid_argument("sweep: no values given");
    if (key == "name" || key == "out_dir" || key == "seeds")
        throw ConfigError(key, "cannot be swept");
    std::vector<ExperimentConfig> cfgs;
    for (const auto& v : values) {
        ExperimentConfig c = cfg;
        set_config_value(c, key, v);
        validate_config(c);
        cfgs.push_back(std::move(c));
    }
    const fs::path root = fs::path(opts.out_root.empty() ? cfg.out_dir : opts.out_root) / cfg.name;
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        RunOptions o = opts;
        o.out_root = (root / (key + "=" + values[i])).string();
        // The run id stays cfg.name so a singleton sweep reproduces a plain run.
        ExperimentConfig c = cfgs[i];
        const auto outcome = run_experiment(c, o);
        if (!outcome.ok()) throw std::runtime_error("sweep: run " + key + "=" + values[i] + " failed");
        rows.push_back({values[i], outcome.dir, outcome.summary});
    }
    return rows;
}

std::string format_sweep(const std::vector<SweepRow>& rows, const std::string& key,
                         const std::vector<std::string>& metrics) {
    std::ostringstream out;
    out << key;
    for (const auto& m : metrics) out << '\t' << m;
    out << '\n';
    for (const auto& r : rows) {
        out << r.value;
        for (const auto& m : metrics) {
            auto it = std::find_if(r.summary.begin(), r.summary.end(), [&](const SummaryRow& s) { return s.metric == m; });
            out << '\t' << (it == r.summary.end() ? "-" : fixed(it->median));
        }
        out << '\n';
    }
    return out.str();
}

std::vector<std::pair<std::string, double>> evaluate_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed,
                                                                const std::string& seed_dir, int stage,
                                                                bool with_finetune) {
    const fs::path ck = fs::path(seed_dir) / "checkpoints";
    if (!fs::is_directory(ck)) throw std::runtime_error("no checkpoints directory in " + seed_dir);
    if (stage < 0) {
        for (const auto& e : fs::directory_iterator(ck)) {
            const auto f = e.path().filename().string();
            if (f.rfind("stage", 0) == 0 && f.size() > 8 && f.substr(f.size() - 8) == "_v1.ckpt")
                stage = std::max(stage, std::stoi(f.substr(5, f.size() - 13)));
        }
        if (stage < 0) throw std::runtime_error("no stage checkpoints in " + ck.string());
    }
    const TwoViewDataset data = dataset_for(cfg, seed);
    CoTrainState st;
    for (int v = 0; v < 2; ++v) {
        st.views[v].encoder = EncoderPair::from_query(load_params((ck / checkpoint_name(stage, v)).string()),
                                                      cfg.plan.momentum);
        const std::size_t in = v == 0 ? data.view1.cols() : data.view2.cols();
        if (st.views[v].encoder.query.input_dim() != in)
            throw std::runtime_error("checkpoint view " + std::to_string(v + 1) + " expects input dim " +
                                     std::to_string(st.views[v].encoder.query.input_dim()) + ", dataset has " +
                                     std::to_string(in));
    }
    auto out = evaluate_state(st, data, cfg.plan.eval);
    if (with_finetune) {
        std::vector<int> ytr, yte;
        for (auto i : data.train) ytr.push_back(data.labels[i]);
        for (auto i : data.test) yte.push_back(data.labels[i]);
        FinetuneHyper fh;
        fh.layer = cfg.plan.eval.layer;
        const std::array<const Matrix*, 2> views{&data.view1, &data.view2};
        for (int v = 0; v < 2; ++v) {
            const auto r = finetune(st.views[v].encoder.query, gather_rows(*views[v], data.train), ytr,
                                    gather_rows(*views[v], data.test), yte, data.spec.classes, fh);
            out.emplace_back("finetune_acc_v" + std::to_string(v + 1), r.probe.accuracy);
        }
    }
    return out;
}

namespace {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

std::string svg_chart(const std::string& title, const std::vector<Series>& series, const std::string& ylabel) {
    const double w = 640, h = 400, ml = 60, mr = 150, mt = 40, mb = 50;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(y)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
    auto sy = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    std::ostringstream o;
    o << std::setprecision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << ml << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
    o << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double yv = y0 + (y1 - y0) * t / 4.0, xv = x0 + (x1 - x0) * t / 4.0;
        o << "<text x=\"" << ml - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << fixed(yv, 2) << "</text>\n";
        o << "<text x=\"" << sx(xv) << "\" y=\"" << h - mb + 16 << "\" text-anchor=\"middle\">" << fixed(xv, 0) << "</text>\n";
    }
    o << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">epoch</text>\n";
    o << "<text x=\"16\" y=\"" << (mt + h - mb) / 2 << "\" transform=\"rotate(-90 16 " << (mt + h - mb) / 2
      << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* c = colors[i % 6];
        o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : series[i].points)
            if (std::isfinite(y)) o << sx(x) << ',' << sy(y) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << w - mr + 10 << "\" y=\"" << mt + 16 * (i + 1) << "\" fill=\"" << c << "\">"
          << series[i].name << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace

void write_plots(const std::vector<MetricsRecord>& records, const TrainPlan& plan, const std::string& dir) {
    fs::create_directories(dir);
    std::vector<int> offset(plan.stages.size() + 1, 0);
    for (std::size_t i = 0; i < plan.stages.size(); ++i) offset[i + 1] = offset[i] + plan.stages[i].epochs;
    auto collect = [&](const std::vector<std::string>& names) {
        std::vector<Series> out;
        for (const auto& n : names) {
            Series s{n, {}};
            for (const auto& r : records)
                if (r.metric == n && r.stage_name != "summary" && r.stage >= 0 &&
                    static_cast<std::size_t>(r.stage) < plan.stages.size())
                    s.points.emplace_back(offset[static_cast<std::size_t>(r.stage)] + r.epoch, r.value);
            if (!s.points.empty()) out.push_back(std::move(s));
        }
        return out;
    };
    std::ofstream(fs::path(dir) / "loss.svg") << svg_chart("training loss", collect({"loss_v1", "loss_v2"}), "loss");
    std::ofstream(fs::path(dir) / "probe.svg")
        << svg_chart("linear probe accuracy", collect({"probe_acc_v1", "probe_acc_v2", "probe_acc_fused"}), "accuracy");
    std::ofstream(fs::path(dir) / "mask_precision.svg")
        << svg_chart("mined positive precision", collect({"mask_precision_v1", "mask_precision_v2"}), "precision");
}

}  // namespace coclr
