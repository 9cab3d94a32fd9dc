#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "coclr/experiment.hpp"

using namespace coclr;

namespace {

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

void apply_seed_count(ExperimentConfig& cfg, std::optional<int> n) {
    if (!n) return;
    if (*n < 1) throw ConfigError("seeds", "--seeds must be >= 1");
    cfg.seeds.clear();
    for (int s = 0; s < *n; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CoCLR two-view co-training on synthetic data"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<int> seeds;
    bool normalize = false, plots = false;
    int jobs = 1;

    auto add_run_flags = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seeds", seeds, "run seeds 0..N-1 instead of the config's list");
        sub->add_option("--out", out_dir, "output root (overrides COCLR_OUT_DIR and out_dir)");
        sub->add_flag("--normalize-timestamps", normalize, "write wall_clock = 0 for byte-stable metrics");
        sub->add_flag("--plots", plots, "write SVG loss/probe curves per seed");
        sub->add_option("--jobs", jobs, "seeds trained concurrently")->check(CLI::PositiveNumber);
    };

    auto* run = app.add_subcommand("run", "train every seed of a config");
    add_run_flags(run);

    std::string baseline, candidate;
    auto* compare = app.add_subcommand("compare", "median and per-seed deltas between two runs");
    compare->add_option("--out", out_dir, "root holding the run directories");
    compare->add_option("--baseline", baseline, "baseline run tag")->required();
    compare->add_option("--candidate", candidate, "candidate run tag")->required();

    std::string param, values, metrics = "probe_acc_v1,r@1_v1,probe_acc_fused,mask_precision_end";
    auto* sweep_cmd = app.add_subcommand("sweep", "one run per value of a config key");
    add_run_flags(sweep_cmd);
    sweep_cmd->add_option("--param", param, "config key path, e.g. plan.k")->required();
    sweep_cmd->add_option("--values", values, "comma-separated values")->required();
    sweep_cmd->add_option("--metrics", metrics, "comma-separated metrics for the joint table");

    std::string run_dir;
    std::uint64_t seed = 0;
    int stage = -1;
    bool with_finetune = false;
    auto* eval = app.add_subcommand("eval", "re-evaluate a stage checkpoint");
    eval->add_option("--run", run_dir, "run directory (holds config.cfg and seed-*/)")->required();
    eval->add_option("--seed", seed, "seed to evaluate");
    eval->add_option("--stage", stage, "stage index (default: last checkpoint)");
    eval->add_flag("--finetune", with_finetune, "also finetune each view and report its accuracy");

    std::string dataset_out;
    auto* exp = app.add_subcommand("export-dataset", "write the dataset of a config and seed as text");
    exp->add_option("--config", config_path, "experiment config file")->check(CLI::ExistingFile);
    exp->add_option("--seed", seed, "dataset seed");
    exp->add_option("--out", dataset_out, "output file")->required();

    std::string loss = "coclr", granularity = "cycle", name;
    auto* print_cfg = app.add_subcommand("print-config", "print a default benchmark config");
    print_cfg->add_option("--loss", loss, "alternation loss: infonce, ubernce, coclr or cmc");
    print_cfg->add_option("--granularity", granularity, "cycle or simultaneous");
    print_cfg->add_option("--name", name, "run tag (default: the loss name)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run || *sweep_cmd) {
            ExperimentConfig cfg = load_config(config_path);
            apply_seed_count(cfg, seeds);
            RunOptions opts;
            opts.out_root = resolve_out_root(out_dir.empty() ? std::nullopt : std::optional(out_dir), cfg);
            opts.normalize_timestamps = normalize;
            opts.plots = plots;
            opts.jobs = jobs;
            opts.log = &std::cerr;
            if (*run) {
                const auto res = run_experiment(cfg, opts);
                std::cout << format_summary(res.summary);
                for (const auto& s : res.seeds)
                    if (s.error) std::cerr << "seed " << s.seed << " failed: " << *s.error << '\n';
                return res.ok() ? 0 : 1;
            }
            const auto rows = sweep(cfg, param, split_commas(values), opts);
            std::cout << format_sweep(rows, param, split_commas(metrics));
            return 0;
        }
        if (*compare) {
            const std::string root = out_dir.empty() ? resolve_out_root(std::nullopt, ExperimentConfig{}) : out_dir;
            std::cout << format_compare(compare_runs(root, baseline, candidate), baseline, candidate);
            return 0;
        }
        if (*eval) {
            const auto cfg = load_config((std::filesystem::path(run_dir) / "config.cfg").string());
            const auto dir = (std::filesystem::path(run_dir) / ("seed-" + std::to_string(seed))).string();
            for (const auto& [k, v] : evaluate_checkpoint(cfg, seed, dir, stage, with_finetune))
                std::cout << k << '\t' << v << '\n';
            return 0;
        }
        if (*exp) {
            const ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
            save_dataset(dataset_for(cfg, seed), dataset_out);
            return 0;
        }
        if (*print_cfg) {
            LossKind k;
            Granularity g;
            try {
                k = parse_loss_kind(loss);
                g = parse_granularity(granularity);
            } catch (const std::invalid_argument& e) {
                throw ConfigError("", e.what());
            }
            std::cout << serialize_config(default_config(name.empty() ? loss : name, k, g));
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
