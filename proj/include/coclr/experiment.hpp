#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "coclr/config.hpp"

namespace coclr {

inline constexpr int kMetricsSchemaVersion = 1;

/// One observation of the metrics stream (one JSON object per line).
struct MetricsRecord {
    int schema = kMetricsSchemaVersion;
    std::string run;
    std::uint64_t seed = 0;
    int stage = 0;
    std::string stage_name;
    int epoch = 0;
    std::string metric;
    double value = 0.0;
    double wall_clock = 0.0;  // seconds since the seed started; 0 when normalized
    std::string message;      // only set on "error" records

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

std::string format_record(const MetricsRecord& r);
MetricsRecord parse_record(const std::string& line);
std::vector<MetricsRecord> read_metrics(const std::string& path);

struct SummaryRow {
    std::string metric;
    double median = 0.0;
    std::map<std::uint64_t, double> per_seed;  // final value per seed
};
using SummaryTable = std::vector<SummaryRow>;

/// Final value of every metric per seed, then medians across seeds. Pure in
/// the records, so replaying metrics files reproduces the table.
SummaryTable summarize(const std::map<std::uint64_t, std::vector<MetricsRecord>>& by_seed);
/// Reads every seed-*/metrics.jsonl below a run directory.
std::map<std::uint64_t, std::vector<MetricsRecord>> read_run(const std::string& run_dir);
std::string format_summary(const SummaryTable& t);

double median(std::vector<double> v);

struct RunOptions {
    /// Root output directory; the run lands in <out_root>/<config.name>.
    std::string out_root;
    bool normalize_timestamps = false;
    bool plots = false;
    int jobs = 1;  // seeds trained concurrently
    bool checkpoints = true;
    std::ostream* log = nullptr;
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::string dir;
    std::optional<std::string> error;
};

struct ExperimentOutcome {
    std::string dir;
    std::vector<SeedOutcome> seeds;
    SummaryTable summary;

    bool ok() const;
};

/// Output directory resolution: explicit flag, then COCLR_OUT_DIR, then the
/// config's out_dir.
std::string resolve_out_root(const std::optional<std::string>& flag, const ExperimentConfig& cfg);

/// Trains every seed, streaming metrics and writing checkpoints per stage
/// boundary. A failing seed leaves its partial outputs plus an error record;
/// the other seeds still run.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

struct CompareRow {
    std::string metric;
    double median_baseline = 0.0;
    double median_candidate = 0.0;
    double median_delta = 0.0;
    std::map<std::uint64_t, double> deltas;  // candidate − baseline per seed
    int wins = 0, losses = 0, ties = 0;
    double sign_test_p = 1.0;  // two-sided, ties dropped
};

/// Two-sided exact sign test p-value.
double sign_test_p(int wins, int losses);

/// Compares <root>/<baseline> with <root>/<candidate>. Both runs must cover
/// the same seeds.
std::vector<CompareRow> compare_runs(const std::string& root, const std::string& baseline,
                                     const std::string& candidate);
std::string format_compare(const std::vector<CompareRow>& rows, const std::string& baseline,
                           const std::string& candidate);

struct SweepRow {
    std::string value;
    std::string dir;
    SummaryTable summary;
};

/// One run per value with `key` overridden. Each run keeps the config name
/// (the run id in records) and lands in <out_root>/<name>/<key>=<value>.
/// Checks every value before training anything.
std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values,
                            const RunOptions& opts);
std::string format_sweep(const std::vector<SweepRow>& rows, const std::string& key,
                         const std::vector<std::string>& metrics);

/// Re-evaluates the stage checkpoints stored in a seed directory (stage < 0
/// picks the last one). The dataset is regenerated from the config.
std::vector<std::pair<std::string, double>> evaluate_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed,
                                                                const std::string& seed_dir, int stage,
                                                                bool with_finetune);

/// Standalone SVG line charts of the loss and probe curves of one seed.
void write_plots(const std::vector<MetricsRecord>& records, const TrainPlan& plan, const std::string& dir);

/// Dataset the config generates for a seed.
TwoViewDataset dataset_for(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace coclr
