#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coclr/encoder.hpp"
#include "coclr/eval.hpp"
#include "coclr/mining.hpp"
#include "coclr/queue.hpp"
#include "coclr/synthdata.hpp"

namespace coclr {

enum class LossKind { InfoNce, UberNce, CoClr, Cmc };
enum class ViewSel { One = 1, Two = 2, Both = 3 };
enum class Granularity { Cycle, Simultaneous };

std::string to_string(LossKind k);
std::string to_string(ViewSel v);
std::string to_string(Granularity g);
LossKind parse_loss_kind(const std::string& s);
ViewSel parse_view(const std::string& s);
Granularity parse_granularity(const std::string& s);

struct Stage {
    LossKind loss = LossKind::InfoNce;
    ViewSel view = ViewSel::Both;
    int epochs = 0;

    friend bool operator==(const Stage&, const Stage&) = default;
};

/// "loss:view:epochs" items separated by commas, e.g. "infonce:both:60,coclr:1:20".
std::vector<Stage> parse_stages(const std::string& s);
std::string format_stages(const std::vector<Stage>& stages);

/// Evaluation run at stage boundaries (and every `every_epochs` when > 0).
struct EvalOptions {
    int every_epochs = 0;
    FeatureLayer layer = FeatureLayer::Embedding;
    ProbeHyper probe;

    friend bool operator==(const EvalOptions&, const EvalOptions&) = default;
};

struct TrainPlan {
    std::vector<Stage> stages;
    int k = 5;
    double tau = 0.07;
    double momentum = 0.999;
    int queue_capacity = 64;
    int batch_size = 32;
    double lr = 0.01;
    double weight_decay = 1e-5;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::uint64_t seed = 0;
    Granularity granularity = Granularity::Cycle;
    std::vector<std::size_t> backbone{64, 64};
    std::vector<std::size_t> head{32, 16};
    std::array<AugmentSpec, 2> augment{AugmentSpec{0.5, 0.1}, AugmentSpec{0.3, 0.1}};
    EvalOptions eval;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;

    friend bool operator==(const TrainPlan&, const TrainPlan&) = default;
};

/// Desk-scale schedule: InfoNCE initialization of both views, then two
/// alternation cycles of `loss` (view 1 then view 2), or the simultaneous
/// variant when granularity says so.
TrainPlan default_plan(LossKind alternation_loss = LossKind::CoClr, Granularity g = Granularity::Cycle);

struct ViewState {
    EncoderPair encoder;
    FeatureQueue queue;
    AdamState adam;  // untouched under SGD
};

struct CoTrainState {
    std::array<ViewState, 2> views;
    std::int64_t step = 0;
};

/// Fresh encoders (key == query) and empty queues for both views.
CoTrainState init_state(const TrainPlan& plan, std::size_t view1_dim, std::size_t view2_dim);

struct Batch {
    std::array<Matrix, 2> x;
    std::vector<std::int64_t> ids;
};

Batch make_batch(const TwoViewDataset& data, std::span<const std::size_t> rows);

struct StepHyper {
    int k = 5;
    double tau = 0.07;
    double lr = 0.05;
    double weight_decay = 1e-5;
    std::array<AugmentSpec, 2> augment{};
    OptimizerKind optimizer = OptimizerKind::Sgd;
};

StepHyper step_hyper(const TrainPlan& plan);

/// Ground-truth labels indexed by sample id. Only the UberNCE mask and the
/// mask-quality diagnostics read it; training never needs it otherwise.
using LabelLookup = std::span<const int>;

struct StepMetrics {
    std::array<bool, 2> active{false, false};
    std::array<double, 2> loss{0.0, 0.0};
    std::array<bool, 2> mined{false, false};       // a topK mask was used
    std::array<bool, 2> fell_back{false, false};   // queue too short, ran InfoNCE instead
    std::array<std::optional<MaskQuality>, 2> mask_quality;
};

/// Intermediate values of a step, exposed for verification.
struct StepTrace {
    Matrix augmented_query;
    Matrix augmented_key;
    Matrix other_view_features;
    Matrix logits;
    PositiveMask mask;
};

/// One CoCLR update of `active` (view 0 or 1) with the other view frozen:
/// two augmentations, query/key forward, frozen other-view forward on the raw
/// input, logits, cross-view topK mask, MIL-NCE, SGD on the query encoder,
/// momentum update of the key encoder, then both queues pushed in lockstep.
/// Falls back to an InfoNCE mask while the queue holds fewer than k+1 rows.
StepMetrics coclr_step(CoTrainState& state, const Batch& batch, int active, const StepHyper& hyper, Rng& rng,
                       LabelLookup labels = {}, StepTrace* trace = nullptr);

/// Both views mine from each other's pre-step features and are updated in the
/// same step.
StepMetrics simultaneous_step(CoTrainState& state, const Batch& batch, const StepHyper& hyper, Rng& rng,
                              LabelLookup labels = {});

/// Instance-level update (InfoNCE, UberNCE or CMC) of the selected view(s).
/// UberNCE needs labels.
StepMetrics instance_step(CoTrainState& state, const Batch& batch, LossKind loss, ViewSel view,
                          const StepHyper& hyper, Rng& rng, LabelLookup labels = {});

struct MetricPoint {
    int stage = 0;
    std::string stage_name;
    int epoch = 0;  // 1-based within the stage; 0 for the initial snapshot
    std::string metric;
    double value = 0.0;

    friend bool operator==(const MetricPoint&, const MetricPoint&) = default;
};

struct RunResult {
    CoTrainState state;
    std::vector<MetricPoint> history;
};

struct RunHooks {
    /// Called after each stage completes with its index.
    std::function<void(int, const CoTrainState&)> on_stage_end;
    std::function<void(const MetricPoint&)> on_metric;
};

/// Executes the plan's stages in order. Labels are passed separately from the
/// dataset so callers can prove they never influence training.
RunResult run_plan(const TrainPlan& plan, const TwoViewDataset& data, const RunHooks& hooks = {});

/// Evaluation metrics for the current encoders: per-view and fused probe
/// accuracy and R@k (test queries against the train gallery).
std::vector<std::pair<std::string, double>> evaluate_state(const CoTrainState& state, const TwoViewDataset& data,
                                                           const EvalOptions& opts);

}  // namespace coclr
