#include "coclr/cotrain.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

#include "coclr/losses.hpp"

namespace coclr {

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::InfoNce: return "infonce";
        case LossKind::UberNce: return "ubernce";
        case LossKind::CoClr: return "coclr";
        case LossKind::Cmc: return "cmc";
    }
    return "?";
}

std::string to_string(ViewSel v) {
    switch (v) {
        case ViewSel::One: return "1";
        case ViewSel::Two: return "2";
        case ViewSel::Both: return "both";
    }
    return "?";
}

std::string to_string(Granularity g) { return g == Granularity::Cycle ? "cycle" : "simultaneous"; }

LossKind parse_loss_kind(const std::string& s) {
    if (s == "infonce") return LossKind::InfoNce;
    if (s == "ubernce") return LossKind::UberNce;
    if (s == "coclr") return LossKind::CoClr;
    if (s == "cmc") return LossKind::Cmc;
    throw std::invalid_argument("unknown loss '" + s + "' (expected infonce, ubernce, coclr or cmc)");
}

ViewSel parse_view(const std::string& s) {
    if (s == "1") return ViewSel::One;
    if (s == "2") return ViewSel::Two;
    if (s == "both") return ViewSel::Both;
    throw std::invalid_argument("unknown view '" + s + "' (expected 1, 2 or both)");
}

Granularity parse_granularity(const std::string& s) {
    if (s == "cycle") return Granularity::Cycle;
    if (s == "simultaneous") return Granularity::Simultaneous;
    throw std::invalid_argument("unknown granularity '" + s + "' (expected cycle or simultaneous)");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<Stage> parse_stages(const std::string& s) {
    std::vector<Stage> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto p1 = item.find(':');
        const auto p2 = p1 == std::string::npos ? p1 : item.find(':', p1 + 1);
        if (p2 == std::string::npos) throw std::invalid_argument("stage '" + item + "' is not loss:view:epochs");
        Stage st;
        st.loss = parse_loss_kind(item.substr(0, p1));
        st.view = parse_view(item.substr(p1 + 1, p2 - p1 - 1));
        std::size_t used = 0;
        const std::string ep = item.substr(p2 + 1);
        st.epochs = std::stoi(ep, &used);
        if (used != ep.size()) throw std::invalid_argument("stage '" + item + "': bad epoch count");
        out.push_back(st);
    }
    return out;
}

std::string format_stages(const std::vector<Stage>& stages) {
    std::string out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) out += ",";
        out += to_string(stages[i].loss) + ":" + to_string(stages[i].view) + ":" + std::to_string(stages[i].epochs);
    }
    return out;
}

void TrainPlan::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument(field + ": " + why);
    };
    if (k < 0) fail("plan.k", "must be >= 0");
    if (!(tau > 0.0)) fail("plan.tau", "must be positive");
    if (!(momentum >= 0.0 && momentum <= 1.0)) fail("plan.momentum", "must lie in [0, 1]");
    if (queue_capacity < 1) fail("plan.queue_capacity", "must be >= 1");
    if (batch_size < 1) fail("plan.batch_size", "must be >= 1");
    if (batch_size > queue_capacity) fail("plan.batch_size", "must not exceed plan.queue_capacity");
    if (!(lr > 0.0)) fail("plan.lr", "must be positive");
    if (!(weight_decay >= 0.0)) fail("plan.weight_decay", "must be >= 0");
    if (head.empty()) fail("plan.head", "needs at least one layer");
    for (auto w : backbone)
        if (w == 0) fail("plan.backbone", "widths must be positive");
    for (auto w : head)
        if (w == 0) fail("plan.head", "widths must be positive");
    for (int v = 0; v < 2; ++v) {
        const std::string f = "plan.augment" + std::to_string(v + 1);
        if (!(augment[v].noise_sigma >= 0.0)) fail(f + ".noise", "must be >= 0");
        if (!(augment[v].dropout >= 0.0 && augment[v].dropout < 1.0)) fail(f + ".dropout", "must lie in [0, 1)");
    }
    if (eval.every_epochs < 0) fail("eval.every_epochs", "must be >= 0");
    if (eval.probe.steps < 0) fail("eval.probe_steps", "must be >= 0");
    if (!(eval.probe.lr > 0.0)) fail("eval.probe_lr", "must be positive");

    std::array<bool, 2> initialized{false, false};
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& st = stages[i];
        const std::string f = "plan.stages[" + std::to_string(i) + "]";
        if (st.epochs < 0) fail(f, "epochs must be >= 0");
        if (st.loss == LossKind::CoClr) {
            const bool both = st.view == ViewSel::Both;
            if (both && granularity != Granularity::Simultaneous)
                fail(f, "coclr on both views requires plan.granularity = simultaneous");
            if (!both && granularity == Granularity::Simultaneous)
                fail(f, "simultaneous granularity requires coclr stages on both views");
            if (st.epochs > 0 && !(initialized[0] && initialized[1]))
                fail(f, "coclr requires a completed initialization stage for both views");
            if (st.epochs > 0 && k + 1 > queue_capacity) fail("plan.k", "k + 1 must not exceed plan.queue_capacity");
        } else if (st.epochs > 0) {
            if (st.view != ViewSel::Two) initialized[0] = true;
            if (st.view != ViewSel::One) initialized[1] = true;
        }
    }
}

TrainPlan default_plan(LossKind alternation_loss, Granularity g) {
    TrainPlan p;
    p.granularity = g;
    const auto init = alternation_loss == LossKind::UberNce ? LossKind::UberNce : LossKind::InfoNce;
    p.stages.push_back({init, ViewSel::Both, 60});
    if (g == Granularity::Simultaneous) {
        // Same number of updates per encoder as two cycles of 20 + 20.
        p.stages.push_back({alternation_loss, ViewSel::Both, 20});
        p.stages.push_back({alternation_loss, ViewSel::Both, 20});
    } else {
        for (int cycle = 0; cycle < 2; ++cycle) {
            p.stages.push_back({alternation_loss, ViewSel::One, 20});
            p.stages.push_back({alternation_loss, ViewSel::Two, 20});
        }
    }
    return p;
}

CoTrainState init_state(const TrainPlan& plan, std::size_t view1_dim, std::size_t view2_dim) {
    Rng root(plan.seed);
    CoTrainState s;
    const std::array<std::size_t, 2> dims{view1_dim, view2_dim};
    for (int v = 0; v < 2; ++v) {
        Rng rng = root.fork(10 + static_cast<std::uint64_t>(v));
        EncoderDims ed;
        ed.input = dims[v];
        ed.backbone = plan.backbone;
        ed.head = plan.head;
        s.views[v].encoder = EncoderPair::from_query(init_encoder(ed, rng), plan.momentum);
        s.views[v].queue = FeatureQueue(static_cast<std::size_t>(plan.queue_capacity), plan.head.back());
    }
    return s;
}

Batch make_batch(const TwoViewDataset& data, std::span<const std::size_t> rows) {
    Batch b;
    b.x[0] = gather_rows(data.view1, rows);
    b.x[1] = gather_rows(data.view2, rows);
    b.ids.assign(rows.begin(), rows.end());
    return b;
}

StepHyper step_hyper(const TrainPlan& plan) {
    return {plan.k, plan.tau, plan.lr, plan.weight_decay, plan.augment, plan.optimizer};
}

namespace {

std::vector<int> labels_for(std::span<const std::int64_t> ids, LabelLookup labels) {
    std::vector<int> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = static_cast<std::size_t>(ids[i]);
        if (id >= labels.size()) throw std::out_of_range("label lookup: id " + std::to_string(id) + " out of range");
        out[i] = labels[id];
    }
    return out;
}

void check_lockstep(const CoTrainState& s) {
    const auto& a = s.views[0].queue;
    const auto& b = s.views[1].queue;
    if (a.fill() != b.fill() || a.cursor() != b.cursor())
        throw std::logic_error("queues are out of lockstep");
}

void check_batch(const Batch& batch) {
    if (batch.x[0].rows() != batch.ids.size() || batch.x[1].rows() != batch.ids.size())
        throw std::invalid_argument("batch: views and ids differ in length");
}

struct ViewUpdate {
    ForwardResult query;
    Matrix key;
    LossResult loss;
};

void apply_update(ViewState& v, const ViewUpdate& u, const StepHyper& hyper) {
    const Grads g = backward(v.encoder.query, u.query.tape, u.loss.d_query);
    if (hyper.optimizer == OptimizerKind::Adam)
        adam_step_inplace(v.encoder.query, g, v.adam, hyper.lr, hyper.weight_decay);
    else
        sgd_step_inplace(v.encoder.query, g, hyper.lr, hyper.weight_decay);
    momentum_update_inplace(v.encoder);
}

// Cross-view mask for the view whose other-view features are `other` and
// whose other-view queue is `other_queue`.
PositiveMask mine(const Matrix& other, const FeatureQueue& other_queue, std::size_t rows, std::size_t cols, int k,
                  StepMetrics& m, int view) {
    if (k == 0) return PositiveMask::self_only(rows, cols);
    if (other_queue.fill() < static_cast<std::size_t>(k) + 1) {
        m.fell_back[view] = true;
        return PositiveMask::self_only(rows, cols);
    }
    m.mined[view] = true;
    return build_mask(similarity_to_queue(other, other_queue), static_cast<std::size_t>(k));
}

void record_quality(StepMetrics& m, int view, const PositiveMask& mask, const Batch& batch,
                    const FeatureQueue& q, LabelLookup labels) {
    if (labels.empty() || !m.mined[view]) return;
    const auto ql = labels_for(batch.ids, labels);
    const auto kl = labels_for(q.ids(), labels);
    m.mask_quality[view] = mask_quality(mask, ql, kl);
}

}  // namespace

StepMetrics coclr_step(CoTrainState& state, const Batch& batch, int active, const StepHyper& hyper, Rng& rng,
                       LabelLookup labels, StepTrace* trace) {
    if (active != 0 && active != 1) throw std::invalid_argument("coclr_step: active view must be 0 or 1");
    if (hyper.k < 0) throw std::invalid_argument("coclr_step: k must be >= 0");
    check_batch(batch);
    check_lockstep(state);
    const int other = 1 - active;
    auto& av = state.views[active];
    auto& ov = state.views[other];
    StepMetrics m;
    m.active[active] = true;

    const Matrix xq = augment(batch.x[active], hyper.augment[active], rng);
    const Matrix xk = augment(batch.x[active], hyper.augment[active], rng);
    ViewUpdate u;
    u.query = forward(av.encoder.query, xq, true);
    u.key = embed(av.encoder.key, xk);
    // The frozen view sees the raw input and never receives a gradient.
    const Matrix z_other = embed(ov.encoder.query, batch.x[other]);

    const auto block = build_logits(u.query.embeddings, u.key, av.queue, hyper.tau);
    const auto mask = mine(z_other, ov.queue, block.logits.rows(), block.logits.cols(), hyper.k, m, active);
    u.loss = mil_nce(block, mask);
    m.loss[active] = u.loss.loss;
    record_quality(m, active, mask, batch, av.queue, labels);

    if (trace) {
        trace->augmented_query = xq;
        trace->augmented_key = xk;
        trace->other_view_features = z_other;
        trace->logits = block.logits;
        trace->mask = mask;
    }

    apply_update(av, u, hyper);
    av.queue.push_batch(u.key, batch.ids);
    ov.queue.push_batch(z_other, batch.ids);
    ++state.step;
    return m;
}

StepMetrics simultaneous_step(CoTrainState& state, const Batch& batch, const StepHyper& hyper, Rng& rng,
                              LabelLookup labels) {
    if (hyper.k < 0) throw std::invalid_argument("simultaneous_step: k must be >= 0");
    check_batch(batch);
    check_lockstep(state);
    StepMetrics m;
    std::array<ViewUpdate, 2> u;
    std::array<Matrix, 2> raw;
    for (int v = 0; v < 2; ++v) {
        const Matrix xq = augment(batch.x[v], hyper.augment[v], rng);
        const Matrix xk = augment(batch.x[v], hyper.augment[v], rng);
        u[v].query = forward(state.views[v].encoder.query, xq, true);
        u[v].key = embed(state.views[v].encoder.key, xk);
    }
    // Mining snapshots come from pre-step parameters of both views.
    for (int v = 0; v < 2; ++v) raw[v] = embed(state.views[v].encoder.query, batch.x[v]);
    for (int v = 0; v < 2; ++v) {
        const int o = 1 - v;
        m.active[v] = true;
        const auto block = build_logits(u[v].query.embeddings, u[v].key, state.views[v].queue, hyper.tau);
        const auto mask = mine(raw[o], state.views[o].queue, block.logits.rows(), block.logits.cols(), hyper.k, m, v);
        u[v].loss = mil_nce(block, mask);
        m.loss[v] = u[v].loss.loss;
        record_quality(m, v, mask, batch, state.views[v].queue, labels);
    }
    for (int v = 0; v < 2; ++v) apply_update(state.views[v], u[v], hyper);
    for (int v = 0; v < 2; ++v) state.views[v].queue.push_batch(u[v].key, batch.ids);
    ++state.step;
    return m;
}

StepMetrics instance_step(CoTrainState& state, const Batch& batch, LossKind loss, ViewSel view,
                          const StepHyper& hyper, Rng& rng, LabelLookup labels) {
    if (loss == LossKind::CoClr) throw std::invalid_argument("instance_step: use coclr_step for coclr");
    if (loss == LossKind::UberNce && labels.empty()) throw std::invalid_argument("instance_step: ubernce needs labels");
    check_batch(batch);
    check_lockstep(state);
    StepMetrics m;
    const std::array<bool, 2> act{view != ViewSel::Two, view != ViewSel::One};
    std::array<ViewUpdate, 2> u;
    std::array<Matrix, 2> other_key;  // CMC positives
    for (int v = 0; v < 2; ++v) {
        if (!act[v]) continue;
        const Matrix xq = augment(batch.x[v], hyper.augment[v], rng);
        const Matrix xk = augment(batch.x[v], hyper.augment[v], rng);
        u[v].query = forward(state.views[v].encoder.query, xq, true);
        u[v].key = embed(state.views[v].encoder.key, xk);
    }
    if (loss == LossKind::Cmc) {
        for (int v = 0; v < 2; ++v) {
            if (!act[v]) continue;
            const int o = 1 - v;
            other_key[v] = act[o] ? u[o].key
                                  : embed(state.views[o].encoder.key, augment(batch.x[o], hyper.augment[o], rng));
        }
    }
    std::array<Matrix, 2> push;
    for (int v = 0; v < 2; ++v) {
        if (!act[v]) {
            push[v] = embed(state.views[v].encoder.query, batch.x[v]);
            continue;
        }
        m.active[v] = true;
        const auto& q = state.views[v].queue;
        if (loss == LossKind::Cmc) {
            u[v].loss = cmc_cross_view(u[v].query.embeddings, other_key[v], state.views[1 - v].queue, hyper.tau);
        } else {
            const auto block = build_logits(u[v].query.embeddings, u[v].key, q, hyper.tau);
            if (loss == LossKind::UberNce) {
                const auto mask = uber_nce_mask(block, labels_for(batch.ids, labels), labels_for(q.ids(), labels));
                u[v].loss = mil_nce(block, mask);
            } else {
                u[v].loss = info_nce(block);
            }
        }
        m.loss[v] = u[v].loss.loss;
        push[v] = u[v].key;
    }
    for (int v = 0; v < 2; ++v)
        if (act[v]) apply_update(state.views[v], u[v], hyper);
    for (int v = 0; v < 2; ++v) state.views[v].queue.push_batch(push[v], batch.ids);
    ++state.step;
    return m;
}

std::vector<std::pair<std::string, double>> evaluate_state(const CoTrainState& state, const TwoViewDataset& data,
                                                           const EvalOptions& opts) {
    std::vector<int> ytr, yte;
    for (auto i : data.train) ytr.push_back(data.labels[i]);
    for (auto i : data.test) yte.push_back(data.labels[i]);
    const std::array<const Matrix*, 2> views{&data.view1, &data.view2};
    std::array<ProbeResult, 2> probe;
    std::array<Matrix, 2> sim;
    std::vector<std::pair<std::string, double>> out;
    std::array<RetrievalResult, 2> rr;
    // Tiny datasets skip the k values that exceed the gallery.
    std::vector<int> ks;
    for (int k : kDefaultRecallKs)
        if (static_cast<std::size_t>(k) <= data.train.size()) ks.push_back(k);
    for (int v = 0; v < 2; ++v) {
        const auto& enc = state.views[v].encoder.query;
        const Matrix ftr = extract_features(enc, gather_rows(*views[v], data.train), opts.layer);
        const Matrix fte = extract_features(enc, gather_rows(*views[v], data.test), opts.layer);
        probe[v] = linear_probe(ftr, ytr, fte, yte, data.spec.classes, opts.probe);
        sim[v] = matmul_bt(fte, ftr);
        rr[v] = retrieval_from_similarity(sim[v], yte, ytr, ks);
    }
    const auto fused_r = retrieval_from_similarity(two_stream_fuse(sim[0], sim[1]), yte, ytr, ks);
    const double fused_acc = accuracy_from_logits(two_stream_fuse(probe[0].test_logits, probe[1].test_logits), yte);
    out.emplace_back("probe_acc_v1", probe[0].accuracy);
    out.emplace_back("probe_acc_v2", probe[1].accuracy);
    out.emplace_back("probe_acc_fused", fused_acc);
    for (int k : ks) {
        const std::string kk = std::to_string(k);
        out.emplace_back("r@" + kk + "_v1", rr[0].at(k));
        out.emplace_back("r@" + kk + "_v2", rr[1].at(k));
        out.emplace_back("r@" + kk + "_fused", fused_r.at(k));
    }
    return out;
}

namespace {

struct EpochAccumulator {
    std::array<double, 2> loss_sum{0, 0};
    std::array<int, 2> loss_n{0, 0};
    std::array<std::size_t, 2> mined{0, 0};
    std::array<std::size_t, 2> mined_same{0, 0};
    std::array<int, 2> fallback{0, 0};

    void add(const StepMetrics& m) {
        for (int v = 0; v < 2; ++v) {
            if (m.active[v]) {
                loss_sum[v] += m.loss[v];
                ++loss_n[v];
            }
            if (m.mask_quality[v]) {
                mined[v] += m.mask_quality[v]->mined;
                mined_same[v] += m.mask_quality[v]->mined_same_class;
            }
            fallback[v] += m.fell_back[v];
        }
    }
};

}  // namespace

RunResult run_plan(const TrainPlan& plan, const TwoViewDataset& data, const RunHooks& hooks) {
    plan.validate();
    if (data.train.empty()) throw std::invalid_argument("run_plan: dataset has no training rows");
    RunResult res;
    res.state = init_state(plan, data.view1.cols(), data.view2.cols());
    Rng root(plan.seed);
    Rng order_rng = root.fork(20);
    Rng aug_rng = root.fork(21);
    const StepHyper hyper = step_hyper(plan);
    const LabelLookup labels(data.labels);

    auto emit = [&](int stage, const std::string& name, int epoch, const std::string& metric, double value) {
        MetricPoint p{stage, name, epoch, metric, value};
        if (hooks.on_metric) hooks.on_metric(p);
        res.history.push_back(std::move(p));
    };

    // Mask precision of each view's first and last CoCLR epochs.
    std::array<std::optional<double>, 2> first_precision, last_precision;

    for (std::size_t si = 0; si < plan.stages.size(); ++si) {
        const Stage& st = plan.stages[si];
        const int s = static_cast<int>(si);
        const std::string name = "s" + std::to_string(si) + "_" + to_string(st.loss) + "_" + to_string(st.view);
        for (int epoch = 1; epoch <= st.epochs; ++epoch) {
            std::vector<std::size_t> order = data.train;
            order_rng.shuffle(order);
            EpochAccumulator acc;
            for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(plan.batch_size)) {
                const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(plan.batch_size));
                const Batch batch = make_batch(data, std::span(order).subspan(b, e - b));
                StepMetrics m;
                if (st.loss == LossKind::CoClr) {
                    m = st.view == ViewSel::Both
                            ? simultaneous_step(res.state, batch, hyper, aug_rng, labels)
                            : coclr_step(res.state, batch, st.view == ViewSel::One ? 0 : 1, hyper, aug_rng, labels);
                } else {
                    m = instance_step(res.state, batch, st.loss, st.view, hyper, aug_rng, labels);
                }
                acc.add(m);
            }
            for (int v = 0; v < 2; ++v) {
                const std::string suffix = "_v" + std::to_string(v + 1);
                if (acc.loss_n[v] > 0) emit(s, name, epoch, "loss" + suffix, acc.loss_sum[v] / acc.loss_n[v]);
                if (acc.mined[v] > 0) {
                    const double prec = static_cast<double>(acc.mined_same[v]) / static_cast<double>(acc.mined[v]);
                    emit(s, name, epoch, "mask_precision" + suffix, prec);
                    if (!first_precision[v]) first_precision[v] = prec;
                    last_precision[v] = prec;
                }
                if (acc.fallback[v] > 0) emit(s, name, epoch, "fallback_steps" + suffix, acc.fallback[v]);
            }
            if (plan.eval.every_epochs > 0 && epoch % plan.eval.every_epochs == 0 && epoch != st.epochs)
                for (const auto& [k, v] : evaluate_state(res.state, data, plan.eval)) emit(s, name, epoch, k, v);
        }
        if (st.epochs > 0) {
            for (const auto& [k, v] : evaluate_state(res.state, data, plan.eval)) emit(s, name, st.epochs, k, v);
            if (hooks.on_stage_end) hooks.on_stage_end(s, res.state);
        }
    }

    // Averaged over the views that mined at all.
    double start = 0.0, end = 0.0;
    int n = 0;
    for (int v = 0; v < 2; ++v)
        if (first_precision[v]) {
            start += *first_precision[v];
            end += *last_precision[v];
            ++n;
        }
    if (n > 0) {
        const int last = static_cast<int>(plan.stages.size()) - 1;
        emit(last, "summary", 0, "mask_precision_start", start / n);
        emit(last, "summary", 0, "mask_precision_end", end / n);
    }
    return res;
}

}  // namespace coclr
