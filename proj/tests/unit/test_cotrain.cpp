#include <doctest.h>

#include <numeric>

#include "coclr/cotrain.hpp"
#include "test_util.hpp"

using namespace coclr;

namespace {

TwoViewDataset tiny_data(std::uint64_t seed = 0) {
    DatasetSpec s;
    s.classes = 4;
    s.per_class = 6;
    s.signal_dims = 4;
    s.nuisance_dims = 6;
    s.view2_dims = 5;
    s.seed = seed;
    return generate(s);
}

TrainPlan tiny_plan() {
    TrainPlan p;
    p.stages = parse_stages("infonce:both:2,coclr:1:2,coclr:2:2");
    p.k = 2;
    p.queue_capacity = 12;
    p.batch_size = 4;
    p.backbone = {8};
    p.head = {6, 4};
    p.eval.probe.steps = 20;
    return p;
}

bool same_view(const ViewState& a, const ViewState& b) {
    return a.encoder.query == b.encoder.query && a.encoder.key == b.encoder.key && a.queue == b.queue &&
           a.adam.t == b.adam.t && flatten(a.adam.m) == flatten(b.adam.m) && flatten(a.adam.v) == flatten(b.adam.v);
}

bool same_state(const CoTrainState& a, const CoTrainState& b) {
    return a.step == b.step && same_view(a.views[0], b.views[0]) && same_view(a.views[1], b.views[1]);
}

Batch batch_of(const TwoViewDataset& d, std::size_t start, std::size_t n) {
    std::vector<std::size_t> rows(d.train.begin() + static_cast<std::ptrdiff_t>(start),
                                  d.train.begin() + static_cast<std::ptrdiff_t>(start + n));
    return make_batch(d, rows);
}

// State after a few InfoNCE steps so the queues hold real keys.
CoTrainState warm_state(const TrainPlan& plan, const TwoViewDataset& d, Rng& rng) {
    CoTrainState s = init_state(plan, d.view1.cols(), d.view2.cols());
    const StepHyper h = step_hyper(plan);
    for (std::size_t b = 0; b < 3; ++b) instance_step(s, batch_of(d, 4 * b, 4), LossKind::InfoNce, ViewSel::Both, h, rng);
    return s;
}

}  // namespace

TEST_CASE("stage parsing and default schedule") {
    const auto st = parse_stages("infonce:both:60, coclr:1:20,ubernce:2:3");
    REQUIRE(st.size() == 3);
    CHECK(st[1] == Stage{LossKind::CoClr, ViewSel::One, 20});
    CHECK(parse_stages(format_stages(st)) == st);
    CHECK_THROWS_AS(parse_stages("coclr:1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_stages("moco:1:3"), std::invalid_argument);
    CHECK_THROWS_AS(parse_stages("coclr:3:3"), std::invalid_argument);
    CHECK_THROWS_AS(parse_stages("coclr:1:3x"), std::invalid_argument);

    const TrainPlan p = default_plan();
    CHECK(format_stages(p.stages) == "infonce:both:60,coclr:1:20,coclr:2:20,coclr:1:20,coclr:2:20");
    CHECK(p.k == 5);
    CHECK(p.tau == 0.07);
    CHECK(p.momentum == 0.999);
    CHECK_NOTHROW(p.validate());
    const TrainPlan sim = default_plan(LossKind::CoClr, Granularity::Simultaneous);
    CHECK(format_stages(sim.stages) == "infonce:both:60,coclr:both:20,coclr:both:20");
    CHECK_NOTHROW(sim.validate());
    CHECK(default_plan(LossKind::UberNce).stages[0].loss == LossKind::UberNce);
}

TEST_CASE("plan validation names the offending field") {
    auto message = [](const TrainPlan& p) {
        try {
            p.validate();
        } catch (const std::invalid_argument& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    TrainPlan p = tiny_plan();
    p.stages = parse_stages("coclr:1:2");
    CHECK(message(p).rfind("plan.stages[0]", 0) == 0);
    p.stages = parse_stages("infonce:1:2,coclr:2:2");
    CHECK(message(p).rfind("plan.stages[1]", 0) == 0);
    p.stages = parse_stages("infonce:both:1,coclr:both:2");
    CHECK(message(p).rfind("plan.stages[1]", 0) == 0);
    p = tiny_plan();
    p.k = 12;
    CHECK(message(p).rfind("plan.k", 0) == 0);
    p = tiny_plan();
    p.batch_size = 13;
    CHECK(message(p).rfind("plan.batch_size", 0) == 0);
    p = tiny_plan();
    p.tau = 0.0;
    CHECK(message(p).rfind("plan.tau", 0) == 0);
    p = tiny_plan();
    p.augment[1].dropout = 1.0;
    CHECK(message(p).rfind("plan.augment2.dropout", 0) == 0);
    // A zero-epoch coclr stage needs no initialization.
    p = tiny_plan();
    p.stages = parse_stages("coclr:1:0");
    CHECK(message(p).empty());
}

TEST_CASE("K = 0 reduces to an InfoNCE step bit for bit") {
    const auto d = tiny_data();
    TrainPlan plan = tiny_plan();
    Rng r0(7);
    const CoTrainState base = warm_state(plan, d, r0);
    StepHyper h = step_hyper(plan);
    h.k = 0;
    for (int active = 0; active < 2; ++active) {
        CoTrainState a = base, b = base;
        Rng ra(11), rb(11);
        const Batch batch = batch_of(d, 12, 4);
        const StepMetrics ma = coclr_step(a, batch, active, h, ra);
        const StepMetrics mb = instance_step(b, batch, LossKind::InfoNce, active == 0 ? ViewSel::One : ViewSel::Two, h, rb);
        CHECK(ma.loss[active] == mb.loss[active]);
        CHECK(!ma.mined[active]);
        CHECK(same_state(a, b));
    }
}

TEST_CASE("short queue falls back to InfoNCE") {
    const auto d = tiny_data();
    const TrainPlan plan = tiny_plan();
    CoTrainState s = init_state(plan, d.view1.cols(), d.view2.cols());
    const StepHyper h = step_hyper(plan);
    Rng rng(1);
    StepTrace tr;
    const StepMetrics m = coclr_step(s, batch_of(d, 0, 2), 0, h, rng, {}, &tr);
    CHECK(m.fell_back[0]);
    CHECK(!m.mined[0]);
    CHECK(tr.mask == PositiveMask::self_only(2, 1));
    // Fill 2 < k + 1 = 3 still falls back, fill 4 mines.
    CHECK(coclr_step(s, batch_of(d, 2, 2), 0, h, rng).fell_back[0]);
    const StepMetrics mined = coclr_step(s, batch_of(d, 4, 2), 0, h, rng);
    CHECK(mined.mined[0]);
    CHECK(!mined.fell_back[0]);
}

TEST_CASE("frozen view is untouched and the key follows the momentum rule") {
    const auto d = tiny_data();
    const TrainPlan plan = tiny_plan();
    Rng rng(3);
    CoTrainState s = warm_state(plan, d, rng);
    const StepHyper h = step_hyper(plan);
    const ViewState frozen = s.views[1];
    for (int step = 0; step < 100; ++step) {
        const std::size_t start = (4 * static_cast<std::size_t>(step)) % (d.train.size() - 4);
        const MlpParams key_before = s.views[0].encoder.key;
        StepTrace tr;
        coclr_step(s, batch_of(d, start, 4), 0, h, rng, {}, &tr);
        // Other-view features are the frozen query encoder on the raw input.
        CHECK(tr.other_view_features == embed(frozen.encoder.query, batch_of(d, start, 4).x[1]));
        const EncoderPair expect = momentum_update(EncoderPair{s.views[0].encoder.query, key_before, plan.momentum});
        REQUIRE(s.views[0].encoder.key == expect.key);
        REQUIRE(s.views[1].encoder.query == frozen.encoder.query);
        REQUIRE(s.views[1].encoder.key == frozen.encoder.key);
        REQUIRE(s.views[1].adam.t == frozen.adam.t);
    }
}

TEST_CASE("mask comes from the other view's queue") {
    const auto d = tiny_data();
    const TrainPlan plan = tiny_plan();
    Rng rng(4);
    CoTrainState s = warm_state(plan, d, rng);
    const StepHyper h = step_hyper(plan);
    for (int active = 0; active < 2; ++active) {
        const FeatureQueue other_before = s.views[1 - active].queue;
        const FeatureQueue own_before = s.views[active].queue;
        StepTrace tr;
        const Batch batch = batch_of(d, 4, 4);
        const StepMetrics m = coclr_step(s, batch, active, h, rng, d.labels, &tr);
        CHECK(tr.mask == build_mask(similarity_to_queue(tr.other_view_features, other_before), 2));
        REQUIRE(m.mask_quality[active].has_value());
        std::vector<int> ql, kl;
        for (auto id : batch.ids) ql.push_back(d.labels[static_cast<std::size_t>(id)]);
        for (auto id : own_before.ids()) kl.push_back(d.labels[static_cast<std::size_t>(id)]);
        CHECK(m.mask_quality[active]->precision == mask_quality(tr.mask, ql, kl).precision);
    }
}

TEST_CASE("queues stay in lockstep") {
    const auto d = tiny_data();
    const TrainPlan plan = tiny_plan();
    Rng rng(5);
    CoTrainState s = init_state(plan, d.view1.cols(), d.view2.cols());
    const StepHyper h = step_hyper(plan);
    for (int step = 0; step < 20; ++step) {
        const Batch b = batch_of(d, static_cast<std::size_t>(step % 4) * 3, 3);
        switch (step % 4) {
            case 0: instance_step(s, b, LossKind::InfoNce, ViewSel::One, h, rng); break;
            case 1: coclr_step(s, b, 1, h, rng); break;
            case 2: simultaneous_step(s, b, h, rng); break;
            default: instance_step(s, b, LossKind::Cmc, ViewSel::Two, h, rng); break;
        }
        REQUIRE(s.views[0].queue.fill() == s.views[1].queue.fill());
        REQUIRE(s.views[0].queue.cursor() == s.views[1].queue.cursor());
        REQUIRE(s.views[0].queue.ids() == s.views[1].queue.ids());
    }
    s.views[0].queue.push_batch(Matrix(1, 4), std::vector<std::int64_t>{0});
    CHECK_THROWS_AS(coclr_step(s, batch_of(d, 0, 2), 0, h, rng), std::logic_error);
}

TEST_CASE("simultaneous step equals two coclr steps from the same snapshot") {
    const auto d = tiny_data();
    const TrainPlan plan = tiny_plan();
    Rng warm(6);
    const CoTrainState base = warm_state(plan, d, warm);
    const StepHyper h = step_hyper(plan);
    const Batch batch = batch_of(d, 8, 4);

    CoTrainState sim = base;
    Rng rs(9);
    const StepMetrics ms = simultaneous_step(sim, batch, h, rs);

    CoTrainState a = base, b = base;
    Rng ra(9);
    const StepMetrics ma = coclr_step(a, batch, 0, h, ra);
    // View 2's augmentations follow view 1's in the shared stream.
    Rng rb(9);
    augment(batch.x[0], h.augment[0], rb);
    augment(batch.x[0], h.augment[0], rb);
    const StepMetrics mb = coclr_step(b, batch, 1, h, rb);

    CHECK(ms.loss[0] == ma.loss[0]);
    CHECK(ms.loss[1] == mb.loss[1]);
    CHECK(sim.views[0].encoder.query == a.views[0].encoder.query);
    CHECK(sim.views[0].encoder.key == a.views[0].encoder.key);
    CHECK(sim.views[1].encoder.query == b.views[1].encoder.query);
    CHECK(sim.views[1].encoder.key == b.views[1].encoder.key);
    CHECK(sim.views[0].queue == a.views[0].queue);
    CHECK(sim.views[1].queue == b.views[1].queue);
}

TEST_CASE("instance losses") {
    const auto d = tiny_data();
    const TrainPlan plan = tiny_plan();
    Rng rng(8);
    CoTrainState s = warm_state(plan, d, rng);
    const StepHyper h = step_hyper(plan);
    CHECK_THROWS_AS(instance_step(s, batch_of(d, 0, 4), LossKind::UberNce, ViewSel::Both, h, rng), std::invalid_argument);
    CHECK_THROWS_AS(instance_step(s, batch_of(d, 0, 4), LossKind::CoClr, ViewSel::Both, h, rng), std::invalid_argument);
    const StepMetrics m = instance_step(s, batch_of(d, 0, 4), LossKind::UberNce, ViewSel::Both, h, rng, d.labels);
    CHECK(m.active[0]);
    CHECK(m.active[1]);
    CHECK(std::isfinite(m.loss[0]));
    const StepMetrics c = instance_step(s, batch_of(d, 4, 4), LossKind::Cmc, ViewSel::One, h, rng);
    CHECK(c.active[0]);
    CHECK(!c.active[1]);
    CHECK(c.loss[0] > 0.0);
}

TEST_CASE("run_plan: zero epochs, determinism, label independence") {
    const auto d = tiny_data();
    TrainPlan plan = tiny_plan();
    plan.stages = parse_stages("infonce:both:0,coclr:1:0");
    const RunResult idle = run_plan(plan, d);
    CHECK(idle.history.empty());
    CHECK(same_state(idle.state, init_state(plan, d.view1.cols(), d.view2.cols())));

    plan = tiny_plan();
    std::vector<int> ends;
    RunHooks hooks;
    hooks.on_stage_end = [&](int s, const CoTrainState&) { ends.push_back(s); };
    const RunResult a = run_plan(plan, d, hooks);
    const RunResult b = run_plan(plan, d);
    CHECK(ends == std::vector<int>{0, 1, 2});
    CHECK(a.history == b.history);
    CHECK(same_state(a.state, b.state));

    const auto has = [&](const std::string& metric) {
        return std::any_of(a.history.begin(), a.history.end(), [&](const MetricPoint& p) { return p.metric == metric; });
    };
    CHECK(has("loss_v1"));
    CHECK(has("probe_acc_fused"));
    CHECK(has("mask_precision_start"));
    CHECK(has("r@1_v2"));

    // Scrambled labels change diagnostics only: the checkpoints are identical.
    TwoViewDataset scrambled = d;
    for (auto& l : scrambled.labels) l = (l * 3 + 1) % d.spec.classes;
    const RunResult c = run_plan(plan, scrambled);
    for (int v = 0; v < 2; ++v) {
        CHECK(encode_params(c.state.views[v].encoder.query) == encode_params(a.state.views[v].encoder.query));
        CHECK(encode_params(c.state.views[v].encoder.key) == encode_params(a.state.views[v].encoder.key));
        CHECK(encode_queue(c.state.views[v].queue) == encode_queue(a.state.views[v].queue));
    }

    plan.seed = 1;
    CHECK(!same_state(run_plan(plan, d).state, a.state));
}

TEST_CASE("evaluate_state keys") {
    DatasetSpec spec = tiny_data().spec;
    spec.train_fraction = 0.66;
    const auto d = generate(spec);
    REQUIRE(d.train.size() == 16);
    const TrainPlan plan = tiny_plan();
    const CoTrainState s = init_state(plan, d.view1.cols(), d.view2.cols());
    const auto m = evaluate_state(s, d, plan.eval);
    std::vector<std::string> keys;
    for (const auto& [k, v] : m) {
        keys.push_back(k);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(keys.front() == "probe_acc_v1");
    // 16 train rows: R@20 is skipped.
    CHECK(std::find(keys.begin(), keys.end(), "r@10_fused") != keys.end());
    CHECK(std::find(keys.begin(), keys.end(), "r@20_v1") == keys.end());
}
