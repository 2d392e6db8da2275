// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ssd/continual.hpp"

using namespace ssd;

namespace {

TrainConfig small_train(std::size_t epochs = 20) {
    TrainConfig c;
    c.epochs_per_task = epochs;
    c.lr = 0.05;
    c.batch_size = 16;
    c.distill.n = 12;
    c.sampling_interval = 5;
    c.seed = 3;
    return c;
}

ModelConfig small_model(std::size_t classes) {
    ModelConfig m;
    m.hidden_widths = {40};
    m.k = {4};
    m.class_count = classes;
    return m;
}

std::vector<TaskDataset> small_tasks(std::size_t tasks, double spread = 0.2, std::uint64_t seed = 1) {
    return split_tasks(gen_synthetic(2 * tasks, 8, 30, spread, seed), tasks, 2, 0.2, seed);
}

ContinualState fresh_state(const TaskDataset& t, const ModelConfig& mc, std::uint64_t seed) {
    ContinualState s;
    s.student = init_model(mc.layer_specs(t.train.front().embedding.size()), mc.class_count, seed);
    return s;
}

}  // namespace

TEST(Fisher, NonNegativeAndMeanInvariant) {
    const auto data = gen_synthetic(3, 5, 8, 0.3, 2);
    const SdmlpModel m = init_model({{5, 10, 3}}, 3, 4);
    const FisherDiag f = estimate_fisher(m, data);
    for (double v : oracle::flatten(f.weights)) EXPECT_GE(v, 0.0);
    auto doubled = data;
    doubled.insert(doubled.end(), data.begin(), data.end());
    const Vec a = oracle::flatten(f.weights);
    const Vec b = oracle::flatten(estimate_fisher(m, doubled).weights);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * (1.0 + std::abs(a[i])));
    EXPECT_THROW(estimate_fisher(m, {}), InvalidArgument);
}

TEST(Fisher, ConfidentCorrectModelIsNearZero) {
    SdmlpModel m = init_model({{2, 2, 2}}, 2, 1);
    for (double& v : m.output.values()) v = 0.0;
    m.output(0, 0) = m.output(0, 1) = 200.0;
    const std::vector<Sample> data{{{1, 2}, 0}, {{3, 1}, 0}};
    for (double v : oracle::flatten(estimate_fisher(m, data).weights)) EXPECT_LT(v, 1e-30);
}

TEST(Fisher, MatchesExplicitExpectation) {
    // sum_y p_y * g_y^2, with the per-label CE gradient from backward()
    const auto data = gen_synthetic(2, 3, 4, 0.3, 8);
    const SdmlpModel m = init_model({{3, 6, 2}}, 2, 6, false);
    Vec want(oracle::flatten(Gradients::zeros_like(m)).size(), 0.0);
    for (const auto& s : data) {
        const auto t = forward(m, s.embedding);
        const Vec p = oracle::softmax(t.logits, 1.0);
        for (std::size_t y = 0; y < 2; ++y) {
            Vec gl = p;
            gl[y] -= 1.0;
            const Vec g = oracle::flatten(backward(m, t, gl));
            for (std::size_t i = 0; i < g.size(); ++i) want[i] += p[y] * g[i] * g[i] / data.size();
        }
    }
    const Vec got = oracle::flatten(estimate_fisher(m, data).weights);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
}

TEST(EwcPenalty, Examples) {
    SdmlpModel m = init_model({{1, 1, 1}}, 1, 1);
    const EwcAnchor same{m, {Gradients::zeros_like(m)}};
    EXPECT_EQ(ewc_penalty(m, std::span(&same, 1), 5.0).value, 0.0);

    EwcAnchor a{m, {Gradients::zeros_like(m)}};
    a.params.hidden[0](0, 0) = m.hidden[0](0, 0) - 2.0;
    a.fisher.weights.hidden[0](0, 0) = 1.0;
    const auto pg = ewc_penalty(m, std::span(&a, 1), 1.0);
    EXPECT_DOUBLE_EQ(pg.value, 2.0);
    EXPECT_DOUBLE_EQ(pg.grad.hidden[0](0, 0), 2.0);
}

TEST(EwcPenalty, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto nc = oracle::random_net(seed);
        std::vector<EwcAnchor> anchors;
        for (int k = 0; k < 2; ++k) {
            EwcAnchor a{init_model(nc.model.specs, nc.model.class_count, seed + 50 + k), {Gradients::zeros_like(nc.model)}};
            for (auto& w : a.fisher.weights.hidden)
                for (double& v : w.values()) v = u(rng);
            for (double& v : a.fisher.weights.output.values()) v = u(rng);
            anchors.push_back(std::move(a));
        }
        const double lam = 0.5 + static_cast<double>(seed);
        const auto pg = ewc_penalty(nc.model, anchors, lam);
        const Vec num = oracle::central_difference(
            nc.model, [&](const SdmlpModel& m) { return ewc_penalty(m, anchors, lam).value; });
        EXPECT_LT(oracle::relative_error(oracle::flatten(pg.grad), num), 1e-4);
    }
}

TEST(RunTask, FirstTaskLearnsSeparableData) {
    const auto tasks = split_tasks(gen_synthetic(2, 16, 60, 0.1, 7), 1, 2, 0.2, 7);
    const auto mc = small_model(2);
    auto state = fresh_state(tasks[0], mc, 1);
    const auto logs = run_task(state, tasks[0], small_train(30));
    EXPECT_GT(evaluate(state.student, tasks[0].train), 0.95);
    for (const auto& l : logs.losses) {
        EXPECT_EQ(l.loss.total, l.loss.ce);
        EXPECT_EQ(l.loss.kd, 0.0);
    }
    EXPECT_TRUE(state.teacher.has_value());
    EXPECT_EQ(state.task_index, 1u);
    EXPECT_EQ(state.prev_selection->layers[0].size(), 12u);
}

TEST(RunTask, AlphaOneLogsKdButTotalIsCe) {
    const auto tasks = small_tasks(2);
    auto cfg = small_train(6);
    cfg.distill.alpha = 1.0;
    auto state = fresh_state(tasks[0], small_model(4), 2);
    run_task(state, tasks[0], cfg);
    const auto logs = run_task(state, tasks[1], cfg);
    bool any_kd = false;
    for (const auto& l : logs.losses) {
        EXPECT_EQ(l.loss.total, l.loss.ce);
        any_kd = any_kd || l.loss.kd_logits > 0.0;
    }
    EXPECT_TRUE(any_kd);
}

TEST(RunTask, TeacherIsFrozenDuringTask) {
    const auto tasks = small_tasks(2);
    auto state = fresh_state(tasks[0], small_model(4), 2);
    run_task(state, tasks[0], small_train(5));
    const SdmlpModel teacher = *state.teacher;
    EXPECT_EQ(teacher, state.student);
    std::size_t checks = 0;
    // progress fires at every sampling epoch, mid-task
    run_task(state, tasks[1], small_train(10), [&](const std::string&) {
        EXPECT_EQ(*state.teacher, teacher);
        ++checks;
    });
    EXPECT_EQ(checks, 3u);
    EXPECT_NE(state.student, teacher);
    EXPECT_EQ(*state.teacher, state.student);
}

TEST(RunTask, RejectsInconsistentConfig) {
    const auto tasks = small_tasks(1);
    auto state = fresh_state(tasks[0], small_model(2), 2);
    auto cfg = small_train(2);
    cfg.distill.n = 2;  // below k
    EXPECT_THROW(run_task(state, tasks[0], cfg), InvalidArgument);
    cfg.distill.n = 41;  // above r
    EXPECT_THROW(run_task(state, tasks[0], cfg), InvalidArgument);
    cfg.distill_enabled = false;  // the selection then only feeds metrics
    EXPECT_NO_THROW(run_task(state, tasks[0], cfg));
}

TEST(RunSequence, SingleTaskHasNoBwt) {
    const auto r = run_sequence(small_tasks(1), small_model(2), small_train(3));
    EXPECT_EQ(r.accuracy.tasks(), 1u);
    EXPECT_FALSE(r.mean_bwt.has_value());
}

TEST(RunSequence, BitwiseDeterministic) {
    const auto tasks = small_tasks(3);
    const auto a = run_sequence(tasks, small_model(6), small_train(8));
    const auto b = run_sequence(tasks, small_model(6), small_train(8));
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.task_models, b.task_models);
    ASSERT_EQ(a.losses.size(), b.losses.size());
    for (std::size_t i = 0; i < a.losses.size(); ++i) EXPECT_EQ(a.losses[i].loss.total, b.losses[i].loss.total);
    auto other = small_train(8);
    other.seed = 4;
    EXPECT_NE(run_sequence(tasks, small_model(6), other).task_models, a.task_models);
}

TEST(RunSequence, DiagonalIsMeasuredAtTaskEnd) {
    const auto tasks = small_tasks(3);
    const auto r = run_sequence(tasks, small_model(6), small_train(8));
    std::vector<std::size_t> seen;
    for (std::size_t i = 0; i < 3; ++i) {
        seen.insert(seen.end(), tasks[i].class_set.begin(), tasks[i].class_set.end());
        EXPECT_EQ(r.accuracy.at(i, i), evaluate(r.task_models[i], tasks[i].val, seen));
        for (std::size_t j = 0; j <= i; ++j)
            EXPECT_EQ(r.accuracy.at(i, j), evaluate(r.task_models[i], tasks[j].val, seen));
    }
    EXPECT_EQ(*r.mean_bwt, bwt(r.accuracy));
}

TEST(RunSequence, AlphaOneMatchesPlainTraining) {
    const auto tasks = small_tasks(3);
    auto kd = small_train(6);
    kd.distill.alpha = 1.0;
    auto plain = small_train(6);
    plain.distill_enabled = false;
    const auto a = run_sequence(tasks, small_model(6), kd);
    const auto b = run_sequence(tasks, small_model(6), plain);
    EXPECT_EQ(a.task_models, b.task_models);
    EXPECT_EQ(a.accuracy, b.accuracy);
    for (const auto& l : b.losses) EXPECT_EQ(l.loss.total, l.loss.ce);
}

TEST(RunSequence, RejectsOverlappingClasses) {
    auto tasks = small_tasks(2);
    tasks[1].class_set = tasks[0].class_set;
    EXPECT_THROW(run_sequence(tasks, small_model(4), small_train(2)), InvalidArgument);
}

TEST(RunSequence, LogsHaveExpectedShape) {
    const auto tasks = small_tasks(3);
    const auto cfg = small_train(10);
    const auto r = run_sequence(tasks, small_model(6), cfg);
    EXPECT_EQ(r.losses.size(), 30u);
    EXPECT_EQ(r.entropy.size(), 6u);
    std::size_t kl = 0, cos = 0, jac = 0;
    for (const auto& t : r.traces) {
        kl += t.metric == "retention_kl";
        cos += t.metric == "cosine";
        jac += t.metric == "jaccard";
        if (t.metric == "retention_kl" || t.metric == "cosine") {
            EXPECT_GE(t.task, 1u);
        }
    }
    // sampling epochs 1, 5, 10
    EXPECT_EQ(kl, 2u * 3u);
    EXPECT_EQ(jac, 3u * 2u);
    EXPECT_EQ(cos, 2u);
    EXPECT_EQ(r.heatmap.size(), 3u * 3u * 4u);
    EXPECT_EQ(r.neuron_stats.size(), 3u * 40u);
}

TEST(RunSequence, VariantsRunAndKeepInvariants) {
    const auto tasks = small_tasks(3);
    for (int v = 0; v < 6; ++v) {
        auto cfg = small_train(4);
        if (v == 0) cfg.distill.index_alignment = IndexAlignment::independent;
        if (v == 1) cfg.distill.hidden_source = HiddenSource::post_mask;
        if (v == 2) cfg.distill.kl_direction = KlDirection::teacher_first;
        if (v == 3) cfg.stats_window = StatsWindow::cumulative;
        if (v == 4) cfg.distill.n.reset();
        if (v == 5) {
            cfg.ewc_enabled = true;
            cfg.ewc_lambda = 10.0;
            cfg.ewc_anchors = EwcAnchorMode::all;
        }
        auto mc = small_model(6);
        mc.hidden_widths = {20, 16};
        const auto r = run_sequence(tasks, mc, cfg);
        for (const auto& m : r.task_models) EXPECT_LE(constraint_violation(m), 1e-6) << "variant " << v;
        for (const auto& l : r.losses) EXPECT_TRUE(std::isfinite(l.loss.total));
        if (v == 5) {
            bool pen = false;
            for (const auto& l : r.losses) pen = pen || l.ewc > 0.0;
            EXPECT_TRUE(pen);
        }
    }
}
