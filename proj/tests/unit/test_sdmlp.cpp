// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "ssd/sdmlp.hpp"

using namespace ssd;

namespace {

void expect_invariants(const SdmlpModel& m) {
    for (const auto& w : m.hidden) {
        for (std::size_t r = 0; r < w.rows(); ++r) {
            double n2 = 0.0;
            for (double v : w.row(r)) {
                EXPECT_GE(v, 0.0);
                n2 += v * v;
            }
            EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-6);
        }
    }
    EXPECT_LE(constraint_violation(m), 1e-6);
}

std::size_t nonzeros(const Vec& v) {
    std::size_t n = 0;
    for (double x : v) n += x != 0.0;
    return n;
}

Vec random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Vec v(n);
    for (double& x : v) x = g(rng);
    return v;
}

}  // namespace

TEST(InitModel, InvariantsAndDeterminism) {
    const std::vector<LayerSpec> specs{{2, 4, 2}};
    const SdmlpModel a = init_model(specs, 2, 7);
    expect_invariants(a);
    EXPECT_EQ(a, init_model(specs, 2, 7));
    EXPECT_NE(init_model(specs, 2, 1).hidden[0], init_model(specs, 2, 2).hidden[0]);
    for (double v : a.output.values()) EXPECT_GE(v, 0.0);
}

TEST(InitModel, RejectsBadSpecs) {
    EXPECT_THROW(init_model({}, 2, 1), InvalidArgument);
    EXPECT_THROW(init_model({{2, 4, 0}}, 2, 1), InvalidArgument);
    EXPECT_THROW(init_model({{2, 4, 5}}, 2, 1), InvalidArgument);
    EXPECT_THROW(init_model({{2, 4, 2}, {3, 4, 2}}, 2, 1), InvalidArgument);
    EXPECT_THROW(init_model({{2, 4, 2}}, 0, 1), InvalidArgument);
}

TEST(Forward, IdentityRowsSelectAlignedNeuron) {
    SdmlpModel m = init_model({{3, 3, 1}}, 2, 1);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) m.hidden[0](r, c) = r == c ? 1.0 : 0.0;
    const auto t = forward(m, Vec{5, 0.1, 0.2});
    EXPECT_EQ(t.layers[0].active, (IndexSet{0}));
}

TEST(Forward, FullKIsIdentityMask) {
    const SdmlpModel m = init_model({{4, 6, 6}}, 3, 2);
    std::mt19937_64 rng(1);
    const auto t = forward(m, random_vec(rng, 4));
    EXPECT_EQ(t.layers[0].post, t.layers[0].pre);
}

TEST(Forward, ExactlyKNonzerosPerLayer) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto nc = oracle::random_net(static_cast<std::uint64_t>(trial));
        // inputs are arbitrary signs; non-negative rows can still give negative pre-activations,
        // so positive inputs are used to keep every selected unit strictly nonzero
        Vec x = random_vec(rng, nc.model.input_dim());
        for (double& v : x) v = std::abs(v) + 0.01;
        const auto t = forward(nc.model, x);
        for (std::size_t l = 0; l < nc.model.depth(); ++l) {
            EXPECT_EQ(t.layers[l].active.size(), nc.model.specs[l].k);
            EXPECT_EQ(nonzeros(t.layers[l].post), nc.model.specs[l].k);
            EXPECT_EQ(t.layers[l].active, oracle::brute_topk(t.layers[l].pre, nc.model.specs[l].k));
        }
    }
}

TEST(Forward, RejectsWrongInput) {
    const SdmlpModel m = init_model({{3, 4, 2}}, 2, 1);
    EXPECT_THROW(forward(m, Vec{1, 2}), ShapeMismatch);
    EXPECT_THROW(forward(m, Vec{1, NAN, 2}), InvalidArgument);
}

TEST(Backward, ZeroOutputGradientIsZero) {
    const SdmlpModel m = init_model({{4, 6, 2}, {6, 5, 3}}, 3, 3);
    const auto t = forward(m, Vec{1, 2, 3, 4});
    EXPECT_TRUE(backward(m, t, Vec(3, 0.0)).all_zero());
}

TEST(Backward, InactiveNeuronsGetNoGradient) {
    const SdmlpModel m = init_model({{4, 8, 3}}, 3, 5);
    const auto t = forward(m, Vec{0.3, 1, 2, 0.5});
    const auto g = backward(m, t, Vec{0.2, -0.7, 0.5});
    for (std::size_t r = 0; r < 8; ++r) {
        const bool active = std::binary_search(t.layers[0].active.begin(), t.layers[0].active.end(), r);
        if (active) continue;
        for (double v : g.hidden[0].row(r)) EXPECT_EQ(v, 0.0);
    }
}

TEST(Backward, CrossEntropyMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto nc = oracle::random_net(seed, 1);
        const auto& s = nc.samples[0];
        const auto t = forward(nc.model, s.embedding);
        std::vector<std::vector<std::size_t>> masks;
        for (const auto& l : t.layers) masks.push_back(l.active);
        Vec gl = oracle::softmax(t.logits, 1.0);
        gl[s.label] -= 1.0;
        const Vec analytic = oracle::flatten(backward(nc.model, t, gl));
        const Vec numeric = oracle::central_difference(nc.model, [&](const SdmlpModel& m) {
            return oracle::ce(oracle::frozen_forward(m, s.embedding, masks).logits, s.label);
        });
        EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-4) << "seed " << seed;
    }
}

TEST(Projection, HandExampleAndRevival) {
    SdmlpModel m = init_model({{2, 2, 1}}, 2, 9);
    m.hidden[0](0, 0) = -1.0;
    m.hidden[0](0, 1) = 2.0;
    m.hidden[0](1, 0) = -1.0;
    m.hidden[0](1, 1) = -1.0;
    const SdmlpModel p = project_constraints(m);
    EXPECT_EQ(p.hidden[0](0, 0), 0.0);
    EXPECT_EQ(p.hidden[0](0, 1), 1.0);
    EXPECT_EQ(p.revivals, 1u);
    expect_invariants(p);
    // revival is seeded: same model, same revived row
    EXPECT_EQ(project_constraints(m), p);
}

TEST(Projection, ValidModelIsFixedPoint) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = oracle::random_net(seed).model;
        EXPECT_EQ(project_constraints(m), m);
        EXPECT_EQ(project_constraints(project_constraints(m)), project_constraints(m));
    }
}

TEST(SgdStep, ZeroGradientsLeaveModelUnchanged) {
    const SdmlpModel m = init_model({{5, 7, 2}}, 3, 4);
    EXPECT_EQ(sgd_step(m, Gradients::zeros_like(m), 0.1), m);
}

TEST(SgdStep, NegativeStepClampsToExactZero) {
    const SdmlpModel m = init_model({{3, 4, 2}}, 2, 6);
    Gradients g = Gradients::zeros_like(m);
    g.hidden[0](1, 2) = m.hidden[0](1, 2) / 0.1 + 5.0;  // overshoots zero
    const SdmlpModel n = sgd_step(m, g, 0.1);
    EXPECT_EQ(n.hidden[0](1, 2), 0.0);
    expect_invariants(n);
}

TEST(SgdStep, LongRandomRunKeepsInvariants) {
    std::mt19937_64 rng(8);
    SdmlpModel m = init_model({{6, 8, 3}, {8, 5, 2}}, 4, 1);
    for (int step = 0; step < 300; ++step) {
        Gradients g = Gradients::zeros_like(m);
        for (auto& w : g.hidden)
            for (double& v : w.values()) v = std::normal_distribution<double>(0.0, 3.0)(rng);
        m = sgd_step(std::move(m), g, 0.5);
        for (const auto& w : m.hidden)
            for (double v : w.values()) ASSERT_GE(v, 0.0);
        ASSERT_LE(constraint_violation(m), 1e-6);
    }
}

TEST(SgdStep, RejectsBadArguments) {
    const SdmlpModel m = init_model({{3, 4, 2}}, 2, 6);
    EXPECT_THROW(sgd_step(m, Gradients::zeros_like(m), 0.0), InvalidArgument);
    const SdmlpModel other = init_model({{3, 5, 2}}, 2, 6);
    EXPECT_THROW(sgd_step(m, Gradients::zeros_like(other), 0.1), ShapeMismatch);
}

TEST(Snapshot, IsolatedFromStudentUpdates) {
    SdmlpModel student = init_model({{4, 6, 2}}, 2, 3);
    const SdmlpModel teacher = snapshot(student);
    const Vec x{1, 2, 0.5, 0.1};
    const auto before = forward(teacher, x).logits;
    std::mt19937_64 rng(2);
    for (int i = 0; i < 10; ++i) {
        Gradients g = Gradients::zeros_like(student);
        for (double& v : g.hidden[0].values()) v = std::normal_distribution<double>(0.0, 1.0)(rng);
        student = sgd_step(std::move(student), g, 0.2);
    }
    EXPECT_NE(student, teacher);
    EXPECT_EQ(snapshot(snapshot(teacher)), snapshot(teacher));
    EXPECT_EQ(forward(teacher, x).logits, before);
}

TEST(Checkpoint, RoundTripIsExact) {
    SdmlpModel m = init_model({{5, 7, 3}, {7, 4, 2}}, 3, 12, false);
    m.revivals = 4;
    std::stringstream ss;
    save_checkpoint(m, ss);
    EXPECT_EQ(load_checkpoint(ss), m);
}

TEST(Checkpoint, RejectsCorruptInput) {
    const SdmlpModel m = init_model({{3, 4, 2}}, 2, 1);
    std::stringstream ss;
    save_checkpoint(m, ss);
    const std::string bytes = ss.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
    EXPECT_THROW(load_checkpoint(truncated), MalformedFile);
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream wrong_magic(bad);
    EXPECT_THROW(load_checkpoint(wrong_magic), MalformedFile);
}
