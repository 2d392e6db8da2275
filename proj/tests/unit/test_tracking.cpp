// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ssd/tracking.hpp"

using namespace ssd;

namespace {

ForwardTrace fake_trace(std::size_t width, IndexSet active) {
    ForwardTrace t;
    LayerTrace l;
    l.pre.assign(width, 0.0);
    l.post.assign(width, 0.0);
    for (auto a : active) l.pre[a] = l.post[a] = 1.0;
    l.active = std::move(active);
    t.layers.push_back(std::move(l));
    return t;
}

ActivationStats stats_with_counts(std::vector<std::uint64_t> counts, std::uint64_t n, std::size_t k) {
    ActivationStats s;
    s.counts = {std::move(counts)};
    s.k = {k};
    s.total_samples = n;
    return s;
}

double h2(double p) {
    if (p == 0.0 || p == 1.0) return 0.0;
    return -p * std::log2(p) - (1 - p) * std::log2(1 - p);
}

}  // namespace

TEST(RecordBatch, CountsActiveNeurons) {
    const SdmlpModel m = init_model({{2, 4, 2}}, 2, 1);
    ActivationStats s = ActivationStats::for_model(m);
    record_sample(s, fake_trace(4, {1, 2}));
    EXPECT_EQ(s.counts[0], (std::vector<std::uint64_t>{0, 1, 1, 0}));
    EXPECT_EQ(s.total_samples, 1u);
    const std::vector<ForwardTrace> twice{fake_trace(4, {1, 2}), fake_trace(4, {1, 2})};
    const ActivationStats d = record_batch(ActivationStats::for_model(m), twice);
    EXPECT_EQ(d.counts[0], (std::vector<std::uint64_t>{0, 2, 2, 0}));
    EXPECT_EQ(d.total_samples, 2u);
}

TEST(RecordBatch, CountingIdentityOnRandomRuns) {
    std::mt19937_64 rng(21);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto nc = oracle::random_net(seed);
        ActivationStats s = ActivationStats::for_model(nc.model);
        const std::size_t n = 1 + seed % 37;
        for (std::size_t i = 0; i < n; ++i) {
            Vec x(nc.model.input_dim());
            for (double& v : x) v = std::normal_distribution<double>(0.0, 1.0)(rng);
            record_sample(s, forward(nc.model, x));
        }
        for (std::size_t l = 0; l < nc.model.depth(); ++l) {
            std::uint64_t total = 0;
            for (auto c : s.counts[l]) total += c;
            EXPECT_EQ(total, n * nc.model.specs[l].k);
        }
    }
}

TEST(NeuronEntropy, Examples) {
    EXPECT_EQ(neuron_entropy(0.5), 1.0);
    EXPECT_EQ(neuron_entropy(0.0), 0.0);
    EXPECT_EQ(neuron_entropy(1.0), 0.0);
    EXPECT_NEAR(neuron_entropy(0.25), 0.8112781244591328, 1e-12);
    EXPECT_NEAR(neuron_entropy(0.25), 0.8113, 5e-5);
    EXPECT_THROW(neuron_entropy(-0.1), InvalidArgument);
    EXPECT_THROW(neuron_entropy(1.5), InvalidArgument);
}

TEST(NeuronEntropy, SymmetricOnGrid) {
    for (int i = 0; i <= 100; ++i) {
        const double p = i / 100.0;
        EXPECT_NEAR(neuron_entropy(p), neuron_entropy(1.0 - p), 1e-12) << p;
        EXPECT_NEAR(neuron_entropy(p), h2(p), 1e-12);
    }
}

TEST(SelectTopN, Examples) {
    EXPECT_EQ(select_top_n(stats_with_counts({5, 1, 9, 3}, 10, 1), 2).layers[0], (IndexSet{0, 2}));
    EXPECT_EQ(select_top_n(stats_with_counts({5, 1, 9, 3}, 10, 1), 4).layers[0], (IndexSet{0, 1, 2, 3}));
    EXPECT_EQ(select_top_n(stats_with_counts({4, 4, 4, 4}, 8, 2), 2).layers[0], (IndexSet{0, 1}));
}

TEST(SelectTopN, RejectsOutOfRange) {
    const auto s = stats_with_counts({5, 1, 9, 3}, 10, 2);
    EXPECT_THROW(select_top_n(s, 1), InvalidArgument);
    EXPECT_THROW(select_top_n(s, 5), InvalidArgument);
}

TEST(SelectTopN, OrderInvariantAndNested) {
    std::mt19937_64 rng(2);
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto nc = oracle::random_net(seed);
        std::vector<ForwardTrace> traces;
        for (int i = 0; i < 25; ++i) {
            Vec x(nc.model.input_dim());
            for (double& v : x) v = std::normal_distribution<double>(0.0, 1.0)(rng);
            traces.push_back(forward(nc.model, x));
        }
        const auto fwd = record_batch(ActivationStats::for_model(nc.model), traces);
        std::vector<ForwardTrace> shuffled = traces;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto half = shuffled.size() / 2;
        auto re = record_batch(ActivationStats::for_model(nc.model),
                               std::span<const ForwardTrace>(shuffled).subspan(half));
        re = record_batch(std::move(re), std::span<const ForwardTrace>(shuffled).first(half));
        const std::size_t r = nc.model.specs[0].out_dim;
        std::size_t kmax = 0;
        for (const auto& s : nc.model.specs) kmax = std::max(kmax, s.k);
        std::size_t rmin = r;
        for (const auto& s : nc.model.specs) rmin = std::min(rmin, s.out_dim);
        for (std::size_t n = kmax; n <= rmin; ++n) {
            const auto a = select_top_n(fwd, n);
            EXPECT_EQ(a.layers, select_top_n(re, n).layers);
            for (std::size_t l = 0; l < a.layers.size(); ++l)
                EXPECT_EQ(a.layers[l], oracle::brute_topk(fwd.counts[l], n));
            if (n + 1 <= rmin) {
                const auto b = select_top_n(fwd, n + 1);
                for (std::size_t l = 0; l < a.layers.size(); ++l)
                    EXPECT_TRUE(std::includes(b.layers[l].begin(), b.layers[l].end(), a.layers[l].begin(),
                                              a.layers[l].end()));
            }
        }
    }
}

TEST(MeanEntropy, Examples) {
    EXPECT_EQ(mean_entropy(stats_with_counts({2, 2, 2, 2}, 4, 2)), 1.0);
    EXPECT_EQ(mean_entropy(stats_with_counts({3, 0, 3, 0}, 3, 2)), 0.0);
    EXPECT_NEAR(mean_entropy(stats_with_counts({2, 1}, 4, 1)), (1.0 + 0.8112781244591328) / 2.0, 1e-12);
    // the 4-digit anchor averages the rounded H(0.25)=0.8113
    EXPECT_NEAR(mean_entropy(stats_with_counts({2, 1}, 4, 1)), (1.0 + 0.8113) / 2.0, 5e-5);
    EXPECT_THROW(mean_entropy(stats_with_counts({0, 0}, 0, 1)), InvalidArgument);
}
