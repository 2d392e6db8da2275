// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssd/error.hpp"
#include "ssd/numerics.hpp"
#include "ssd/sdmlp.hpp"

namespace ssd {

// Per-neuron Top-K selection counts over a window of samples.
struct ActivationStats {
    std::vector<std::vector<std::uint64_t>> counts;  // [layer][neuron]
    std::vector<std::size_t> k;                      // active width per layer
    std::uint64_t total_samples = 0;

    static ActivationStats for_model(const SdmlpModel& m) {
        ActivationStats s;
        for (const auto& spec : m.specs) {
            s.counts.emplace_back(spec.out_dim, 0);
            s.k.push_back(spec.k);
        }
        return s;
    }

    std::size_t depth() const noexcept { return counts.size(); }

    std::vector<double> frequencies(std::size_t layer) const {
        std::vector<double> p(counts.at(layer).size(), 0.0);
        if (total_samples == 0) return p;
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = static_cast<double>(counts[layer][i]) / static_cast<double>(total_samples);
        return p;
    }
};

struct TopNSelection {
    std::vector<IndexSet> layers;  // ascending indices per hidden layer
    std::size_t n = 0;
};

inline void record_sample(ActivationStats& stats, const ForwardTrace& t) {
    detail::require_shape(t.layers.size() == stats.depth(), "record: trace depth does not match stats");
    for (std::size_t l = 0; l < stats.depth(); ++l) {
        detail::require_shape(t.layers[l].pre.size() == stats.counts[l].size(),
                              "record: trace width does not match stats at layer " + std::to_string(l));
        for (auto i : t.layers[l].active) ++stats.counts[l][i];
    }
    ++stats.total_samples;
}

inline ActivationStats record_batch(ActivationStats stats, std::span<const ForwardTrace> batch) {
    for (const auto& t : batch) record_sample(stats, t);
    return stats;
}

// Binary entropy in bits, 0 log 0 := 0.
inline double neuron_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("neuron_entropy: p=" + std::to_string(p) + " outside [0,1]");
    if (p == 0.0 || p == 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

inline TopNSelection select_top_n(const ActivationStats& stats, std::size_t n) {
    TopNSelection sel;
    sel.n = n;
    for (std::size_t l = 0; l < stats.depth(); ++l) {
        const std::size_t r = stats.counts[l].size();
        if (n < stats.k[l] || n > r)
            throw InvalidArgument("select_top_n: n=" + std::to_string(n) + " outside [k=" +
                                  std::to_string(stats.k[l]) + ", r=" + std::to_string(r) + "] at layer " +
                                  std::to_string(l));
        sel.layers.push_back(topk_indices(std::span<const std::uint64_t>(stats.counts[l]), n));
    }
    return sel;
}

// Every neuron of every hidden layer (full-distillation ablation).
inline TopNSelection full_selection(const SdmlpModel& m) {
    TopNSelection sel;
    sel.n = 0;
    for (const auto& s : m.specs) {
        IndexSet all(s.out_dim);
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        sel.layers.push_back(std::move(all));
        sel.n = std::max(sel.n, s.out_dim);
    }
    return sel;
}

inline std::vector<double> layer_entropies(const ActivationStats& stats, std::size_t layer) {
    auto p = stats.frequencies(layer);
    for (double& v : p) v = neuron_entropy(v);
    return p;
}

// Mean of H_i over all hidden neurons of all layers.
inline double mean_entropy(const ActivationStats& stats) {
    if (stats.total_samples == 0) throw InvalidArgument("mean_entropy: no samples recorded");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t l = 0; l < stats.depth(); ++l) {
        for (double h : layer_entropies(stats, l)) acc += h;
        count += stats.counts[l].size();
    }
    return acc / static_cast<double>(count);
}

}  // namespace ssd
