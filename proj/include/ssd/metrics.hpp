// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssd/data.hpp"
#include "ssd/distill.hpp"
#include "ssd/error.hpp"
#include "ssd/numerics.hpp"
#include "ssd/sdmlp.hpp"
#include "ssd/tracking.hpp"

namespace ssd {

// R[t][i]: accuracy on task i's validation split after training task t, for i <= t.
class AccuracyMatrix {
  public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t tasks) : rows_(tasks) {
        for (std::size_t t = 0; t < tasks; ++t) rows_[t].assign(t + 1, 0.0);
    }

    std::size_t tasks() const noexcept { return rows_.size(); }

    double at(std::size_t t, std::size_t i) const {
        check(t, i);
        return rows_[t][i];
    }
    void set(std::size_t t, std::size_t i, double acc) {
        check(t, i);
        detail::require(acc >= 0.0 && acc <= 1.0, "accuracy must be in [0,1]");
        rows_[t][i] = acc;
    }

    friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

  private:
    void check(std::size_t t, std::size_t i) const {
        if (t >= rows_.size() || i > t)
            throw InvalidArgument("accuracy matrix entry (" + std::to_string(t) + "," + std::to_string(i) +
                                  ") is not populated");
    }
    std::vector<Vec> rows_;
};

inline std::size_t predict(const SdmlpModel& m, std::span<const double> x,
                           std::span<const std::size_t> allowed_classes = {}) {
    const auto t = forward(m, x);
    std::size_t best = allowed_classes.empty() ? 0 : allowed_classes.front();
    auto consider = [&](std::size_t c) {
        if (t.logits[c] > t.logits[best] || (t.logits[c] == t.logits[best] && c < best)) best = c;
    };
    if (allowed_classes.empty()) {
        for (std::size_t c = 0; c < t.logits.size(); ++c) consider(c);
    } else {
        for (auto c : allowed_classes) consider(c);
    }
    return best;
}

// Fraction of samples whose argmax logit equals the label. With `allowed_classes`
// the argmax is restricted to those classes (class-incremental: classes seen so far).
inline double evaluate(const SdmlpModel& m, const std::vector<Sample>& samples,
                       std::span<const std::size_t> allowed_classes = {}) {
    if (samples.empty()) throw InvalidArgument("evaluate: empty dataset");
    std::size_t correct = 0;
    for (const auto& s : samples)
        if (predict(m, s.embedding, allowed_classes) == s.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// (1/(T-1)) sum_{i<T} (R[T-1][i] - R[i][i]); larger (less negative) means less forgetting.
inline double bwt(const AccuracyMatrix& r) {
    const std::size_t tasks = r.tasks();
    if (tasks < 2) throw UndefinedMetric("BWT needs at least two tasks");
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < tasks; ++i) acc += r.at(tasks - 1, i) - r.at(i, i);
    return acc / static_cast<double>(tasks - 1);
}

inline double final_average_accuracy(const AccuracyMatrix& r) {
    detail::require(r.tasks() >= 1, "final_average_accuracy: empty matrix");
    double acc = 0.0;
    for (std::size_t i = 0; i < r.tasks(); ++i) acc += r.at(r.tasks() - 1, i);
    return acc / static_cast<double>(r.tasks());
}

inline double jaccard(IndexSet a, IndexSet b) {
    if (a.empty() && b.empty()) throw InvalidArgument("jaccard: both sets empty");
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    std::vector<std::size_t> inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    const std::size_t uni = a.size() + b.size() - inter.size();
    return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

// Cosine between the concatenated incoming weight rows of the selected neurons.
inline double subnetwork_cosine(const SdmlpModel& teacher, const SdmlpModel& student, const TopNSelection& sel) {
    detail::require_shape(teacher.specs == student.specs, "subnetwork_cosine: models differ in shape");
    detail::require_shape(sel.layers.size() == teacher.depth(), "subnetwork_cosine: selection depth mismatch");
    Vec a;
    Vec b;
    for (std::size_t l = 0; l < teacher.depth(); ++l) {
        for (auto i : sel.layers[l]) {
            if (i >= teacher.specs[l].out_dim)
                throw InvalidArgument("subnetwork_cosine: selection index out of range");
            auto ra = teacher.hidden[l].row(i);
            auto rb = student.hidden[l].row(i);
            a.insert(a.end(), ra.begin(), ra.end());
            b.insert(b.end(), rb.begin(), rb.end());
        }
    }
    return cosine_sim(a, b);
}

// Mean over the batch of KL(softmax(teacher/T) || softmax(student/T)).
inline double retention_kl(std::span<const Vec> student_logits, std::span<const Vec> teacher_logits,
                           double temperature) {
    detail::require_shape(student_logits.size() == teacher_logits.size() && !student_logits.empty(),
                          "retention_kl: batches must be non-empty and equal length");
    double acc = 0.0;
    for (std::size_t b = 0; b < student_logits.size(); ++b) {
        detail::require_shape(student_logits[b].size() == teacher_logits[b].size(),
                              "retention_kl: logit lengths differ");
        acc += kl_div(softmax_temp(teacher_logits[b], temperature), softmax_temp(student_logits[b], temperature));
    }
    return acc / static_cast<double>(student_logits.size());
}

// The k neurons selected most often across a probe batch, ranked by count
// (descending, lower index first on ties).
inline IndexSet probe_topk(std::span<const ForwardTrace> probe, std::size_t layer, std::size_t k) {
    detail::require(!probe.empty(), "probe_topk: empty probe batch");
    const std::size_t width = probe.front().layers.at(layer).pre.size();
    std::vector<std::uint64_t> counts(width, 0);
    for (const auto& t : probe)
        for (auto i : t.layers.at(layer).active) ++counts[i];
    IndexSet idx = topk_indices(std::span<const std::uint64_t>(counts), k);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
    return idx;
}

// ---- run logs -------------------------------------------------------------

struct LossRow {
    std::size_t task = 0;
    std::size_t epoch = 0;  // 1-based within the task
    LossReport loss;
    double ewc = 0.0;  // mean EWC penalty over the epoch's steps, not part of loss.total
};

struct TraceRow {
    std::string metric;  // "jaccard", "retention_kl", "cosine"
    std::size_t task = 0;
    std::size_t epoch = 0;
    double value = 0.0;
};

struct EntropyRow {
    std::size_t task = 0;
    std::size_t epoch = 0;
    double mean_entropy = 0.0;
};

struct HeatmapRow {
    std::size_t epoch = 0;  // global: task * epochs_per_task + epoch
    std::size_t layer = 0;
    std::size_t rank = 0;
    std::size_t neuron = 0;
};

struct NeuronStatRow {
    std::size_t task = 0;
    std::size_t layer = 0;
    std::size_t index = 0;
    std::uint64_t count = 0;
    double frequency = 0.0;
    double entropy = 0.0;
};

struct RunResult {
    AccuracyMatrix accuracy;
    std::optional<double> mean_bwt;  // absent for a single task
    double final_avg_accuracy = 0.0;
    std::vector<LossRow> losses;
    std::vector<TraceRow> traces;
    std::vector<EntropyRow> entropy;
    std::vector<HeatmapRow> heatmap;
    std::vector<NeuronStatRow> neuron_stats;
    std::vector<SdmlpModel> task_models;  // student at the end of each task
};

}  // namespace ssd
