// SPDX-License-Identifier: Apache-2.0
#pragma once

// Task-sequential training: the model finishing task t-1 becomes the frozen
// teacher for task t, its most frequently selected hidden neurons form the
// distillation channel, and an optional diagonal-Fisher EWC penalty anchors
// parameters of earlier tasks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ssd/data.hpp"
#include "ssd/distill.hpp"
#include "ssd/error.hpp"
#include "ssd/metrics.hpp"
#include "ssd/random.hpp"
#include "ssd/sdmlp.hpp"
#include "ssd/tracking.hpp"

namespace ssd {

enum class StatsWindow {
    final_epoch,  // one fresh pass over the task's training set with the final model
    cumulative,   // every training forward pass of the task
};

enum class EwcAnchorMode { latest, all };

struct TrainConfig {
    std::size_t epochs_per_task = 300;
    double lr = 0.05;
    std::size_t batch_size = 32;
    DistillConfig distill;
    bool distill_enabled = true;
    bool ewc_enabled = false;
    double ewc_lambda = 0.0;
    EwcAnchorMode ewc_anchors = EwcAnchorMode::latest;
    std::uint64_t seed = 0;
    std::size_t sampling_interval = 50;
    std::size_t probe_size = 8;
    StatsWindow stats_window = StatsWindow::final_epoch;

    void validate() const {
        detail::require(epochs_per_task >= 1, "epochs_per_task must be positive");
        detail::require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
        detail::require(batch_size >= 1, "batch_size must be positive");
        detail::require(sampling_interval >= 1, "sampling_interval must be at least 1");
        detail::require(probe_size >= 1, "probe_size must be at least 1");
        detail::require(ewc_lambda >= 0.0 && std::isfinite(ewc_lambda), "ewc_lambda must be non-negative");
        distill.validate();
    }
};

struct ModelConfig {
    std::vector<std::size_t> hidden_widths{1000};
    std::vector<std::size_t> k{10};  // one entry, or one per hidden layer
    std::size_t class_count = 10;
    bool output_nonneg = true;

    std::vector<LayerSpec> layer_specs(std::size_t input_dim) const {
        detail::require(!hidden_widths.empty(), "model needs at least one hidden layer");
        detail::require(k.size() == 1 || k.size() == hidden_widths.size(),
                        "model k must have one entry or one per hidden layer");
        std::vector<LayerSpec> specs;
        std::size_t in = input_dim;
        for (std::size_t l = 0; l < hidden_widths.size(); ++l) {
            specs.push_back({in, hidden_widths[l], k.size() == 1 ? k[0] : k[l]});
            in = hidden_widths[l];
        }
        return specs;
    }
};

// Per-parameter importance, laid out like the model's weights.
struct FisherDiag {
    Gradients weights;
};

struct EwcAnchor {
    SdmlpModel params;
    FisherDiag fisher;
};

struct ContinualState {
    SdmlpModel student;
    std::optional<SdmlpModel> teacher;
    std::optional<TopNSelection> prev_selection;
    std::vector<Sample> prev_train;  // previous task's training data (student-side selection)
    std::size_t task_index = 0;
    std::vector<EwcAnchor> ewc_anchors;
};

struct TaskLogs {
    std::vector<LossRow> losses;
    std::vector<TraceRow> traces;
    std::vector<EntropyRow> entropy;
    std::vector<HeatmapRow> heatmap;
    std::vector<NeuronStatRow> neuron_stats;
};

using ProgressFn = std::function<void(const std::string&)>;

// Expected Fisher under the model's own predictive distribution:
// mean over samples of sum_y p(y|x) * (d CE(y) / d theta)^2.
inline FisherDiag estimate_fisher(const SdmlpModel& m, const std::vector<Sample>& samples) {
    if (samples.empty()) throw InvalidArgument("estimate_fisher: empty dataset");
    FisherDiag f{Gradients::zeros_like(m)};
    const double inv = 1.0 / static_cast<double>(samples.size());
    Vec grad_logits(m.class_count);
    for (const auto& s : samples) {
        const auto t = forward(m, s.embedding);
        const ProbDist p = softmax_temp(t.logits, 1.0);
        for (std::size_t y = 0; y < m.class_count; ++y) {
            if (p[y] == 0.0) continue;
            for (std::size_t c = 0; c < m.class_count; ++c) grad_logits[c] = p[c] - (c == y ? 1.0 : 0.0);
            const Gradients g = backward(m, t, grad_logits);
            const double w = p[y] * inv;
            for (std::size_t l = 0; l < g.hidden.size(); ++l) {
                auto& dst = f.weights.hidden[l].values();
                const auto& src = g.hidden[l].values();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i] * src[i];
            }
            auto& dst = f.weights.output.values();
            const auto& src = g.output.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i] * src[i];
        }
    }
    return f;
}

struct PenaltyGrad {
    double value = 0.0;
    Gradients grad;
};

// (ewc_lambda / 2) * sum over anchors of sum_i F_i (theta_i - theta*_i)^2.
inline PenaltyGrad ewc_penalty(const SdmlpModel& m, std::span<const EwcAnchor> anchors, double ewc_lambda) {
    PenaltyGrad out{0.0, Gradients::zeros_like(m)};
    for (const auto& a : anchors) {
        detail::require_shape(a.params.specs == m.specs && a.params.output.same_shape(m.output) &&
                                  a.fisher.weights.matches(m),
                              "ewc_penalty: anchor shape does not match model");
        auto accumulate = [&](const std::vector<double>& theta, const std::vector<double>& star,
                              const std::vector<double>& fisher, std::vector<double>& grad) {
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double d = theta[i] - star[i];
                out.value += 0.5 * ewc_lambda * fisher[i] * d * d;
                grad[i] += ewc_lambda * fisher[i] * d;
            }
        };
        for (std::size_t l = 0; l < m.depth(); ++l)
            accumulate(m.hidden[l].values(), a.params.hidden[l].values(), a.fisher.weights.hidden[l].values(),
                       out.grad.hidden[l].values());
        accumulate(m.output.values(), a.params.output.values(), a.fisher.weights.output.values(),
                   out.grad.output.values());
    }
    return out;
}

namespace detail {

inline bool is_sampling_epoch(std::size_t epoch, const TrainConfig& cfg) {
    return epoch == 1 || epoch % cfg.sampling_interval == 0 || epoch == cfg.epochs_per_task;
}

inline ActivationStats count_activations(const SdmlpModel& m, const std::vector<Sample>& samples) {
    ActivationStats stats = ActivationStats::for_model(m);
    for (const auto& s : samples) record_sample(stats, forward(m, s.embedding));
    return stats;
}

inline std::size_t clamp_n(const DistillConfig& d, const SdmlpModel& m, std::size_t layer) {
    const std::size_t r = m.specs[layer].out_dim;
    return std::clamp(d.n.value_or(r), m.specs[layer].k, r);
}

inline TopNSelection make_selection(const ActivationStats& stats, const SdmlpModel& m, const TrainConfig& cfg) {
    if (cfg.distill_enabled) {
        if (!cfg.distill.n) return full_selection(m);
        return select_top_n(stats, *cfg.distill.n);
    }
    // no distillation: selection only feeds metrics, so an out-of-range n is clamped
    std::size_t n = m.specs.front().out_dim;
    for (std::size_t l = 0; l < m.depth(); ++l) n = std::min(n, clamp_n(cfg.distill, m, l));
    for (std::size_t l = 0; l < m.depth(); ++l) n = std::max(n, m.specs[l].k);
    return select_top_n(stats, n);
}

inline double probe_jaccard(std::span<const ForwardTrace> prev, std::span<const ForwardTrace> cur,
                            const SdmlpModel& m) {
    double acc = 0.0;
    for (std::size_t l = 0; l < m.depth(); ++l)
        acc += jaccard(probe_topk(prev, l, m.specs[l].k), probe_topk(cur, l, m.specs[l].k));
    return acc / static_cast<double>(m.depth());
}

}  // namespace detail

inline void validate_against_model(const TrainConfig& cfg, const SdmlpModel& m) {
    cfg.validate();
    if (cfg.distill_enabled && cfg.distill.n) {
        for (std::size_t l = 0; l < m.depth(); ++l) {
            const auto& s = m.specs[l];
            if (*cfg.distill.n < s.k || *cfg.distill.n > s.out_dim)
                throw InvalidArgument("distill.n=" + std::to_string(*cfg.distill.n) + " outside [k=" +
                                      std::to_string(s.k) + ", r=" + std::to_string(s.out_dim) +
                                      "] for hidden layer " + std::to_string(l));
        }
    }
}

// Trains the student on one task, then prepares the state for the next task.
inline TaskLogs run_task(ContinualState& state, const TaskDataset& data, const TrainConfig& cfg,
                         const ProgressFn& progress = {}) {
    if (data.train.empty()) throw InvalidArgument("run_task: task " + std::to_string(data.task_id) + " has no training data");
    validate_against_model(cfg, state.student);
    for (const auto& s : data.train)
        detail::require(s.label < state.student.class_count,
                        "run_task: label " + std::to_string(s.label) + " outside the model's classes");

    const std::size_t task = state.task_index;
    const bool has_teacher = state.teacher.has_value();
    const bool use_kd = has_teacher && cfg.distill_enabled;
    const DistillConfig& dc = cfg.distill;
    const bool use_hidden = use_kd && dc.hierarchical;
    const bool independent = use_hidden && dc.index_alignment == IndexAlignment::independent;

    TaskLogs logs;
    const std::size_t probe_n = std::min(cfg.probe_size, data.train.size());
    std::vector<const Sample*> probe;
    for (std::size_t i = 0; i < probe_n; ++i) probe.push_back(&data.train[i]);
    std::vector<ForwardTrace> prev_probe;

    ActivationStats cumulative = ActivationStats::for_model(state.student);
    std::vector<std::size_t> order(data.train.size());
    std::vector<ForwardTrace> teacher_cache;
    if (use_kd) {
        // the teacher is frozen for the whole task
        teacher_cache.reserve(data.train.size());
        for (const auto& s : data.train) teacher_cache.push_back(forward(*state.teacher, s.embedding));
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs_per_task; ++epoch) {
        std::optional<TopNSelection> student_sel;
        if (independent) {
            const auto& src = state.prev_train.empty() ? data.train : state.prev_train;
            student_sel = select_top_n(detail::count_activations(state.student, src), state.prev_selection->layers.front().size());
        }

        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = make_rng(cfg.seed, {stream::kShuffle, task, epoch});
        std::shuffle(order.begin(), order.end(), rng);

        LossReport sums;
        double ewc_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            Gradients grads = Gradients::zeros_like(state.student);
            for (std::size_t j = start; j < end; ++j) {
                const std::size_t idx = order[j];
                const Sample& s = data.train[idx];
                const ForwardTrace st = forward(state.student, s.embedding);
                if (cfg.stats_window == StatsWindow::cumulative) record_sample(cumulative, st);
                const SampleObjective obj =
                    sample_objective(st, use_kd ? &teacher_cache[idx] : nullptr, s.label, dc,
                                     use_hidden ? &*state.prev_selection : nullptr,
                                     student_sel ? &*student_sel : nullptr);
                const LossReport& rep = obj.loss;
                sums.ce += rep.ce;
                sums.kd_hidden += rep.kd_hidden;
                sums.kd_logits += rep.kd_logits;
                sums.kd += rep.kd;
                sums.total += rep.total;
                backward_into(state.student, st, obj.grad_logits, obj.grad_hidden.empty() ? nullptr : &obj.grad_hidden,
                              grads, inv_b);
            }
            if (cfg.ewc_enabled && !state.ewc_anchors.empty()) {
                PenaltyGrad pen = ewc_penalty(state.student, state.ewc_anchors, cfg.ewc_lambda);
                ewc_sum += pen.value;
                grads.add_scaled(pen.grad, 1.0);
            }
            ++batches;
            state.student = sgd_step(std::move(state.student), grads, cfg.lr);
        }

        const double inv_n = 1.0 / static_cast<double>(data.train.size());
        LossRow row{task, epoch, {sums.ce * inv_n, sums.kd_hidden * inv_n, sums.kd_logits * inv_n, sums.kd * inv_n,
                                  sums.total * inv_n}};
        row.ewc = ewc_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
        logs.losses.push_back(row);

        if (epoch == 1 || epoch == cfg.epochs_per_task) {
            const ActivationStats stats = cfg.stats_window == StatsWindow::cumulative
                                              ? cumulative
                                              : detail::count_activations(state.student, data.train);
            logs.entropy.push_back({task, epoch, mean_entropy(stats)});
        }

        if (detail::is_sampling_epoch(epoch, cfg)) {
            std::vector<ForwardTrace> cur_probe;
            for (const Sample* s : probe) cur_probe.push_back(forward(state.student, s->embedding));
            const std::size_t global_epoch = task * cfg.epochs_per_task + epoch;
            for (std::size_t l = 0; l < state.student.depth(); ++l) {
                const IndexSet ranked = probe_topk(cur_probe, l, state.student.specs[l].k);
                for (std::size_t rank = 0; rank < ranked.size(); ++rank)
                    logs.heatmap.push_back({global_epoch, l, rank, ranked[rank]});
            }
            if (!prev_probe.empty())
                logs.traces.push_back({"jaccard", task, epoch, detail::probe_jaccard(prev_probe, cur_probe, state.student)});
            prev_probe = std::move(cur_probe);

            if (has_teacher) {
                std::vector<Vec> s_logits;
                std::vector<Vec> t_logits;
                for (const auto& s : data.train) {
                    s_logits.push_back(forward(state.student, s.embedding).logits);
                    t_logits.push_back(forward(*state.teacher, s.embedding).logits);
                }
                logs.traces.push_back({"retention_kl", task, epoch, retention_kl(s_logits, t_logits, dc.temperature)});
            }
            if (progress)
                progress("task " + std::to_string(task) + " epoch " + std::to_string(epoch) + " total " +
                         std::to_string(row.loss.total));
        }
    }

    if (has_teacher && state.prev_selection)
        logs.traces.push_back(
            {"cosine", task, cfg.epochs_per_task, subnetwork_cosine(*state.teacher, state.student, *state.prev_selection)});

    const ActivationStats final_stats = cfg.stats_window == StatsWindow::cumulative
                                            ? cumulative
                                            : detail::count_activations(state.student, data.train);
    for (std::size_t l = 0; l < final_stats.depth(); ++l) {
        const auto p = final_stats.frequencies(l);
        for (std::size_t i = 0; i < p.size(); ++i)
            logs.neuron_stats.push_back({task, l, i, final_stats.counts[l][i], p[i], neuron_entropy(p[i])});
    }

    state.prev_selection = detail::make_selection(final_stats, state.student, cfg);
    state.teacher = snapshot(state.student);
    state.prev_train = data.train;
    if (cfg.ewc_enabled) {
        EwcAnchor anchor{snapshot(state.student), estimate_fisher(state.student, data.train)};
        if (cfg.ewc_anchors == EwcAnchorMode::latest) state.ewc_anchors.clear();
        state.ewc_anchors.push_back(std::move(anchor));
    }
    ++state.task_index;
    return logs;
}

inline RunResult run_sequence(const std::vector<TaskDataset>& tasks, const ModelConfig& model_cfg,
                              const TrainConfig& cfg, const ProgressFn& progress = {}) {
    if (tasks.empty()) throw InvalidArgument("run_sequence: no tasks");
    std::set<std::size_t> seen;
    for (const auto& t : tasks) {
        for (auto c : t.class_set)
            if (!seen.insert(c).second)
                throw InvalidArgument("run_sequence: class " + std::to_string(c) + " appears in more than one task");
        if (t.val.empty()) throw InvalidArgument("run_sequence: task " + std::to_string(t.task_id) + " has no validation data");
    }
    const std::size_t dim = tasks.front().train.empty() ? 0 : tasks.front().train.front().embedding.size();
    detail::require(dim >= 1, "run_sequence: first task has no training data");

    ContinualState state;
    state.student = init_model(model_cfg.layer_specs(dim), model_cfg.class_count, cfg.seed, model_cfg.output_nonneg);
    validate_against_model(cfg, state.student);

    RunResult result;
    result.accuracy = AccuracyMatrix(tasks.size());
    std::vector<std::size_t> seen_classes;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        TaskLogs logs = run_task(state, tasks[t], cfg, progress);
        seen_classes.insert(seen_classes.end(), tasks[t].class_set.begin(), tasks[t].class_set.end());
        std::sort(seen_classes.begin(), seen_classes.end());
        for (std::size_t i = 0; i <= t; ++i)
            result.accuracy.set(t, i, evaluate(state.student, tasks[i].val, seen_classes));
        auto append = [](auto& dst, auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
        append(result.losses, logs.losses);
        append(result.traces, logs.traces);
        append(result.entropy, logs.entropy);
        append(result.heatmap, logs.heatmap);
        append(result.neuron_stats, logs.neuron_stats);
        result.task_models.push_back(state.student);
        if (progress)
            progress("finished task " + std::to_string(t) + ", accuracy on it " +
                     std::to_string(result.accuracy.at(t, t)));
    }
    if (tasks.size() >= 2) result.mean_bwt = bwt(result.accuracy);
    result.final_avg_accuracy = final_average_accuracy(result.accuracy);
    return result;
}

}  // namespace ssd
