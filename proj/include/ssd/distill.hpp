// SPDX-License-Identifier: Apache-2.0
#pragma once

// Loss family for selective subnetwork distillation: cross-entropy on the
// student's logits, temperature-scaled KL on the teacher's Top-n hidden units
// and on the output logits, and their weighted composition.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssd/error.hpp"
#include "ssd/numerics.hpp"
#include "ssd/sdmlp.hpp"
#include "ssd/tracking.hpp"

namespace ssd {

enum class KlDirection {
    student_first,  // KL(student || teacher), the order used in the loss definition
    teacher_first,  // KL(teacher || student), the conventional distillation order
};

enum class HiddenSource { pre_mask, post_mask };

enum class IndexAlignment {
    shared,       // teacher's Top-n indices used for both models
    independent,  // student gathers at its own Top-n indices
};

struct DistillConfig {
    double alpha = 0.7;
    double lambda = 0.1;
    double temperature = 8.0;
    std::optional<std::size_t> n = 1000;  // nullopt: every neuron (full distillation)
    KlDirection kl_direction = KlDirection::student_first;
    HiddenSource hidden_source = HiddenSource::pre_mask;
    IndexAlignment index_alignment = IndexAlignment::shared;
    bool hierarchical = true;  // false drops the hidden term (kd == kd_logits)

    void validate() const {
        detail::require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1]");
        detail::require(lambda >= 0.0 && lambda <= 1.0, "lambda must be in [0,1]");
        detail::require(temperature > 0.0 && std::isfinite(temperature), "temperature must be positive");
        detail::require(!n || *n >= 1, "n must be at least 1");
    }

    double effective_lambda() const noexcept { return hierarchical ? lambda : 0.0; }
};

struct LossReport {
    double ce = 0.0;
    double kd_hidden = 0.0;
    double kd_logits = 0.0;
    double kd = 0.0;
    double total = 0.0;
};

struct LossGrad {
    double value = 0.0;
    Vec grad;
};

// Per-term multipliers applied to the loss gradients.
struct LossWeights {
    double ce = 1.0;
    double hidden = 0.0;
    double logits = 0.0;
};

inline LossWeights loss_weights(const DistillConfig& cfg, bool has_teacher) {
    if (!has_teacher) return {1.0, 0.0, 0.0};
    const double lam = cfg.effective_lambda();
    return {cfg.alpha, (1.0 - cfg.alpha) * lam, (1.0 - cfg.alpha) * (1.0 - lam)};
}

inline LossGrad ce_loss(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size())
        throw InvalidArgument("ce_loss: label " + std::to_string(label) + " outside " +
                              std::to_string(logits.size()) + " classes");
    Vec logp = log_softmax_temp(logits, 1.0);
    LossGrad out;
    out.value = -logp[label];
    out.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logp[i]);
    out.grad[label] -= 1.0;
    return out;
}

namespace detail {

// T^2 * KL between softmax(student/T) and softmax(teacher/T) in the given order,
// with the gradient taken w.r.t. the student vector only.
inline LossGrad temp_kl(std::span<const double> student, std::span<const double> teacher, double temperature,
                        KlDirection dir) {
    require_shape(student.size() == teacher.size(), "distillation KL: student has " +
                                                        std::to_string(student.size()) + " entries, teacher " +
                                                        std::to_string(teacher.size()));
    const double t2 = temperature * temperature;
    const Vec log_s = log_softmax_temp(student, temperature);
    const Vec log_q = log_softmax_temp(teacher, temperature);
    const double log_floor = std::log(kKlFloor);
    const std::size_t n = student.size();
    LossGrad out;
    out.grad.assign(n, 0.0);
    double kl = 0.0;
    if (dir == KlDirection::student_first) {
        // L = T^2 sum p (ln p - ln q); dL/ds_j = T p_j (d_j - KL)
        Vec d(n);
        for (std::size_t i = 0; i < n; ++i) {
            d[i] = log_s[i] - std::max(log_q[i], log_floor);
            kl += std::exp(log_s[i]) * d[i];
        }
        for (std::size_t i = 0; i < n; ++i) out.grad[i] = temperature * std::exp(log_s[i]) * (d[i] - kl);
    } else {
        // L = T^2 sum q (ln q - ln p); dL/ds_j = T (p_j - q_j)
        for (std::size_t i = 0; i < n; ++i) {
            const double q = std::exp(log_q[i]);
            kl += q * (log_q[i] - log_s[i]);
            out.grad[i] = temperature * (std::exp(log_s[i]) - q);
        }
    }
    out.value = t2 * kl;
    return out;
}

}  // namespace detail

inline LossGrad kd_logits_loss(std::span<const double> student_logits, std::span<const double> teacher_logits,
                               double temperature, KlDirection dir = KlDirection::student_first) {
    if (!(temperature > 0.0)) throw InvalidArgument("kd_logits_loss: temperature must be positive");
    return detail::temp_kl(student_logits, teacher_logits, temperature, dir);
}

struct HiddenKdSample {
    double value = 0.0;
    std::vector<Vec> grad_pre;  // per layer, full width, d(value)/d(student pre-activations)
};

struct HiddenKdOptions {
    double temperature = 8.0;
    KlDirection kl_direction = KlDirection::student_first;
    HiddenSource hidden_source = HiddenSource::pre_mask;
};

// Hidden distillation for one sample, averaged over hidden layers.
// `student_sel` defaults to `teacher_sel` (shared index alignment).
inline HiddenKdSample kd_hidden_sample(const ForwardTrace& student, const ForwardTrace& teacher,
                                       const TopNSelection& teacher_sel, const TopNSelection* student_sel,
                                       const HiddenKdOptions& opt) {
    if (!(opt.temperature > 0.0)) throw InvalidArgument("kd_hidden_loss: temperature must be positive");
    const TopNSelection& ssel = student_sel ? *student_sel : teacher_sel;
    const std::size_t depth = student.layers.size();
    detail::require_shape(teacher.layers.size() == depth && teacher_sel.layers.size() == depth &&
                              ssel.layers.size() == depth,
                          "kd_hidden_loss: layer counts of traces and selection disagree");
    HiddenKdSample out;
    out.grad_pre.resize(depth);
    const bool pre = opt.hidden_source == HiddenSource::pre_mask;
    for (std::size_t l = 0; l < depth; ++l) {
        const auto& sl = student.layers[l];
        const auto& tl = teacher.layers[l];
        detail::require_shape(sl.pre.size() == tl.pre.size(), "kd_hidden_loss: layer widths disagree");
        const IndexSet& si = ssel.layers[l];
        const IndexSet& ti = teacher_sel.layers[l];
        detail::require_shape(si.size() == ti.size() && !si.empty(),
                              "kd_hidden_loss: student and teacher selections differ in size");
        Vec s_vals(si.size());
        Vec t_vals(ti.size());
        for (std::size_t j = 0; j < si.size(); ++j) {
            if (si[j] >= sl.pre.size() || ti[j] >= tl.pre.size())
                throw InvalidArgument("kd_hidden_loss: selection index out of range at layer " + std::to_string(l));
            s_vals[j] = pre ? sl.pre[si[j]] : sl.post[si[j]];
            t_vals[j] = pre ? tl.pre[ti[j]] : tl.post[ti[j]];
        }
        LossGrad lg = detail::temp_kl(s_vals, t_vals, opt.temperature, opt.kl_direction);
        out.value += lg.value;
        Vec g(sl.pre.size(), 0.0);
        for (std::size_t j = 0; j < si.size(); ++j) g[si[j]] += lg.grad[j];
        if (!pre) {
            // post = pre on the active set, constant zero elsewhere
            Vec masked(g.size(), 0.0);
            for (auto a : sl.active) masked[a] = g[a];
            g = std::move(masked);
        }
        out.grad_pre[l] = std::move(g);
    }
    const double inv = 1.0 / static_cast<double>(depth);
    out.value *= inv;
    for (auto& g : out.grad_pre)
        for (double& v : g) v *= inv;
    return out;
}

struct HiddenKdBatch {
    double value = 0.0;                       // mean over samples
    std::vector<std::vector<Vec>> grad_pre;   // [sample][layer], gradient of `value`
};

inline HiddenKdBatch kd_hidden_loss(std::span<const ForwardTrace> student, std::span<const ForwardTrace> teacher,
                                    const TopNSelection& teacher_sel, const HiddenKdOptions& opt,
                                    const TopNSelection* student_sel = nullptr) {
    detail::require_shape(student.size() == teacher.size() && !student.empty(),
                          "kd_hidden_loss: batches must be non-empty and equal length");
    HiddenKdBatch out;
    const double inv = 1.0 / static_cast<double>(student.size());
    for (std::size_t b = 0; b < student.size(); ++b) {
        auto s = kd_hidden_sample(student[b], teacher[b], teacher_sel, student_sel, opt);
        out.value += s.value * inv;
        for (auto& g : s.grad_pre)
            for (double& v : g) v *= inv;
        out.grad_pre.push_back(std::move(s.grad_pre));
    }
    return out;
}

// Weighted composition. Without a teacher the KD terms are zero and total == ce.
inline LossReport total_loss(double ce, double kd_hidden, double kd_logits, const DistillConfig& cfg,
                             bool has_teacher = true) {
    cfg.validate();
    LossReport r;
    r.ce = ce;
    if (!has_teacher) {
        r.total = ce;
        return r;
    }
    r.kd_hidden = kd_hidden;
    r.kd_logits = kd_logits;
    const double lam = cfg.effective_lambda();
    r.kd = lam * kd_hidden + (1.0 - lam) * kd_logits;
    r.total = cfg.alpha * ce + (1.0 - cfg.alpha) * r.kd;
    return r;
}

struct SampleObjective {
    LossReport loss;
    Vec grad_logits;             // d(total)/d(logits)
    std::vector<Vec> grad_hidden;  // d(total)/d(pre-activations) per layer; empty without hidden KD
};

// Total loss of one sample and its gradient at the logits and hidden pre-activations.
// `teacher` null means no distillation (total == ce); `teacher_sel` null skips the hidden term.
inline SampleObjective sample_objective(const ForwardTrace& student, const ForwardTrace* teacher, std::size_t label,
                                        const DistillConfig& cfg, const TopNSelection* teacher_sel,
                                        const TopNSelection* student_sel = nullptr) {
    const bool kd = teacher != nullptr;
    const LossWeights w = loss_weights(cfg, kd);
    SampleObjective out;
    const LossGrad ce = ce_loss(student.logits, label);
    out.grad_logits.resize(ce.grad.size());
    for (std::size_t c = 0; c < ce.grad.size(); ++c) out.grad_logits[c] = w.ce * ce.grad[c];
    double kd_l = 0.0;
    double kd_h = 0.0;
    if (kd) {
        const LossGrad kl = kd_logits_loss(student.logits, teacher->logits, cfg.temperature, cfg.kl_direction);
        kd_l = kl.value;
        for (std::size_t c = 0; c < kl.grad.size(); ++c) out.grad_logits[c] += w.logits * kl.grad[c];
        if (teacher_sel && cfg.hierarchical) {
            HiddenKdSample hk = kd_hidden_sample(student, *teacher, *teacher_sel, student_sel,
                                                 {cfg.temperature, cfg.kl_direction, cfg.hidden_source});
            kd_h = hk.value;
            for (auto& g : hk.grad_pre)
                for (double& v : g) v *= w.hidden;
            out.grad_hidden = std::move(hk.grad_pre);
        }
    }
    out.loss = total_loss(ce.value, kd_h, kd_l, cfg, kd);
    return out;
}

}  // namespace ssd
