// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sparse distributed MLP: bias-free layers whose hidden rows are non-negative and
// unit-norm, Top-K masking after every hidden layer, a dense linear class head,
// straight-through (fixed-mask) gradients and projected, momentum-free SGD.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssd/binio.hpp"
#include "ssd/error.hpp"
#include "ssd/numerics.hpp"
#include "ssd/random.hpp"

namespace ssd {

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;  // r, neurons in the layer
    std::size_t k = 0;        // active neurons per sample

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct SdmlpModel {
    std::vector<LayerSpec> specs;
    std::vector<Matrix> hidden;  // one row per neuron
    Matrix output;               // class_count x last hidden width
    std::size_t class_count = 0;
    bool output_nonneg = true;
    std::uint64_t seed = 0;
    std::uint64_t revivals = 0;  // rows re-seeded so far; drives the revival stream

    std::size_t depth() const noexcept { return hidden.size(); }
    std::size_t input_dim() const noexcept { return specs.empty() ? 0 : specs.front().in_dim; }
    std::size_t last_width() const noexcept { return specs.empty() ? 0 : specs.back().out_dim; }

    friend bool operator==(const SdmlpModel&, const SdmlpModel&) = default;
};

struct LayerTrace {
    Vec pre;          // W * input
    IndexSet active;  // Top-K of pre, ascending
    Vec post;         // pre on the active set, zero elsewhere
};

struct ForwardTrace {
    Vec input;  // L2-normalized sample
    std::vector<LayerTrace> layers;
    Vec logits;
};

struct Gradients {
    std::vector<Matrix> hidden;
    Matrix output;

    static Gradients zeros_like(const SdmlpModel& m) {
        Gradients g;
        for (const auto& w : m.hidden) g.hidden.emplace_back(w.rows(), w.cols(), 0.0);
        g.output = Matrix(m.output.rows(), m.output.cols(), 0.0);
        return g;
    }

    bool matches(const SdmlpModel& m) const noexcept {
        if (hidden.size() != m.hidden.size() || !output.same_shape(m.output)) return false;
        for (std::size_t l = 0; l < hidden.size(); ++l)
            if (!hidden[l].same_shape(m.hidden[l])) return false;
        return true;
    }

    void add_scaled(const Gradients& o, double s) {
        detail::require_shape(hidden.size() == o.hidden.size() && output.same_shape(o.output),
                              "Gradients::add_scaled: shape mismatch");
        for (std::size_t l = 0; l < hidden.size(); ++l) {
            detail::require_shape(hidden[l].same_shape(o.hidden[l]), "Gradients::add_scaled: shape mismatch");
            auto& dst = hidden[l].values();
            const auto& src = o.hidden[l].values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
        }
        auto& dst = output.values();
        const auto& src = o.output.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
    }

    void scale(double s) {
        for (auto& w : hidden)
            for (double& v : w.values()) v *= s;
        for (double& v : output.values()) v *= s;
    }

    bool all_zero() const {
        for (const auto& w : hidden)
            for (double v : w.values())
                if (v != 0.0) return false;
        for (double v : output.values())
            if (v != 0.0) return false;
        return true;
    }
};

namespace detail {

inline void validate_specs(const std::vector<LayerSpec>& specs, std::size_t class_count) {
    require(!specs.empty(), "model needs at least one hidden layer");
    require(class_count >= 1, "class_count must be at least 1");
    for (std::size_t l = 0; l < specs.size(); ++l) {
        const auto& s = specs[l];
        const std::string where = "layer " + std::to_string(l) + ": ";
        require(s.in_dim >= 1 && s.out_dim >= 1, where + "dimensions must be positive");
        require(s.k >= 1 && s.k <= s.out_dim,
                where + "k=" + std::to_string(s.k) + " outside [1, " + std::to_string(s.out_dim) + "]");
        if (l > 0)
            require(s.in_dim == specs[l - 1].out_dim,
                    where + "in_dim " + std::to_string(s.in_dim) + " does not match previous out_dim " +
                        std::to_string(specs[l - 1].out_dim));
    }
}

// |N(0, 1/in_dim)| row scaled to unit norm.
inline void draw_unit_row(Rng& rng, std::span<double> row) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(row.size())));
    for (;;) {
        double norm2 = 0.0;
        for (double& v : row) {
            v = std::abs(dist(rng));
            norm2 += v * v;
        }
        if (norm2 > 0.0) {
            const double norm = std::sqrt(norm2);
            for (double& v : row) v /= norm;
            return;
        }
    }
}

}  // namespace detail

inline SdmlpModel init_model(const std::vector<LayerSpec>& specs, std::size_t class_count, std::uint64_t seed,
                             bool output_nonneg = true) {
    detail::validate_specs(specs, class_count);
    SdmlpModel m;
    m.specs = specs;
    m.class_count = class_count;
    m.output_nonneg = output_nonneg;
    m.seed = seed;
    Rng rng = make_rng(seed, {stream::kInit});
    for (const auto& s : specs) {
        Matrix w(s.out_dim, s.in_dim);
        for (std::size_t r = 0; r < s.out_dim; ++r) detail::draw_unit_row(rng, w.row(r));
        m.hidden.push_back(std::move(w));
    }
    const std::size_t width = specs.back().out_dim;
    m.output = Matrix(class_count, width);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
    for (double& v : m.output.values()) {
        v = dist(rng);
        if (output_nonneg) v = std::abs(v);
    }
    return m;
}

inline ForwardTrace forward(const SdmlpModel& m, std::span<const double> x) {
    detail::require_shape(x.size() == m.input_dim(), "forward: input has " + std::to_string(x.size()) +
                                                         " entries, model expects " +
                                                         std::to_string(m.input_dim()));
    detail::require(all_finite(x), "forward: non-finite input");
    ForwardTrace t;
    t.input = l2_normalize(x);
    t.layers.reserve(m.depth());
    const Vec* cur = &t.input;
    for (std::size_t l = 0; l < m.depth(); ++l) {
        LayerTrace lt;
        lt.pre = matvec(m.hidden[l], *cur);
        lt.active = topk_indices(lt.pre, m.specs[l].k);
        lt.post.assign(lt.pre.size(), 0.0);
        for (auto i : lt.active) lt.post[i] = lt.pre[i];
        t.layers.push_back(std::move(lt));
        cur = &t.layers.back().post;
    }
    t.logits = matvec(m.output, *cur);
    return t;
}

inline void check_trace(const SdmlpModel& m, const ForwardTrace& t) {
    detail::require_shape(t.layers.size() == m.depth() && t.input.size() == m.input_dim() &&
                              t.logits.size() == m.class_count,
                          "trace does not belong to this model");
    for (std::size_t l = 0; l < m.depth(); ++l)
        detail::require_shape(t.layers[l].pre.size() == m.specs[l].out_dim &&
                                  t.layers[l].post.size() == m.specs[l].out_dim,
                              "trace layer " + std::to_string(l) + " does not match model width");
}

// Accumulates scale * d(loss)/d(weights) for one sample into `acc`.
// `grad_logits` is d(loss)/d(logits). `hidden_pre_grads`, when given, holds extra
// per-layer gradients injected directly at the hidden pre-activations (used by
// hidden-layer distillation); they bypass the Top-K mask of their own layer.
inline void backward_into(const SdmlpModel& m, const ForwardTrace& t, std::span<const double> grad_logits,
                          const std::vector<Vec>* hidden_pre_grads, Gradients& acc, double scale = 1.0) {
    check_trace(m, t);
    detail::require_shape(grad_logits.size() == m.class_count, "backward: logit gradient has wrong length");
    detail::require_shape(acc.matches(m), "backward: gradient accumulator does not match model");
    if (hidden_pre_grads) {
        detail::require_shape(hidden_pre_grads->size() == m.depth(), "backward: hidden gradient layer count");
        for (std::size_t l = 0; l < m.depth(); ++l)
            detail::require_shape((*hidden_pre_grads)[l].empty() ||
                                      (*hidden_pre_grads)[l].size() == m.specs[l].out_dim,
                                  "backward: hidden gradient width mismatch at layer " + std::to_string(l));
    }

    const Vec& last = t.layers.back().post;
    for (std::size_t c = 0; c < m.class_count; ++c) {
        const double g = scale * grad_logits[c];
        if (g == 0.0) continue;
        auto row = acc.output.row(c);
        for (std::size_t j = 0; j < last.size(); ++j) row[j] += g * last[j];
    }

    // d(loss)/d(post activations of the current layer)
    Vec g_post(m.last_width(), 0.0);
    for (std::size_t c = 0; c < m.class_count; ++c) {
        const double g = grad_logits[c];
        if (g == 0.0) continue;
        auto row = m.output.row(c);
        for (std::size_t j = 0; j < g_post.size(); ++j) g_post[j] += g * row[j];
    }

    for (std::size_t l = m.depth(); l-- > 0;) {
        const auto& lt = t.layers[l];
        Vec g_pre(lt.pre.size(), 0.0);
        for (auto i : lt.active) g_pre[i] = g_post[i];
        if (hidden_pre_grads && !(*hidden_pre_grads)[l].empty()) {
            const Vec& inj = (*hidden_pre_grads)[l];
            for (std::size_t i = 0; i < g_pre.size(); ++i) g_pre[i] += inj[i];
        }
        const Vec& in = l == 0 ? t.input : t.layers[l - 1].post;
        for (std::size_t r = 0; r < g_pre.size(); ++r) {
            const double g = scale * g_pre[r];
            if (g == 0.0) continue;
            auto row = acc.hidden[l].row(r);
            for (std::size_t j = 0; j < in.size(); ++j) row[j] += g * in[j];
        }
        if (l > 0) {
            Vec next(m.hidden[l].cols(), 0.0);
            for (std::size_t r = 0; r < g_pre.size(); ++r) {
                const double g = g_pre[r];
                if (g == 0.0) continue;
                auto row = m.hidden[l].row(r);
                for (std::size_t j = 0; j < next.size(); ++j) next[j] += g * row[j];
            }
            g_post = std::move(next);
        }
    }
}

inline Gradients backward(const SdmlpModel& m, const ForwardTrace& t, std::span<const double> grad_logits,
                          const std::vector<Vec>* hidden_pre_grads = nullptr) {
    Gradients g = Gradients::zeros_like(m);
    backward_into(m, t, grad_logits, hidden_pre_grads, g);
    return g;
}

// Clamp hidden weights at zero and renormalize each hidden row; rows that clamp
// to all-zero are re-seeded. The output layer is only clamped (when enabled).
inline SdmlpModel project_constraints(SdmlpModel m) {
    for (std::size_t l = 0; l < m.depth(); ++l) {
        auto& w = m.hidden[l];
        detail::require(all_finite(w.values()), "project_constraints: non-finite weight in layer " +
                                                    std::to_string(l));
        for (std::size_t r = 0; r < w.rows(); ++r) {
            auto row = w.row(r);
            double norm2 = 0.0;
            for (double& v : row) {
                if (v < 0.0) v = 0.0;
                norm2 += v * v;
            }
            if (norm2 == 0.0) {
                Rng rng = make_rng(m.seed, {stream::kRevival, m.revivals++});
                detail::draw_unit_row(rng, row);
                continue;
            }
            const double norm = std::sqrt(norm2);
            // already unit up to rounding: leave bits alone so projection is idempotent
            if (std::abs(norm - 1.0) <= 1e-13) continue;
            for (double& v : row) v /= norm;
        }
    }
    detail::require(all_finite(m.output.values()), "project_constraints: non-finite output weight");
    if (m.output_nonneg)
        for (double& v : m.output.values())
            if (v < 0.0) v = 0.0;
    return m;
}

inline SdmlpModel sgd_step(SdmlpModel m, const Gradients& g, double lr) {
    if (!(lr > 0.0)) throw InvalidArgument("sgd_step: learning rate must be positive");
    detail::require_shape(g.matches(m), "sgd_step: gradient shape does not match model");
    for (std::size_t l = 0; l < m.depth(); ++l) {
        auto& w = m.hidden[l].values();
        const auto& gw = g.hidden[l].values();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    }
    auto& w = m.output.values();
    const auto& gw = g.output.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    return project_constraints(std::move(m));
}

inline SdmlpModel snapshot(const SdmlpModel& m) { return m; }

// Largest violation of the hidden-layer constraints: max(-min weight, |row norm - 1|).
inline double constraint_violation(const SdmlpModel& m) {
    double worst = 0.0;
    for (const auto& w : m.hidden) {
        for (std::size_t r = 0; r < w.rows(); ++r) {
            auto row = w.row(r);
            for (double v : row) worst = std::max(worst, -v);
            worst = std::max(worst, std::abs(l2_norm(row) - 1.0));
        }
    }
    if (m.output_nonneg)
        for (double v : m.output.values()) worst = std::max(worst, -v);
    return worst;
}

// ---- checkpoint -----------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "SSDMLPCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const SdmlpModel& m, std::ostream& os) {
    using namespace binio;
    write_magic(os, kCheckpointMagic);
    write_le<std::uint32_t>(os, kCheckpointVersion);
    write_le<std::uint64_t>(os, m.class_count);
    write_le<std::uint8_t>(os, m.output_nonneg ? 1 : 0);
    write_le<std::uint64_t>(os, m.seed);
    write_le<std::uint64_t>(os, m.revivals);
    write_le<std::uint64_t>(os, m.specs.size());
    for (const auto& s : m.specs) {
        write_le<std::uint64_t>(os, s.in_dim);
        write_le<std::uint64_t>(os, s.out_dim);
        write_le<std::uint64_t>(os, s.k);
    }
    for (const auto& w : m.hidden)
        for (double v : w.values()) write_le<double>(os, v);
    for (double v : m.output.values()) write_le<double>(os, v);
}

inline SdmlpModel load_checkpoint(std::istream& is) {
    using namespace binio;
    expect_magic(is, kCheckpointMagic, "checkpoint");
    const auto version = read_le<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw MalformedFile("unsupported checkpoint version " + std::to_string(version));
    SdmlpModel m;
    m.class_count = read_le<std::uint64_t>(is, "class count");
    m.output_nonneg = read_le<std::uint8_t>(is, "output flag") != 0;
    m.seed = read_le<std::uint64_t>(is, "seed");
    m.revivals = read_le<std::uint64_t>(is, "revival counter");
    const auto depth = read_le<std::uint64_t>(is, "depth");
    if (depth == 0 || depth > 1024) throw MalformedFile("implausible layer count " + std::to_string(depth));
    for (std::uint64_t l = 0; l < depth; ++l) {
        LayerSpec s;
        s.in_dim = read_le<std::uint64_t>(is, "layer spec");
        s.out_dim = read_le<std::uint64_t>(is, "layer spec");
        s.k = read_le<std::uint64_t>(is, "layer spec");
        m.specs.push_back(s);
    }
    try {
        detail::validate_specs(m.specs, m.class_count);
    } catch (const InvalidArgument& e) {
        throw MalformedFile(std::string("checkpoint has invalid layer specs: ") + e.what());
    }
    for (const auto& s : m.specs) {
        Matrix w(s.out_dim, s.in_dim);
        for (double& v : w.values()) v = read_le<double>(is, "hidden weights");
        m.hidden.push_back(std::move(w));
    }
    m.output = Matrix(m.class_count, m.specs.back().out_dim);
    for (double& v : m.output.values()) v = read_le<double>(is, "output weights");
    return m;
}

inline void save_checkpoint(const SdmlpModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FileUnreadable("cannot open " + path + " for writing");
    save_checkpoint(m, os);
    if (!os) throw Error("failed writing checkpoint " + path);
}

inline SdmlpModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileUnreadable("cannot open " + path);
    return load_checkpoint(is);
}

}  // namespace ssd
