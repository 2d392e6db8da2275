// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration: a JSON document with a fixed schema. Unknown keys
// are rejected and every error names the offending field path.
//
// {
//   "method": "ssd" | "sdmlp_baseline" | "ssd_ewc" | "ewc_only",
//   "seeds": [1, 2, 3],
//   "output_dir": "runs/ssd",
//   "data": {
//     "source": "synthetic",
//     "num_classes": 10, "dim": 16, "samples_per_class": 100, "cluster_spread": 0.3,
//     "num_tasks": 5, "classes_per_task": 2, "val_fraction": 0.2, "shuffle_classes": false
//   },
//   -- or --
//   "data": { "source": "embeddings", "train": "train.ssdemb", "val": "val.ssdemb",
//             "format": "auto" | "binary" | "csv", "num_tasks": ..., "classes_per_task": ...,
//             "val_fraction": 0.2, "shuffle_classes": false },
//   "model":   { "hidden_width": 1000, "depth": 1, "k": 10, "class_count": 10, "output_nonneg": true },
//   "train":   { "epochs_per_task": 300, "lr": 0.05, "batch_size": 32, "sampling_interval": 50,
//                "probe_size": 8, "stats_window": "final_epoch" | "cumulative" },
//   "distill": { "alpha": 0.7, "lambda": 0.1, "temperature": 8.0, "n": 1000 | "full",
//                "kl_direction": "student_first" | "teacher_first",
//                "hidden_source": "pre_mask" | "post_mask",
//                "index_alignment": "shared" | "independent", "hierarchical": true },
//   "ewc":     { "lambda": 50.0, "anchors": "latest" | "all" }   (present iff the method uses EWC)
// }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssd/continual.hpp"
#include "ssd/data.hpp"
#include "ssd/error.hpp"

namespace ssd {

class ConfigError : public InvalidArgument {
  public:
    ConfigError(const std::string& field, const std::string& msg) : InvalidArgument(field + ": " + msg), field_(field) {}
    const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

enum class Method { sdmlp_baseline, ssd, ssd_ewc, ewc_only };

inline bool method_uses_kd(Method m) { return m == Method::ssd || m == Method::ssd_ewc; }
inline bool method_uses_ewc(Method m) { return m == Method::ssd_ewc || m == Method::ewc_only; }

enum class DataSource { synthetic, embeddings };

struct DataConfig {
    DataSource source = DataSource::synthetic;
    std::size_t num_classes = 10;
    std::size_t dim = 16;
    std::size_t samples_per_class = 100;
    double cluster_spread = 0.3;
    std::string train_path;
    std::string val_path;  // empty: split val_fraction off the training file
    EmbeddingFormat format = EmbeddingFormat::auto_detect;
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 2;
    double val_fraction = 0.2;
    bool shuffle_classes = false;
};

struct ExperimentConfig {
    Method method = Method::ssd;
    std::vector<std::uint64_t> seeds{1};
    std::string output_dir = "runs/default";
    DataConfig data;
    std::size_t hidden_width = 1000;
    std::size_t depth = 1;
    std::size_t k = 10;
    std::optional<std::size_t> class_count;  // defaults to the data's class count
    bool output_nonneg = true;
    TrainConfig train;
};

namespace detail {

template <class E>
struct EnumName {
    E value;
    const char* name;
};

inline constexpr EnumName<Method> kMethods[] = {{Method::sdmlp_baseline, "sdmlp_baseline"},
                                                {Method::ssd, "ssd"},
                                                {Method::ssd_ewc, "ssd_ewc"},
                                                {Method::ewc_only, "ewc_only"}};
inline constexpr EnumName<DataSource> kSources[] = {{DataSource::synthetic, "synthetic"},
                                                    {DataSource::embeddings, "embeddings"}};
inline constexpr EnumName<EmbeddingFormat> kFormats[] = {{EmbeddingFormat::auto_detect, "auto"},
                                                         {EmbeddingFormat::binary, "binary"},
                                                         {EmbeddingFormat::csv, "csv"}};
inline constexpr EnumName<StatsWindow> kWindows[] = {{StatsWindow::final_epoch, "final_epoch"},
                                                     {StatsWindow::cumulative, "cumulative"}};
inline constexpr EnumName<KlDirection> kDirections[] = {{KlDirection::student_first, "student_first"},
                                                        {KlDirection::teacher_first, "teacher_first"}};
inline constexpr EnumName<HiddenSource> kHiddenSources[] = {{HiddenSource::pre_mask, "pre_mask"},
                                                            {HiddenSource::post_mask, "post_mask"}};
inline constexpr EnumName<IndexAlignment> kAlignments[] = {{IndexAlignment::shared, "shared"},
                                                           {IndexAlignment::independent, "independent"}};
inline constexpr EnumName<EwcAnchorMode> kAnchorModes[] = {{EwcAnchorMode::latest, "latest"},
                                                           {EwcAnchorMode::all, "all"}};

template <class E, std::size_t N>
const char* enum_name(const EnumName<E> (&table)[N], E v) {
    for (const auto& e : table)
        if (e.value == v) return e.name;
    return "?";
}

// Object reader that rejects keys nobody asked for.
class Fields {
  public:
    Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }

    bool has(const std::string& key) {
        known_.insert(key);
        return j_.contains(key);
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const nlohmann::json& raw(const std::string& key) {
        known_.insert(key);
        return j_.at(key);
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(field(key), "must be true or false");
            out = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
                throw ConfigError(field(key), "must be a non-negative integer");
            out = v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(field(key), "must be a number");
            out = v.get<T>();
        } else {
            if (!v.is_string()) throw ConfigError(field(key), "must be a string");
            out = v.get<std::string>();
        }
    }

    template <class E, std::size_t N>
    void get_enum(const std::string& key, const EnumName<E> (&table)[N], E& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (v.is_string()) {
            for (const auto& e : table)
                if (v.get<std::string>() == e.name) {
                    out = e.value;
                    return;
                }
        }
        std::string allowed;
        for (const auto& e : table) allowed += (allowed.empty() ? "" : ", ") + std::string(e.name);
        throw ConfigError(field(key), "must be one of " + allowed);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!known_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
    }

  private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> known_;
};

inline void check(bool cond, const std::string& field, const std::string& msg) {
    if (!cond) throw ConfigError(field, msg);
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
    using detail::check;
    check(!c.seeds.empty(), "seeds", "must list at least one seed");
    check(!c.output_dir.empty(), "output_dir", "must not be empty");
    const auto& d = c.data;
    if (d.source == DataSource::synthetic) {
        check(d.num_classes >= 1, "data.num_classes", "must be positive");
        check(d.dim >= 1, "data.dim", "must be positive");
        check(d.samples_per_class >= 1, "data.samples_per_class", "must be positive");
        check(d.cluster_spread > 0.0, "data.cluster_spread", "must be positive");
        check(d.num_tasks * d.classes_per_task <= d.num_classes, "data.num_tasks",
              "num_tasks * classes_per_task exceeds num_classes");
    } else {
        check(!d.train_path.empty(), "data.train", "required for embedding data");
    }
    check(d.num_tasks >= 1, "data.num_tasks", "must be positive");
    check(d.classes_per_task >= 1, "data.classes_per_task", "must be positive");
    check(d.val_fraction > 0.0 && d.val_fraction < 1.0, "data.val_fraction", "must be in (0,1)");
    check(c.hidden_width >= 1, "model.hidden_width", "must be positive");
    check(c.depth >= 1, "model.depth", "must be positive");
    check(c.k >= 1 && c.k <= c.hidden_width, "model.k", "must be in [1, hidden_width]");
    check(!c.class_count || *c.class_count >= 1, "model.class_count", "must be positive");
    const auto& t = c.train;
    check(t.epochs_per_task >= 1, "train.epochs_per_task", "must be positive");
    check(t.lr > 0.0, "train.lr", "must be positive");
    check(t.batch_size >= 1, "train.batch_size", "must be positive");
    check(t.sampling_interval >= 1, "train.sampling_interval", "must be at least 1");
    check(t.probe_size >= 1, "train.probe_size", "must be at least 1");
    const auto& dc = t.distill;
    check(dc.alpha >= 0.0 && dc.alpha <= 1.0, "distill.alpha", "must be in [0,1]");
    check(dc.lambda >= 0.0 && dc.lambda <= 1.0, "distill.lambda", "must be in [0,1]");
    check(dc.temperature > 0.0, "distill.temperature", "must be positive");
    if (method_uses_kd(c.method) && dc.n)
        check(*dc.n >= c.k && *dc.n <= c.hidden_width, "distill.n",
              "must be in [k, hidden_width] = [" + std::to_string(c.k) + ", " + std::to_string(c.hidden_width) +
                  "] (or \"full\")");
    check(t.ewc_lambda >= 0.0, "ewc.lambda", "must be non-negative");
}

inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    ExperimentConfig c;
    detail::Fields root(j, "");
    root.get_enum("method", detail::kMethods, c.method);
    if (root.has("seeds")) {
        const auto& s = root.raw("seeds");
        if (!s.is_array()) throw ConfigError("seeds", "must be an array of non-negative integers");
        c.seeds.clear();
        for (const auto& v : s) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
                throw ConfigError("seeds", "must be an array of non-negative integers");
            c.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    root.get("output_dir", c.output_dir);

    if (root.has("data")) {
        detail::Fields f(root.raw("data"), "data");
        f.get_enum("source", detail::kSources, c.data.source);
        if (c.data.source == DataSource::synthetic) {
            f.get("num_classes", c.data.num_classes);
            f.get("dim", c.data.dim);
            f.get("samples_per_class", c.data.samples_per_class);
            f.get("cluster_spread", c.data.cluster_spread);
        } else {
            f.get("train", c.data.train_path);
            f.get("val", c.data.val_path);
            f.get_enum("format", detail::kFormats, c.data.format);
            auto resolve = [&](std::string& p) {
                if (!p.empty() && std::filesystem::path(p).is_relative() && !base_dir.empty())
                    p = (base_dir / p).lexically_normal().string();
            };
            resolve(c.data.train_path);
            resolve(c.data.val_path);
        }
        f.get("num_tasks", c.data.num_tasks);
        f.get("classes_per_task", c.data.classes_per_task);
        f.get("val_fraction", c.data.val_fraction);
        f.get("shuffle_classes", c.data.shuffle_classes);
        f.finish();
    }
    if (root.has("model")) {
        detail::Fields f(root.raw("model"), "model");
        f.get("hidden_width", c.hidden_width);
        f.get("depth", c.depth);
        f.get("k", c.k);
        if (f.has("class_count")) {
            std::size_t cc = 0;
            f.get("class_count", cc);
            c.class_count = cc;
        }
        f.get("output_nonneg", c.output_nonneg);
        f.finish();
    }
    if (root.has("train")) {
        detail::Fields f(root.raw("train"), "train");
        f.get("epochs_per_task", c.train.epochs_per_task);
        f.get("lr", c.train.lr);
        f.get("batch_size", c.train.batch_size);
        f.get("sampling_interval", c.train.sampling_interval);
        f.get("probe_size", c.train.probe_size);
        f.get_enum("stats_window", detail::kWindows, c.train.stats_window);
        f.finish();
    }
    if (root.has("distill")) {
        detail::Fields f(root.raw("distill"), "distill");
        auto& d = c.train.distill;
        f.get("alpha", d.alpha);
        f.get("lambda", d.lambda);
        f.get("temperature", d.temperature);
        if (f.has("n")) {
            const auto& v = f.raw("n");
            if (v.is_string() && v.get<std::string>() == "full")
                d.n.reset();
            else if (v.is_number_integer() && v.get<std::int64_t>() > 0)
                d.n = v.get<std::size_t>();
            else
                throw ConfigError("distill.n", "must be a positive integer or \"full\"");
        }
        f.get_enum("kl_direction", detail::kDirections, d.kl_direction);
        f.get_enum("hidden_source", detail::kHiddenSources, d.hidden_source);
        f.get_enum("index_alignment", detail::kAlignments, d.index_alignment);
        f.get("hierarchical", d.hierarchical);
        f.finish();
    }
    const bool ewc_section = root.has("ewc");
    if (method_uses_ewc(c.method) && !ewc_section)
        throw ConfigError("ewc", std::string("required for method ") + detail::enum_name(detail::kMethods, c.method));
    if (!method_uses_ewc(c.method) && ewc_section)
        throw ConfigError("ewc", std::string("not allowed for method ") + detail::enum_name(detail::kMethods, c.method));
    if (ewc_section) {
        detail::Fields f(root.raw("ewc"), "ewc");
        if (!f.has("lambda")) throw ConfigError("ewc.lambda", "required when EWC is enabled");
        f.get("lambda", c.train.ewc_lambda);
        f.get_enum("anchors", detail::kAnchorModes, c.train.ewc_anchors);
        f.finish();
    }
    root.finish();
    c.train.distill_enabled = method_uses_kd(c.method);
    c.train.ewc_enabled = method_uses_ewc(c.method);
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FileUnreadable("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
    }
    return parse_config(j, path.parent_path());
}

// Fully materialized configuration (every default spelled out), loadable by parse_config.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["method"] = detail::enum_name(detail::kMethods, c.method);
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir;
    auto& d = j["data"];
    d["source"] = detail::enum_name(detail::kSources, c.data.source);
    if (c.data.source == DataSource::synthetic) {
        d["num_classes"] = c.data.num_classes;
        d["dim"] = c.data.dim;
        d["samples_per_class"] = c.data.samples_per_class;
        d["cluster_spread"] = c.data.cluster_spread;
    } else {
        d["train"] = c.data.train_path;
        d["val"] = c.data.val_path;
        d["format"] = detail::enum_name(detail::kFormats, c.data.format);
    }
    d["num_tasks"] = c.data.num_tasks;
    d["classes_per_task"] = c.data.classes_per_task;
    d["val_fraction"] = c.data.val_fraction;
    d["shuffle_classes"] = c.data.shuffle_classes;
    auto& m = j["model"];
    m["hidden_width"] = c.hidden_width;
    m["depth"] = c.depth;
    m["k"] = c.k;
    if (c.class_count) m["class_count"] = *c.class_count;
    m["output_nonneg"] = c.output_nonneg;
    auto& t = j["train"];
    t["epochs_per_task"] = c.train.epochs_per_task;
    t["lr"] = c.train.lr;
    t["batch_size"] = c.train.batch_size;
    t["sampling_interval"] = c.train.sampling_interval;
    t["probe_size"] = c.train.probe_size;
    t["stats_window"] = detail::enum_name(detail::kWindows, c.train.stats_window);
    auto& ds = j["distill"];
    const auto& dc = c.train.distill;
    ds["alpha"] = dc.alpha;
    ds["lambda"] = dc.lambda;
    ds["temperature"] = dc.temperature;
    if (dc.n)
        ds["n"] = *dc.n;
    else
        ds["n"] = "full";
    ds["kl_direction"] = detail::enum_name(detail::kDirections, dc.kl_direction);
    ds["hidden_source"] = detail::enum_name(detail::kHiddenSources, dc.hidden_source);
    ds["index_alignment"] = detail::enum_name(detail::kAlignments, dc.index_alignment);
    ds["hierarchical"] = dc.hierarchical;
    if (method_uses_ewc(c.method)) {
        j["ewc"]["lambda"] = c.train.ewc_lambda;
        j["ewc"]["anchors"] = detail::enum_name(detail::kAnchorModes, c.train.ewc_anchors);
    }
    return j;
}

// ---- sweeps ---------------------------------------------------------------

inline const std::vector<std::string>& sweepable_parameters() {
    static const std::vector<std::string> names{"alpha",      "lambda", "temperature",     "n",
                                                "lr",         "k",      "hidden_width",    "epochs_per_task",
                                                "batch_size", "ewc_lambda", "cluster_spread", "method"};
    return names;
}

inline void set_parameter(ExperimentConfig& c, const std::string& name, const std::string& value) {
    auto num = [&]() {
        double v = 0.0;
        if (!detail::parse_number(value, v)) throw ConfigError(name, "bad numeric value '" + value + "'");
        return v;
    };
    auto count = [&]() {
        std::size_t v = 0;
        if (!detail::parse_number(value, v)) throw ConfigError(name, "bad integer value '" + value + "'");
        return v;
    };
    auto& d = c.train.distill;
    if (name == "alpha") d.alpha = num();
    else if (name == "lambda") d.lambda = num();
    else if (name == "temperature" || name == "T") d.temperature = num();
    else if (name == "n") {
        if (value == "full") d.n.reset();
        else d.n = count();
    } else if (name == "lr") c.train.lr = num();
    else if (name == "k") c.k = count();
    else if (name == "hidden_width") c.hidden_width = count();
    else if (name == "epochs_per_task") c.train.epochs_per_task = count();
    else if (name == "batch_size") c.train.batch_size = count();
    else if (name == "ewc_lambda") {
        if (!method_uses_ewc(c.method)) throw ConfigError(name, "method does not use EWC");
        c.train.ewc_lambda = num();
    } else if (name == "cluster_spread") c.data.cluster_spread = num();
    else if (name == "method") {
        bool found = false;
        for (const auto& e : detail::kMethods)
            if (value == e.name) {
                c.method = e.value;
                found = true;
            }
        if (!found) throw ConfigError(name, "unknown method '" + value + "'");
        c.train.distill_enabled = method_uses_kd(c.method);
        c.train.ewc_enabled = method_uses_ewc(c.method);
    } else {
        std::string all;
        for (const auto& p : sweepable_parameters()) all += (all.empty() ? "" : ", ") + p;
        throw ConfigError(name, "unknown sweep parameter; sweepable parameters: " + all);
    }
}

}  // namespace ssd
