// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment driver: seeds, sweeps and re-analysis of finished run directories.
//
//   <out>/summary.json          per-seed results, mean and sample std, config echo
//   <out>/seed_<s>/...          one run directory per seed (see report.hpp)
//   <sweep>/sweep.csv           <param...>,final_acc_mean,final_acc_std,bwt_mean,bwt_std,dir
//   <sweep>/point_<NNN>/...     one experiment directory per grid point

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ssd/config.hpp"
#include "ssd/continual.hpp"
#include "ssd/data.hpp"
#include "ssd/metrics.hpp"
#include "ssd/report.hpp"

namespace ssd {

inline constexpr const char* kOutputRootEnv = "SSD_OUTPUT_ROOT";

// A relative output directory is placed under $SSD_OUTPUT_ROOT when that is set.
inline fs::path resolve_output_dir(const std::string& dir) {
    fs::path p(dir);
    if (p.is_relative())
        if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
    return p;
}

inline std::vector<TaskDataset> build_tasks(const ExperimentConfig& c, std::uint64_t seed) {
    const auto& d = c.data;
    if (d.source == DataSource::synthetic) {
        auto samples = gen_synthetic(d.num_classes, d.dim, d.samples_per_class, d.cluster_spread, seed);
        return split_tasks(samples, d.num_tasks, d.classes_per_task, d.val_fraction, seed, d.shuffle_classes);
    }
    const EmbeddingSet train = load_embeddings(d.train_path, d.format);
    if (d.val_path.empty())
        return split_tasks(train.samples, d.num_tasks, d.classes_per_task, d.val_fraction, seed, d.shuffle_classes);
    const EmbeddingSet val = load_embeddings(d.val_path, d.format);
    if (val.dim != train.dim)
        throw DimensionMismatch("validation embeddings have dim " + std::to_string(val.dim) + ", training has " +
                                std::to_string(train.dim));
    return split_tasks_with_val(train.samples, val.samples, d.num_tasks, d.classes_per_task, seed, d.shuffle_classes);
}

inline std::size_t data_class_count(const ExperimentConfig& c, const std::vector<TaskDataset>& tasks) {
    if (c.class_count) return *c.class_count;
    if (c.data.source == DataSource::synthetic) return c.data.num_classes;
    std::size_t top = 0;
    for (const auto& t : tasks)
        for (auto cl : t.class_set) top = std::max(top, cl + 1);
    return top;
}

inline ModelConfig model_config(const ExperimentConfig& c, std::size_t class_count) {
    ModelConfig m;
    m.hidden_widths.assign(c.depth, c.hidden_width);
    m.k = {c.k};
    m.class_count = class_count;
    m.output_nonneg = c.output_nonneg;
    return m;
}

struct SeedResult {
    std::uint64_t seed = 0;
    std::optional<double> mean_bwt;
    double final_avg_accuracy = 0.0;
};

inline SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed, const fs::path& dir,
                           const ProgressFn& progress = {}) {
    const auto tasks = build_tasks(c, seed);
    TrainConfig tc = c.train;
    tc.seed = seed;
    const RunResult r = run_sequence(tasks, model_config(c, data_class_count(c, tasks)), tc, progress);
    ExperimentConfig echo = c;
    echo.seeds = {seed};
    write_run(dir, r, seed, config_to_json(echo));
    return {seed, r.mean_bwt, r.final_avg_accuracy};
}

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // sample std; 0 for a single value
};

inline Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    if (v.empty()) return a;
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return a;
}

struct ExperimentSummary {
    std::vector<SeedResult> seeds;
    Aggregate final_acc;
    std::optional<Aggregate> bwt;
};

inline ExperimentSummary summarize(std::vector<SeedResult> seeds) {
    ExperimentSummary s;
    s.seeds = std::move(seeds);
    std::vector<double> acc;
    std::vector<double> b;
    for (const auto& r : s.seeds) {
        acc.push_back(r.final_avg_accuracy);
        if (r.mean_bwt) b.push_back(*r.mean_bwt);
    }
    s.final_acc = aggregate(acc);
    if (!b.empty()) s.bwt = aggregate(b);
    return s;
}

inline Json experiment_summary_json(const ExperimentSummary& s, const ExperimentConfig& c) {
    Json j;
    Json per = Json::array();
    for (const auto& r : s.seeds)
        per.push_back(Json{{"seed", r.seed},
                           {"mean_bwt", r.mean_bwt ? Json(*r.mean_bwt) : Json(nullptr)},
                           {"final_avg_accuracy", r.final_avg_accuracy},
                           {"dir", "seed_" + std::to_string(r.seed)}});
    j["seeds"] = std::move(per);
    j["final_avg_accuracy"] = Json{{"mean", s.final_acc.mean}, {"std", s.final_acc.std}};
    j["mean_bwt"] = s.bwt ? Json{{"mean", s.bwt->mean}, {"std", s.bwt->std}} : Json(nullptr);
    j["config"] = config_to_json(c);
    return j;
}

// Runs `count` independent jobs on up to `jobs` threads. Every job runs even if
// another fails; the first failure (by job index) is rethrown afterwards.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Serializes progress lines coming from worker threads.
class ProgressSink {
  public:
    explicit ProgressSink(ProgressFn sink) : sink_(std::move(sink)) {}
    ProgressFn tagged(std::string tag) {
        if (!sink_) return {};
        return [this, tag = std::move(tag)](const std::string& msg) {
            std::lock_guard lock(mu_);
            sink_(tag + msg);
        };
    }

  private:
    ProgressFn sink_;
    std::mutex mu_;
};

inline ExperimentSummary run_experiment(const ExperimentConfig& c, const fs::path& out, std::size_t jobs = 1,
                                        const ProgressFn& progress = {}) {
    validate(c);
    fs::create_directories(out);
    ProgressSink sink(progress);
    std::vector<SeedResult> results(c.seeds.size());
    parallel_for(c.seeds.size(), jobs, [&](std::size_t i) {
        const auto seed = c.seeds[i];
        results[i] = run_seed(c, seed, out / ("seed_" + std::to_string(seed)),
                              sink.tagged("[seed " + std::to_string(seed) + "] "));
    });
    auto s = summarize(std::move(results));
    write_text(out / "summary.json", experiment_summary_json(s, c).dump(2) + "\n");
    return s;
}

// ---- sweeps ---------------------------------------------------------------

struct SweepAxis {
    std::string name;
    std::vector<std::string> values;
};

// "lambda=0.1,0.3,0.5" -> {"lambda", {"0.1", "0.3", "0.5"}}
inline SweepAxis parse_sweep_axis(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
        throw InvalidArgument("sweep spec '" + spec + "' must look like name=v1,v2,...");
    SweepAxis a;
    a.name = spec.substr(0, eq);
    for (auto v : detail::split_commas(std::string_view(spec).substr(eq + 1))) {
        if (v.empty()) throw InvalidArgument("sweep spec '" + spec + "' has an empty value");
        a.values.emplace_back(v);
    }
    return a;
}

struct SweepPoint {
    std::vector<std::string> values;  // one per axis
    ExperimentConfig config;
    std::string dir;
};

// Cross product, first axis varying slowest. Every point is validated before anything runs.
inline std::vector<SweepPoint> expand_sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes) {
    if (axes.empty()) throw InvalidArgument("sweep needs at least one parameter grid");
    for (std::size_t a = 0; a < axes.size(); ++a) {
        ExperimentConfig probe = base;
        set_parameter(probe, axes[a].name, axes[a].values.front());  // rejects unknown names early
        for (std::size_t b = 0; b < a; ++b)
            if (axes[a].name == axes[b].name) throw InvalidArgument("sweep parameter '" + axes[a].name + "' repeated");
    }
    std::vector<SweepPoint> points;
    std::vector<std::size_t> idx(axes.size(), 0);
    for (;;) {
        SweepPoint p;
        p.config = base;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            p.values.push_back(axes[a].values[idx[a]]);
            set_parameter(p.config, axes[a].name, p.values.back());
        }
        try {
            validate(p.config);
        } catch (const ConfigError& e) {
            std::string where;
            for (std::size_t a = 0; a < axes.size(); ++a)
                where += (a ? ", " : "") + axes[a].name + "=" + p.values[a];
            throw ConfigError(e.field(), std::string("sweep point (") + where + ") is invalid: " + e.what());
        }
        std::ostringstream name;
        name << "point_" << std::setw(3) << std::setfill('0') << points.size();
        p.dir = name.str();
        points.push_back(std::move(p));
        std::size_t a = axes.size();
        while (a > 0) {
            --a;
            if (++idx[a] < axes[a].values.size()) break;
            idx[a] = 0;
            if (a == 0) return points;
        }
    }
}

struct SweepResult {
    std::vector<SweepPoint> points;
    std::vector<ExperimentSummary> summaries;
};

inline SweepResult run_sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes, const fs::path& out,
                             std::size_t jobs = 1, const ProgressFn& progress = {}) {
    SweepResult sr;
    sr.points = expand_sweep(base, axes);
    fs::create_directories(out);
    const std::size_t seeds = base.seeds.size();
    const std::size_t total = sr.points.size() * seeds;
    std::vector<SeedResult> flat(total);
    ProgressSink sink(progress);
    parallel_for(total, jobs, [&](std::size_t j) {
        const auto& p = sr.points[j / seeds];
        const auto seed = p.config.seeds[j % seeds];
        flat[j] = run_seed(p.config, seed, out / p.dir / ("seed_" + std::to_string(seed)),
                           sink.tagged("[" + p.dir + " seed " + std::to_string(seed) + "] "));
    });
    std::string header;
    for (const auto& a : axes) header += a.name + ",";
    header += "final_acc_mean,final_acc_std,bwt_mean,bwt_std,dir";
    CsvWriter w(out / "sweep.csv", header);
    for (std::size_t p = 0; p < sr.points.size(); ++p) {
        std::vector<SeedResult> mine(flat.begin() + static_cast<std::ptrdiff_t>(p * seeds),
                                     flat.begin() + static_cast<std::ptrdiff_t>((p + 1) * seeds));
        auto s = summarize(std::move(mine));
        write_text(out / sr.points[p].dir / "summary.json",
                   experiment_summary_json(s, sr.points[p].config).dump(2) + "\n");
        std::string params;
        for (const auto& v : sr.points[p].values) params += v + ",";
        const std::string bm = s.bwt ? fmt_double(s.bwt->mean) : "";
        const std::string bs = s.bwt ? fmt_double(s.bwt->std) : "";
        w.row(params + fmt_double(s.final_acc.mean), s.final_acc.std, bm, bs, sr.points[p].dir);
        sr.summaries.push_back(std::move(s));
    }
    w.close();
    return sr;
}

// ---- analysis -------------------------------------------------------------

struct Analysis {
    AccuracyMatrix accuracy;
    std::optional<double> bwt;
    double final_avg_accuracy = 0.0;
    std::optional<double> summary_bwt;
    double summary_final_avg_accuracy = 0.0;
    bool consistent = true;  // recomputed values agree with summary.json to 1e-9
    Json report;
};

inline Analysis analyze_run(const fs::path& dir) {
    for (const char* f : kContractFiles)
        if (!fs::exists(dir / f)) throw FileUnreadable(std::string("missing contract file ") + f + " in " + dir.string());
    Analysis a;
    a.accuracy = read_accuracy_matrix(dir / "accuracy_matrix.csv");
    if (a.accuracy.tasks() >= 2) a.bwt = bwt(a.accuracy);
    a.final_avg_accuracy = final_average_accuracy(a.accuracy);

    const Json summary = read_json(dir / "summary.json");
    try {
        if (!summary.at("mean_bwt").is_null()) a.summary_bwt = summary.at("mean_bwt").get<double>();
        a.summary_final_avg_accuracy = summary.at("final_avg_accuracy").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFile((dir / "summary.json").string() + ": " + e.what());
    }
    auto close = [](double x, double y) { return std::abs(x - y) <= 1e-9; };
    a.consistent = close(a.final_avg_accuracy, a.summary_final_avg_accuracy) &&
                   a.bwt.has_value() == a.summary_bwt.has_value() && (!a.bwt || close(*a.bwt, *a.summary_bwt));

    Json& j = a.report;
    j["tasks"] = a.accuracy.tasks();
    j["mean_bwt"] = a.bwt ? Json(*a.bwt) : Json(nullptr);
    j["final_avg_accuracy"] = a.final_avg_accuracy;
    j["summary_mean_bwt"] = a.summary_bwt ? Json(*a.summary_bwt) : Json(nullptr);
    j["summary_final_avg_accuracy"] = a.summary_final_avg_accuracy;
    j["consistent_with_summary"] = a.consistent;

    Json diag = Json::array();
    for (std::size_t t = 0; t < a.accuracy.tasks(); ++t) diag.push_back(a.accuracy.at(t, t));
    j["accuracy_when_learned"] = std::move(diag);

    // entropy: first and last recorded value per task
    Json ent = Json::array();
    const auto entropy = read_entropy(dir / "entropy.csv");
    for (std::size_t i = 0; i < entropy.size(); ++i) {
        if (i > 0 && entropy[i].task == entropy[i - 1].task) continue;
        std::size_t last = i;
        while (last + 1 < entropy.size() && entropy[last + 1].task == entropy[i].task) ++last;
        ent.push_back(Json{{"task", entropy[i].task},
                           {"first_epoch", entropy[i].epoch},
                           {"first", entropy[i].mean_entropy},
                           {"last_epoch", entropy[last].epoch},
                           {"last", entropy[last].mean_entropy}});
    }
    j["entropy"] = std::move(ent);

    // traces: per (metric, task) first, last, min, max, mean in file order
    struct Acc {
        std::string metric;
        std::size_t task;
        std::size_t count = 0;
        double first = 0, last = 0, lo = 0, hi = 0, sum = 0;
    };
    std::vector<Acc> accs;
    for (const auto& t : read_traces(dir / "traces.csv")) {
        auto it = std::find_if(accs.begin(), accs.end(),
                               [&](const Acc& x) { return x.metric == t.metric && x.task == t.task; });
        if (it == accs.end()) {
            accs.push_back({t.metric, t.task, 0, t.value, t.value, t.value, t.value, 0.0});
            it = accs.end() - 1;
        }
        ++it->count;
        it->last = t.value;
        it->lo = std::min(it->lo, t.value);
        it->hi = std::max(it->hi, t.value);
        it->sum += t.value;
    }
    Json tr = Json::array();
    for (const auto& x : accs)
        tr.push_back(Json{{"metric", x.metric},
                          {"task", x.task},
                          {"points", x.count},
                          {"first", x.first},
                          {"last", x.last},
                          {"min", x.lo},
                          {"max", x.hi},
                          {"mean", x.sum / static_cast<double>(x.count)}});
    j["traces"] = std::move(tr);
    return a;
}

// A run directory, or an experiment directory whose seed_* subdirectories are run directories.
inline std::vector<fs::path> find_run_dirs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FileUnreadable("not a directory: " + dir.string());
    if (fs::exists(dir / "accuracy_matrix.csv")) return {dir};
    std::vector<fs::path> runs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) runs.push_back(e.path());
    std::sort(runs.begin(), runs.end());
    if (runs.empty()) throw FileUnreadable("missing contract file accuracy_matrix.csv in " + dir.string());
    return runs;
}

}  // namespace ssd
