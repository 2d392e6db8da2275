// SPDX-License-Identifier: Apache-2.0
//
// ssd: run, sweep and analyze continual-learning experiments.
//
//   ssd run     --config exp.json [--out DIR] [--seeds 1,2,3] [--jobs N]
//   ssd sweep   --config exp.json --grid lambda=0.1,0.5,0.9 [--grid n=10,full] [--out DIR] [--jobs N]
//   ssd analyze DIR [--out FILE]
//
// Progress goes to stderr. Results live in files only.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssd/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
    std::vector<std::uint64_t> seeds;
    for (auto f : ssd::detail::split_commas(list)) {
        std::uint64_t s = 0;
        if (!ssd::detail::parse_number(f, s)) throw ssd::ConfigError("--seeds", "bad seed '" + std::string(f) + "'");
        seeds.push_back(s);
    }
    if (seeds.empty()) throw ssd::ConfigError("--seeds", "empty list");
    return seeds;
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

std::string pm(const ssd::Aggregate& a) { return ssd::fmt_double(a.mean) + " +- " + ssd::fmt_double(a.std); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse continual learning with selective subnetwork distillation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::string seeds;
    std::size_t jobs = 1;
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    auto* run = app.add_subcommand("run", "Train every seed of a config and write the run directories");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory (default: the config's output_dir)");
    run->add_option("--seeds", seeds, "Comma-separated seed list overriding the config");
    run->add_option("--jobs", jobs, "Parallel seeds")->check(CLI::PositiveNumber);

    std::vector<std::string> grids;
    auto* sweep = app.add_subcommand("sweep", "Grid sweep over config parameters");
    sweep->add_option("--config", config_path, "Base experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sweep->add_option("--grid", grids, "name=v1,v2,... (repeat for a cross product)")->required();
    sweep->add_option("--out", out, "Output directory (default: the config's output_dir)");
    sweep->add_option("--seeds", seeds, "Comma-separated seed list overriding the config");
    sweep->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

    std::string analyze_dir;
    auto* analyze = app.add_subcommand("analyze", "Recompute metrics from a run directory's raw CSVs");
    analyze->add_option("dir", analyze_dir, "Run directory or experiment directory")->required();
    analyze->add_option("--out", out, "Report path (default: <dir>/analysis.json)");

    CLI11_PARSE(app, argc, argv);
    const ssd::ProgressFn progress = quiet ? ssd::ProgressFn{} : ssd::ProgressFn(log_line);

    try {
        if (*run || *sweep) {
            auto cfg = ssd::load_config(config_path);
            if (!seeds.empty()) cfg.seeds = parse_seeds(seeds);
            const auto dir = out.empty() ? ssd::resolve_output_dir(cfg.output_dir) : ssd::fs::path(out);
            if (*run) {
                const auto s = ssd::run_experiment(cfg, dir, jobs, progress);
                std::cout << "final_avg_accuracy " << pm(s.final_acc);
                if (s.bwt) std::cout << "  mean_bwt " << pm(*s.bwt);
                std::cout << "  (" << s.seeds.size() << " seeds, " << dir.string() << ")\n";
            } else {
                std::vector<ssd::SweepAxis> axes;
                for (const auto& g : grids) axes.push_back(ssd::parse_sweep_axis(g));
                const auto r = ssd::run_sweep(cfg, axes, dir, jobs, progress);
                std::cout << r.points.size() << " sweep points written to " << (dir / "sweep.csv").string() << '\n';
            }
            return 0;
        }
        ssd::Json report = ssd::Json::array();
        for (const auto& d : ssd::find_run_dirs(analyze_dir)) {
            auto a = ssd::analyze_run(d);
            a.report["dir"] = d.string();
            // reported, not fatal: the raw CSVs are authoritative
            if (!a.consistent)
                std::cerr << "warning: " << d.string() << ": summary.json disagrees with accuracy_matrix.csv\n";
            std::cerr << d.string() << ": final_avg_accuracy " << ssd::fmt_double(a.final_avg_accuracy);
            if (a.bwt) std::cerr << " mean_bwt " << ssd::fmt_double(*a.bwt);
            std::cerr << '\n';
            report.push_back(std::move(a.report));
        }
        const ssd::fs::path dest = out.empty() ? ssd::fs::path(analyze_dir) / "analysis.json" : ssd::fs::path(out);
        ssd::write_text(dest, (report.size() == 1 ? report[0] : report).dump(2) + "\n");
        return 0;
    } catch (const ssd::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
