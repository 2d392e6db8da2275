// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run-directory contract. Column orders are fixed:
//   accuracy_matrix.csv  t,i,acc
//   traces.csv           metric,task,epoch,value
//   entropy.csv          task,epoch,mean_entropy
//   heatmap.csv          epoch,layer,rank,neuron_index
//   summary.json         mean_bwt, final_avg_accuracy, losses, config echo
// plus losses.csv (task,epoch,ce,kd_hidden,kd_logits,total,ewc), neuron_stats.csv
// (task,layer,index,count,frequency,entropy) and checkpoints/task_<t>.ckpt.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ssd/data.hpp"
#include "ssd/error.hpp"
#include "ssd/metrics.hpp"

namespace ssd {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr const char* kContractFiles[] = {"accuracy_matrix.csv", "traces.csv", "entropy.csv", "heatmap.csv",
                                                 "summary.json"};

// Shortest round-trip representation.
inline std::string fmt_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

class CsvWriter {
  public:
    CsvWriter(const fs::path& path, std::string_view header) : path_(path), os_(path) {
        if (!os_) throw FileUnreadable("cannot open " + path.string() + " for writing");
        os_ << header << '\n';
    }

    template <class... Ts>
    void row(const Ts&... fields) {
        bool first = true;
        (write_field(fields, first), ...);
        os_ << '\n';
    }

    ~CsvWriter() = default;

    void close() {
        os_.close();
        if (!os_) throw Error("failed writing " + path_.string());
    }

  private:
    template <class T>
    void write_field(const T& v, bool& first) {
        if (!first) os_ << ',';
        first = false;
        if constexpr (std::is_floating_point_v<T>)
            os_ << fmt_double(v);
        else
            os_ << v;
    }

    fs::path path_;
    std::ofstream os_;
};

inline Json loss_json(const LossReport& r) {
    return Json{{"ce", r.ce}, {"kd_hidden", r.kd_hidden}, {"kd_logits", r.kd_logits}, {"kd", r.kd}, {"total", r.total}};
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FileUnreadable("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw Error("failed writing " + path.string());
}

inline Json run_summary_json(const RunResult& r, std::uint64_t seed, const Json& config_echo) {
    Json j;
    j["seed"] = seed;
    j["tasks"] = r.accuracy.tasks();
    j["mean_bwt"] = r.mean_bwt ? Json(*r.mean_bwt) : Json(nullptr);
    j["final_avg_accuracy"] = r.final_avg_accuracy;
    // epoch means summed over every epoch of every task
    LossReport sum;
    for (const auto& row : r.losses) {
        sum.ce += row.loss.ce;
        sum.kd_hidden += row.loss.kd_hidden;
        sum.kd_logits += row.loss.kd_logits;
        sum.kd += row.loss.kd;
        sum.total += row.loss.total;
    }
    j["loss_totals"] = loss_json(sum);
    Json last = Json::array();
    for (std::size_t i = 0; i < r.losses.size(); ++i)
        if (i + 1 == r.losses.size() || r.losses[i + 1].task != r.losses[i].task) {
            Json e = loss_json(r.losses[i].loss);
            e["task"] = r.losses[i].task;
            last.push_back(std::move(e));
        }
    j["final_epoch_losses"] = std::move(last);
    j["config"] = config_echo;
    return j;
}

inline void write_run(const fs::path& dir, const RunResult& r, std::uint64_t seed, const Json& config_echo,
                      bool write_checkpoints = true) {
    fs::create_directories(dir);
    {
        CsvWriter w(dir / "accuracy_matrix.csv", "t,i,acc");
        for (std::size_t t = 0; t < r.accuracy.tasks(); ++t)
            for (std::size_t i = 0; i <= t; ++i) w.row(t, i, r.accuracy.at(t, i));
        w.close();
    }
    {
        CsvWriter w(dir / "traces.csv", "metric,task,epoch,value");
        for (const auto& t : r.traces) w.row(t.metric, t.task, t.epoch, t.value);
        w.close();
    }
    {
        CsvWriter w(dir / "entropy.csv", "task,epoch,mean_entropy");
        for (const auto& e : r.entropy) w.row(e.task, e.epoch, e.mean_entropy);
        w.close();
    }
    {
        CsvWriter w(dir / "heatmap.csv", "epoch,layer,rank,neuron_index");
        for (const auto& h : r.heatmap) w.row(h.epoch, h.layer, h.rank, h.neuron);
        w.close();
    }
    {
        CsvWriter w(dir / "losses.csv", "task,epoch,ce,kd_hidden,kd_logits,total,ewc");
        for (const auto& l : r.losses)
            w.row(l.task, l.epoch, l.loss.ce, l.loss.kd_hidden, l.loss.kd_logits, l.loss.total, l.ewc);
        w.close();
    }
    {
        CsvWriter w(dir / "neuron_stats.csv", "task,layer,index,count,frequency,entropy");
        for (const auto& s : r.neuron_stats) w.row(s.task, s.layer, s.index, s.count, s.frequency, s.entropy);
        w.close();
    }
    if (write_checkpoints) {
        fs::create_directories(dir / "checkpoints");
        for (std::size_t t = 0; t < r.task_models.size(); ++t)
            save_checkpoint(r.task_models[t], (dir / "checkpoints" / ("task_" + std::to_string(t) + ".ckpt")).string());
    }
    // summary last: its presence marks a complete run directory
    write_text(dir / "summary.json", run_summary_json(r, seed, config_echo).dump(2) + "\n");
}

// ---- reading --------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const std::string& file) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw MalformedFile(file + ": missing column '" + name + "'");
    }
};

inline CsvTable read_csv(const fs::path& path, const std::vector<std::string>& expected_header) {
    if (!fs::exists(path)) throw FileUnreadable("missing contract file " + path.filename().string() + " in " +
                                                path.parent_path().string());
    std::ifstream is(path);
    if (!is) throw FileUnreadable("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw MalformedFile(path.string() + ": empty file");
    for (auto f : detail::split_commas(line)) t.header.emplace_back(f);
    if (t.header != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw MalformedFile(path.string() + ": header must be '" + want + "'");
    }
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> row;
        for (auto f : detail::split_commas(line)) row.emplace_back(f);
        if (row.size() != t.header.size())
            throw MalformedFile(path.string() + ": line " + std::to_string(line_no) + " has " +
                                std::to_string(row.size()) + " fields, expected " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(row));
    }
    return t;
}

template <class T>
T parse_field(const std::string& s, const fs::path& file, std::size_t row) {
    T v{};
    if (!detail::parse_number(s, v))
        throw MalformedFile(file.string() + ": row " + std::to_string(row + 1) + ": bad number '" + s + "'");
    return v;
}

inline AccuracyMatrix read_accuracy_matrix(const fs::path& path) {
    const CsvTable t = read_csv(path, {"t", "i", "acc"});
    std::size_t tasks = 0;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        tasks = std::max(tasks, parse_field<std::size_t>(t.rows[r][0], path, r) + 1);
    if (tasks == 0) throw MalformedFile(path.string() + ": no rows");
    AccuracyMatrix m(tasks);
    std::vector<std::vector<bool>> seen(tasks);
    for (std::size_t i = 0; i < tasks; ++i) seen[i].assign(i + 1, false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto ti = parse_field<std::size_t>(t.rows[r][0], path, r);
        const auto ii = parse_field<std::size_t>(t.rows[r][1], path, r);
        const auto acc = parse_field<double>(t.rows[r][2], path, r);
        if (ii > ti || acc < 0.0 || acc > 1.0)
            throw MalformedFile(path.string() + ": row " + std::to_string(r + 1) + " is not a valid entry");
        m.set(ti, ii, acc);
        seen[ti][ii] = true;
    }
    for (std::size_t ti = 0; ti < tasks; ++ti)
        for (std::size_t ii = 0; ii <= ti; ++ii)
            if (!seen[ti][ii])
                throw MalformedFile(path.string() + ": missing entry (" + std::to_string(ti) + "," +
                                    std::to_string(ii) + ")");
    return m;
}

inline std::vector<TraceRow> read_traces(const fs::path& path) {
    const CsvTable t = read_csv(path, {"metric", "task", "epoch", "value"});
    std::vector<TraceRow> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        out.push_back({t.rows[r][0], parse_field<std::size_t>(t.rows[r][1], path, r),
                       parse_field<std::size_t>(t.rows[r][2], path, r), parse_field<double>(t.rows[r][3], path, r)});
    return out;
}

inline std::vector<EntropyRow> read_entropy(const fs::path& path) {
    const CsvTable t = read_csv(path, {"task", "epoch", "mean_entropy"});
    std::vector<EntropyRow> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        out.push_back({parse_field<std::size_t>(t.rows[r][0], path, r), parse_field<std::size_t>(t.rows[r][1], path, r),
                       parse_field<double>(t.rows[r][2], path, r)});
    return out;
}

inline std::vector<LossRow> read_losses(const fs::path& path) {
    const CsvTable t = read_csv(path, {"task", "epoch", "ce", "kd_hidden", "kd_logits", "total", "ewc"});
    std::vector<LossRow> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        LossRow row;
        row.task = parse_field<std::size_t>(t.rows[r][0], path, r);
        row.epoch = parse_field<std::size_t>(t.rows[r][1], path, r);
        row.loss.ce = parse_field<double>(t.rows[r][2], path, r);
        row.loss.kd_hidden = parse_field<double>(t.rows[r][3], path, r);
        row.loss.kd_logits = parse_field<double>(t.rows[r][4], path, r);
        row.loss.total = parse_field<double>(t.rows[r][5], path, r);
        row.ewc = parse_field<double>(t.rows[r][6], path, r);
        out.push_back(row);
    }
    return out;
}

inline Json read_json(const fs::path& path) {
    if (!fs::exists(path)) throw FileUnreadable("missing contract file " + path.filename().string() + " in " +
                                                path.parent_path().string());
    std::ifstream is(path);
    if (!is) throw FileUnreadable("cannot open " + path.string());
    try {
        return Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFile(path.string() + ": " + e.what());
    }
}

inline std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileUnreadable("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace ssd
