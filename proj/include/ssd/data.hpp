// SPDX-License-Identifier: Apache-2.0
#pragma once

// Task datasets: synthetic Gaussian clusters, class-incremental task splits and
// the embedding file formats (binary and CSV).
//
// Binary embedding file, all integers and floats little-endian:
//   char[8]  magic "SSDEMBED"
//   u32      version (1)
//   u64      sample count
//   u32      dimension d
//   u32      class count
//   count x { u32 label; f32 values[d]; }
//
// CSV embedding file: a header line "label,v1,...,vd" followed by one
// "label,x1,...,xd" row per sample. Blank lines and lines starting with '#' are
// skipped. The class count is max(label) + 1.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ssd/binio.hpp"
#include "ssd/error.hpp"
#include "ssd/numerics.hpp"
#include "ssd/random.hpp"

namespace ssd {

struct Sample {
    Vec embedding;
    std::size_t label = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct TaskDataset {
    std::size_t task_id = 0;
    std::vector<std::size_t> class_set;  // ascending
    std::vector<Sample> train;
    std::vector<Sample> val;
};

struct EmbeddingSet {
    std::vector<Sample> samples;
    std::size_t dim = 0;
    std::size_t class_count = 0;
};

enum class EmbeddingFormat { auto_detect, binary, csv };

// Per class: a random unit mean, samples = mean + N(0, spread^2 I). Class-major order.
inline std::vector<Sample> gen_synthetic(std::size_t num_classes, std::size_t dim, std::size_t samples_per_class,
                                         double cluster_spread, std::uint64_t seed) {
    detail::require(num_classes >= 1 && dim >= 1 && samples_per_class >= 1,
                    "gen_synthetic: counts must be positive");
    detail::require(cluster_spread > 0.0 && std::isfinite(cluster_spread), "gen_synthetic: spread must be > 0");
    Rng rng = make_rng(seed, {stream::kData});
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<Vec> means(num_classes, Vec(dim));
    for (auto& m : means) {
        double norm = 0.0;
        while (norm == 0.0) {
            for (double& v : m) v = unit(rng);
            norm = l2_norm(m);
        }
        for (double& v : m) v /= norm;
    }
    std::normal_distribution<double> noise(0.0, cluster_spread);
    std::vector<Sample> out;
    out.reserve(num_classes * samples_per_class);
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t s = 0; s < samples_per_class; ++s) {
            Sample smp{means[c], c};
            for (double& v : smp.embedding) v += noise(rng);
            out.push_back(std::move(smp));
        }
    }
    return out;
}

namespace detail {

inline std::vector<std::size_t> distinct_labels(const std::vector<Sample>& samples) {
    std::set<std::size_t> s;
    for (const auto& x : samples) s.insert(x.label);
    return {s.begin(), s.end()};
}

inline std::vector<std::vector<std::size_t>> assign_classes(const std::vector<std::size_t>& labels,
                                                            std::size_t num_tasks, std::size_t classes_per_task,
                                                            bool shuffle_classes, std::uint64_t seed) {
    require(num_tasks >= 1 && classes_per_task >= 1, "split_tasks: task and class counts must be positive");
    if (num_tasks * classes_per_task > labels.size())
        throw InvalidArgument("split_tasks: need " + std::to_string(num_tasks * classes_per_task) +
                              " classes but only " + std::to_string(labels.size()) + " are present");
    std::vector<std::size_t> order = labels;
    if (shuffle_classes) {
        Rng rng = make_rng(seed, {stream::kClassOrder});
        std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<std::vector<std::size_t>> tasks(num_tasks);
    for (std::size_t t = 0; t < num_tasks; ++t) {
        tasks[t].assign(order.begin() + static_cast<std::ptrdiff_t>(t * classes_per_task),
                        order.begin() + static_cast<std::ptrdiff_t>((t + 1) * classes_per_task));
        std::sort(tasks[t].begin(), tasks[t].end());
    }
    return tasks;
}

}  // namespace detail

// Classes go to tasks in ascending label order (or a seeded permutation when
// `shuffle_classes`); each class is split train/val with round(val_fraction * count)
// validation samples. Task training lists are shuffled once so that any prefix mixes classes.
inline std::vector<TaskDataset> split_tasks(const std::vector<Sample>& samples, std::size_t num_tasks,
                                            std::size_t classes_per_task, double val_fraction, std::uint64_t seed,
                                            bool shuffle_classes = false) {
    detail::require(val_fraction > 0.0 && val_fraction < 1.0, "split_tasks: val_fraction must be in (0,1)");
    const auto labels = detail::distinct_labels(samples);
    const auto assignment = detail::assign_classes(labels, num_tasks, classes_per_task, shuffle_classes, seed);
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);

    std::vector<TaskDataset> tasks;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        TaskDataset td;
        td.task_id = t;
        td.class_set = assignment[t];
        for (auto c : td.class_set) {
            auto idx = by_class[c];
            Rng rng = make_rng(seed, {stream::kSplit, c});
            std::shuffle(idx.begin(), idx.end(), rng);
            const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
            for (std::size_t j = 0; j < idx.size(); ++j)
                (j < n_val ? td.val : td.train).push_back(samples[idx[j]]);
        }
        Rng rng = make_rng(seed, {stream::kSplit, 1'000'000 + t});
        std::shuffle(td.train.begin(), td.train.end(), rng);
        tasks.push_back(std::move(td));
    }
    return tasks;
}

// Same class assignment as split_tasks, with validation samples taken from a separate set.
inline std::vector<TaskDataset> split_tasks_with_val(const std::vector<Sample>& train,
                                                     const std::vector<Sample>& val, std::size_t num_tasks,
                                                     std::size_t classes_per_task, std::uint64_t seed,
                                                     bool shuffle_classes = false) {
    const auto labels = detail::distinct_labels(train);
    const auto assignment = detail::assign_classes(labels, num_tasks, classes_per_task, shuffle_classes, seed);
    std::vector<TaskDataset> tasks;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        TaskDataset td;
        td.task_id = t;
        td.class_set = assignment[t];
        auto in_task = [&](const Sample& s) {
            return std::binary_search(td.class_set.begin(), td.class_set.end(), s.label);
        };
        for (const auto& s : train)
            if (in_task(s)) td.train.push_back(s);
        for (const auto& s : val)
            if (in_task(s)) td.val.push_back(s);
        Rng rng = make_rng(seed, {stream::kSplit, 1'000'000 + t});
        std::shuffle(td.train.begin(), td.train.end(), rng);
        tasks.push_back(std::move(td));
    }
    return tasks;
}

// ---- embedding files ------------------------------------------------------

inline constexpr char kEmbeddingMagic[9] = "SSDEMBED";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

// Values are stored as float32; the round trip is exact for float-representable inputs.
inline void save_embeddings_binary(const EmbeddingSet& set, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FileUnreadable("cannot open " + path + " for writing");
    using namespace binio;
    write_magic(os, kEmbeddingMagic);
    write_le<std::uint32_t>(os, kEmbeddingVersion);
    write_le<std::uint64_t>(os, set.samples.size());
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.dim));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.class_count));
    for (const auto& s : set.samples) {
        detail::require_shape(s.embedding.size() == set.dim, "save_embeddings: sample dimension mismatch");
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.label));
        for (double v : s.embedding) write_le<float>(os, static_cast<float>(v));
    }
    if (!os) throw Error("failed writing " + path);
}

inline void save_embeddings_csv(const EmbeddingSet& set, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FileUnreadable("cannot open " + path + " for writing");
    os << "label";
    for (std::size_t j = 1; j <= set.dim; ++j) os << ",v" << j;
    os << '\n';
    char buf[32];
    for (const auto& s : set.samples) {
        os << s.label;
        for (double v : s.embedding) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
            os << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        os << '\n';
    }
    if (!os) throw Error("failed writing " + path);
}

inline EmbeddingSet load_embeddings_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileUnreadable("cannot open embedding file " + path);
    using namespace binio;
    expect_magic(is, kEmbeddingMagic, "embedding");
    const auto version = read_le<std::uint32_t>(is, "header version");
    if (version != kEmbeddingVersion) throw MalformedFile("unsupported embedding version " + std::to_string(version));
    const auto count = read_le<std::uint64_t>(is, "header sample count");
    EmbeddingSet set;
    set.dim = read_le<std::uint32_t>(is, "header dimension");
    set.class_count = read_le<std::uint32_t>(is, "header class count");
    if (set.dim == 0) throw MalformedFile(path + ": dimension is zero");
    if (set.class_count == 0) throw MalformedFile(path + ": class count is zero");
    set.samples.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string where = "record " + std::to_string(i);
        Sample s;
        s.label = read_le<std::uint32_t>(is, where + " label");
        if (s.label >= set.class_count)
            throw MalformedFile(path + ": " + where + " has label " + std::to_string(s.label) + " >= class count " +
                                std::to_string(set.class_count));
        s.embedding.resize(set.dim);
        for (double& v : s.embedding) {
            v = read_le<float>(is, where + " values");
            if (!std::isfinite(v)) throw MalformedFile(path + ": " + where + " contains a non-finite value");
        }
        set.samples.push_back(std::move(s));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw MalformedFile(path + ": trailing bytes after " + std::to_string(count) + " records");
    return set;
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
            field.remove_suffix(1);
        out.push_back(field);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

inline EmbeddingSet load_embeddings_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FileUnreadable("cannot open embedding file " + path);
    EmbeddingSet set;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::size_t max_label = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        auto fields = detail::split_commas(line);
        const std::string where = path + ": line " + std::to_string(line_no);
        if (!have_header) {
            if (fields.size() < 2 || fields[0] != "label")
                throw MalformedFile(where + ": expected header 'label,v1,...,vd'");
            set.dim = fields.size() - 1;
            have_header = true;
            continue;
        }
        if (fields.size() != set.dim + 1)
            throw DimensionMismatch(where + ": row has " + std::to_string(fields.size() - 1) +
                                    " values, header declares " + std::to_string(set.dim));
        Sample s;
        if (!detail::parse_number(fields[0], s.label)) throw MalformedFile(where + ": bad label '" + std::string(fields[0]) + "'");
        s.embedding.resize(set.dim);
        for (std::size_t j = 0; j < set.dim; ++j) {
            if (!detail::parse_number(fields[j + 1], s.embedding[j]))
                throw MalformedFile(where + ": bad value '" + std::string(fields[j + 1]) + "'");
            if (!std::isfinite(s.embedding[j])) throw MalformedFile(where + ": non-finite value");
        }
        max_label = std::max(max_label, s.label);
        set.samples.push_back(std::move(s));
    }
    if (!have_header) throw MalformedFile(path + ": missing header line");
    set.class_count = set.samples.empty() ? 0 : max_label + 1;
    return set;
}

inline EmbeddingFormat detect_format(const std::string& path) {
    return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? EmbeddingFormat::csv
                                                                           : EmbeddingFormat::binary;
}

inline EmbeddingSet load_embeddings(const std::string& path, EmbeddingFormat fmt = EmbeddingFormat::auto_detect) {
    if (fmt == EmbeddingFormat::auto_detect) fmt = detect_format(path);
    return fmt == EmbeddingFormat::csv ? load_embeddings_csv(path) : load_embeddings_binary(path);
}

inline void save_embeddings(const EmbeddingSet& set, const std::string& path,
                            EmbeddingFormat fmt = EmbeddingFormat::auto_detect) {
    if (fmt == EmbeddingFormat::auto_detect) fmt = detect_format(path);
    if (fmt == EmbeddingFormat::csv)
        save_embeddings_csv(set, path);
    else
        save_embeddings_binary(set, path);
}

}  // namespace ssd
