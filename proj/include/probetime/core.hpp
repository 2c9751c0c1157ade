#pragma once

// Shared domain model: checkpoints, probe task descriptors, evaluation
// records and score series, plus the flat-file series format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "probetime/errors.hpp"

namespace probetime {

struct CheckpointRef {
    std::int64_t step = 0;
    std::string locator;  // directory holding manifest.json + weights.bin
    std::string run_tag;
    std::int64_t seed = 0;
};

enum class ProbeFamily { minimal_pair, cloze, multichoice, token_label, segmentation, arc_pred, arc_class };
enum class Metric { accuracy, precision_at_k, span_f1 };

inline std::string_view to_string(ProbeFamily f) {
    switch (f) {
    case ProbeFamily::minimal_pair: return "minimal_pair";
    case ProbeFamily::cloze: return "cloze";
    case ProbeFamily::multichoice: return "multichoice";
    case ProbeFamily::token_label: return "token_label";
    case ProbeFamily::segmentation: return "segmentation";
    case ProbeFamily::arc_pred: return "arc_pred";
    case ProbeFamily::arc_class: return "arc_class";
    }
    return "?";
}

inline std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::precision_at_k: return "precision_at_k";
    case Metric::span_f1: return "span_f1";
    }
    return "?";
}

inline ProbeFamily parse_family(std::string_view s) {
    for (auto f : {ProbeFamily::minimal_pair, ProbeFamily::cloze, ProbeFamily::multichoice, ProbeFamily::token_label,
                   ProbeFamily::segmentation, ProbeFamily::arc_pred, ProbeFamily::arc_class}) {
        if (to_string(f) == s) return f;
    }
    throw ConfigError("unknown probe family '" + std::string(s) + "'", "family");
}

inline Metric parse_metric(std::string_view s) {
    for (auto m : {Metric::accuracy, Metric::precision_at_k, Metric::span_f1}) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown metric '" + std::string(s) + "'", "metric");
}

inline bool is_behavioral(ProbeFamily f) {
    return f == ProbeFamily::minimal_pair || f == ProbeFamily::cloze || f == ProbeFamily::multichoice;
}

inline Metric default_metric(ProbeFamily f) {
    switch (f) {
    case ProbeFamily::cloze: return Metric::precision_at_k;
    case ProbeFamily::segmentation: return Metric::span_f1;
    default: return Metric::accuracy;
    }
}

struct ProbeTaskSpec {
    std::string task_id;
    ProbeFamily family = ProbeFamily::minimal_pair;
    std::string dataset_locator;
    Metric metric = Metric::accuracy;
    std::map<std::string, std::int64_t> params;  // k, negative_sampling_seed, ...

    std::int64_t param(const std::string& key, std::int64_t fallback) const {
        auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    }

    // precision_at_k only for cloze, span_f1 only for segmentation, k >= 1.
    void validate() const {
        if (task_id.empty()) throw ConfigError("task_id must be non-empty", "task_id");
        if (metric == Metric::precision_at_k && family != ProbeFamily::cloze)
            throw ConfigError("precision_at_k is only valid for cloze tasks", "metric");
        if (metric == Metric::span_f1 && family != ProbeFamily::segmentation)
            throw ConfigError("span_f1 is only valid for segmentation tasks", "metric");
        if (family == ProbeFamily::cloze && metric != Metric::precision_at_k)
            throw ConfigError("cloze tasks report precision_at_k", "metric");
        if (family == ProbeFamily::segmentation && metric != Metric::span_f1)
            throw ConfigError("segmentation tasks report span_f1", "metric");
        if (auto it = params.find("k"); it != params.end() && it->second < 1)
            throw ConfigError("k must be >= 1", "k");
    }
};

struct EvalRecord {
    std::string task_id;
    std::string run_tag;
    std::int64_t checkpoint_step = 0;
    double metric_value = 0.0;
    std::int64_t n_items = 0;
    std::int64_t n_skipped = 0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

// Builds a record and checks the [0, 1] range every metric here lives in.
inline EvalRecord make_record(std::string task_id, double value, std::int64_t n_items, std::int64_t n_skipped) {
    if (n_items <= 0) throw NoData("task '" + task_id + "': every item was skipped");
    if (!(value >= 0.0 && value <= 1.0)) throw DataError("task '" + task_id + "': metric value outside [0, 1]");
    EvalRecord r;
    r.task_id = std::move(task_id);
    r.metric_value = value;
    r.n_items = n_items;
    r.n_skipped = n_skipped;
    return r;
}

struct SeriesPoint {
    std::int64_t step = 0;
    double value = 0.0;

    friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

// Immutable after construction. Invariants are checked in the constructor:
// non-empty, strictly increasing steps, finite values.
class ScoreSeries {
public:
    ScoreSeries(std::string task_id, std::string run_tag, std::vector<SeriesPoint> points, bool smoothed = false)
        : task_id_(std::move(task_id)), run_tag_(std::move(run_tag)), points_(std::move(points)), smoothed_(smoothed) {
        if (points_.empty()) throw NoData("series '" + task_id_ + "' has no points");
        for (std::size_t i = 0; i < points_.size(); ++i) {
            if (!std::isfinite(points_[i].value))
                throw DataError("series '" + task_id_ + "' has a non-finite value");
            if (i > 0 && points_[i].step <= points_[i - 1].step)
                throw DataError("series '" + task_id_ + "' steps are not strictly increasing");
        }
    }

    const std::string& task_id() const noexcept { return task_id_; }
    const std::string& run_tag() const noexcept { return run_tag_; }
    const std::vector<SeriesPoint>& points() const noexcept { return points_; }
    std::size_t size() const noexcept { return points_.size(); }
    bool smoothed() const noexcept { return smoothed_; }

    double max_value() const {
        double m = points_.front().value;
        for (const auto& p : points_) m = std::max(m, p.value);
        return m;
    }

    std::vector<double> values() const {
        std::vector<double> v;
        v.reserve(points_.size());
        for (const auto& p : points_) v.push_back(p.value);
        return v;
    }

    friend bool operator==(const ScoreSeries&, const ScoreSeries&) = default;

private:
    std::string task_id_;
    std::string run_tag_;
    std::vector<SeriesPoint> points_;
    bool smoothed_ = false;
};

// Records may arrive in any order; the result depends only on the multiset.
inline ScoreSeries assemble_series(const std::vector<EvalRecord>& records, const std::string& task_id,
                                   const std::string& run_tag) {
    std::vector<SeriesPoint> points;
    for (const auto& r : records) {
        if (r.task_id != task_id) continue;
        if (!r.run_tag.empty() && r.run_tag != run_tag) continue;
        points.push_back({r.checkpoint_step, r.metric_value});
    }
    if (points.empty()) throw NoData("no records for task '" + task_id + "' in run '" + run_tag + "'");
    std::sort(points.begin(), points.end(), [](const SeriesPoint& a, const SeriesPoint& b) {
        return a.step != b.step ? a.step < b.step : a.value < b.value;
    });
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].step == points[i - 1].step)
            throw DuplicateCheckpoint("task '" + task_id + "' has two records at step " +
                                      std::to_string(points[i].step));
    }
    return ScoreSeries(task_id, run_tag, std::move(points));
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void check_csv_field(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of(",\n\r\"") != std::string::npos)
        throw DataError(std::string(what) + " must be non-empty and free of commas, quotes and newlines");
}

inline std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::int64_t parse_int(const std::string& s, std::size_t line, const char* field) {
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw ParseError("expected an integer, got '" + s + "'", line, field);
    }
    if (used != s.size()) throw ParseError("expected an integer, got '" + s + "'", line, field);
    return v;
}

inline double parse_real(const std::string& s, std::size_t line, const char* field) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ParseError("expected a real number, got '" + s + "'", line, field);
    }
    if (used != s.size()) throw ParseError("expected a real number, got '" + s + "'", line, field);
    return v;
}

inline std::vector<std::string> lines_of(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto pos = text.find('\n', start);
        if (pos == std::string_view::npos) pos = text.size();
        lines.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    return lines;
}

} // namespace detail

inline constexpr std::string_view kSeriesHeader = "task_id,run_tag,step,value";

inline std::string serialize_series(const ScoreSeries& series) {
    detail::check_csv_field(series.task_id(), "task_id");
    detail::check_csv_field(series.run_tag(), "run_tag");
    std::string out(kSeriesHeader);
    out += '\n';
    for (const auto& p : series.points()) {
        out += series.task_id() + ',' + series.run_tag() + ',' + std::to_string(p.step) + ',' +
               detail::format_double(p.value) + '\n';
    }
    return out;
}

inline ScoreSeries deserialize_series(std::string_view text) {
    auto lines = detail::lines_of(text);
    if (lines.empty() || lines[0] != kSeriesHeader)
        throw ParseError("missing header '" + std::string(kSeriesHeader) + "'", 1);
    std::string task_id, run_tag;
    std::vector<SeriesPoint> points;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        if (lines[i].empty()) throw ParseError("blank line", lineno);
        auto fields = detail::split(lines[i], ',');
        if (fields.size() != 4) throw ParseError("expected 4 fields, got " + std::to_string(fields.size()), lineno);
        if (points.empty()) {
            task_id = fields[0];
            run_tag = fields[1];
        } else if (fields[0] != task_id) {
            throw ParseError("task_id differs from the first row", lineno, "task_id");
        } else if (fields[1] != run_tag) {
            throw ParseError("run_tag differs from the first row", lineno, "run_tag");
        }
        const auto step = detail::parse_int(fields[2], lineno, "step");
        const auto value = detail::parse_real(fields[3], lineno, "value");
        if (!points.empty() && step <= points.back().step)
            throw ParseError("steps must be strictly increasing", lineno, "step");
        if (!std::isfinite(value)) throw ParseError("value is not finite", lineno, "value");
        points.push_back({step, value});
    }
    if (points.empty()) throw ParseError("series has no points", lines.size() + 1);
    return ScoreSeries(task_id, run_tag, std::move(points));
}

// Evaluation results on disk: the series columns plus item counts.
inline constexpr std::string_view kRecordsHeader = "task_id,run_tag,step,value,n_items,n_skipped";

inline std::string record_row(const EvalRecord& r) {
    detail::check_csv_field(r.task_id, "task_id");
    detail::check_csv_field(r.run_tag, "run_tag");
    return r.task_id + ',' + r.run_tag + ',' + std::to_string(r.checkpoint_step) + ',' +
           detail::format_double(r.metric_value) + ',' + std::to_string(r.n_items) + ',' +
           std::to_string(r.n_skipped) + '\n';
}

inline std::vector<EvalRecord> parse_records(std::string_view text) {
    auto lines = detail::lines_of(text);
    if (lines.empty() || lines[0] != kRecordsHeader)
        throw ParseError("missing header '" + std::string(kRecordsHeader) + "'", 1);
    std::vector<EvalRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        if (lines[i].empty()) continue;
        auto f = detail::split(lines[i], ',');
        if (f.size() != 6) throw ParseError("expected 6 fields, got " + std::to_string(f.size()), lineno);
        EvalRecord r;
        r.task_id = f[0];
        r.run_tag = f[1];
        r.checkpoint_step = detail::parse_int(f[2], lineno, "step");
        r.metric_value = detail::parse_real(f[3], lineno, "value");
        r.n_items = detail::parse_int(f[4], lineno, "n_items");
        r.n_skipped = detail::parse_int(f[5], lineno, "n_skipped");
        out.push_back(std::move(r));
    }
    return out;
}

// Canonical order used before analysis: (task_id, run_tag, step).
inline void canonicalize(std::vector<EvalRecord>& records) {
    std::sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
        return std::tie(a.task_id, a.run_tag, a.checkpoint_step) < std::tie(b.task_id, b.run_tag, b.checkpoint_step);
    });
}

} // namespace probetime
