#pragma once

// Learning-dynamics metrics over score series and the report that collects
// them. Every metric consumes raw series; smoothed series exist for plots.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "probetime/core.hpp"
#include "probetime/errors.hpp"

namespace probetime {

inline constexpr double kDefaultEpsilon = 0.05;
inline constexpr double kDefaultEmaCoefficient = 0.5;
inline const std::vector<double> kDefaultXList = {90.0, 95.0, 97.0};

struct LearningProgress {
    std::string task_id;
    double x = 0.0;
    std::int64_t step_at_x = 0;
    double max_value = 0.0;
    std::int64_t max_step = 0;  // first step attaining the maximum

    friend bool operator==(const LearningProgress&, const LearningProgress&) = default;
};

struct PhaseReport {
    std::string task_id;
    double epsilon = 0.0;
    std::int64_t start_step = 0;
    std::int64_t end_step = 0;
    std::int64_t interval = 0;

    friend bool operator==(const PhaseReport&, const PhaseReport&) = default;
};

namespace detail {

inline void require_raw(const ScoreSeries& s) {
    if (s.smoothed())
        throw SmoothedInputError("series '" + s.task_id() + "' is smoothed; this metric needs raw values");
}

inline double positive_max(const ScoreSeries& s) {
    const double m = s.max_value();
    if (!(m > 0.0))
        throw UndefinedThreshold("series '" + s.task_id() + "' has maximum " + format_double(m) +
                                 "; relative thresholds need a positive maximum");
    return m;
}

// First step whose value reaches `threshold`.
inline std::int64_t first_reaching(const ScoreSeries& s, double threshold) {
    for (const auto& p : s.points()) {
        if (p.value >= threshold) return p.step;
    }
    throw UndefinedThreshold("series '" + s.task_id() + "' never reaches " + format_double(threshold));
}

} // namespace detail

// Smallest step whose value is at least x% of the series maximum.
inline LearningProgress learning_progress(const ScoreSeries& s, double x) {
    detail::require_raw(s);
    if (!(x > 0.0 && x <= 100.0)) throw ConfigError("x must lie in (0, 100]", "x");
    const double m = detail::positive_max(s);
    LearningProgress lp{s.task_id(), x, detail::first_reaching(s, x / 100.0 * m), m, detail::first_reaching(s, m)};
    return lp;
}

// start: first step >= eps * max; end: first step >= (1 - eps) * max.
inline PhaseReport epsilon_phase(const ScoreSeries& s, double epsilon = kDefaultEpsilon) {
    detail::require_raw(s);
    if (!(epsilon >= 0.0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in [0, 0.5)", "epsilon");
    const double m = detail::positive_max(s);
    PhaseReport r{s.task_id(), epsilon, detail::first_reaching(s, epsilon * m),
                  detail::first_reaching(s, (1.0 - epsilon) * m), 0};
    r.interval = r.end_step - r.start_step;
    return r;
}

// s_0 = v_0, s_t = c v_t + (1 - c) s_{t-1}. The result is flagged smoothed.
inline ScoreSeries ema(const ScoreSeries& s, double c = kDefaultEmaCoefficient) {
    if (!(c > 0.0 && c <= 1.0)) throw ConfigError("ema coefficient must lie in (0, 1]", "ema_coefficient");
    std::vector<SeriesPoint> out;
    out.reserve(s.size());
    double prev = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& p = s.points()[i];
        prev = i == 0 ? p.value : c * p.value + (1.0 - c) * prev;
        out.push_back({p.step, prev});
    }
    return ScoreSeries(s.task_id(), s.run_tag(), std::move(out), true);
}

// ---------------------------------------------------------------------------
// Kendall tau-b

namespace detail {

// Counts inversions in v[lo, hi) while merge-sorting it.
inline std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::int64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            inv += static_cast<std::int64_t>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return inv;
}

// Sum of t(t-1)/2 over runs of equal adjacent elements.
template <typename It, typename Eq>
std::int64_t tied_pairs(It first, It last, Eq eq) {
    std::int64_t total = 0, run = 1;
    for (It it = first; it != last; ++it) {
        if (it != first && eq(*(it - 1), *it)) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total + run * (run - 1) / 2;
}

} // namespace detail

// tau-b over the values at the steps both series share, in O(n log n).
// Returns nullopt when either side has no variation there.
inline std::optional<double> kendall_tau_values(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DataError("kendall_tau needs equally long value lists");
    const auto n = static_cast<std::int64_t>(a.size());
    if (n < 2) throw InsufficientOverlap("kendall_tau needs at least 2 common steps");
    std::vector<std::pair<double, double>> xy(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) xy[i] = {a[i], b[i]};
    std::sort(xy.begin(), xy.end());
    const std::int64_t n0 = n * (n - 1) / 2;
    const std::int64_t n1 = detail::tied_pairs(xy.begin(), xy.end(), [](const auto& p, const auto& q) { return p.first == q.first; });
    const std::int64_t n3 = detail::tied_pairs(xy.begin(), xy.end(), [](const auto& p, const auto& q) { return p == q; });
    std::vector<double> ys(a.size()), buf(a.size());
    for (std::size_t i = 0; i < xy.size(); ++i) ys[i] = xy[i].second;
    const std::int64_t swaps = detail::count_inversions(ys, buf, 0, ys.size());
    const std::int64_t n2 = detail::tied_pairs(ys.begin(), ys.end(), [](double p, double q) { return p == q; });
    if (n0 == n1 || n0 == n2) return std::nullopt;
    const std::int64_t s = n0 - n1 - n2 + n3 - 2 * swaps;
    const double tau = static_cast<double>(s) /
                       std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
    return std::clamp(tau, -1.0, 1.0);
}

inline std::optional<double> kendall_tau(const ScoreSeries& a, const ScoreSeries& b) {
    std::vector<double> va, vb;
    std::size_t i = 0, j = 0;
    const auto& pa = a.points();
    const auto& pb = b.points();
    while (i < pa.size() && j < pb.size()) {
        if (pa[i].step < pb[j].step) {
            ++i;
        } else if (pb[j].step < pa[i].step) {
            ++j;
        } else {
            va.push_back(pa[i++].value);
            vb.push_back(pb[j++].value);
        }
    }
    if (va.size() < 2)
        throw InsufficientOverlap("series '" + a.task_id() + "' and '" + b.task_id() + "' share " +
                                  std::to_string(va.size()) + " step(s)");
    return kendall_tau_values(va, vb);
}

struct CorrelationMatrix {
    std::vector<std::string> task_ids;
    std::vector<std::vector<std::optional<double>>> tau;  // nullopt: undefined or too little overlap
};

inline CorrelationMatrix correlation_matrix(const std::vector<ScoreSeries>& series,
                                            const std::vector<std::string>& labels = {}) {
    CorrelationMatrix m;
    for (std::size_t i = 0; i < series.size(); ++i)
        m.task_ids.push_back(labels.empty() ? series[i].task_id() : labels.at(i));
    m.tau.assign(series.size(), std::vector<std::optional<double>>(series.size()));
    for (std::size_t i = 0; i < series.size(); ++i) {
        for (std::size_t j = i; j < series.size(); ++j) {
            std::optional<double> t;
            try {
                t = kendall_tau(series[i], series[j]);
            } catch (const InsufficientOverlap&) {
            }
            m.tau[i][j] = m.tau[j][i] = t;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Package means

// Unweighted mean over member series at the steps every member shares.
inline std::optional<ScoreSeries> package_mean(const std::string& name, const std::vector<const ScoreSeries*>& members) {
    if (members.empty()) return std::nullopt;
    std::map<std::int64_t, std::pair<double, std::size_t>> acc;
    for (const auto* s : members)
        for (const auto& p : s->points()) {
            auto& a = acc[p.step];
            a.first += p.value;
            a.second += 1;
        }
    std::vector<SeriesPoint> pts;
    for (const auto& [step, a] : acc) {
        if (a.second == members.size()) pts.push_back({step, a.first / static_cast<double>(a.second)});
    }
    if (pts.empty()) return std::nullopt;
    return ScoreSeries(name, members.front()->run_tag(), std::move(pts));
}

// ---------------------------------------------------------------------------
// Report

inline constexpr int kReportSchemaVersion = 1;

struct AnalysisConfig {
    std::vector<double> x_list = kDefaultXList;
    double epsilon = kDefaultEpsilon;
    double ema_coefficient = kDefaultEmaCoefficient;
    std::map<std::string, std::vector<std::string>> packages;  // package name -> member task ids

    void validate() const {
        if (x_list.empty()) throw ConfigError("x_list must not be empty", "x_list");
        for (double x : x_list)
            if (!(x > 0.0 && x <= 100.0)) throw ConfigError("x_list entries must lie in (0, 100]", "x_list");
        if (!(epsilon >= 0.0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in [0, 0.5)", "epsilon");
        if (!(ema_coefficient > 0.0 && ema_coefficient <= 1.0))
            throw ConfigError("ema_coefficient must lie in (0, 1]", "ema_coefficient");
    }
};

inline nlohmann::json to_json(const AnalysisConfig& c) {
    return {{"x_list", c.x_list},
            {"epsilon", c.epsilon},
            {"ema_coefficient", c.ema_coefficient},
            {"packages", c.packages}};
}

inline AnalysisConfig analysis_from_json(const nlohmann::json& j) {
    AnalysisConfig c;
    if (!j.is_object()) throw ConfigError("analysis must be an object", "analysis");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "x_list") c.x_list = value.get<std::vector<double>>();
            else if (key == "epsilon") c.epsilon = value.get<double>();
            else if (key == "ema_coefficient") c.ema_coefficient = value.get<double>();
            else if (key == "packages") c.packages = value.get<std::map<std::string, std::vector<std::string>>>();
            else throw ConfigError("unknown key '" + key + "' in analysis", key);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("wrong type for '" + key + "'", key);
        }
    }
    c.validate();
    return c;
}

// A horizontal reference value for one task.
struct BaselineLine {
    std::string name;
    std::string task_id;
    double value = 0.0;
    std::string note;
};

inline std::string format_x(double x) {
    std::ostringstream o;
    o << x;
    return o.str();
}

namespace detail {

inline nlohmann::json curve_json(const ScoreSeries& raw, const ScoreSeries& smooth) {
    nlohmann::json steps = nlohmann::json::array(), r = nlohmann::json::array(), s = nlohmann::json::array();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        steps.push_back(raw.points()[i].step);
        r.push_back(raw.points()[i].value);
        s.push_back(smooth.points()[i].value);
    }
    return {{"steps", steps}, {"raw", r}, {"smoothed", s}};
}

inline nlohmann::json tau_json(const CorrelationMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : m.tau) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& t : row) r.push_back(t ? nlohmann::json(*t) : nlohmann::json(nullptr));
        rows.push_back(r);
    }
    return {{"task_ids", m.task_ids}, {"tau", rows}};
}

} // namespace detail

// Series may come from several run_tags (domain comparison); every section is
// keyed by run_tag and nothing is merged across runs except the cross-run
// correlation block.
inline nlohmann::json assemble_report(const std::vector<ScoreSeries>& series, const std::vector<BaselineLine>& baselines,
                                      const AnalysisConfig& config, const std::string& timestamp = "") {
    config.validate();
    std::map<std::string, std::vector<const ScoreSeries*>> by_run;
    for (const auto& s : series) {
        detail::require_raw(s);
        by_run[s.run_tag()].push_back(&s);
    }
    for (auto& [run, list] : by_run) {
        std::sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->task_id() < b->task_id(); });
        for (std::size_t i = 1; i < list.size(); ++i)
            if (list[i]->task_id() == list[i - 1]->task_id())
                throw DataError("two series for task '" + list[i]->task_id() + "' in run '" + run + "'");
    }

    nlohmann::json curves = nlohmann::json::object(), lp = nlohmann::json::object(), phases = nlohmann::json::object(),
                   means = nlohmann::json::object(), corr = nlohmann::json::object();
    nlohmann::json warnings = nlohmann::json::array();
    for (const auto& [run, list] : by_run) {
        nlohmann::json run_curves = nlohmann::json::object(), run_lp = nlohmann::json::array(),
                       run_phases = nlohmann::json::array(), run_means = nlohmann::json::object();
        std::vector<ScoreSeries> owned;
        for (const auto* s : list) {
            owned.push_back(*s);
            run_curves[s->task_id()] = detail::curve_json(*s, ema(*s, config.ema_coefficient));
            for (double x : config.x_list) {
                try {
                    const auto r = learning_progress(*s, x);
                    run_lp.push_back({{"task_id", r.task_id}, {"x", r.x}, {"step_at_x", r.step_at_x},
                                      {"max_value", r.max_value}, {"max_step", r.max_step}});
                } catch (const UndefinedThreshold&) {
                    run_lp.push_back({{"task_id", s->task_id()}, {"x", x}, {"step_at_x", nullptr},
                                      {"max_value", s->max_value()}, {"max_step", nullptr}});
                }
            }
            try {
                const auto p = epsilon_phase(*s, config.epsilon);
                run_phases.push_back({{"task_id", p.task_id}, {"epsilon", p.epsilon}, {"start_step", p.start_step},
                                      {"end_step", p.end_step}, {"interval", p.interval}});
            } catch (const UndefinedThreshold&) {
                run_phases.push_back({{"task_id", s->task_id()}, {"epsilon", config.epsilon}, {"start_step", nullptr},
                                      {"end_step", nullptr}, {"interval", nullptr}});
            }
        }
        for (const auto& [pkg, members] : config.packages) {
            std::vector<const ScoreSeries*> found;
            for (const auto& m : members)
                for (const auto* s : list)
                    if (s->task_id() == m) found.push_back(s);
            const auto mean = package_mean(pkg, found);
            if (!mean) {
                warnings.push_back("package '" + pkg + "' has no member series in run '" + run + "'; omitted");
                continue;
            }
            nlohmann::json steps = nlohmann::json::array(), values = nlohmann::json::array(), names = nlohmann::json::array();
            for (const auto& p : mean->points()) {
                steps.push_back(p.step);
                values.push_back(p.value);
            }
            for (const auto* s : found) names.push_back(s->task_id());
            run_means[pkg] = {{"members", names}, {"steps", steps}, {"values", values}};
        }
        curves[run] = run_curves;
        lp[run] = run_lp;
        phases[run] = run_phases;
        means[run] = run_means;
        corr[run] = detail::tau_json(correlation_matrix(owned));
    }
    if (by_run.size() > 1) {
        std::vector<ScoreSeries> all;
        std::vector<std::string> labels;
        for (const auto& [run, list] : by_run)
            for (const auto* s : list) {
                all.push_back(*s);
                labels.push_back(run + "/" + s->task_id());
            }
        corr["cross_run"] = detail::tau_json(correlation_matrix(all, labels));
    }

    nlohmann::json base = nlohmann::json::array();
    for (const auto& b : baselines) {
        nlohmann::json e = {{"name", b.name}, {"task_id", b.task_id}, {"value", b.value}};
        if (!b.note.empty()) e["note"] = b.note;
        base.push_back(e);
    }

    return {{"schema_version", kReportSchemaVersion},
            {"mode", by_run.size() > 1 ? "domain" : "single"},
            {"config", to_json(config)},
            {"curves", curves},
            {"learning_progress", lp},
            {"phases", phases},
            {"package_means", means},
            {"baselines", base},
            {"correlation", corr},
            {"warnings", warnings},
            {"metadata", {{"generated_at", timestamp}}}};
}

// Equality of two reports with the metadata block ignored.
inline bool same_report(nlohmann::json a, nlohmann::json b) {
    a.erase("metadata");
    b.erase("metadata");
    return a == b;
}

// ---------------------------------------------------------------------------
// SVG line charts

struct PlotLine {
    std::string label;
    std::vector<std::pair<double, double>> points;
    std::string color;
    bool dashed = false;
};

struct PlotBar {
    std::string label;
    double from = 0.0;
    double to = 0.0;
};

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Curves over [x_min, x_max] x [0, 1]; bars sit below the plot area.
inline std::string render_svg(const std::string& title, const std::vector<PlotLine>& lines,
                              const std::vector<PlotBar>& bars) {
    const double W = 640, H = 400, left = 56, right = 16, top = 32;
    const double bar_h = 10, plot_bottom = H - 40 - static_cast<double>(bars.size()) * (bar_h + 4);
    double x_min = 0, x_max = 1, y_max = 1;
    bool first = true;
    for (const auto& l : lines)
        for (const auto& [x, y] : l.points) {
            if (first) x_min = x_max = x, first = false;
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_max = std::max(y_max, y);
        }
    if (x_max <= x_min) x_max = x_min + 1;
    auto sx = [&](double x) { return left + (x - x_min) / (x_max - x_min) * (W - left - right); };
    auto sy = [&](double y) { return plot_bottom - y / y_max * (plot_bottom - top); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title) << "</text>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << num(plot_bottom) << "\" x2=\"" << W - right << "\" y2=\"" << num(plot_bottom)
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << num(plot_bottom)
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = y_max * i / 4.0;
        o << "<text x=\"" << left - 4 << "\" y=\"" << num(sy(y) + 4) << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
    }
    o << "<text x=\"" << left << "\" y=\"" << num(plot_bottom + 14) << "\">" << static_cast<long long>(x_min) << "</text>\n";
    o << "<text x=\"" << W - right << "\" y=\"" << num(plot_bottom + 14) << "\" text-anchor=\"end\">"
      << static_cast<long long>(x_max) << "</text>\n";
    double legend_y = top + 4;
    for (const auto& l : lines) {
        if (l.points.empty()) continue;
        o << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"1.5\"";
        if (l.dashed) o << " stroke-dasharray=\"5,4\"";
        o << " points=\"";
        for (const auto& [x, y] : l.points) o << num(sx(x)) << ',' << num(sy(y)) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << W - right - 4 << "\" y=\"" << num(legend_y + 8) << "\" text-anchor=\"end\" fill=\"" << l.color
          << "\">" << xml_escape(l.label) << "</text>\n";
        legend_y += 13;
    }
    double bar_y = plot_bottom + 22;
    for (const auto& b : bars) {
        o << "<rect x=\"" << num(sx(b.from)) << "\" y=\"" << num(bar_y) << "\" width=\"" << num(std::max(1.0, sx(b.to) - sx(b.from)))
          << "\" height=\"" << bar_h << "\" fill=\"#888\"/>\n";
        o << "<text x=\"" << left - 4 << "\" y=\"" << num(bar_y + 9) << "\" text-anchor=\"end\">" << xml_escape(b.label)
          << "</text>\n";
        bar_y += bar_h + 4;
    }
    o << "</svg>\n";
    return o.str();
}

// One chart for a task: raw curve, smoothed curve, dashed baselines and a
// learning-progress bar per x.
inline std::string plot_series(const ScoreSeries& raw, const AnalysisConfig& config,
                               const std::vector<BaselineLine>& baselines) {
    std::vector<PlotLine> lines;
    PlotLine r{"raw", {}, "#1f77b4", false}, s{"ema " + format_x(config.ema_coefficient), {}, "#d62728", false};
    for (const auto& p : raw.points()) r.points.emplace_back(static_cast<double>(p.step), p.value);
    for (const auto& p : ema(raw, config.ema_coefficient).points()) s.points.emplace_back(static_cast<double>(p.step), p.value);
    lines.push_back(r);
    lines.push_back(s);
    const double x0 = static_cast<double>(raw.points().front().step), x1 = static_cast<double>(raw.points().back().step);
    for (const auto& b : baselines) {
        if (b.task_id != raw.task_id()) continue;
        lines.push_back({b.name, {{x0, b.value}, {x1, b.value}}, "#555555", true});
    }
    std::vector<PlotBar> bars;
    if (raw.max_value() > 0.0) {
        for (double x : config.x_list)
            bars.push_back({format_x(x) + "%", x0, static_cast<double>(learning_progress(raw, x).step_at_x)});
    }
    return render_svg(raw.run_tag() + " / " + raw.task_id(), lines, bars);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

} // namespace probetime
