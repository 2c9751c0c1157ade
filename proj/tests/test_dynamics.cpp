#include "catch_amalgamated.hpp"

#include <random>

#include "probetime/dynamics.hpp"

using namespace probetime;

namespace {

ScoreSeries S(std::vector<std::pair<std::int64_t, double>> pts, const std::string& task = "t", const std::string& run = "r") {
    std::vector<SeriesPoint> p;
    for (auto [s, v] : pts) p.push_back({s, v});
    return ScoreSeries(task, run, p);
}

ScoreSeries from_values(const std::vector<double>& v, const std::string& task = "t", const std::string& run = "r") {
    std::vector<SeriesPoint> p;
    for (std::size_t i = 0; i < v.size(); ++i) p.push_back({static_cast<std::int64_t>(i) * 100, v[i]});
    return ScoreSeries(task, run, p);
}

// Linear scan, written directly from the threshold definition.
std::optional<std::int64_t> scan(const ScoreSeries& s, double frac) {
    double m = s.points()[0].value;
    for (const auto& p : s.points()) m = std::max(m, p.value);
    for (const auto& p : s.points())
        if (p.value >= frac * m) return p.step;
    return std::nullopt;
}

// O(n^2) tau-b from the pair counts.
std::optional<double> tau_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    double conc = 0, disc = 0, ta = 0, tb = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j], db = b[i] - b[j];
            if (da == 0 && db == 0) continue;
            if (da == 0) ++ta;
            else if (db == 0) ++tb;
            else if ((da > 0) == (db > 0)) ++conc;
            else ++disc;
        }
    const double denom = std::sqrt((conc + disc + ta) * (conc + disc + tb));
    if (denom == 0) return std::nullopt;
    return (conc - disc) / denom;
}

} // namespace

TEST_CASE("learning progress on a hand-checked curve") {
    const auto s = S({{0, 0.1}, {100, 0.5}, {200, 0.9}, {300, 0.96}, {400, 1.0}, {500, 0.98}});
    REQUIRE(learning_progress(s, 90).step_at_x == 200);
    REQUIRE(learning_progress(s, 95).step_at_x == 300);
    REQUIRE(learning_progress(s, 97).step_at_x == 400);
    REQUIRE(learning_progress(s, 100).step_at_x == 400);
    REQUIRE(learning_progress(s, 90).max_value == 1.0);
    REQUIRE(learning_progress(s, 90).max_step == 400);
}

TEST_CASE("learning progress and phases match a linear-scan oracle") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> v(2 + gen() % 20);
        for (auto& x : v) x = u(gen);
        const auto s = from_values(v);
        for (double x : {90.0, 95.0, 97.0, 50.0, 100.0}) REQUIRE(learning_progress(s, x).step_at_x == *scan(s, x / 100));
        for (double eps : {0.0, 0.05, 0.2, 0.49}) {
            const auto p = epsilon_phase(s, eps);
            REQUIRE(p.start_step == *scan(s, eps));
            REQUIRE(p.end_step == *scan(s, 1 - eps));
            REQUIRE(p.interval == p.end_step - p.start_step);
            REQUIRE(p.interval >= 0);
        }
    }
}

TEST_CASE("a curve peaking at initialization reports step 0") {
    // Performance falls away from its value at initialization.
    const auto s = S({{0, 0.8}, {100, 0.6}, {200, 0.5}, {300, 0.55}});
    for (double x : kDefaultXList) REQUIRE(learning_progress(s, x).step_at_x == 0);
    REQUIRE(learning_progress(s, 90).max_step == 0);
    const auto p = epsilon_phase(s);
    REQUIRE(p.start_step == 0);
    REQUIRE(p.end_step == 0);
    REQUIRE(p.interval == 0);
}

TEST_CASE("thresholds need a positive maximum") {
    REQUIRE_THROWS_AS(learning_progress(S({{0, 0.0}, {10, 0.0}}), 90), UndefinedThreshold);
    REQUIRE_THROWS_AS(epsilon_phase(S({{0, 0.0}})), UndefinedThreshold);
    REQUIRE_THROWS_AS(learning_progress(S({{0, 0.5}}), 0), ConfigError);
    REQUIRE_THROWS_AS(learning_progress(S({{0, 0.5}}), 101), ConfigError);
    REQUIRE_THROWS_AS(epsilon_phase(S({{0, 0.5}}), 0.5), ConfigError);
    REQUIRE_THROWS_AS(epsilon_phase(S({{0, 0.5}}), -0.1), ConfigError);
}

TEST_CASE("thresholds are invariant to positive scaling") {
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(3 + gen() % 10), w;
        for (auto& x : v) x = u(gen);
        const double k = 0.5;
        for (double x : v) w.push_back(k * x);
        for (double x : kDefaultXList)
            REQUIRE(learning_progress(from_values(v), x).step_at_x == learning_progress(from_values(w), x).step_at_x);
        REQUIRE(epsilon_phase(from_values(v)).interval == epsilon_phase(from_values(w)).interval);
    }
}

TEST_CASE("EMA on a two-point series") {
    const auto e = ema(S({{0, 0.0}, {10, 1.0}}), 0.5);
    REQUIRE(e.points() == std::vector<SeriesPoint>{{0, 0.0}, {10, 0.5}});
    REQUIRE(e.smoothed());
    const auto e3 = ema(S({{0, 1.0}, {1, 0.0}, {2, 1.0}}), 0.25);
    REQUIRE(e3.points()[1].value == Catch::Approx(0.75));
    REQUIRE(e3.points()[2].value == Catch::Approx(0.25 + 0.75 * 0.75));
    REQUIRE(ema(S({{0, 0.3}, {1, 0.7}}), 1.0).values() == std::vector<double>{0.3, 0.7});
    REQUIRE_THROWS_AS(ema(S({{0, 0.3}}), 0.0), ConfigError);
}

TEST_CASE("smoothed series are rejected where raw values are required") {
    const auto e = ema(S({{0, 0.2}, {10, 1.0}}));
    REQUIRE_THROWS_AS(learning_progress(e, 90), SmoothedInputError);
    REQUIRE_THROWS_AS(epsilon_phase(e), SmoothedInputError);
    REQUIRE_THROWS_AS(assemble_report({e}, {}, AnalysisConfig{}), SmoothedInputError);
}

TEST_CASE("Kendall tau-b matches a pair-count oracle") {
    std::mt19937_64 gen(13);
    for (int trial = 0; trial < 400; ++trial) {
        const std::size_t n = 2 + gen() % 30;
        std::vector<double> a(n), b(n);
        // Few distinct values so ties are common.
        const unsigned levels = 2 + static_cast<unsigned>(gen() % 6);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<double>(gen() % levels);
            b[i] = static_cast<double>(gen() % levels);
        }
        const auto got = kendall_tau_values(a, b);
        const auto want = tau_oracle(a, b);
        REQUIRE(got.has_value() == want.has_value());
        if (got) REQUIRE(*got == Catch::Approx(*want).margin(1e-12));
    }
}

TEST_CASE("Kendall tau-b is symmetric and reaches plus and minus one") {
    const std::vector<double> up = {0.1, 0.2, 0.3, 0.4}, down = {0.9, 0.5, 0.4, 0.0};
    REQUIRE(*kendall_tau_values(up, up) == 1.0);
    REQUIRE(*kendall_tau_values(up, down) == -1.0);
    const std::vector<double> x = {0.3, 0.1, 0.2, 0.2, 0.9}, y = {0.5, 0.5, 0.1, 0.7, 0.2};
    REQUIRE(*kendall_tau_values(x, y) == Catch::Approx(*kendall_tau_values(y, x)));
    REQUIRE_FALSE(kendall_tau_values({1, 1, 1}, {1, 2, 3}).has_value());
    REQUIRE_THROWS_AS(kendall_tau_values({1}, {2}), InsufficientOverlap);
}

TEST_CASE("Kendall tau on series uses the shared steps only") {
    const auto a = S({{0, 0.1}, {100, 0.2}, {200, 0.3}, {300, 0.0}});
    const auto b = S({{0, 0.5}, {100, 0.6}, {200, 0.7}, {250, 0.1}});
    REQUIRE(*kendall_tau(a, b) == 1.0);
    REQUIRE_THROWS_AS(kendall_tau(a, S({{0, 0.5}, {50, 0.6}})), InsufficientOverlap);
    const auto m = correlation_matrix({a, b, S({{7, 0.1}}, "c")});
    REQUIRE(m.task_ids == std::vector<std::string>{"t", "t", "c"});
    REQUIRE(*m.tau[0][1] == 1.0);
    REQUIRE(*m.tau[1][0] == 1.0);
    REQUIRE_FALSE(m.tau[0][2].has_value());
}

TEST_CASE("package mean averages members on shared steps") {
    const auto a = S({{0, 0.2}, {100, 0.4}, {200, 1.0}}, "a");
    const auto b = S({{0, 0.6}, {100, 0.8}, {300, 0.1}}, "b");
    const auto m = package_mean("pkg", {&a, &b});
    REQUIRE(m.has_value());
    REQUIRE(m->task_id() == "pkg");
    REQUIRE(m->size() == 2);
    REQUIRE(m->points()[0].value == Catch::Approx(0.4));
    REQUIRE(m->points()[1].value == Catch::Approx(0.6));
    REQUIRE_FALSE(package_mean("none", {}).has_value());
}

TEST_CASE("report sections are keyed by run and match direct calls") {
    const auto a = S({{0, 0.1}, {100, 0.6}, {200, 0.9}}, "a", "wiki");
    const auto b = S({{0, 0.3}, {100, 0.2}, {200, 0.25}}, "b", "wiki");
    const auto c = S({{0, 0.0}, {100, 0.5}, {200, 0.5}}, "a", "news");
    AnalysisConfig cfg;
    cfg.packages = {{"p", {"a", "b"}}, {"missing", {"zzz"}}};
    const auto r = assemble_report({a, b, c}, {{"random_guess", "a", 0.5, ""}}, cfg, "now");
    REQUIRE(r["mode"] == "domain");
    REQUIRE(r["curves"].contains("wiki"));
    REQUIRE(r["curves"].contains("news"));
    REQUIRE(r["curves"]["wiki"]["a"]["raw"] == nlohmann::json{0.1, 0.6, 0.9});
    REQUIRE(r["curves"]["wiki"]["a"]["smoothed"][1].get<double>() == Catch::Approx(ema(a).points()[1].value));
    for (const auto& e : r["learning_progress"]["wiki"]) {
        const auto& s = e["task_id"] == "a" ? a : b;
        REQUIRE(e["step_at_x"].get<std::int64_t>() == learning_progress(s, e["x"].get<double>()).step_at_x);
    }
    REQUIRE(r["learning_progress"]["wiki"].size() == 6);
    REQUIRE(r["phases"]["news"][0]["interval"] == epsilon_phase(c).interval);
    REQUIRE(r["package_means"]["wiki"]["p"]["values"][0].get<double>() == Catch::Approx(0.2));
    REQUIRE(r["package_means"]["news"]["p"]["members"] == nlohmann::json{"a"});
    REQUIRE_FALSE(r["package_means"]["wiki"].contains("missing"));
    REQUIRE(r["correlation"].contains("cross_run"));
    REQUIRE(r["correlation"]["cross_run"]["task_ids"].size() == 3);
    REQUIRE(r["baselines"][0]["value"] == 0.5);
    REQUIRE_FALSE(r["warnings"].empty());
    REQUIRE(r["metadata"]["generated_at"] == "now");
}

TEST_CASE("undefined thresholds become nulls in the report") {
    const auto r = assemble_report({S({{0, 0.0}, {1, 0.0}}, "flat")}, {}, AnalysisConfig{});
    REQUIRE(r["mode"] == "single");
    REQUIRE(r["learning_progress"]["r"][0]["step_at_x"].is_null());
    REQUIRE(r["phases"]["r"][0]["interval"].is_null());
    REQUIRE_FALSE(r["correlation"].contains("cross_run"));
}

TEST_CASE("report comparison ignores metadata only") {
    const auto s = S({{0, 0.1}, {100, 0.6}});
    const auto r1 = assemble_report({s}, {}, AnalysisConfig{}, "t1");
    const auto r2 = assemble_report({s}, {}, AnalysisConfig{}, "t2");
    REQUIRE(same_report(r1, r2));
    AnalysisConfig other;
    other.epsilon = 0.1;
    REQUIRE_FALSE(same_report(r1, assemble_report({s}, {}, other, "t1")));
    REQUIRE_THROWS_AS(assemble_report({s, s}, {}, AnalysisConfig{}), DataError);
}

TEST_CASE("analysis config parsing") {
    const auto c = analysis_from_json({{"x_list", {80, 90}}, {"epsilon", 0.1}, {"packages", {{"p", {"a"}}}}});
    REQUIRE(c.x_list == std::vector<double>{80, 90});
    REQUIRE(c.epsilon == 0.1);
    REQUIRE(c.ema_coefficient == kDefaultEmaCoefficient);
    REQUIRE(analysis_from_json(to_json(c)).packages == c.packages);
    REQUIRE_THROWS_AS(analysis_from_json({{"eps", 0.1}}), ConfigError);
    REQUIRE_THROWS_AS(analysis_from_json({{"epsilon", 0.5}}), ConfigError);
    REQUIRE_THROWS_AS(analysis_from_json({{"x_list", nlohmann::json::array()}}), ConfigError);
    REQUIRE_THROWS_AS(analysis_from_json({{"epsilon", "small"}}), ConfigError);
}

TEST_CASE("SVG output is well formed and escaped") {
    const auto s = S({{0, 0.1}, {100, 0.6}, {200, 0.9}}, "a<b>");
    const auto svg = plot_series(s, AnalysisConfig{}, {{"random_guess", "a<b>", 0.5, ""}, {"other", "x", 0.2, ""}});
    REQUIRE(svg.rfind("<svg", 0) == 0);
    REQUIRE(svg.find("</svg>") != std::string::npos);
    REQUIRE(svg.find("a&lt;b&gt;") != std::string::npos);
    REQUIRE(svg.find("a<b>") == std::string::npos);
    REQUIRE(svg.find("stroke-dasharray") != std::string::npos);
    REQUIRE(svg.find("97%") != std::string::npos);
    REQUIRE(svg.find("other") == std::string::npos);
}
