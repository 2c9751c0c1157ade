#pragma once

// Command-line driver: synth, pretrain, probe, analyze.
//
// Exit codes: 0 success, 2 configuration error, 3 refusing to write into a
// non-empty directory, 4 evaluation failure.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "probetime/baselines.hpp"
#include "probetime/core.hpp"
#include "probetime/dynamics.hpp"
#include "probetime/errors.hpp"
#include "probetime/suite.hpp"
#include "probetime/synthdata.hpp"
#include "probetime/toy_mlm.hpp"

namespace probetime::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kGuardError = 3, kEvalError = 4 };

class GuardError : public Error {
public:
    using Error::Error;
};

struct BackendSection {
    fs::path corpus;       // sentences, one per line
    fs::path vocab;        // tokens, one per line
    fs::path checkpoints;  // run directory to probe
    std::string run_tag = "run";
    ToyMLMConfig toy;
};

struct RunConfig {
    std::int64_t seed = 0;
    SynthLanguageConfig synth;
    BackendSection backend;
    std::vector<ProbeTaskSpec> suites;
    std::vector<BaselineSpec> baselines;
    AnalysisConfig analysis;
    fs::path output_dir;
    fs::path base_dir;  // relative paths resolve against the config file's directory
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_relative() ? base / path : path;
}

inline void reject_key(const nlohmann::json& section, const char* key, const char* where) {
    if (section.contains(key))
        throw ConfigError(std::string("'") + key + "' is set once at the top level, not in '" + where + "'", key);
}

} // namespace detail

// Top-level keys: seed (required unless overridden), synth, backend, suites,
// baselines, analysis, output_dir. Unknown keys are rejected everywhere.
inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir,
                                  std::optional<std::int64_t> seed_override = std::nullopt) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object", "<root>");
    static const std::set<std::string> top = {"seed", "synth", "backend", "suites", "baselines", "analysis", "output_dir"};
    for (const auto& [key, value] : j.items())
        if (!top.count(key)) throw ConfigError("unknown key '" + key + "'", key);
    RunConfig c;
    c.base_dir = base_dir;
    if (seed_override) {
        c.seed = *seed_override;
    } else {
        if (!j.contains("seed")) throw ConfigError("missing required key 'seed'", "seed");
        if (!j["seed"].is_number_integer()) throw ConfigError("'seed' must be an integer", "seed");
        c.seed = j["seed"].get<std::int64_t>();
    }

    nlohmann::json synth = j.value("synth", nlohmann::json::object());
    if (!synth.is_object()) throw ConfigError("'synth' must be an object", "synth");
    detail::reject_key(synth, "seed", "synth");
    synth["seed"] = c.seed;
    c.synth = SynthLanguageConfig::from_json(synth);

    const nlohmann::json backend = j.value("backend", nlohmann::json::object());
    if (!backend.is_object()) throw ConfigError("'backend' must be an object", "backend");
    for (const auto& [key, value] : backend.items()) {
        if (key == "corpus" || key == "vocab" || key == "checkpoints" || key == "run_tag") {
            if (!value.is_string()) throw ConfigError("'" + key + "' must be a string", key);
        } else if (key != "config") {
            throw ConfigError("unknown key '" + key + "' in backend", key);
        }
    }
    if (backend.contains("corpus")) c.backend.corpus = detail::resolve(base_dir, backend["corpus"]);
    if (backend.contains("vocab")) c.backend.vocab = detail::resolve(base_dir, backend["vocab"]);
    if (backend.contains("checkpoints")) c.backend.checkpoints = detail::resolve(base_dir, backend["checkpoints"]);
    if (backend.contains("run_tag")) c.backend.run_tag = backend["run_tag"].get<std::string>();
    nlohmann::json toy = backend.value("config", nlohmann::json::object());
    detail::reject_key(toy, "seed", "backend.config");
    c.backend.toy = ToyMLMConfig::from_json(toy);
    c.backend.toy.seed = c.seed;

    if (j.contains("suites")) {
        if (!j["suites"].is_array()) throw ConfigError("'suites' must be a list", "suites");
        std::set<std::string> ids;
        for (const auto& s : j["suites"]) {
            c.suites.push_back(task_from_json(s));
            if (!ids.insert(c.suites.back().task_id).second)
                throw ConfigError("duplicate task_id '" + c.suites.back().task_id + "'", "task_id");
        }
    }
    if (j.contains("baselines")) {
        if (!j["baselines"].is_array()) throw ConfigError("'baselines' must be a list", "baselines");
        for (const auto& b : j["baselines"]) c.baselines.push_back(baseline_from_json(b));
    }
    if (j.contains("analysis")) c.analysis = analysis_from_json(j["analysis"]);
    if (c.analysis.packages.empty()) {
        for (const auto& t : c.suites) c.analysis.packages[default_package(t.family)].push_back(t.task_id);
    }
    if (j.contains("output_dir")) {
        if (!j["output_dir"].is_string()) throw ConfigError("'output_dir' must be a string", "output_dir");
        c.output_dir = detail::resolve(base_dir, j["output_dir"]);
    }
    return c;
}

inline RunConfig load_run_config(const fs::path& path, std::optional<std::int64_t> seed_override = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration " + path.string(), "--config");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("configuration is not valid JSON: ") + e.what(), "--config");
    }
    return parse_run_config(j, path.parent_path(), seed_override);
}

inline nlohmann::json echo(const RunConfig& c) {
    nlohmann::json suites = nlohmann::json::array(), baselines = nlohmann::json::array();
    for (const auto& t : c.suites) suites.push_back(to_json(t));
    for (const auto& b : c.baselines) baselines.push_back(to_json(b));
    return {{"seed", c.seed},
            {"synth", c.synth.to_json()},
            {"backend", {{"run_tag", c.backend.run_tag}, {"config", c.backend.toy.to_json()}}},
            {"suites", suites},
            {"baselines", baselines},
            {"analysis", to_json(c.analysis)}};
}

// ---------------------------------------------------------------------------
// Output directories

inline bool non_empty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

// Refuses a non-empty directory unless `force` (which clears it) or `allow`.
inline void prepare_out_dir(const fs::path& dir, bool force, bool allow = false) {
    if (non_empty_dir(dir)) {
        if (force) {
            for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
        } else if (!allow) {
            throw GuardError(dir.string() + " exists and is not empty; pass --force to overwrite");
        }
    }
    fs::create_directories(dir);
}

inline fs::path out_dir_for(const RunConfig& c, const std::optional<fs::path>& out, const char* sub) {
    if (out) return *out;
    if (c.output_dir.empty()) throw ConfigError("no --out given and no 'output_dir' in the configuration", "output_dir");
    return c.output_dir / sub;
}

inline std::vector<TokenSeq> encode_corpus(const std::vector<std::string>& lines, const Vocabulary& vocab) {
    std::vector<TokenSeq> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto ids = vocab.encode(split_words(lines[i]));
        if (!ids) throw DataError("corpus line " + std::to_string(i + 1) + " has a token outside the vocabulary");
        out.push_back(std::move(*ids));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synth

inline nlohmann::json cmd_synth(const RunConfig& c, const fs::path& out, bool force, std::ostream& log) {
    prepare_out_dir(out, force);
    const auto corpus = gen_corpus(c.synth);
    const auto suites = gen_probe_suites(c.synth, corpus);
    const auto manifest = write_synth_outputs(out, c.synth, corpus, suites);
    if (suites.overlap.total() > 0)
        log << "warning: " << suites.overlap.total() << " probe sentences also occur in the corpus (see manifest.json)\n";
    log << "synth: " << corpus.sentences.size() << " sentences, " << corpus.vocabulary.size() << " tokens -> " << out.string()
        << "\n";
    return manifest;
}

// ---------------------------------------------------------------------------
// pretrain

inline PretrainResult cmd_pretrain(const RunConfig& c, const fs::path& out, bool force, bool resume, std::ostream& log,
                                   std::optional<std::int64_t> stop_after = std::nullopt) {
    if (c.backend.corpus.empty()) throw ConfigError("pretraining needs backend.corpus", "corpus");
    if (c.backend.vocab.empty()) throw ConfigError("pretraining needs backend.vocab", "vocab");
    prepare_out_dir(out, force, resume);
    const Vocabulary vocab(read_text_lines(c.backend.vocab));
    const auto corpus = encode_corpus(read_text_lines(c.backend.corpus), vocab);
    PretrainOptions opts;
    opts.run_dir = out;
    opts.run_tag = c.backend.run_tag;
    opts.resume = resume;
    opts.stop_after = stop_after;
    const std::set<std::int64_t> sched(c.backend.toy.checkpoint_schedule.begin(), c.backend.toy.checkpoint_schedule.end());
    opts.on_log = [&](std::int64_t step, double loss) {
        if (sched.count(step)) log << "step " << step << " loss " << loss << "\n";
    };
    auto r = pretrain_toy(c.backend.toy, vocab, corpus, opts);
    log << "pretrain: " << r.checkpoints.size() << " checkpoints -> " << out.string() << "\n";
    return r;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeStats {
    std::size_t evaluated = 0;
    std::size_t reused = 0;
    std::size_t capability_skips = 0;
};

inline constexpr const char* kLedgerFile = "done.jsonl";
inline constexpr const char* kRecordsFile = "records.csv";
inline constexpr const char* kBaselinesFile = "baselines.jsonl";

inline std::string ledger_key(const std::string& task, const std::string& run_tag, std::int64_t step) {
    return task + "\x1f" + run_tag + "\x1f" + std::to_string(step);
}

struct Ledger {
    fs::path path;
    std::map<std::string, nlohmann::json> entries;
    std::mutex mu;

    explicit Ledger(fs::path p) : path(std::move(p)) {
        if (!fs::exists(path)) return;
        std::size_t lineno = 0;
        for (const auto& j : jsonl::read_lines(path)) {
            ++lineno;
            try {
                entries[ledger_key(j.at("task_id"), j.at("run_tag"), j.at("step"))] = j;
            } catch (const nlohmann::json::exception&) {
                throw ParseError("malformed ledger entry", lineno);
            }
        }
    }

    bool has(const std::string& key) {
        std::lock_guard lock(mu);
        return entries.count(key) > 0;
    }

    void append(const nlohmann::json& j) {
        std::lock_guard lock(mu);
        std::ofstream out(path, std::ios::app);
        out << j.dump() << '\n';
        out.flush();
        entries[ledger_key(j.at("task_id"), j.at("run_tag"), j.at("step"))] = j;
    }
};

inline nlohmann::json ledger_entry(const EvalRecord& r, const std::string& kind, const std::string& note = "") {
    nlohmann::json j = {{"task_id", r.task_id}, {"run_tag", r.run_tag},   {"step", r.checkpoint_step},
                        {"status", "ok"},       {"kind", kind},           {"value", r.metric_value},
                        {"n_items", r.n_items}, {"n_skipped", r.n_skipped}};
    if (!note.empty()) j["note"] = note;
    return j;
}

inline nlohmann::json skip_entry(const std::string& task, const std::string& run_tag, std::int64_t step,
                                 const std::string& kind, const std::string& reason) {
    return {{"task_id", task}, {"run_tag", run_tag}, {"step", step}, {"status", "skipped"}, {"kind", kind}, {"reason", reason}};
}

inline std::size_t worker_count() {
    if (const char* w = std::getenv("PROBETIME_WORKERS")) {
        try {
            const long n = std::stol(w);
            if (n >= 1) return static_cast<std::size_t>(n);
        } catch (const std::exception&) {
        }
        throw ConfigError("PROBETIME_WORKERS must be a positive integer", "PROBETIME_WORKERS");
    }
    return 1;
}

// One unit of work: a backend (built lazily) and the tasks to run on it.
struct ProbeJob {
    std::string run_tag;
    std::int64_t step = 0;
    std::string kind;  // "series" or "baseline"
    std::function<std::unique_ptr<Backend>()> make_backend;
    std::vector<std::function<std::unique_ptr<Backend>()>> trials;  // averaged when non-empty
};

inline ProbeStats cmd_probe(const RunConfig& c, const fs::path& ckpt_dir, const fs::path& out, bool force,
                            std::ostream& log) {
    if (c.suites.empty()) throw ConfigError("no probe suites configured", "suites");
    if (!fs::exists(ckpt_dir)) throw ConfigError("checkpoint directory " + ckpt_dir.string() + " does not exist", "checkpoints");
    prepare_out_dir(out, force, fs::exists(out / kLedgerFile));
    const auto ckpts = list_checkpoints(ckpt_dir);
    if (ckpts.empty()) throw NoData("no checkpoints under " + ckpt_dir.string());

    std::vector<LoadedTask> tasks;
    for (const auto& t : c.suites) tasks.push_back(load_task(t, c.base_dir));

    // Vocabulary and configuration of the run, taken from its first checkpoint.
    const auto first = load_checkpoint(ckpts.front().locator);
    const Vocabulary vocab = first.model.vocab();
    const ToyMLMConfig run_config = first.model.config();
    const std::string run_tag = ckpts.front().run_tag;

    std::vector<ProbeJob> jobs;
    for (const auto& ck : ckpts) {
        jobs.push_back({run_tag, ck.step, "series",
                        [loc = ck.locator] { return std::make_unique<ToyMLM>(load_checkpoint(loc).model); }, {}});
    }
    Ledger ledger(out / kLedgerFile);
    ProbeStats stats;
    for (const auto& b : c.baselines) {
        switch (b.kind) {
            case BaselineKind::random_guess:
                for (const auto& t : tasks) {
                    const auto key = ledger_key(t.spec.task_id, "random_guess", 0);
                    if (ledger.has(key)) {
                        ++stats.reused;
                        continue;
                    }
                    const auto g = random_guess_of(t, vocab.size());
                    EvalRecord r{t.spec.task_id, "random_guess", 0, g.value, 1, 0};
                    ledger.append(ledger_entry(r, "baseline", g.note));
                    ++stats.evaluated;
                }
                break;
            case BaselineKind::random_vector: {
                const auto d = static_cast<std::size_t>(b.int_param("d", kDefaultRandomVectorDim));
                const auto seed = static_cast<std::uint64_t>(b.int_param("seed", c.seed));
                jobs.push_back({"random_vector", 0, "baseline",
                                [vocab, d, seed] { return std::make_unique<RandomVectorBackend>(vocab, d, seed); }, {}});
                break;
            }
            case BaselineKind::static_embedding: {
                const auto table = detail::resolve(c.base_dir, b.str_param("table", "")).string();
                jobs.push_back({"static_embedding", 0, "baseline",
                                [vocab, table] { return std::make_unique<StaticEmbeddingBackend>(table, vocab); }, {}});
                break;
            }
            case BaselineKind::reference_checkpoint: {
                const auto which = b.str_param("checkpoint", "final");
                if (which == "initial") {
                    ProbeJob job{kRandomInitTag, 0, "baseline", {}, {}};
                    const auto trials = b.int_param("trials", kDefaultInitTrials);
                    for (std::int64_t i = 0; i < trials; ++i) {
                        job.trials.push_back([run_config, vocab, seed = c.seed, i] {
                            return std::make_unique<ToyMLM>(
                                ToyMLM::initialized(run_config, vocab, static_cast<std::uint64_t>(seed + i)));
                        });
                    }
                    jobs.push_back(std::move(job));
                } else {
                    const auto loc = which == "final" ? ckpts.back().locator : detail::resolve(c.base_dir, which).string();
                    const auto step = which == "final" ? ckpts.back().step : load_checkpoint(loc).step;
                    jobs.push_back({kReferenceTag, step, "baseline",
                                    [loc] { return std::make_unique<ToyMLM>(load_checkpoint(loc).model); }, {}});
                }
                break;
            }
        }
    }

    std::mutex stats_mu;
    auto run_job = [&](const ProbeJob& job) {
        std::vector<const LoadedTask*> todo;
        for (const auto& t : tasks) {
            if (ledger.has(ledger_key(t.spec.task_id, job.run_tag, job.step))) {
                std::lock_guard lock(stats_mu);
                ++stats.reused;
            } else {
                todo.push_back(&t);
            }
        }
        if (todo.empty()) return;
        std::vector<std::unique_ptr<Backend>> backends;
        if (job.trials.empty()) {
            backends.push_back(job.make_backend());
        } else {
            for (const auto& make : job.trials) backends.push_back(make());
        }
        for (const auto* t : todo) {
            std::vector<std::vector<EvalRecord>> per_trial;
            try {
                for (const auto& be : backends) per_trial.push_back({evaluate_task(*t, *be)});
            } catch (const CapabilityError& e) {
                ledger.append(skip_entry(t->spec.task_id, job.run_tag, job.step, job.kind, e.what()));
                std::lock_guard lock(stats_mu);
                ++stats.capability_skips;
                continue;
            }
            EvalRecord r = per_trial.size() == 1 ? per_trial.front().front() : average_trials(per_trial, job.run_tag).front();
            r.run_tag = job.run_tag;
            r.checkpoint_step = job.step;
            ledger.append(ledger_entry(r, job.kind));
            std::lock_guard lock(stats_mu);
            ++stats.evaluated;
        }
    };

    const std::size_t workers = std::min(worker_count(), jobs.size());
    if (workers <= 1) {
        for (const auto& job : jobs) run_job(job);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(jobs[i]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    // Rebuild the canonical result files from the ledger.
    std::vector<EvalRecord> series, base;
    std::vector<nlohmann::json> base_rows;
    for (const auto& [key, j] : ledger.entries) {
        if (j.at("status") != "ok") continue;
        EvalRecord r{j.at("task_id"), j.at("run_tag"), j.at("step"), j.at("value"), j.at("n_items"), j.at("n_skipped")};
        if (j.at("kind") == "series") {
            series.push_back(r);
        } else {
            nlohmann::json row = {{"name", r.run_tag}, {"task_id", r.task_id}, {"step", r.checkpoint_step},
                                  {"value", r.metric_value}, {"n_items", r.n_items}, {"n_skipped", r.n_skipped}};
            if (j.contains("note")) row["note"] = j["note"];
            base_rows.push_back(row);
        }
    }
    canonicalize(series);
    std::string csv(kRecordsHeader);
    csv += '\n';
    for (const auto& r : series) csv += record_row(r);
    write_text(out / kRecordsFile, csv);
    jsonl::write_lines(out / kBaselinesFile, base_rows);
    log << "probe: " << stats.evaluated << " evaluated, " << stats.reused << " already done, " << stats.capability_skips
        << " skipped (capability)\n";
    return stats;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOverrides {
    std::optional<double> epsilon;
    std::optional<std::vector<double>> x_list;
    std::optional<double> ema;
};

inline std::string timestamp_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string file_safe(std::string s) {
    for (char& ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
    return s;
}

inline nlohmann::json cmd_analyze(const RunConfig& c, const std::vector<fs::path>& results, const fs::path& out,
                                  bool force, const AnalyzeOverrides& ov, std::ostream& log) {
    AnalysisConfig cfg = c.analysis;
    if (ov.epsilon) cfg.epsilon = *ov.epsilon;
    if (ov.x_list) cfg.x_list = *ov.x_list;
    if (ov.ema) cfg.ema_coefficient = *ov.ema;
    cfg.validate();

    std::vector<EvalRecord> records;
    std::vector<BaselineLine> baselines;
    for (const auto& dir : results) {
        if (!fs::exists(dir / kRecordsFile))
            throw ConfigError("no " + std::string(kRecordsFile) + " in " + dir.string(), "--results");
        for (auto& r : parse_records(probetime::detail::read_file(dir / kRecordsFile))) records.push_back(std::move(r));
        if (fs::exists(dir / kBaselinesFile)) {
            for (const auto& j : jsonl::read_lines(dir / kBaselinesFile))
                baselines.push_back({j.at("name"), j.at("task_id"), j.at("value"), j.value("note", "")});
        }
    }
    canonicalize(records);
    std::map<std::pair<std::string, std::string>, bool> keys;
    for (const auto& r : records) keys[{r.run_tag, r.task_id}] = true;
    std::vector<ScoreSeries> series;
    for (const auto& [k, unused] : keys) series.push_back(assemble_series(records, k.second, k.first));
    if (series.empty()) throw NoData("no evaluation records to analyze");

    prepare_out_dir(out, force);
    const auto report = assemble_report(series, baselines, cfg, timestamp_now());
    write_text(out / "report.json", report.dump(2) + "\n");

    fs::create_directories(out / "series");
    fs::create_directories(out / "plots");
    for (const auto& s : series) {
        const auto stem = file_safe(s.run_tag() + "__" + s.task_id());
        write_text(out / "series" / (stem + ".csv"), serialize_series(s));
        write_text(out / "plots" / (stem + ".svg"), plot_series(s, cfg, baselines));
    }
    for (const auto& [run, pkgs] : report.at("package_means").items()) {
        for (const auto& [pkg, body] : pkgs.items()) {
            std::vector<SeriesPoint> pts;
            for (std::size_t i = 0; i < body.at("steps").size(); ++i)
                pts.push_back({body["steps"][i].get<std::int64_t>(), body["values"][i].get<double>()});
            const ScoreSeries mean(pkg, run, std::move(pts));
            write_text(out / "plots" / (file_safe(run + "__package_" + pkg) + ".svg"), plot_series(mean, cfg, {}));
        }
    }
    for (const auto& w : report.at("warnings")) log << "warning: " << w.get<std::string>() << "\n";
    log << "analyze: " << series.size() << " series -> " << (out / "report.json").string() << "\n";
    return report;
}

// ---------------------------------------------------------------------------
// Entry point

inline std::vector<double> parse_x_list(const std::vector<std::string>& raw) {
    std::vector<double> out;
    for (const auto& item : raw) {
        for (const auto& part : probetime::detail::split(item, ',')) {
            if (part.empty()) continue;
            try {
                out.push_back(std::stod(part));
            } catch (const std::exception&) {
                throw ConfigError("--x expects numbers, got '" + part + "'", "x_list");
            }
        }
    }
    return out;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Probe a masked language model across its pretraining checkpoints.", "probetime"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::int64_t> seed;
    bool force = false, resume = false;
    std::optional<std::string> checkpoints;
    std::vector<std::string> results;
    std::optional<double> epsilon, ema_c;
    std::vector<std::string> x_raw;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "configuration file (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "override the configuration seed");
        sub->add_flag("--force", force, "overwrite a non-empty output directory");
    };
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus and probe suites");
    common(synth);
    auto* pretrain = app.add_subcommand("pretrain", "pretrain the toy masked LM and save checkpoints");
    common(pretrain);
    pretrain->add_flag("--resume", resume, "continue from the latest checkpoint in --out");
    auto* probe = app.add_subcommand("probe", "evaluate every suite on every checkpoint and baseline");
    common(probe);
    probe->add_option("--checkpoints", checkpoints, "run directory to probe (default: backend.checkpoints)");
    auto* analyze = app.add_subcommand("analyze", "compute learning dynamics and write the report");
    common(analyze);
    analyze->add_option("--results", results, "probe output directory (repeat for domain comparison)");
    analyze->add_option("--epsilon", epsilon, "epsilon for learning phases");
    analyze->add_option("--x", x_raw, "learning-progress percentages, e.g. 90,95,97");
    analyze->add_option("--ema", ema_c, "EMA coefficient for plotted curves");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }

    try {
        const auto cfg = load_run_config(config_path, seed);
        const auto opt_path = out_dir ? std::optional<fs::path>(*out_dir) : std::nullopt;
        if (synth->parsed()) {
            cmd_synth(cfg, out_dir_for(cfg, opt_path, "synth"), force, err);
        } else if (pretrain->parsed()) {
            cmd_pretrain(cfg, out_dir_for(cfg, opt_path, "pretrain"), force, resume, err);
        } else if (probe->parsed()) {
            fs::path ck = checkpoints ? fs::path(*checkpoints) : cfg.backend.checkpoints;
            if (ck.empty()) {
                if (cfg.output_dir.empty()) throw ConfigError("no checkpoint directory given", "checkpoints");
                ck = cfg.output_dir / "pretrain";
            }
            cmd_probe(cfg, ck, out_dir_for(cfg, opt_path, "probe"), force, err);
        } else {
            std::vector<fs::path> dirs(results.begin(), results.end());
            if (dirs.empty()) {
                if (cfg.output_dir.empty()) throw ConfigError("no --results directory given", "--results");
                dirs.push_back(cfg.output_dir / "probe");
            }
            AnalyzeOverrides ov;
            ov.epsilon = epsilon;
            ov.ema = ema_c;
            if (!x_raw.empty()) ov.x_list = parse_x_list(x_raw);
            cmd_analyze(cfg, dirs, out_dir_for(cfg, opt_path, "analysis"), force, ov, err);
        }
    } catch (const ConfigError& e) {
        err << "config error [" << e.key() << "]: " << e.what() << "\n";
        return kConfigError;
    } catch (const GuardError& e) {
        err << "error: " << e.what() << "\n";
        return kGuardError;
    } catch (const std::exception& e) {
        err << "evaluation failed: " << e.what() << "\n";
        return kEvalError;
    }
    return kOk;
}

} // namespace probetime::cli
