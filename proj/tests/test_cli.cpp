#include "catch_amalgamated.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "probetime/cli.hpp"

using namespace probetime;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
    static const fs::path r = [] {
        const auto p = fs::temp_directory_path() / "probetime_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return r;
}

nlohmann::json tiny_config() {
    const std::string synth = "out/synth/";
    return {
        {"seed", 0},
        {"output_dir", "out"},
        {"synth", {{"sentence_count", 600}, {"minimal_pairs", 20}, {"multichoice_items", 12}, {"labeled_sentences", 40}}},
        {"backend",
         {{"corpus", synth + "corpus.txt"},
          {"vocab", synth + "vocab.txt"},
          {"run_tag", "tiny"},
          {"config",
           {{"total_steps", 40}, {"checkpoint_every", 20}, {"warmup_steps", 5}, {"d_model", 16}, {"ffn_dim", 32},
            {"n_layers", 1}}}}},
        {"suites",
         {{{"task_id", "agreement"}, {"family", "minimal_pair"}, {"dataset", synth + "minimal_pairs.jsonl"}},
          {{"task_id", "facts"}, {"family", "cloze"}, {"dataset", synth + "cloze.jsonl"}, {"params", {{"k", 3}}}},
          {{"task_id", "comparison"}, {"family", "multichoice"}, {"dataset", synth + "multichoice.jsonl"}},
          {{"task_id", "pos"}, {"family", "token_label"}, {"dataset", synth + "token_labels.jsonl"}},
          {{"task_id", "chunks"}, {"family", "segmentation"}, {"dataset", synth + "chunks.jsonl"}},
          {{"task_id", "arc_exists"}, {"family", "arc_pred"}, {"dataset", synth + "arcs.jsonl"}},
          {{"task_id", "arc_label"}, {"family", "arc_class"}, {"dataset", synth + "arcs.jsonl"}}}},
        {"baselines",
         {{{"kind", "random_guess"}},
          {{"kind", "random_vector"}, {"params", {{"d", 16}}}},
          {{"kind", "reference_checkpoint"}, {"params", {{"checkpoint", "final"}}}},
          {{"kind", "reference_checkpoint"}, {"params", {{"checkpoint", "initial"}, {"trials", 2}}}}}},
        {"analysis", {{"packages", {{"structural", {"pos", "chunks", "arc_exists", "arc_label"}}}}}}};
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
    const auto p = root() / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

struct Outcome {
    int code;
    std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
    std::vector<const char*> argv = {"probetime"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// synth + pretrain + probe once for the whole file.
const fs::path& pipeline() {
    static const fs::path cfg = [] {
        const auto c = write_config("tiny.json", tiny_config());
        const auto s = invoke({"synth", "--config", c.string()});
        if (s.code != 0) throw std::runtime_error("synth failed: " + s.err);
        const auto p = invoke({"pretrain", "--config", c.string()});
        if (p.code != 0) throw std::runtime_error("pretrain failed: " + p.err);
        const auto q = invoke({"probe", "--config", c.string()});
        if (q.code != 0) throw std::runtime_error("probe failed: " + q.err);
        return c;
    }();
    return cfg;
}

} // namespace

TEST_CASE("pipeline commands succeed and write their outputs") {
    const auto cfg = pipeline();
    const auto out = root() / "out";
    REQUIRE(fs::exists(out / "synth" / "corpus.txt"));
    REQUIRE(list_checkpoints(out / "pretrain").size() == 3);
    REQUIRE(fs::exists(out / "pretrain" / "loss.csv"));
    REQUIRE(fs::exists(out / "probe" / "records.csv"));
    const auto a = invoke({"analyze", "--config", cfg.string()});
    INFO(a.err);
    REQUIRE(a.code == 0);
    REQUIRE(fs::exists(out / "analysis" / "report.json"));
    REQUIRE(fs::exists(out / "analysis" / "plots" / "tiny__pos.svg"));
    REQUIRE(fs::exists(out / "analysis" / "series" / "tiny__agreement.csv"));
    REQUIRE(fs::exists(out / "analysis" / "plots" / "tiny__package_structural.svg"));
}

TEST_CASE("a non-empty output directory needs --force") {
    const auto cfg = pipeline();
    const auto again = invoke({"synth", "--config", cfg.string()});
    REQUIRE(again.code == cli::kGuardError);
    REQUIRE(again.err.find("--force") != std::string::npos);
    const auto other = root() / "forced";
    fs::create_directories(other);
    std::ofstream(other / "junk.txt") << "x";
    REQUIRE(invoke({"synth", "--config", cfg.string(), "--out", other.string(), "--force"}).code == 0);
    REQUIRE_FALSE(fs::exists(other / "junk.txt"));
}

TEST_CASE("configuration errors exit with code 2 and name the key") {
    auto j = tiny_config();
    j.erase("seed");
    const auto r = invoke({"synth", "--config", write_config("noseed.json", j).string(), "--out", (root() / "x1").string()});
    REQUIRE(r.code == cli::kConfigError);
    REQUIRE(r.err.find("[seed]") != std::string::npos);

    j = tiny_config();
    j["synth"]["seed"] = 3;
    REQUIRE(invoke({"synth", "--config", write_config("nested.json", j).string()}).code == cli::kConfigError);

    j = tiny_config();
    j["suites"][1]["task_id"] = "agreement";
    const auto dup = invoke({"synth", "--config", write_config("dup.json", j).string()});
    REQUIRE(dup.code == cli::kConfigError);
    REQUIRE(dup.err.find("[task_id]") != std::string::npos);

    std::ofstream(root() / "broken.json") << "{ not json";
    REQUIRE(invoke({"synth", "--config", (root() / "broken.json").string()}).code == cli::kConfigError);
    REQUIRE(invoke({"synth"}).code == cli::kConfigError);
    REQUIRE(invoke({"synth", "--config", "x.json", "--bogus"}).code == cli::kConfigError);
    REQUIRE(invoke({"analyze", "--config", pipeline().string(), "--epsilon", "0.7", "--out", (root() / "x2").string()}).code ==
            cli::kConfigError);
    REQUIRE(invoke({"analyze", "--config", pipeline().string(), "--x", "90,abc", "--out", (root() / "x3").string()}).code ==
            cli::kConfigError);
}

TEST_CASE("--seed overrides the configured seed") {
    const auto cfg = pipeline();
    const auto d = root() / "seed7";
    REQUIRE(invoke({"synth", "--config", cfg.string(), "--seed", "7", "--out", d.string()}).code == 0);
    REQUIRE(slurp(d / "corpus.txt") != slurp(root() / "out" / "synth" / "corpus.txt"));
    const auto c = cli::load_run_config(cfg, 7);
    REQUIRE(c.synth.seed == 7);
    REQUIRE(c.backend.toy.seed == 7);
}

TEST_CASE("probe output has one record per task and checkpoint") {
    pipeline();
    const auto records = parse_records(slurp(root() / "out" / "probe" / "records.csv"));
    REQUIRE(records.size() == 7 * 3);
    for (const auto& r : records) REQUIRE(r.run_tag == "tiny");
    std::map<std::string, int> per_name;
    for (const auto& j : jsonl::read_lines(root() / "out" / "probe" / "baselines.jsonl")) per_name[j.at("name")]++;
    REQUIRE(per_name["random_guess"] == 7);
    REQUIRE(per_name["random_vector"] == 4);  // behavioral tasks need a masked LM
    REQUIRE(per_name["reference"] == 7);
    REQUIRE(per_name["random_init"] == 7);
}

TEST_CASE("re-running probe reuses finished work") {
    const auto cfg = cli::load_run_config(pipeline());
    const auto dir = root() / "out" / "probe";
    const auto before = slurp(dir / "records.csv");
    std::ostringstream log;
    const auto stats = cli::cmd_probe(cfg, root() / "out" / "pretrain", dir, false, log);
    REQUIRE(stats.evaluated == 0);
    REQUIRE(stats.reused == 7 * 3 + 7 + 7 + 7 + 7);
    REQUIRE(slurp(dir / "records.csv") == before);
}

TEST_CASE("an interrupted probe run resumes from its ledger") {
    const auto cfg = cli::load_run_config(pipeline());
    const auto dir = root() / "resume_probe";
    fs::create_directories(dir);
    // Keep only the first three ledger lines, as if the process had died.
    const auto lines = read_text_lines(root() / "out" / "probe" / "done.jsonl");
    std::ofstream ledger(dir / cli::kLedgerFile);
    for (std::size_t i = 0; i < 3; ++i) ledger << lines[i] << "\n";
    ledger.close();
    std::ostringstream log;
    const auto stats = cli::cmd_probe(cfg, root() / "out" / "pretrain", dir, false, log);
    REQUIRE(stats.reused == 3);
    REQUIRE(slurp(dir / "records.csv") == slurp(root() / "out" / "probe" / "records.csv"));
}

TEST_CASE("worker count does not change the results") {
    const auto cfg = cli::load_run_config(pipeline());
    const auto dir = root() / "workers";
    ::setenv("PROBETIME_WORKERS", "3", 1);
    std::ostringstream log;
    cli::cmd_probe(cfg, root() / "out" / "pretrain", dir, true, log);
    ::unsetenv("PROBETIME_WORKERS");
    REQUIRE(slurp(dir / "records.csv") == slurp(root() / "out" / "probe" / "records.csv"));
    REQUIRE(slurp(dir / "baselines.jsonl") == slurp(root() / "out" / "probe" / "baselines.jsonl"));
}

TEST_CASE("analyze overrides reach the report") {
    const auto cfg = pipeline();
    const auto d = root() / "eps";
    REQUIRE(invoke({"analyze", "--config", cfg.string(), "--out", d.string(), "--epsilon", "0.1", "--x", "80,99", "--ema", "0.3"})
                .code == 0);
    const auto report = nlohmann::json::parse(slurp(d / "report.json"));
    REQUIRE(report["config"]["epsilon"] == 0.1);
    REQUIRE(report["config"]["x_list"] == nlohmann::json{80.0, 99.0});
    REQUIRE(report["config"]["ema_coefficient"] == 0.3);
    for (const auto& p : report["phases"]["tiny"]) REQUIRE(p["epsilon"] == 0.1);
    REQUIRE(report["learning_progress"]["tiny"].size() == 7 * 2);
}

TEST_CASE("report values equal direct dynamics calls on the records") {
    const auto cfg = pipeline();
    const auto d = root() / "direct";
    REQUIRE(invoke({"analyze", "--config", cfg.string(), "--out", d.string()}).code == 0);
    const auto report = nlohmann::json::parse(slurp(d / "report.json"));
    const auto records = parse_records(slurp(root() / "out" / "probe" / "records.csv"));
    for (const auto& e : report["learning_progress"]["tiny"]) {
        const auto s = assemble_series(records, e["task_id"], "tiny");
        if (e["step_at_x"].is_null()) {
            REQUIRE_THROWS_AS(learning_progress(s, e["x"].get<double>()), UndefinedThreshold);
        } else {
            REQUIRE(e["step_at_x"].get<std::int64_t>() == learning_progress(s, e["x"].get<double>()).step_at_x);
        }
    }
    for (const auto& p : report["phases"]["tiny"]) {
        const auto s = assemble_series(records, p["task_id"], "tiny");
        if (!p["interval"].is_null()) REQUIRE(p["interval"].get<std::int64_t>() == epsilon_phase(s).interval);
    }
    // Analysis is a pure function of the records.
    const auto d2 = root() / "direct2";
    REQUIRE(invoke({"analyze", "--config", cfg.string(), "--out", d2.string()}).code == 0);
    REQUIRE(same_report(report, nlohmann::json::parse(slurp(d2 / "report.json"))));
}

TEST_CASE("two result directories give a domain report") {
    const auto cfg = cli::load_run_config(pipeline());
    // Relabel the records as a second run.
    const auto other = root() / "other_run";
    fs::create_directories(other);
    auto text = slurp(root() / "out" / "probe" / "records.csv");
    for (std::size_t pos; (pos = text.find(",tiny,")) != std::string::npos;) text.replace(pos, 6, ",news,");
    write_text(other / "records.csv", text);
    std::ostringstream log;
    const auto report = cli::cmd_analyze(cfg, {root() / "out" / "probe", other}, root() / "domain", true, {}, log);
    REQUIRE(report["mode"] == "domain");
    REQUIRE(report["curves"].contains("news"));
    REQUIRE(report["curves"]["news"] == report["curves"]["tiny"]);
    REQUIRE(report["correlation"].contains("cross_run"));
}

TEST_CASE("the installed binary reports usage errors") {
    const std::string bin = PROBETIME_BIN;
    REQUIRE(std::system((bin + " --help > /dev/null").c_str()) == 0);
    const int rc = std::system((bin + " synth > /dev/null 2>&1").c_str());
    REQUIRE(WEXITSTATUS(rc) == cli::kConfigError);
}
