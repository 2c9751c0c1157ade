#pragma once

// Reference points for reading probe scores: chance level, random type
// vectors, a static embedding table, and the scores of a fixed checkpoint.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "probetime/backend.hpp"
#include "probetime/core.hpp"
#include "probetime/datasets.hpp"
#include "probetime/errors.hpp"
#include "probetime/random.hpp"

namespace probetime {

enum class BaselineKind { random_guess, random_vector, static_embedding, reference_checkpoint };

inline std::string to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::random_guess: return "random_guess";
        case BaselineKind::random_vector: return "random_vector";
        case BaselineKind::static_embedding: return "static_embedding";
        case BaselineKind::reference_checkpoint: return "reference_checkpoint";
    }
    return "?";
}

inline BaselineKind parse_baseline_kind(const std::string& s) {
    if (s == "random_guess") return BaselineKind::random_guess;
    if (s == "random_vector") return BaselineKind::random_vector;
    if (s == "static_embedding") return BaselineKind::static_embedding;
    if (s == "reference_checkpoint") return BaselineKind::reference_checkpoint;
    throw ConfigError("unknown baseline kind '" + s + "'", "kind");
}

inline constexpr std::int64_t kDefaultRandomVectorDim = 300;
inline constexpr std::int64_t kDefaultInitTrials = 3;

// params by kind:
//   random_vector: d (default 300), seed (default 0)
//   static_embedding: table (required)
//   reference_checkpoint: checkpoint = "final" (default) | "initial" | a step
//     directory; "initial" averages step 0 over `trials` seeds (default 3)
struct BaselineSpec {
    BaselineKind kind = BaselineKind::random_guess;
    nlohmann::json params = nlohmann::json::object();

    void validate() const {
        static const std::map<BaselineKind, std::set<std::string>> allowed = {
            {BaselineKind::random_guess, {}},
            {BaselineKind::random_vector, {"d", "seed"}},
            {BaselineKind::static_embedding, {"table"}},
            {BaselineKind::reference_checkpoint, {"checkpoint", "trials"}},
        };
        if (!params.is_object()) throw ConfigError("baseline params must be an object", "params");
        for (const auto& [key, value] : params.items()) {
            if (!allowed.at(kind).count(key)) throw ConfigError("unknown baseline parameter '" + key + "'", key);
        }
        if (kind == BaselineKind::static_embedding && !params.contains("table"))
            throw ConfigError("static_embedding baseline needs 'table'", "table");
        if (params.contains("d") && (!params["d"].is_number_integer() || params["d"].get<std::int64_t>() <= 0))
            throw ConfigError("d must be a positive integer", "d");
        if (params.contains("trials") &&
            (!params["trials"].is_number_integer() || params["trials"].get<std::int64_t>() <= 0))
            throw ConfigError("trials must be a positive integer", "trials");
    }

    std::int64_t int_param(const std::string& key, std::int64_t fallback) const {
        return params.contains(key) ? params.at(key).get<std::int64_t>() : fallback;
    }
    std::string str_param(const std::string& key, const std::string& fallback) const {
        return params.contains(key) ? params.at(key).get<std::string>() : fallback;
    }
};

inline nlohmann::json to_json(const BaselineSpec& b) { return {{"kind", to_string(b.kind)}, {"params", b.params}}; }

inline BaselineSpec baseline_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("baseline entry must be an object", "baselines");
    for (const auto& [key, value] : j.items()) {
        if (key != "kind" && key != "params") throw ConfigError("unknown key '" + key + "' in baseline", key);
    }
    if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("baseline needs a string 'kind'", "kind");
    BaselineSpec b;
    b.kind = parse_baseline_kind(j["kind"].get<std::string>());
    if (j.contains("params")) b.params = j["params"];
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------
// Random guess

inline double random_guess_accuracy(const std::vector<MinimalPairItem>& items) {
    if (items.empty()) throw NoData("no minimal-pair items");
    double sum = 0.0;
    for (const auto& it : items) sum += 1.0 / static_cast<double>(1 + it.bads.size());
    return sum / static_cast<double>(items.size());
}

inline double random_guess_accuracy(const std::vector<MultiChoiceItem>& items) {
    if (items.empty()) throw NoData("no multichoice items");
    double sum = 0.0;
    for (const auto& it : items) sum += 1.0 / static_cast<double>(it.choices.size());
    return sum / static_cast<double>(items.size());
}

// One over the number of distinct labels in the data.
inline double random_guess_accuracy(const std::vector<TokenLabelSentence>& data) {
    std::set<std::string> labels;
    for (const auto& s : data) labels.insert(s.labels.begin(), s.labels.end());
    if (labels.empty()) throw NoData("no labeled tokens");
    return 1.0 / static_cast<double>(labels.size());
}

inline double random_guess_accuracy(const std::vector<ArcSentence>& data, bool pred_mode) {
    if (pred_mode) return 0.5;
    std::set<std::string> labels;
    for (const auto& s : data)
        for (const auto& a : s.arcs) labels.insert(a.label);
    if (labels.empty()) throw NoData("no arcs");
    return 1.0 / static_cast<double>(labels.size());
}

struct ClozeGuess {
    double value = 0.0;
    bool full_vocab_approximation = false;  // some item used k / V
};

// Items with candidates contribute min(k, |cand|) / |cand|; items without
// contribute k / V, V being the vocabulary size.
inline ClozeGuess random_guess_accuracy(const std::vector<ClozeItem>& items, std::size_t k, std::size_t vocab_size) {
    if (items.empty()) throw NoData("no cloze items");
    if (k < 1) throw ConfigError("k must be >= 1", "k");
    ClozeGuess g;
    for (const auto& it : items) {
        if (it.candidates && !it.candidates->empty()) {
            const double n = static_cast<double>(it.candidates->size());
            g.value += std::min(static_cast<double>(k), n) / n;
        } else {
            g.value += std::min(1.0, static_cast<double>(k) / static_cast<double>(vocab_size));
            g.full_vocab_approximation = true;
        }
    }
    g.value /= static_cast<double>(items.size());
    return g;
}

// ---------------------------------------------------------------------------
// Representation-only backends

// One fixed vector per vocabulary type and nothing else: a single layer, no
// context, no masked-token distribution.
class TableBackend : public Backend {
public:
    const Vocabulary& vocab() const override { return vocab_; }
    std::size_t num_layers() const override { return 0; }
    std::size_t width() const override { return width_; }
    bool has_masked_lm() const override { return false; }
    std::uint64_t state_checksum() const override { return fnv1a(table_.data(), table_.size() * sizeof(double)); }

    std::vector<MaskedDistribution> score_masked(std::span<const TokenId>, std::span<const std::size_t>) const override {
        require_masked_lm();
        return {};
    }

    LayerRepresentations encode(std::span<const TokenId> tokens) const override {
        LayerRepresentations out(1, tokens.size(), width_);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab_.size())
                throw IndexError("token id " + std::to_string(tokens[i]) + " outside the vocabulary");
            const auto row = this->row(tokens[i]);
            std::copy(row.begin(), row.end(), out.at(0, i).begin());
        }
        return out;
    }

    std::span<const double> row(TokenId id) const {
        return {table_.data() + static_cast<std::size_t>(id) * width_, width_};
    }

protected:
    TableBackend(Vocabulary vocab, std::size_t width)
        : vocab_(std::move(vocab)), width_(width), table_(vocab_.size() * width, 0.0) {}

    Vocabulary vocab_;
    std::size_t width_;
    std::vector<double> table_;
};

class RandomVectorBackend final : public TableBackend {
public:
    RandomVectorBackend(Vocabulary vocab, std::size_t d, std::uint64_t seed) : TableBackend(std::move(vocab), d), seed_(seed) {
        if (d == 0) throw ConfigError("random vector dimension must be positive", "d");
        Rng rng(derive_seed(seed, 0x52'56));
        for (double& x : table_) x = rng.uniform(-2.0, 2.0);
    }

    std::string describe() const override {
        return "random-vector baseline (d=" + std::to_string(width_) + ", seed=" + std::to_string(seed_) + ")";
    }

private:
    std::uint64_t seed_;
};

inline RandomVectorBackend random_vector_backend(const Vocabulary& vocab, std::size_t d, std::uint64_t seed) {
    return RandomVectorBackend(vocab, d, seed);
}

// Rows come from a text table, one `word v1 ... vd` line per word. Vocabulary
// words absent from the table keep a zero vector and are counted.
class StaticEmbeddingBackend final : public TableBackend {
public:
    StaticEmbeddingBackend(const std::string& table_path, Vocabulary vocab)
        : StaticEmbeddingBackend(read_table(table_path), std::move(vocab), table_path) {}

    std::string describe() const override { return "static-embedding baseline (" + source_ + ")"; }

    // Non-special vocabulary types that the table does not cover.
    std::size_t missing_count() const noexcept { return missing_.size(); }
    const std::vector<std::string>& missing_words() const noexcept { return missing_; }

    using Table = std::pair<std::size_t, std::map<std::string, std::vector<double>>>;

    static Table read_table(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open embedding table " + path);
        return parse_table(in);
    }

    static Table parse_table(std::istream& in) {
        Table t{0, {}};
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            std::istringstream ls(line);
            std::string word, tok;
            ls >> word;
            std::vector<double> v;
            while (ls >> tok) {
                const std::string field = "v" + std::to_string(v.size() + 1);
                v.push_back(detail::parse_real(tok, lineno, field.c_str()));
            }
            if (v.empty()) throw ParseError("word has no vector", lineno, word);
            if (t.first == 0) t.first = v.size();
            if (v.size() != t.first)
                throw ParseError("expected " + std::to_string(t.first) + " components, found " + std::to_string(v.size()),
                                 lineno, word);
            if (!t.second.emplace(word, std::move(v)).second) throw ParseError("duplicate word", lineno, word);
        }
        if (t.first == 0) throw ParseError("embedding table is empty", lineno);
        return t;
    }

    StaticEmbeddingBackend(const Table& table, Vocabulary vocab, std::string source)
        : TableBackend(std::move(vocab), table.first), source_(std::move(source)) {
        for (std::size_t t = 0; t < vocab_.size(); ++t) {
            const auto id = static_cast<TokenId>(t);
            const auto it = table.second.find(vocab_.token(id));
            if (it == table.second.end()) {
                if (!vocab_.is_special(id)) missing_.push_back(vocab_.token(id));
                continue;
            }
            std::copy(it->second.begin(), it->second.end(), table_.begin() + static_cast<std::ptrdiff_t>(t * width_));
        }
    }

private:
    std::string source_;
    std::vector<std::string> missing_;
};

inline StaticEmbeddingBackend static_embedding_backend(const std::string& table_file, const Vocabulary& vocab) {
    return StaticEmbeddingBackend(table_file, vocab);
}

// ---------------------------------------------------------------------------
// Reference checkpoints

inline constexpr const char* kReferenceTag = "reference";
inline constexpr const char* kRandomInitTag = "random_init";

// `evaluate` is the same per-checkpoint evaluation used for the main series.
template <typename Evaluate>
std::vector<EvalRecord> reference_eval(const Backend& reference, Evaluate&& evaluate, std::int64_t step) {
    std::vector<EvalRecord> out = evaluate(reference);
    for (auto& r : out) {
        r.run_tag = kReferenceTag;
        r.checkpoint_step = step;
    }
    return out;
}

// Per-task mean over trials (e.g. step 0 of several seeds). Item counts are
// taken from the first trial.
inline std::vector<EvalRecord> average_trials(const std::vector<std::vector<EvalRecord>>& trials,
                                              const std::string& run_tag = kRandomInitTag) {
    if (trials.empty()) throw NoData("no trials to average");
    std::map<std::string, std::pair<double, std::size_t>> sums;
    std::map<std::string, EvalRecord> first;
    for (const auto& t : trials) {
        for (const auto& r : t) {
            auto& s = sums[r.task_id];
            s.first += r.metric_value;
            s.second += 1;
            first.emplace(r.task_id, r);
        }
    }
    std::vector<EvalRecord> out;
    for (const auto& [task, s] : sums) {
        EvalRecord r = first.at(task);
        r.run_tag = run_tag;
        r.checkpoint_step = 0;
        r.metric_value = s.first / static_cast<double>(s.second);
        out.push_back(r);
    }
    return out;
}

} // namespace probetime
