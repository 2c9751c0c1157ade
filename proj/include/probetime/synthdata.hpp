#pragma once

// Seeded generator for a small synthetic language and its probe suites.
//
// Agreement sentences: the [adj] NOUN VERB [the [adj] NOUN]
//   with subject-verb number agreement (noun "n3"/"n3s", verb "v3s"/"v3").
// Fact sentences: ENTITY RELATION OBJECT, drawn round-robin from a gold
//   table, so each fact appears fact_density * sentence_count / fact_count times.
// Comparison sentences: NUM lt NUM with a true numeric ordering.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "probetime/backend.hpp"
#include "probetime/datasets.hpp"
#include "probetime/errors.hpp"
#include "probetime/random.hpp"

namespace probetime {

struct SynthLanguageConfig {
    std::size_t nouns = 24;  // lemmas; each has a singular and a plural form
    std::size_t verbs = 16;  // lemmas; each has a singular and a plural form
    std::size_t adjectives = 12;
    std::size_t entities = 40;
    std::size_t relations = 4;
    std::size_t objects = 30;
    std::size_t numbers = 12;
    std::size_t fact_count = 50;
    double fact_density = 0.2;
    double comparison_density = 0.02;
    std::size_t sentence_count = 20000;
    std::size_t minimal_pairs = 200;
    std::size_t multichoice_items = 100;
    std::size_t labeled_sentences = 600;
    std::int64_t seed = 0;

    // "agreement-rich/fact-dense" and "agreement-rich/fact-sparse".
    static SynthLanguageConfig dense() { return {}; }
    static SynthLanguageConfig sparse() {
        SynthLanguageConfig c;
        c.fact_density = 0.02;
        return c;
    }

    void validate() const {
        auto positive = [](std::size_t v, const char* key) {
            if (v == 0) throw ConfigError(std::string(key) + " must be positive", key);
        };
        positive(nouns, "nouns");
        positive(verbs, "verbs");
        positive(entities, "entities");
        positive(relations, "relations");
        positive(objects, "objects");
        positive(sentence_count, "sentence_count");
        if (numbers < 3) throw ConfigError("numbers must be at least 3", "numbers");
        if (!(fact_density >= 0.0 && fact_density <= 1.0))
            throw ConfigError("fact_density must lie in [0, 1]", "fact_density");
        if (!(comparison_density >= 0.0 && comparison_density <= 1.0))
            throw ConfigError("comparison_density must lie in [0, 1]", "comparison_density");
        if (fact_density + comparison_density > 1.0)
            throw ConfigError("fact_density + comparison_density exceeds 1", "fact_density");
        if (fact_count > entities * relations)
            throw ConfigError("fact_count exceeds entities * relations", "fact_count");
        if (fact_density > 0.0 && fact_count == 0)
            throw ConfigError("fact_density > 0 needs fact_count > 0", "fact_count");
    }

    nlohmann::json to_json() const {
        return {{"nouns", nouns},
                {"verbs", verbs},
                {"adjectives", adjectives},
                {"entities", entities},
                {"relations", relations},
                {"objects", objects},
                {"numbers", numbers},
                {"fact_count", fact_count},
                {"fact_density", fact_density},
                {"comparison_density", comparison_density},
                {"sentence_count", sentence_count},
                {"minimal_pairs", minimal_pairs},
                {"multichoice_items", multichoice_items},
                {"labeled_sentences", labeled_sentences},
                {"seed", seed}};
    }

    // Unknown keys are rejected; "seed" is required.
    static SynthLanguageConfig from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("synth config must be an object", "synth");
        if (!j.contains("seed")) throw ConfigError("missing required key 'seed'", "seed");
        SynthLanguageConfig c;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            const auto& v = it.value();
            try {
                if (k == "nouns") c.nouns = v.get<std::size_t>();
                else if (k == "verbs") c.verbs = v.get<std::size_t>();
                else if (k == "adjectives") c.adjectives = v.get<std::size_t>();
                else if (k == "entities") c.entities = v.get<std::size_t>();
                else if (k == "relations") c.relations = v.get<std::size_t>();
                else if (k == "objects") c.objects = v.get<std::size_t>();
                else if (k == "numbers") c.numbers = v.get<std::size_t>();
                else if (k == "fact_count") c.fact_count = v.get<std::size_t>();
                else if (k == "fact_density") c.fact_density = v.get<double>();
                else if (k == "comparison_density") c.comparison_density = v.get<double>();
                else if (k == "sentence_count") c.sentence_count = v.get<std::size_t>();
                else if (k == "minimal_pairs") c.minimal_pairs = v.get<std::size_t>();
                else if (k == "multichoice_items") c.multichoice_items = v.get<std::size_t>();
                else if (k == "labeled_sentences") c.labeled_sentences = v.get<std::size_t>();
                else if (k == "seed") c.seed = v.get<std::int64_t>();
                else throw ConfigError("unknown synth key '" + k + "'", k);
            } catch (const nlohmann::json::exception&) {
                throw ConfigError("synth key '" + k + "' has the wrong type", k);
            }
        }
        c.validate();
        return c;
    }
};

struct Fact {
    std::string entity;
    std::string relation;
    std::string object;

    friend bool operator==(const Fact&, const Fact&) = default;
};

// Word forms of the synthetic lexicon.
struct Lexicon {
    explicit Lexicon(const SynthLanguageConfig& c) : config(c) {}

    std::string noun(std::size_t i, bool plural) const { return "n" + std::to_string(i) + (plural ? "s" : ""); }
    std::string verb(std::size_t i, bool plural) const { return "v" + std::to_string(i) + (plural ? "" : "s"); }
    std::string adjective(std::size_t i) const { return "a" + std::to_string(i); }
    std::string entity(std::size_t i) const { return "e" + std::to_string(i); }
    std::string relation(std::size_t i) const { return "r" + std::to_string(i); }
    std::string object(std::size_t i) const { return "o" + std::to_string(i); }
    std::string number(std::size_t i) const { return "num" + std::to_string(i); }
    static constexpr const char* determiner = "the";
    static constexpr const char* less_than = "lt";

    std::vector<std::string> all_tokens() const {
        std::vector<std::string> t{std::string(kPadToken), std::string(kMaskToken), determiner, less_than};
        for (std::size_t i = 0; i < config.nouns; ++i) {
            t.push_back(noun(i, false));
            t.push_back(noun(i, true));
        }
        for (std::size_t i = 0; i < config.verbs; ++i) {
            t.push_back(verb(i, false));
            t.push_back(verb(i, true));
        }
        for (std::size_t i = 0; i < config.adjectives; ++i) t.push_back(adjective(i));
        for (std::size_t i = 0; i < config.entities; ++i) t.push_back(entity(i));
        for (std::size_t i = 0; i < config.relations; ++i) t.push_back(relation(i));
        for (std::size_t i = 0; i < config.objects; ++i) t.push_back(object(i));
        for (std::size_t i = 0; i < config.numbers; ++i) t.push_back(number(i));
        return t;
    }

    SynthLanguageConfig config;
};

// One agreement sentence with its annotations.
struct AgreementSentence {
    Words words;
    Words tags;    // DET ADJ NOUN_SG NOUN_PL VERB_SG VERB_PL
    Words chunks;  // BIO over NP / VP
    std::size_t subject = 0;
    std::size_t verb = 0;
    std::optional<std::size_t> object;
    bool plural = false;
};

inline AgreementSentence sample_agreement_sentence(Rng& rng, const Lexicon& lex) {
    const auto& c = lex.config;
    AgreementSentence s;
    auto noun_phrase = [&](bool plural) {
        s.words.push_back(Lexicon::determiner);
        s.tags.push_back("DET");
        s.chunks.push_back("B-NP");
        if (c.adjectives > 0 && rng.bernoulli(0.5)) {
            s.words.push_back(lex.adjective(rng.below(c.adjectives)));
            s.tags.push_back("ADJ");
            s.chunks.push_back("I-NP");
        }
        s.words.push_back(lex.noun(rng.below(c.nouns), plural));
        s.tags.push_back(plural ? "NOUN_PL" : "NOUN_SG");
        s.chunks.push_back("I-NP");
        return s.words.size() - 1;
    };
    s.plural = rng.bernoulli(0.5);
    s.subject = noun_phrase(s.plural);
    s.words.push_back(lex.verb(rng.below(c.verbs), s.plural));
    s.tags.push_back(s.plural ? "VERB_PL" : "VERB_SG");
    s.chunks.push_back("B-VP");
    s.verb = s.words.size() - 1;
    if (rng.bernoulli(0.5)) s.object = noun_phrase(rng.bernoulli(0.5));
    return s;
}

// Oracle re-parser: checks an agreement sentence against the grammar and
// returns whether subject and verb agree. nullopt when it does not parse.
inline std::optional<bool> check_agreement(const Words& w, const Lexicon& lex) {
    std::size_t i = 0;
    auto parse_np = [&](bool& plural) -> bool {
        if (i >= w.size() || w[i] != Lexicon::determiner) return false;
        ++i;
        if (i < w.size() && w[i].size() > 1 && w[i][0] == 'a') ++i;
        if (i >= w.size() || w[i].size() < 2 || w[i][0] != 'n' || w[i].rfind("num", 0) == 0) return false;
        plural = w[i].back() == 's';
        const auto lemma = w[i].substr(1, w[i].size() - 1 - (plural ? 1 : 0));
        if (lemma.empty() || lemma.find_first_not_of("0123456789") != std::string::npos) return false;
        if (std::stoul(lemma) >= lex.config.nouns) return false;
        ++i;
        return true;
    };
    bool subj_plural = false;
    if (!parse_np(subj_plural)) return std::nullopt;
    if (i >= w.size() || w[i].size() < 2 || w[i][0] != 'v') return std::nullopt;
    const bool verb_plural = w[i].back() != 's';
    ++i;
    if (i < w.size()) {
        bool obj_plural = false;
        if (!parse_np(obj_plural)) return std::nullopt;
    }
    if (i != w.size()) return std::nullopt;
    return subj_plural == verb_plural;
}

struct SynthCorpus {
    std::vector<std::string> sentences;
    std::vector<std::string> vocabulary;
    std::vector<Fact> facts;
    std::size_t fact_sentences = 0;
    std::size_t comparison_sentences = 0;
};

inline SynthCorpus gen_corpus(const SynthLanguageConfig& config) {
    config.validate();
    const Lexicon lex(config);
    SynthCorpus out;
    out.vocabulary = lex.all_tokens();

    Rng fact_rng(derive_seed(static_cast<std::uint64_t>(config.seed), 11));
    auto pairs = fact_rng.sample(config.entities * config.relations, config.fact_count);
    for (auto p : pairs) {
        out.facts.push_back({lex.entity(p / config.relations), lex.relation(p % config.relations),
                             lex.object(fact_rng.below(config.objects))});
    }

    const auto n_facts = static_cast<std::size_t>(
        std::llround(config.fact_density * static_cast<double>(config.sentence_count)));
    const auto n_cmp = std::min(config.sentence_count - n_facts,
                                static_cast<std::size_t>(std::llround(config.comparison_density *
                                                                      static_cast<double>(config.sentence_count))));
    enum Kind : std::uint8_t { agreement, fact, comparison };
    std::vector<Kind> kinds(config.sentence_count, agreement);
    for (std::size_t i = 0; i < n_facts; ++i) kinds[i] = fact;
    for (std::size_t i = 0; i < n_cmp; ++i) kinds[n_facts + i] = comparison;
    Rng rng(derive_seed(static_cast<std::uint64_t>(config.seed), 12));
    rng.shuffle(kinds);

    std::size_t next_fact = 0;
    for (auto k : kinds) {
        if (k == fact) {
            const auto& f = out.facts[next_fact++ % out.facts.size()];
            out.sentences.push_back(f.entity + ' ' + f.relation + ' ' + f.object);
        } else if (k == comparison) {
            const auto a = rng.below(config.numbers - 1);
            const auto b = a + 1 + rng.below(config.numbers - 1 - a);
            out.sentences.push_back(lex.number(a) + ' ' + Lexicon::less_than + ' ' + lex.number(b));
        } else {
            out.sentences.push_back(join_words(sample_agreement_sentence(rng, lex).words));
        }
    }
    out.fact_sentences = n_facts;
    out.comparison_sentences = n_cmp;
    return out;
}

struct OverlapStats {
    std::size_t minimal_pairs = 0;
    std::size_t token_labels = 0;
    std::size_t chunks = 0;
    std::size_t arcs = 0;

    std::size_t total() const { return minimal_pairs + token_labels + chunks + arcs; }
};

struct SynthSuites {
    std::vector<MinimalPairItem> minimal_pairs;
    std::vector<ClozeItem> cloze;
    std::vector<MultiChoiceItem> multichoice;
    std::vector<TokenLabelSentence> token_labels;
    std::vector<TokenLabelSentence> chunks;
    std::vector<ArcSentence> arcs;
    OverlapStats overlap;
};

// Counts probe sentences that also occur verbatim in the corpus.
inline OverlapStats measure_overlap(const SynthSuites& s, const std::vector<std::string>& corpus) {
    const std::unordered_set<std::string> seen(corpus.begin(), corpus.end());
    OverlapStats o;
    for (const auto& mp : s.minimal_pairs) {
        o.minimal_pairs += seen.count(join_words(mp.good));
        for (const auto& b : mp.bads) o.minimal_pairs += seen.count(join_words(b));
    }
    for (const auto& t : s.token_labels) o.token_labels += seen.count(join_words(t.tokens));
    for (const auto& t : s.chunks) o.chunks += seen.count(join_words(t.tokens));
    for (const auto& a : s.arcs) o.arcs += seen.count(join_words(a.tokens));
    return o;
}

inline SynthSuites gen_probe_suites(const SynthLanguageConfig& config, const SynthCorpus& corpus) {
    const Lexicon lex(config);
    const std::unordered_set<std::string> seen(corpus.sentences.begin(), corpus.sentences.end());
    Rng rng(derive_seed(static_cast<std::uint64_t>(config.seed), 13));
    SynthSuites out;

    // Fresh sentences: resample up to 64 times to avoid verbatim corpus copies.
    auto fresh = [&]() {
        AgreementSentence s;
        for (int attempt = 0; attempt < 64; ++attempt) {
            s = sample_agreement_sentence(rng, lex);
            if (!seen.count(join_words(s.words))) break;
        }
        return s;
    };

    for (std::size_t i = 0; i < config.minimal_pairs; ++i) {
        const auto s = fresh();
        MinimalPairItem it;
        it.id = "agr-" + std::to_string(i);
        it.good = s.words;
        Words bad = s.words;
        const auto lemma = s.words[s.verb].substr(1, s.words[s.verb].size() - 1 - (s.plural ? 0 : 1));
        bad[s.verb] = lex.verb(std::stoul(lemma), !s.plural);
        it.bads.push_back(std::move(bad));
        out.minimal_pairs.push_back(std::move(it));
    }

    for (std::size_t i = 0; i < corpus.facts.size(); ++i) {
        const auto& f = corpus.facts[i];
        out.cloze.push_back({"fact-" + std::to_string(i), {f.entity, f.relation, std::string(kMaskToken)}, f.object,
                             std::nullopt});
    }

    for (std::size_t i = 0; i < config.multichoice_items; ++i) {
        // "numA lt [MASK]": exactly one choice is greater than A.
        const auto a = 1 + rng.below(config.numbers - 2);
        const auto n_choices = std::min<std::size_t>(2 + rng.below(4), a + 2);
        MultiChoiceItem it;
        it.id = "cmp-" + std::to_string(i);
        it.tokens = {lex.number(a), Lexicon::less_than, std::string(kMaskToken)};
        const auto greater = a + 1 + rng.below(config.numbers - 1 - a);
        auto smaller = rng.sample(a + 1, n_choices - 1);  // values <= a
        it.answer_index = rng.below(n_choices);
        std::size_t next = 0;
        for (std::size_t c = 0; c < n_choices; ++c)
            it.choices.push_back(c == it.answer_index ? lex.number(greater) : lex.number(smaller[next++]));
        out.multichoice.push_back(std::move(it));
    }

    for (std::size_t i = 0; i < config.labeled_sentences; ++i) {
        const auto s = fresh();
        out.token_labels.push_back({s.words, s.tags});
        out.chunks.push_back({s.words, s.chunks});
        ArcSentence a;
        a.tokens = s.words;
        a.arcs.push_back({s.subject, s.verb, "subj"});
        if (s.object) a.arcs.push_back({s.verb, *s.object, "obj"});
        out.arcs.push_back(std::move(a));
    }

    out.overlap = measure_overlap(out, corpus.sentences);
    return out;
}

inline void write_text_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
}

inline std::vector<std::string> read_text_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

// Writes corpus.txt, vocab.txt, facts.jsonl, the probe suites and manifest.json.
inline nlohmann::json write_synth_outputs(const std::filesystem::path& dir, const SynthLanguageConfig& config,
                                          const SynthCorpus& corpus, const SynthSuites& suites) {
    std::filesystem::create_directories(dir);
    write_text_lines(dir / "corpus.txt", corpus.sentences);
    write_text_lines(dir / "vocab.txt", corpus.vocabulary);
    std::vector<nlohmann::json> facts;
    for (const auto& f : corpus.facts)
        facts.push_back({{"entity", f.entity}, {"relation", f.relation}, {"object", f.object}});
    jsonl::write_lines(dir / "facts.jsonl", facts);
    save_jsonl(dir / "minimal_pairs.jsonl", suites.minimal_pairs);
    save_jsonl(dir / "cloze.jsonl", suites.cloze);
    save_jsonl(dir / "multichoice.jsonl", suites.multichoice);
    save_jsonl(dir / "token_labels.jsonl", suites.token_labels);
    save_jsonl(dir / "chunks.jsonl", suites.chunks);
    save_jsonl(dir / "arcs.jsonl", suites.arcs);
    nlohmann::json manifest = {
        {"config", config.to_json()},
        {"seed", config.seed},
        {"counts",
         {{"sentences", corpus.sentences.size()},
          {"fact_sentences", corpus.fact_sentences},
          {"comparison_sentences", corpus.comparison_sentences},
          {"vocabulary", corpus.vocabulary.size()},
          {"facts", corpus.facts.size()},
          {"minimal_pairs", suites.minimal_pairs.size()},
          {"cloze", suites.cloze.size()},
          {"multichoice", suites.multichoice.size()},
          {"token_labels", suites.token_labels.size()},
          {"chunks", suites.chunks.size()},
          {"arcs", suites.arcs.size()}}},
        {"overlap",
         {{"minimal_pairs", suites.overlap.minimal_pairs},
          {"token_labels", suites.overlap.token_labels},
          {"chunks", suites.overlap.chunks},
          {"arcs", suites.overlap.arcs},
          {"total", suites.overlap.total()}}},
    };
    std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
    return manifest;
}

} // namespace probetime
