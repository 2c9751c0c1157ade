#pragma once

// Typed probe datasets and their JSONL encodings.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "probetime/backend.hpp"
#include "probetime/errors.hpp"

namespace probetime {

using Words = std::vector<std::string>;

inline Words split_words(std::string_view text) {
    Words out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

inline std::string join_words(const Words& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

struct MinimalPairItem {
    std::string id;
    Words good;
    std::vector<Words> bads;

    void validate() const {
        if (good.empty()) throw DataError("minimal pair '" + id + "': empty good sentence");
        if (bads.empty()) throw DataError("minimal pair '" + id + "': no bad sentences");
        for (const auto& b : bads) {
            if (b.empty()) throw DataError("minimal pair '" + id + "': empty bad sentence");
            if (b == good) throw DataError("minimal pair '" + id + "': a bad sentence equals the good one");
        }
    }
};

struct ClozeItem {
    std::string id;
    Words tokens;  // exactly one "[MASK]"
    std::string answer;
    std::optional<Words> candidates;

    std::size_t mask_slot() const {
        std::size_t slot = tokens.size(), count = 0;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] == kMaskToken) {
                slot = i;
                ++count;
            }
        }
        if (count != 1) throw DataError("cloze item '" + id + "' must contain exactly one [MASK]");
        return slot;
    }

    void validate() const {
        mask_slot();
        if (candidates && std::find(candidates->begin(), candidates->end(), answer) == candidates->end())
            throw DataError("cloze item '" + id + "': answer is not among the candidates");
    }
};

struct MultiChoiceItem {
    std::string id;
    Words tokens;  // exactly one "[MASK]"
    Words choices;
    std::size_t answer_index = 0;

    std::size_t mask_slot() const {
        std::size_t slot = tokens.size(), count = 0;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] == kMaskToken) {
                slot = i;
                ++count;
            }
        }
        if (count != 1) throw DataError("multichoice item '" + id + "' must contain exactly one [MASK]");
        return slot;
    }

    void validate() const {
        mask_slot();
        if (choices.size() < 2 || choices.size() > 5)
            throw DataError("multichoice item '" + id + "' needs 2 to 5 choices");
        if (answer_index >= choices.size())
            throw DataError("multichoice item '" + id + "': answer index out of range");
    }
};

struct TokenLabelSentence {
    Words tokens;
    Words labels;

    void validate() const {
        if (tokens.size() != labels.size()) throw DataError("tokens and labels differ in length");
    }
};

struct Arc {
    std::size_t head = 0;
    std::size_t dep = 0;
    std::string label;

    friend bool operator==(const Arc&, const Arc&) = default;
};

struct ArcSentence {
    Words tokens;
    std::vector<Arc> arcs;

    void validate() const {
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (const auto& a : arcs) {
            if (a.head >= tokens.size() || a.dep >= tokens.size()) throw DataError("arc index out of range");
            if (a.head == a.dep) throw DataError("self-arc");
            if (!seen.emplace(a.head, a.dep).second) throw DataError("duplicate (head, dep) pair");
        }
    }
};

// ---------------------------------------------------------------------------
// JSONL

namespace jsonl {

inline std::vector<nlohmann::json> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
    }
    return out;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : rows) out << r.dump() << '\n';
}

template <typename F>
auto field(const nlohmann::json& j, const char* key, std::size_t lineno, F&& get) {
    if (!j.contains(key)) throw ParseError("missing key", lineno, key);
    try {
        return get(j.at(key));
    } catch (const nlohmann::json::exception&) {
        throw ParseError("wrong type", lineno, key);
    }
}

inline std::string id_of(const nlohmann::json& j, std::size_t lineno) {
    if (!j.contains("id")) return "item-" + std::to_string(lineno);
    const auto& v = j.at("id");
    return v.is_string() ? v.get<std::string>() : v.dump();
}

} // namespace jsonl

inline nlohmann::json to_json(const MinimalPairItem& it) {
    nlohmann::json bads = nlohmann::json::array();
    for (const auto& b : it.bads) bads.push_back(join_words(b));
    return {{"id", it.id}, {"good", join_words(it.good)}, {"bads", bads}};
}

inline nlohmann::json to_json(const ClozeItem& it) {
    nlohmann::json j = {{"id", it.id}, {"text", join_words(it.tokens)}, {"answer", it.answer}};
    if (it.candidates) j["candidates"] = *it.candidates;
    return j;
}

inline nlohmann::json to_json(const MultiChoiceItem& it) {
    return {{"id", it.id}, {"text", join_words(it.tokens)}, {"choices", it.choices}, {"answer_idx", it.answer_index}};
}

inline nlohmann::json to_json(const TokenLabelSentence& s) { return {{"tokens", s.tokens}, {"labels", s.labels}}; }

inline nlohmann::json to_json(const ArcSentence& s) {
    nlohmann::json arcs = nlohmann::json::array();
    for (const auto& a : s.arcs) arcs.push_back(nlohmann::json::array({a.head, a.dep, a.label}));
    return {{"tokens", s.tokens}, {"arcs", arcs}};
}

inline std::vector<MinimalPairItem> load_minimal_pairs(const std::filesystem::path& path) {
    std::vector<MinimalPairItem> out;
    std::size_t lineno = 0;
    for (const auto& j : jsonl::read_lines(path)) {
        ++lineno;
        MinimalPairItem it;
        it.id = jsonl::id_of(j, lineno);
        it.good = split_words(jsonl::field(j, "good", lineno, [](const auto& v) { return v.template get<std::string>(); }));
        for (const auto& b : jsonl::field(j, "bads", lineno, [](const auto& v) { return v.template get<std::vector<std::string>>(); }))
            it.bads.push_back(split_words(b));
        it.validate();
        out.push_back(std::move(it));
    }
    return out;
}

inline std::vector<ClozeItem> load_cloze(const std::filesystem::path& path) {
    std::vector<ClozeItem> out;
    std::size_t lineno = 0;
    for (const auto& j : jsonl::read_lines(path)) {
        ++lineno;
        ClozeItem it;
        it.id = jsonl::id_of(j, lineno);
        it.tokens = split_words(jsonl::field(j, "text", lineno, [](const auto& v) { return v.template get<std::string>(); }));
        it.answer = jsonl::field(j, "answer", lineno, [](const auto& v) { return v.template get<std::string>(); });
        if (j.contains("candidates") && !j.at("candidates").is_null())
            it.candidates = jsonl::field(j, "candidates", lineno, [](const auto& v) { return v.template get<Words>(); });
        it.validate();
        out.push_back(std::move(it));
    }
    return out;
}

inline std::vector<MultiChoiceItem> load_multichoice(const std::filesystem::path& path) {
    std::vector<MultiChoiceItem> out;
    std::size_t lineno = 0;
    for (const auto& j : jsonl::read_lines(path)) {
        ++lineno;
        MultiChoiceItem it;
        it.id = jsonl::id_of(j, lineno);
        it.tokens = split_words(jsonl::field(j, "text", lineno, [](const auto& v) { return v.template get<std::string>(); }));
        it.choices = jsonl::field(j, "choices", lineno, [](const auto& v) { return v.template get<Words>(); });
        it.answer_index = jsonl::field(j, "answer_idx", lineno, [](const auto& v) { return v.template get<std::size_t>(); });
        it.validate();
        out.push_back(std::move(it));
    }
    return out;
}

inline std::vector<TokenLabelSentence> load_token_labels(const std::filesystem::path& path) {
    std::vector<TokenLabelSentence> out;
    std::size_t lineno = 0;
    for (const auto& j : jsonl::read_lines(path)) {
        ++lineno;
        TokenLabelSentence s;
        s.tokens = jsonl::field(j, "tokens", lineno, [](const auto& v) { return v.template get<Words>(); });
        s.labels = jsonl::field(j, "labels", lineno, [](const auto& v) { return v.template get<Words>(); });
        if (s.tokens.size() != s.labels.size()) throw ParseError("tokens and labels differ in length", lineno, "labels");
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<ArcSentence> load_arcs(const std::filesystem::path& path) {
    std::vector<ArcSentence> out;
    std::size_t lineno = 0;
    for (const auto& j : jsonl::read_lines(path)) {
        ++lineno;
        ArcSentence s;
        s.tokens = jsonl::field(j, "tokens", lineno, [](const auto& v) { return v.template get<Words>(); });
        const auto arcs = jsonl::field(j, "arcs", lineno, [](const auto& v) { return v; });
        if (!arcs.is_array()) throw ParseError("arcs must be an array", lineno, "arcs");
        for (const auto& a : arcs) {
            if (!a.is_array() || a.size() != 3 || !a[0].is_number_unsigned() || !a[1].is_number_unsigned() ||
                !a[2].is_string())
                throw ParseError("each arc must be [head, dep, \"label\"]", lineno, "arcs");
            s.arcs.push_back({a[0].get<std::size_t>(), a[1].get<std::size_t>(), a[2].get<std::string>()});
        }
        try {
            s.validate();
        } catch (const DataError& e) {
            throw ParseError(e.what(), lineno, "arcs");
        }
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
void save_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
    std::vector<nlohmann::json> rows;
    rows.reserve(items.size());
    for (const auto& it : items) rows.push_back(to_json(it));
    jsonl::write_lines(path, rows);
}

} // namespace probetime
