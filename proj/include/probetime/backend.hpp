#pragma once

// The scoring contract every probe consumes: masked-token distributions and
// per-layer token representations.

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "probetime/errors.hpp"

namespace probetime {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kPadToken = "[PAD]";

class Vocabulary {
public:
    Vocabulary() = default;

    // Ids are positions in `tokens`. Both special tokens must be present.
    explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i].empty()) throw DataError("vocabulary token " + std::to_string(i) + " is empty");
            if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
                throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
        }
        mask_id_ = require(kMaskToken);
        pad_id_ = require(kPadToken);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open vocabulary file " + path);
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            tokens.push_back(line);
        }
        return Vocabulary(std::move(tokens));
    }

    std::string serialize() const {
        std::string out;
        for (const auto& t : tokens_) out += t + '\n';
        return out;
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    TokenId mask_id() const noexcept { return mask_id_; }
    TokenId pad_id() const noexcept { return pad_id_; }
    bool is_special(TokenId id) const noexcept { return id == mask_id_ || id == pad_id_; }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    std::optional<TokenId> find(std::string_view tok) const {
        auto it = index_.find(std::string(tok));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    TokenId id(std::string_view tok) const {
        auto found = find(tok);
        if (!found) throw IndexError("token '" + std::string(tok) + "' is not in the vocabulary");
        return *found;
    }

    // Whitespace tokenization; nullopt when any word is out of vocabulary.
    std::optional<TokenSeq> encode(std::string_view text) const {
        TokenSeq out;
        std::istringstream in{std::string(text)};
        std::string word;
        while (in >> word) {
            auto found = find(word);
            if (!found) return std::nullopt;
            out.push_back(*found);
        }
        return out;
    }

    std::optional<TokenSeq> encode(const std::vector<std::string>& words) const {
        TokenSeq out;
        out.reserve(words.size());
        for (const auto& w : words) {
            auto found = find(w);
            if (!found) return std::nullopt;
            out.push_back(*found);
        }
        return out;
    }

    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += token(ids[i]);
        }
        return out;
    }

private:
    TokenId require(std::string_view tok) const {
        auto found = find(tok);
        if (!found) throw DataError("vocabulary lacks the special token " + std::string(tok));
        return *found;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId mask_id_ = -1;
    TokenId pad_id_ = -1;
};

struct MaskedDistribution {
    std::size_t position = 0;
    std::vector<double> probs;  // length V, sums to 1
};

// layers[l] is a (seq_len x d_model) row-major matrix; layer 0 is the
// embedding lookup.
class LayerRepresentations {
public:
    LayerRepresentations(std::size_t n_layers_plus_one, std::size_t seq_len, std::size_t width)
        : seq_len_(seq_len), width_(width), data_(n_layers_plus_one, std::vector<double>(seq_len * width, 0.0)) {}

    std::size_t num_layers() const noexcept { return data_.size(); }
    std::size_t seq_len() const noexcept { return seq_len_; }
    std::size_t width() const noexcept { return width_; }

    std::span<const double> at(std::size_t layer, std::size_t position) const {
        return {data_.at(layer).data() + position * width_, width_};
    }
    std::span<double> at(std::size_t layer, std::size_t position) {
        return {data_.at(layer).data() + position * width_, width_};
    }
    std::vector<double>& layer(std::size_t l) { return data_.at(l); }
    const std::vector<double>& layer(std::size_t l) const { return data_.at(l); }

private:
    std::size_t seq_len_;
    std::size_t width_;
    std::vector<std::vector<double>> data_;
};

struct MaskedQuery {
    TokenSeq tokens;
    std::vector<std::size_t> positions;
};

// A loaded scoring backend. Implementations are immutable once constructed,
// so const member functions may be called from several threads at once.
class Backend {
public:
    virtual ~Backend() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual std::size_t num_layers() const = 0;  // L; encode returns L + 1 layers
    virtual std::size_t width() const = 0;
    virtual bool has_masked_lm() const = 0;
    virtual std::string describe() const = 0;
    // Hash of every parameter byte; used to prove probes leave a backend untouched.
    virtual std::uint64_t state_checksum() const = 0;

    virtual std::vector<MaskedDistribution> score_masked(std::span<const TokenId> tokens,
                                                         std::span<const std::size_t> positions) const = 0;
    virtual LayerRepresentations encode(std::span<const TokenId> tokens) const = 0;

    // Batched form; results are identical to calling score_masked per query.
    virtual std::vector<std::vector<MaskedDistribution>> score_masked_batch(const std::vector<MaskedQuery>& qs) const {
        std::vector<std::vector<MaskedDistribution>> out;
        out.reserve(qs.size());
        for (const auto& q : qs) out.push_back(score_masked(q.tokens, q.positions));
        return out;
    }

    void require_masked_lm() const {
        if (!has_masked_lm())
            throw CapabilityError(describe() + " exposes no masked-token distribution; behavioral probes need one");
    }
};

// 64-bit FNV-1a over raw bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace probetime
