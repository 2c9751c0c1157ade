#pragma once

// Probes that use the masked LM as it is: pseudo-log-likelihood sentence
// scores, minimal-pair / sentence-set comparison, cloze precision@k and
// multiple-choice mask filling. None of them adds parameters.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "probetime/backend.hpp"
#include "probetime/core.hpp"
#include "probetime/datasets.hpp"
#include "probetime/errors.hpp"

namespace probetime {

// Raised for an item that cannot be scored (out-of-vocabulary token).
class SkipSignal : public Error {
public:
    using Error::Error;
};

inline constexpr double kMinProb = 1e-30;

// (1/n) sum_i log P(w_i | sentence with position i masked).
inline double pll_score(std::span<const TokenId> sentence, const Backend& backend) {
    backend.require_masked_lm();
    if (sentence.empty()) throw DataError("cannot score an empty sentence");
    std::vector<MaskedQuery> queries;
    queries.reserve(sentence.size());
    for (std::size_t i = 0; i < sentence.size(); ++i) {
        MaskedQuery q{{sentence.begin(), sentence.end()}, {i}};
        q.tokens[i] = backend.vocab().mask_id();
        queries.push_back(std::move(q));
    }
    const auto dists = backend.score_masked_batch(queries);
    double total = 0.0;
    for (std::size_t i = 0; i < sentence.size(); ++i) {
        const double p = dists[i].front().probs.at(static_cast<std::size_t>(sentence[i]));
        total += std::log(std::max(p, kMinProb));
    }
    return total / static_cast<double>(sentence.size());
}

inline TokenSeq tokenize_or_skip(const Words& words, const Vocabulary& vocab) {
    auto ids = vocab.encode(words);
    if (!ids) throw SkipSignal("out-of-vocabulary token in '" + join_words(words) + "'");
    return *ids;
}

inline double pll_score(const Words& sentence, const Backend& backend) {
    return pll_score(tokenize_or_skip(sentence, backend.vocab()), backend);
}

// An item is correct iff its good sentence scores strictly higher than every
// bad one; ties count as wrong.
inline EvalRecord eval_minimal_pairs(const std::vector<MinimalPairItem>& items, const Backend& backend,
                                     const std::string& task_id = "minimal_pairs") {
    backend.require_masked_lm();
    if (items.empty()) throw NoData("no minimal-pair items");
    std::int64_t scored = 0, skipped = 0, correct = 0;
    for (const auto& it : items) {
        try {
            const double good = pll_score(it.good, backend);
            bool ok = true;
            for (const auto& bad : it.bads) {
                if (!(good > pll_score(bad, backend))) ok = false;
            }
            correct += ok ? 1 : 0;
            ++scored;
        } catch (const SkipSignal&) {
            ++skipped;
        }
    }
    if (scored == 0) throw NoData("task '" + task_id + "': every item was skipped");
    return make_record(task_id, static_cast<double>(correct) / static_cast<double>(scored), scored, skipped);
}

// Rank of `answer` within `pool` when the pool is sorted by descending
// probability, ties broken by token id (a stable sort over id order).
inline std::size_t rank_in_pool(const std::vector<double>& probs, const std::vector<TokenId>& pool, TokenId answer) {
    const double pa = probs.at(static_cast<std::size_t>(answer));
    std::size_t rank = 1;
    for (auto t : pool) {
        if (t == answer) continue;
        const double pt = probs.at(static_cast<std::size_t>(t));
        if (pt > pa || (pt == pa && t < answer)) ++rank;
    }
    return rank;
}

// Pool used when an item has no candidate list: every non-special token.
inline std::vector<TokenId> full_vocab_pool(const Vocabulary& vocab) {
    std::vector<TokenId> pool;
    for (std::size_t t = 0; t < vocab.size(); ++t) {
        if (!vocab.is_special(static_cast<TokenId>(t))) pool.push_back(static_cast<TokenId>(t));
    }
    return pool;
}

// Precision@k: an item is correct iff its answer ranks within the top k of
// its pool. Items whose answer or context is out of vocabulary are skipped;
// out-of-vocabulary candidates are dropped from the pool.
inline EvalRecord eval_cloze(const std::vector<ClozeItem>& items, const Backend& backend, std::size_t k = 1,
                             const std::string& task_id = "cloze") {
    backend.require_masked_lm();
    if (k < 1) throw ConfigError("k must be >= 1", "k");
    const auto& vocab = backend.vocab();
    const auto default_pool = full_vocab_pool(vocab);
    std::int64_t scored = 0, skipped = 0, correct = 0;
    for (const auto& it : items) {
        const auto slot = it.mask_slot();
        const auto answer = vocab.find(it.answer);
        const auto context = vocab.encode(it.tokens);
        if (!answer || !context || vocab.is_special(*answer)) {
            ++skipped;
            continue;
        }
        std::vector<TokenId> pool;
        if (it.candidates) {
            for (const auto& c : *it.candidates) {
                if (auto id = vocab.find(c)) pool.push_back(*id);
            }
        } else {
            pool = default_pool;
        }
        const std::size_t positions[] = {slot};
        const auto dist = backend.score_masked(*context, positions);
        correct += rank_in_pool(dist.front().probs, pool, *answer) <= k ? 1 : 0;
        ++scored;
    }
    if (scored == 0) throw NoData("task '" + task_id + "': every item was skipped");
    return make_record(task_id, static_cast<double>(correct) / static_cast<double>(scored), scored, skipped);
}

// Index of the choice with the highest raw probability; lowest index wins ties.
inline std::size_t predict_choice(const std::vector<double>& probs, const std::vector<TokenId>& choices) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < choices.size(); ++c) {
        if (probs.at(static_cast<std::size_t>(choices[c])) > probs.at(static_cast<std::size_t>(choices[best])))
            best = c;
    }
    return best;
}

inline EvalRecord eval_multichoice(const std::vector<MultiChoiceItem>& items, const Backend& backend,
                                   const std::string& task_id = "multichoice") {
    backend.require_masked_lm();
    if (items.empty()) throw NoData("no multichoice items");
    const auto& vocab = backend.vocab();
    std::int64_t scored = 0, skipped = 0, correct = 0;
    for (const auto& it : items) {
        const auto slot = it.mask_slot();
        const auto context = vocab.encode(it.tokens);
        const auto choices = vocab.encode(it.choices);
        if (!context || !choices) {
            ++skipped;
            continue;
        }
        const std::size_t positions[] = {slot};
        const auto dist = backend.score_masked(*context, positions);
        correct += predict_choice(dist.front().probs, *choices) == it.answer_index ? 1 : 0;
        ++scored;
    }
    if (scored == 0) throw NoData("task '" + task_id + "': every item was skipped");
    return make_record(task_id, static_cast<double>(correct) / static_cast<double>(scored), scored, skipped);
}

} // namespace probetime
