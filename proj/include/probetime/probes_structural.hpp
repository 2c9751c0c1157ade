#pragma once

// Classifier probes on frozen representations. A scalar mix pools the
// backend's layers into one vector per token (or per token pair) and a
// linear classifier reads labels off it. Only the probe's own parameters are
// trained; the backend is used through const methods only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "probetime/backend.hpp"
#include "probetime/core.hpp"
#include "probetime/datasets.hpp"
#include "probetime/errors.hpp"
#include "probetime/random.hpp"

namespace probetime {

enum class MixNormalization { softmax, raw };

// gamma * sum_l w_l f^l, with w = softmax(raw_weights) (or the raw weights
// themselves in raw mode).
struct ScalarMix {
    std::vector<double> raw_weights;
    double gamma = 1.0;
    MixNormalization normalization = MixNormalization::softmax;

    static ScalarMix uniform(std::size_t layers, MixNormalization mode = MixNormalization::softmax) {
        ScalarMix m;
        m.normalization = mode;
        m.raw_weights.assign(layers, mode == MixNormalization::softmax ? 0.0 : 1.0 / static_cast<double>(layers));
        return m;
    }

    std::vector<double> weights() const {
        if (normalization == MixNormalization::raw) return raw_weights;
        std::vector<double> w(raw_weights);
        const double m = *std::max_element(w.begin(), w.end());
        double sum = 0.0;
        for (double& x : w) {
            x = std::exp(x - m);
            sum += x;
        }
        for (double& x : w) x /= sum;
        return w;
    }

    friend bool operator==(const ScalarMix&, const ScalarMix&) = default;
};

inline std::vector<double> mix(const LayerRepresentations& layers, std::size_t position, const ScalarMix& sm) {
    if (position >= layers.seq_len()) throw IndexError("mix position out of range");
    if (sm.raw_weights.size() != layers.num_layers())
        throw DataError("scalar mix has " + std::to_string(sm.raw_weights.size()) + " weights for " +
                        std::to_string(layers.num_layers()) + " layers");
    const auto w = sm.weights();
    std::vector<double> out(layers.width(), 0.0);
    for (std::size_t l = 0; l < layers.num_layers(); ++l) {
        const auto row = layers.at(l, position);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += w[l] * row[j];
    }
    for (double& x : out) x *= sm.gamma;
    return out;
}

// weight is input_width x n_labels, row-major. input_width is d for token
// tasks and 2d for pair tasks ([mix(head); mix(dep)]).
struct LinearProbeModel {
    std::vector<double> weight;
    std::vector<double> bias;
    ScalarMix scalar_mix;
    std::vector<std::string> label_set;
    std::size_t input_width = 0;

    std::size_t n_labels() const noexcept { return label_set.size(); }

    friend bool operator==(const LinearProbeModel&, const LinearProbeModel&) = default;
};

struct ProbeHyper {
    std::size_t epochs = 10;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    MixNormalization normalization = MixNormalization::softmax;
};

struct TrainedProbe {
    LinearProbeModel model;
    double dev_metric = 0.0;
    std::size_t best_epoch = 0;  // 0: the initialization was never beaten
};

// ---------------------------------------------------------------------------
// BIO spans

struct Span {
    std::string type;
    std::size_t start = 0;
    std::size_t end = 0;  // inclusive

    friend auto operator<=>(const Span&, const Span&) = default;
};

inline void check_bio_label(const std::string& label) {
    if (label == "O") return;
    if (label.size() > 2 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-') return;
    throw DataError("label '" + label + "' is not a BIO tag");
}

// An I- tag that does not continue an open span of the same type starts a new one.
inline std::vector<Span> decode_bio(const std::vector<std::string>& tags) {
    std::vector<Span> spans;
    std::optional<Span> open;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        check_bio_label(tags[i]);
        if (tags[i] == "O") {
            if (open) spans.push_back(*open);
            open.reset();
            continue;
        }
        const std::string type = tags[i].substr(2);
        if (tags[i][0] == 'I' && open && open->type == type) {
            open->end = i;
            continue;
        }
        if (open) spans.push_back(*open);
        open = Span{type, i, i};
    }
    if (open) spans.push_back(*open);
    return spans;
}

// Micro-averaged labeled span F1 over sentences; 0 when P + R = 0.
inline double span_f1(const std::vector<std::vector<std::string>>& gold,
                      const std::vector<std::vector<std::string>>& pred) {
    if (gold.size() != pred.size()) throw DataError("gold and predicted sentence counts differ");
    std::size_t tp = 0, n_gold = 0, n_pred = 0;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        const auto g = decode_bio(gold[s]);
        const auto p = decode_bio(pred[s]);
        n_gold += g.size();
        n_pred += p.size();
        const std::set<Span> gs(g.begin(), g.end());
        for (const auto& sp : p) tp += gs.count(sp);
    }
    const double precision = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
    const double recall = n_gold ? static_cast<double>(tp) / static_cast<double>(n_gold) : 0.0;
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// ---------------------------------------------------------------------------
// Probe examples

enum class ArcMode { pred, cls };

inline constexpr const char* kArcLabel = "arc";
inline constexpr const char* kNoArcLabel = "no_arc";

// One classification example: one token, or an ordered (head, dep) pair.
struct ProbeExample {
    std::size_t sentence = 0;
    std::size_t first = 0;
    std::optional<std::size_t> second;
    std::string label;
};

struct ArcCandidates {
    std::vector<ProbeExample> examples;
    std::int64_t sentences_used = 0;
    std::int64_t sentences_skipped = 0;
};

// pred: gold arcs plus as many non-arc ordered pairs sampled uniformly with
// `seed` (both capped at min(#gold, #non-arcs) so the set stays balanced);
// sentences shorter than 2 tokens are skipped. cls: gold arcs only.
inline ArcCandidates arc_examples(const std::vector<ArcSentence>& data, ArcMode mode, std::uint64_t seed) {
    ArcCandidates out;
    Rng rng(seed);
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto& sent = data[s];
        sent.validate();
        if (mode == ArcMode::cls) {
            for (const auto& a : sent.arcs) out.examples.push_back({s, a.head, a.dep, a.label});
            ++out.sentences_used;
            continue;
        }
        if (sent.tokens.size() < 2) {
            ++out.sentences_skipped;
            continue;
        }
        std::set<std::pair<std::size_t, std::size_t>> gold;
        for (const auto& a : sent.arcs) gold.emplace(a.head, a.dep);
        std::vector<std::pair<std::size_t, std::size_t>> non_arcs;
        for (std::size_t h = 0; h < sent.tokens.size(); ++h) {
            for (std::size_t d = 0; d < sent.tokens.size(); ++d) {
                if (h != d && !gold.count({h, d})) non_arcs.emplace_back(h, d);
            }
        }
        const std::size_t k = std::min(gold.size(), non_arcs.size());
        std::vector<std::pair<std::size_t, std::size_t>> pos(gold.begin(), gold.end());
        if (k < pos.size()) {
            std::vector<std::pair<std::size_t, std::size_t>> kept;
            for (auto i : rng.sample(pos.size(), k)) kept.push_back(pos[i]);
            pos = std::move(kept);
        }
        for (const auto& [h, d] : pos) out.examples.push_back({s, h, d, kArcLabel});
        for (auto i : rng.sample(non_arcs.size(), k))
            out.examples.push_back({s, non_arcs[i].first, non_arcs[i].second, kNoArcLabel});
        ++out.sentences_used;
    }
    return out;
}

inline std::vector<ProbeExample> token_examples(const std::vector<TokenLabelSentence>& data) {
    std::vector<ProbeExample> out;
    for (std::size_t s = 0; s < data.size(); ++s) {
        data[s].validate();
        for (std::size_t i = 0; i < data[s].tokens.size(); ++i) out.push_back({s, i, std::nullopt, data[s].labels[i]});
    }
    return out;
}

// Per-example stacked layer features: (L+1) rows of width d (or 2d for pairs).
struct FeatureTable {
    std::size_t layers = 0;
    std::size_t width = 0;
    std::vector<std::vector<double>> rows;  // one (layers x width) block per example
    std::vector<bool> usable;               // false when the sentence had OOV tokens
};

inline FeatureTable build_features(const std::vector<Words>& sentences, const std::vector<ProbeExample>& examples,
                                   const Backend& backend, bool pairwise) {
    const std::size_t L1 = backend.num_layers() + 1, d = backend.width();
    FeatureTable ft;
    ft.layers = L1;
    ft.width = pairwise ? 2 * d : d;
    std::map<std::size_t, std::optional<LayerRepresentations>> cache;
    for (const auto& ex : examples) {
        if (!cache.count(ex.sentence)) {
            auto ids = backend.vocab().encode(sentences.at(ex.sentence));
            cache.emplace(ex.sentence, ids ? std::optional<LayerRepresentations>(backend.encode(*ids)) : std::nullopt);
        }
    }
    ft.rows.reserve(examples.size());
    for (const auto& ex : examples) {
        std::vector<double> block(L1 * ft.width, 0.0);
        const auto& reps = cache.at(ex.sentence);
        ft.usable.push_back(reps.has_value());
        if (reps) {
            for (std::size_t l = 0; l < L1; ++l) {
                const auto a = reps->at(l, ex.first);
                std::copy(a.begin(), a.end(), block.begin() + static_cast<std::ptrdiff_t>(l * ft.width));
                if (pairwise) {
                    const auto b = reps->at(l, *ex.second);
                    std::copy(b.begin(), b.end(), block.begin() + static_cast<std::ptrdiff_t>(l * ft.width + d));
                }
            }
        }
        ft.rows.push_back(std::move(block));
    }
    return ft;
}

namespace detail {

inline std::vector<double> mixed_input(const LinearProbeModel& m, const std::vector<double>& block,
                                       const std::vector<double>& w) {
    std::vector<double> x(m.input_width, 0.0);
    for (std::size_t l = 0; l < w.size(); ++l) {
        const double* f = block.data() + l * m.input_width;
        for (std::size_t j = 0; j < m.input_width; ++j) x[j] += w[l] * f[j];
    }
    for (double& v : x) v *= m.scalar_mix.gamma;
    return x;
}

inline std::vector<double> logits(const LinearProbeModel& m, const std::vector<double>& x) {
    std::vector<double> z(m.bias);
    for (std::size_t j = 0; j < m.input_width; ++j) {
        const double xv = x[j];
        const double* wr = m.weight.data() + j * m.n_labels();
        for (std::size_t c = 0; c < z.size(); ++c) z[c] += xv * wr[c];
    }
    return z;
}

inline std::size_t argmax(const std::vector<double>& z) {
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

} // namespace detail

inline std::vector<std::string> predict(const LinearProbeModel& m, const FeatureTable& ft) {
    const auto w = m.scalar_mix.weights();
    std::vector<std::string> out;
    out.reserve(ft.rows.size());
    for (const auto& block : ft.rows) out.push_back(m.label_set[detail::argmax(detail::logits(m, detail::mixed_input(m, block, w)))]);
    return out;
}

inline LinearProbeModel init_probe(std::vector<std::string> label_set, std::size_t layers, std::size_t input_width,
                                   MixNormalization mode) {
    LinearProbeModel m;
    m.label_set = std::move(label_set);
    m.input_width = input_width;
    m.weight.assign(input_width * m.label_set.size(), 0.0);
    m.bias.assign(m.label_set.size(), 0.0);
    m.scalar_mix = ScalarMix::uniform(layers, mode);
    return m;
}

// Groups token predictions back into per-sentence tag sequences.
inline std::vector<std::vector<std::string>> regroup(const std::vector<ProbeExample>& examples,
                                                     const std::vector<std::string>& labels, std::size_t n_sentences) {
    std::vector<std::vector<std::string>> out(n_sentences);
    for (std::size_t i = 0; i < examples.size(); ++i) out[examples[i].sentence].push_back(labels[i]);
    return out;
}

// Fraction of examples whose prediction equals the gold label. A gold label
// absent from the probe's label set can never be predicted, so it counts wrong.
inline double accuracy_of(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
    if (gold.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) ok += gold[i] == pred[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(gold.size());
}

namespace detail {

struct ProbeProblem {
    std::vector<ProbeExample> examples;
    FeatureTable features;
    std::vector<std::string> gold;
    std::size_t n_sentences = 0;
    bool span_metric = false;
};

inline double metric_of(const ProbeProblem& p, const std::vector<std::string>& pred) {
    if (!p.span_metric) return accuracy_of(p.gold, pred);
    return span_f1(regroup(p.examples, p.gold, p.n_sentences), regroup(p.examples, pred, p.n_sentences));
}

inline void drop_unusable(ProbeProblem& p) {
    ProbeProblem q;
    q.n_sentences = p.n_sentences;
    q.span_metric = p.span_metric;
    q.features.layers = p.features.layers;
    q.features.width = p.features.width;
    for (std::size_t i = 0; i < p.examples.size(); ++i) {
        if (!p.features.usable[i]) continue;
        q.examples.push_back(p.examples[i]);
        q.features.rows.push_back(std::move(p.features.rows[i]));
        q.features.usable.push_back(true);
        q.gold.push_back(p.gold[i]);
    }
    p = std::move(q);
}

inline ProbeProblem token_problem(const std::vector<TokenLabelSentence>& data, const Backend& backend, bool spans) {
    ProbeProblem p;
    p.span_metric = spans;
    p.n_sentences = data.size();
    if (spans) {
        for (const auto& s : data)
            for (const auto& l : s.labels) check_bio_label(l);
    }
    p.examples = token_examples(data);
    std::vector<Words> sentences;
    for (const auto& s : data) sentences.push_back(s.tokens);
    p.features = build_features(sentences, p.examples, backend, false);
    for (const auto& ex : p.examples) p.gold.push_back(ex.label);
    drop_unusable(p);
    return p;
}

inline ProbeProblem arc_problem(const std::vector<ArcSentence>& data, const Backend& backend, ArcMode mode,
                                std::uint64_t seed) {
    ProbeProblem p;
    p.n_sentences = data.size();
    p.examples = arc_examples(data, mode, seed).examples;
    std::vector<Words> sentences;
    for (const auto& s : data) sentences.push_back(s.tokens);
    p.features = build_features(sentences, p.examples, backend, true);
    for (const auto& ex : p.examples) p.gold.push_back(ex.label);
    drop_unusable(p);
    return p;
}

struct Adam {
    std::vector<double> m, v;
    std::int64_t t = 0;

    void step(std::vector<double>& param, const std::vector<double>& grad, std::size_t off, std::size_t n, double lr,
              double bc1, double bc2) {
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad[off + i];
            m[off + i] = 0.9 * m[off + i] + 0.1 * g;
            v[off + i] = 0.999 * v[off + i] + 0.001 * g * g;
            param[i] -= lr * (m[off + i] / bc1) / (std::sqrt(v[off + i] / bc2) + 1e-8);
        }
    }
};

// Mini-batch softmax regression on the mixed input, jointly over W, b, the
// mix weights and gamma. Returns the epoch with the best dev metric.
inline TrainedProbe fit(const ProbeProblem& train, const ProbeProblem& dev, const ProbeHyper& hyper) {
    if (train.examples.empty()) throw NoData("probe training set is empty");
    std::set<std::string> labels(train.gold.begin(), train.gold.end());
    LinearProbeModel model = init_probe({labels.begin(), labels.end()}, train.features.layers, train.features.width,
                                        hyper.normalization);
    std::map<std::string, std::size_t> label_index;
    for (std::size_t c = 0; c < model.label_set.size(); ++c) label_index[model.label_set[c]] = c;

    const std::size_t C = model.n_labels(), W = model.input_width, L1 = train.features.layers;
    const std::size_t nW = W * C, nB = C, nA = L1;
    Adam adam;
    adam.m.assign(nW + nB + nA + 1, 0.0);
    adam.v.assign(nW + nB + nA + 1, 0.0);

    auto evaluate = [&](const LinearProbeModel& m) {
        return dev.examples.empty() ? 0.0 : metric_of(dev, predict(m, dev.features));
    };
    TrainedProbe best{model, evaluate(model), 0};

    std::vector<std::size_t> order(train.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(hyper.seed, 0x9e37));
    std::vector<double> grad(nW + nB + nA + 1);
    for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(order.size(), start + hyper.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            const auto w = model.scalar_mix.weights();
            const double inv = 1.0 / static_cast<double>(end - start);
            std::vector<double> dw(L1);
            for (std::size_t bi = start; bi < end; ++bi) {
                const std::size_t i = order[bi];
                const auto& block = train.features.rows[i];
                const auto x = mixed_input(model, block, w);
                auto p = logits(model, x);
                const double mx = *std::max_element(p.begin(), p.end());
                double sum = 0.0;
                for (double& v : p) {
                    v = std::exp(v - mx);
                    sum += v;
                }
                for (double& v : p) v /= sum;
                p[label_index.at(train.gold[i])] -= 1.0;
                for (double& v : p) v *= inv;
                std::vector<double> dx(W, 0.0);
                for (std::size_t j = 0; j < W; ++j) {
                    const double* wr = model.weight.data() + j * C;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        grad[j * C + c] += x[j] * p[c];
                        acc += wr[c] * p[c];
                    }
                    dx[j] = acc;
                }
                for (std::size_t c = 0; c < C; ++c) grad[nW + c] += p[c];
                double dgamma = 0.0;
                for (std::size_t l = 0; l < L1; ++l) {
                    const double* f = block.data() + l * W;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < W; ++j) dot += f[j] * dx[j];
                    dw[l] = model.scalar_mix.gamma * dot;
                    dgamma += w[l] * dot;
                }
                if (model.scalar_mix.normalization == MixNormalization::softmax) {
                    double wdw = 0.0;
                    for (std::size_t l = 0; l < L1; ++l) wdw += w[l] * dw[l];
                    for (std::size_t l = 0; l < L1; ++l) grad[nW + nB + l] += w[l] * (dw[l] - wdw);
                } else {
                    for (std::size_t l = 0; l < L1; ++l) grad[nW + nB + l] += dw[l];
                }
                grad[nW + nB + nA] += dgamma;
            }
            adam.t += 1;
            const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(adam.t));
            const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(adam.t));
            const double lr = hyper.learning_rate;
            adam.step(model.weight, grad, 0, nW, lr, bc1, bc2);
            adam.step(model.bias, grad, nW, nB, lr, bc1, bc2);
            adam.step(model.scalar_mix.raw_weights, grad, nW + nB, nA, lr, bc1, bc2);
            std::vector<double> gamma{model.scalar_mix.gamma};
            adam.step(gamma, grad, nW + nB + nA, 1, lr, bc1, bc2);
            model.scalar_mix.gamma = gamma[0];
        }
        const double metric = evaluate(model);
        if (metric > best.dev_metric) best = {model, metric, epoch};
    }
    return best;
}

} // namespace detail

// Trains a token-level probe (token_label or segmentation).
inline TrainedProbe train_probe(const ProbeTaskSpec& task, const std::vector<TokenLabelSentence>& train_data,
                                const std::vector<TokenLabelSentence>& dev_data, const Backend& backend,
                                const ProbeHyper& hyper = {}) {
    if (task.family != ProbeFamily::token_label && task.family != ProbeFamily::segmentation)
        throw ConfigError("token-level training needs a token_label or segmentation task", "family");
    const bool spans = task.family == ProbeFamily::segmentation;
    return detail::fit(detail::token_problem(train_data, backend, spans), detail::token_problem(dev_data, backend, spans),
                       hyper);
}

// Trains a pairwise probe (arc_pred or arc_class).
inline TrainedProbe train_probe(const ProbeTaskSpec& task, const std::vector<ArcSentence>& train_data,
                                const std::vector<ArcSentence>& dev_data, const Backend& backend,
                                const ProbeHyper& hyper = {}) {
    if (task.family != ProbeFamily::arc_pred && task.family != ProbeFamily::arc_class)
        throw ConfigError("pairwise training needs an arc_pred or arc_class task", "family");
    const auto mode = task.family == ProbeFamily::arc_pred ? ArcMode::pred : ArcMode::cls;
    const auto seed = static_cast<std::uint64_t>(task.param("negative_sampling_seed", 0));
    return detail::fit(detail::arc_problem(train_data, backend, mode, seed),
                       detail::arc_problem(dev_data, backend, mode, derive_seed(seed, 1)), hyper);
}

inline std::int64_t count_usable(const std::vector<Words>& sentences, const Vocabulary& vocab) {
    std::int64_t n = 0;
    for (const auto& s : sentences) n += vocab.encode(s).has_value() ? 1 : 0;
    return n;
}

inline EvalRecord eval_token_labeling(const LinearProbeModel& probe, const std::vector<TokenLabelSentence>& data,
                                      const Backend& backend, const std::string& task_id = "token_label") {
    auto p = detail::token_problem(data, backend, false);
    std::vector<Words> sents;
    for (const auto& s : data) sents.push_back(s.tokens);
    const auto used = count_usable(sents, backend.vocab());
    if (p.examples.empty()) throw NoData("task '" + task_id + "': no usable tokens");
    return make_record(task_id, accuracy_of(p.gold, predict(probe, p.features)), used,
                       static_cast<std::int64_t>(data.size()) - used);
}

inline EvalRecord eval_segmentation(const LinearProbeModel& probe, const std::vector<TokenLabelSentence>& data,
                                    const Backend& backend, const std::string& task_id = "segmentation") {
    auto p = detail::token_problem(data, backend, true);
    std::vector<Words> sents;
    for (const auto& s : data) sents.push_back(s.tokens);
    const auto used = count_usable(sents, backend.vocab());
    if (p.examples.empty()) throw NoData("task '" + task_id + "': no usable tokens");
    return make_record(task_id, detail::metric_of(p, predict(probe, p.features)), used,
                       static_cast<std::int64_t>(data.size()) - used);
}

inline EvalRecord eval_arcs(const LinearProbeModel& probe, const std::vector<ArcSentence>& data, const Backend& backend,
                            ArcMode mode, std::uint64_t negative_sampling_seed = 0,
                            const std::string& task_id = "arcs") {
    const auto cands = arc_examples(data, mode, negative_sampling_seed);
    auto p = detail::arc_problem(data, backend, mode, negative_sampling_seed);
    if (p.examples.empty()) throw NoData("task '" + task_id + "': no usable arcs");
    std::vector<Words> sents;
    for (const auto& s : data) sents.push_back(s.tokens);
    const auto usable = count_usable(sents, backend.vocab());
    const auto skipped = static_cast<std::int64_t>(data.size()) - std::min<std::int64_t>(cands.sentences_used, usable);
    return make_record(task_id, accuracy_of(p.gold, predict(probe, p.features)),
                       static_cast<std::int64_t>(data.size()) - skipped, skipped);
}

} // namespace probetime
