// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "probetime/baselines.hpp"
#include "probetime/dynamics.hpp"
#include "probetime/probes_behavioral.hpp"
#include "probetime/probes_structural.hpp"
#include "probetime/synthdata.hpp"
#include "probetime/toy_mlm.hpp"
#include "stubs.hpp"

using namespace probetime;
namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
    if (!ok) throw Failure(what);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ScoreSeries from_values(const std::vector<double>& v, std::int64_t stride = 100) {
    std::vector<SeriesPoint> p;
    for (std::size_t i = 0; i < v.size(); ++i) p.push_back({static_cast<std::int64_t>(i) * stride, v[i]});
    return ScoreSeries("t", "r", p);
}

std::optional<std::int64_t> scan(const ScoreSeries& s, double frac) {
    double m = s.points()[0].value;
    for (const auto& p : s.points()) m = std::max(m, p.value);
    for (const auto& p : s.points())
        if (p.value >= frac * m) return p.step;
    return std::nullopt;
}

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

// ---------------------------------------------------------------------------

std::string c1_metric_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t first_peak = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(2 + gen() % 99);
        for (auto& x : v) x = u(gen);
        // Every fourth series peaks at its first point.
        if (trial % 4 == 0) v[0] = 1.5;
        if (trial % 7 == 0) std::fill(v.begin() + 1, v.end(), 0.0);
        const auto s = from_values(v, 1 + static_cast<std::int64_t>(gen() % 50));
        for (double x : {90.0, 95.0, 97.0}) {
            const auto want = scan(s, x / 100.0);
            check(learning_progress(s, x).step_at_x == *want, "learning progress differs from the scan");
        }
        if (trial % 4 == 0) {
            check(learning_progress(s, 90).step_at_x == s.points()[0].step, "peak at the first point");
            ++first_peak;
        }
        for (double eps : {0.0, 0.05, 0.3}) {
            const auto p = epsilon_phase(s, eps);
            check(p.start_step == *scan(s, eps) && p.end_step == *scan(s, 1.0 - eps), "phase bounds differ from the scan");
            check(p.interval == p.end_step - p.start_step, "phase interval");
        }
    }
    const double dt = seconds_since(t0);
    check(dt < 5.0, "runtime " + std::to_string(dt) + " s");
    std::ostringstream msg;
    msg << "200 series, " << first_peak << " peaking at the first point, " << dt << " s";
    return msg.str();
}

std::string c2_kendall() {
    std::mt19937_64 gen(202);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(14), b(14);
        const bool ties = trial % 2 == 0;
        for (std::size_t i = 0; i < 14; ++i) {
            a[i] = ties ? static_cast<double>(gen() % 3) : u(gen);
            b[i] = ties ? static_cast<double>(gen() % 3) : u(gen);
        }
        const auto got = kendall_tau_values(a, b);
        const auto want = tau_oracle(a, b);
        check(got.has_value() == want.has_value(), "defined-ness differs from the oracle");
        if (got) worst = std::max(worst, std::abs(*got - *want));
        check(kendall_tau_values(b, a) == got, "asymmetric");
        if (kendall_tau_values(a, a)) check(*kendall_tau_values(a, a) == 1.0, "self-correlation is not 1");
    }
    check(worst <= 1e-12, "max deviation " + std::to_string(worst));
    std::ostringstream msg;
    msg << "100 pairs, max deviation " << worst;
    return msg.str();
}

std::string c3_ema() {
    const auto e = ema(from_values({0.0, 1.0}), 0.5);
    check(e.values() == std::vector<double>{0.0, 0.5}, "[0,1] does not map to [0,0.5]");
    const auto hand = ema(from_values({1.0, 0.0, 1.0, 1.0}), 0.5);
    check(hand.values() == std::vector<double>{1.0, 0.5, 0.75, 0.875}, "hand-computed values");
    for (double c : {0.1, 0.5, 1.0}) {
        const auto k = ema(from_values(std::vector<double>(9, 0.37)), c);
        for (double v : k.values()) check(std::abs(v - 0.37) < 1e-15, "constant series moved");
    }
    bool rejected = false;
    try {
        learning_progress(e, 90);
    } catch (const SmoothedInputError&) {
        rejected = true;
    }
    check(rejected, "learning progress accepted a smoothed series");
    rejected = false;
    try {
        epsilon_phase(e);
    } catch (const SmoothedInputError&) {
        rejected = true;
    }
    check(rejected, "epsilon phase accepted a smoothed series");
    return "hand values, fixed points, smoothed input rejected";
}

std::string c4_pll() {
    ToyMLMConfig c;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.ffn_dim = 16;
    c.max_seq_len = 12;
    c.init_std = 0.4;
    const auto vocab = testing::small_vocab(20);
    const auto m = ToyMLM::initialized(c, vocab, 4);
    std::mt19937 gen(404);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        TokenSeq s(1 + gen() % 12);
        for (auto& t : s) t = static_cast<TokenId>(2 + gen() % 20);
        double oracle = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            TokenSeq copy = s;
            copy[i] = vocab.mask_id();
            const std::size_t pos[] = {i};
            oracle += std::log(m.score_masked(copy, pos)[0].probs[static_cast<std::size_t>(s[i])]);
        }
        oracle /= static_cast<double>(s.size());
        worst = std::max(worst, std::abs(pll_score(s, m) - oracle));
    }
    check(worst <= 1e-9, "PLL deviates by " + std::to_string(worst));

    const testing::UniformBackend uniform(vocab);
    const double logv = std::log(1.0 / static_cast<double>(vocab.size()));
    std::vector<MinimalPairItem> items;
    for (int i = 0; i < 20; ++i) {
        Words good, bad;
        for (std::size_t j = 0; j < 1 + gen() % 6; ++j) {
            good.push_back("w" + std::to_string(gen() % 20));
            bad.push_back("w" + std::to_string(gen() % 20));
        }
        check(std::abs(pll_score(good, uniform) - logv) < 1e-12, "uniform PLL is not log(1/V)");
        items.push_back({std::to_string(i), good, {bad}});
    }
    check(eval_minimal_pairs(items, uniform).metric_value == 0.0, "uniform minimal-pair accuracy is not 0");
    std::ostringstream msg;
    msg << "50 sentences, max deviation " << worst << "; uniform stub log(1/V) and accuracy 0";
    return msg.str();
}

std::string c5_gradients_and_determinism() {
    ToyMLMConfig c;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ffn_dim = 16;
    c.max_seq_len = 8;
    c.init_std = 0.5;
    const auto vocab = testing::small_vocab(10);
    const auto m = ToyMLM::initialized(c, vocab, 3);
    Rng rng(5);
    std::vector<MaskedExample> batch;
    for (std::size_t b = 0; b < 4; ++b) {
        TokenSeq s;
        for (std::size_t j = 0; j < 3 + rng.below(4); ++j) s.push_back(static_cast<TokenId>(2 + rng.below(10)));
        batch.push_back(make_masked_example(s, b, c, vocab));
    }
    const auto g = gradient_check(m, batch, 1e-5, 400, 11);
    check(g.max_rel_error <= 1e-4, "gradient relative error " + std::to_string(g.max_rel_error));

    c.total_steps = 40;
    c.warmup_steps = 4;
    c.checkpoint_schedule = {0, 20, 40};
    std::vector<TokenSeq> corpus;
    for (int i = 0; i < 100; ++i) {
        TokenSeq s;
        for (std::size_t j = 0; j < 3 + rng.below(4); ++j) s.push_back(static_cast<TokenId>(2 + rng.below(10)));
        corpus.push_back(s);
    }
    const auto root = fs::temp_directory_path() / "probetime_acceptance_det";
    fs::remove_all(root);
    for (const char* run : {"a", "b"}) {
        PretrainOptions o;
        o.run_dir = root / run;
        pretrain_toy(c, vocab, corpus, o);
    }
    for (const char* step : {"step_0", "step_20", "step_40"})
        for (const char* file : {"weights.bin", "manifest.json"})
            check(detail::read_file(root / "a" / step / file) == detail::read_file(root / "b" / step / file),
                  std::string("checkpoint ") + step + "/" + file + " differs");
    fs::remove_all(root);
    std::ostringstream msg;
    msg << "max relative error " << g.max_rel_error << " over " << g.checked << " parameters; checkpoints bit-identical";
    return msg.str();
}

constexpr std::size_t kWords = 20, kLayers = 2, kWidth = 16, kMaxLen = 8;

std::vector<TokenLabelSentence> planted_data(const testing::PlantedBackend& b, std::size_t n, std::uint64_t seed,
                                             bool shuffle_labels) {
    std::mt19937 gen(static_cast<unsigned>(seed));
    std::normal_distribution<double> nd;
    std::mt19937 dir_gen(99);
    std::vector<double> u(kWidth);
    for (auto& x : u) x = nd(dir_gen);
    std::vector<TokenLabelSentence> out;
    for (std::size_t i = 0; i < n; ++i) {
        TokenLabelSentence s;
        const std::size_t len = 4 + gen() % 5;
        for (std::size_t j = 0; j < len; ++j) {
            const auto tok = static_cast<TokenId>(2 + gen() % kWords);
            s.tokens.push_back(b.vocab().token(tok));
            const auto v = b.vec(kLayers, tok, j);
            double dot = 0;
            for (std::size_t k = 0; k < kWidth; ++k) dot += u[k] * v[k];
            s.labels.push_back(dot > 0 ? "A" : "B");
        }
        out.push_back(s);
    }
    if (shuffle_labels)
        for (auto& s : out)
            for (auto& l : s.labels) l = gen() % 2 ? "A" : "B";
    return out;
}

std::string c6_structural_recovery() {
    const testing::PlantedBackend b(testing::small_vocab(kWords), kLayers, kWidth, kMaxLen, 42);
    const ProbeTaskSpec task{"pos", ProbeFamily::token_label, "planted", Metric::accuracy, {}};
    ProbeHyper h;
    h.epochs = 40;
    h.learning_rate = 1e-2;
    const auto before = b.state_checksum();
    const auto real = train_probe(task, planted_data(b, 300, 1, false), planted_data(b, 60, 2, false), b, h);
    check(real.dev_metric >= 0.99, "dev accuracy " + std::to_string(real.dev_metric));

    const auto shuffled_test = planted_data(b, 200, 3, true);
    const auto ctrl = train_probe(task, planted_data(b, 300, 1, true), planted_data(b, 60, 2, true), b, h);
    std::size_t a = 0, n = 0;
    for (const auto& s : shuffled_test)
        for (const auto& l : s.labels) {
            a += l == "A";
            ++n;
        }
    const double majority = static_cast<double>(std::max(a, n - a)) / static_cast<double>(n);
    const double acc = eval_token_labeling(ctrl.model, shuffled_test, b).metric_value;
    check(std::abs(acc - majority) <= 0.05, "shuffled accuracy " + std::to_string(acc) + " vs majority " +
                                                std::to_string(majority));
    check(b.state_checksum() == before, "backend checksum changed");
    std::ostringstream msg;
    msg << "dev accuracy " << real.dev_metric << "; shuffled " << acc << " vs majority " << majority;
    return msg.str();
}

// Spans as "type:start:end", read off a tag sequence one run at a time.
std::set<std::string> span_set(const std::vector<std::string>& tags) {
    std::set<std::string> out;
    std::size_t i = 0;
    while (i < tags.size()) {
        if (tags[i] == "O") {
            ++i;
            continue;
        }
        const std::string type = tags[i].substr(2);
        std::size_t j = i + 1;
        while (j < tags.size() && tags[j] == "I-" + type) ++j;
        out.insert(type + ":" + std::to_string(i) + ":" + std::to_string(j - 1));
        i = j;
    }
    return out;
}

std::string c7_span_and_arc_oracles() {
    std::mt19937 gen(707);
    const std::vector<std::string> tags = {"O", "B-NP", "I-NP", "B-VP", "I-VP"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<std::string>> gold, pred;
        std::size_t tp = 0, ng = 0, np = 0;
        for (int s = 0; s < 1 + static_cast<int>(gen() % 4); ++s) {
            gold.emplace_back();
            pred.emplace_back();
            for (std::size_t i = 0; i < 1 + gen() % 7; ++i) {
                gold.back().push_back(tags[gen() % tags.size()]);
                pred.back().push_back(gen() % 3 == 0 ? tags[gen() % tags.size()] : gold.back().back());
            }
            const auto g = span_set(gold.back()), p = span_set(pred.back());
            ng += g.size();
            np += p.size();
            for (const auto& x : p) tp += g.count(x);
        }
        const double prec = np ? static_cast<double>(tp) / static_cast<double>(np) : 0.0;
        const double rec = ng ? static_cast<double>(tp) / static_cast<double>(ng) : 0.0;
        const double want = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        check(span_f1(gold, pred) == want, "span F1 differs from the set oracle");
    }

    const testing::PlantedBackend b(testing::small_vocab(kWords), kLayers, kWidth, kMaxLen, 42);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ArcSentence> data;
        for (int s = 0; s < 3; ++s) {
            ArcSentence sent;
            const std::size_t n = 1 + gen() % 6;
            for (std::size_t i = 0; i < n; ++i) sent.tokens.push_back("w" + std::to_string(gen() % kWords));
            std::set<std::pair<std::size_t, std::size_t>> used;
            if (n >= 2)
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t h = gen() % n, d = gen() % n;
                    if (h != d && used.emplace(h, d).second) sent.arcs.push_back({h, d, gen() % 2 ? "nsubj" : "obj"});
                }
            data.push_back(sent);
        }
        if (std::none_of(data.begin(), data.end(), [](const ArcSentence& s) { return !s.arcs.empty(); })) continue;
        const bool cls = trial % 2 == 1;
        auto probe = init_probe(cls ? std::vector<std::string>{"nsubj", "obj"} : std::vector<std::string>{kArcLabel, kNoArcLabel},
                                kLayers + 1, 2 * kWidth, MixNormalization::softmax);
        for (auto& w : probe.weight) w = nd(gen);
        for (auto& w : probe.bias) w = nd(gen);
        for (auto& w : probe.scalar_mix.raw_weights) w = nd(gen);

        // Enumerate every ordered pair and label it with the probe by hand.
        const auto weights = probe.scalar_mix.weights();
        std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::string> label_of;
        for (std::size_t s = 0; s < data.size(); ++s) {
            const auto ids = *b.vocab().encode(data[s].tokens);
            const auto reps = b.encode(ids);
            for (std::size_t h = 0; h < ids.size(); ++h)
                for (std::size_t d = 0; d < ids.size(); ++d) {
                    if (h == d) continue;
                    std::vector<double> z(probe.bias);
                    for (std::size_t l = 0; l <= kLayers; ++l)
                        for (std::size_t k = 0; k < 2 * kWidth; ++k) {
                            const double f = k < kWidth ? reps.at(l, h)[k] : reps.at(l, d)[k - kWidth];
                            for (std::size_t c = 0; c < z.size(); ++c)
                                z[c] += weights[l] * probe.scalar_mix.gamma * f * probe.weight[k * z.size() + c];
                        }
                    label_of[{s, h, d}] = probe.label_set[static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin())];
                }
        }
        const auto mode = cls ? ArcMode::cls : ArcMode::pred;
        const auto cands = arc_examples(data, mode, 9);
        std::size_t ok = 0, pos = 0, neg = 0;
        for (const auto& ex : cands.examples) {
            const auto& arcs = data[ex.sentence].arcs;
            const auto gold = std::find_if(arcs.begin(), arcs.end(),
                                           [&](const Arc& a) { return a.head == ex.first && a.dep == *ex.second; });
            check(cls ? gold != arcs.end() && gold->label == ex.label : (gold != arcs.end()) == (ex.label == kArcLabel),
                  "candidate label disagrees with the gold arcs");
            (gold != arcs.end() ? pos : neg) += 1;
            ok += label_of.at({ex.sentence, ex.first, *ex.second}) == ex.label;
        }
        std::size_t expect_pos = 0, expect_neg = 0;
        for (const auto& s : data) {
            const std::size_t n = s.tokens.size();
            if (cls) {
                expect_pos += s.arcs.size();
            } else if (n >= 2) {
                const std::size_t k = std::min(s.arcs.size(), n * (n - 1) - s.arcs.size());
                expect_pos += k;
                expect_neg += k;
            }
        }
        check(pos == expect_pos && neg == expect_neg, "candidate counts differ from the enumeration");
        if (cands.examples.empty()) continue;
        const double want = static_cast<double>(ok) / static_cast<double>(cands.examples.size());
        check(eval_arcs(probe, data, b, mode, 9).metric_value == want, "arc accuracy differs from the enumeration");
    }
    return "100 span instances, 100 arc instances";
}

std::string c8_baselines() {
    const auto vocab = testing::small_vocab(50);
    const auto rv = random_vector_backend(vocab, 300, 0);
    for (std::size_t t = 0; t < vocab.size(); ++t)
        for (double x : rv.row(static_cast<TokenId>(t))) check(x >= -2.0 && x <= 2.0, "component outside [-2, 2]");

    std::mt19937 gen(808);
    std::vector<MultiChoiceItem> mc;
    std::vector<MinimalPairItem> mp;
    double mc_want = 0, mp_want = 0;
    for (int i = 0; i < 30; ++i) {
        const std::size_t choices = 2 + gen() % 5;
        Words ch;
        for (std::size_t c = 0; c < choices; ++c) ch.push_back("w" + std::to_string(c));
        mc.push_back({std::to_string(i), {"[MASK]"}, ch, 0});
        mc_want += 1.0 / static_cast<double>(choices);
        MinimalPairItem m{std::to_string(i), {"w0"}, {}};
        const std::size_t bads = 1 + gen() % 3;
        for (std::size_t k = 0; k < bads; ++k) m.bads.push_back({"w1"});
        mp.push_back(m);
        mp_want += 1.0 / static_cast<double>(bads + 1);
    }
    check(std::abs(random_guess_accuracy(mc) - mc_want / 30) < 1e-12, "multichoice chance level");
    check(std::abs(random_guess_accuracy(mp) - mp_want / 30) < 1e-12, "minimal-pair chance level");

    std::size_t refused = 0;
    auto expect_refusal = [&](const std::function<void()>& f) {
        try {
            f();
        } catch (const CapabilityError&) {
            ++refused;
        }
    };
    expect_refusal([&] { eval_minimal_pairs(mp, rv); });
    expect_refusal([&] { eval_multichoice(mc, rv); });
    expect_refusal([&] { eval_cloze({{"a", {"[MASK]"}, "w0", std::nullopt}}, rv); });
    check(refused == 3, "behavioral probes ran on a representation-only baseline");
    return "components in [-2, 2]; chance levels; 3 capability refusals";
}

// ---------------------------------------------------------------------------
// Desk-scale runs

struct DomainRun {
    ScoreSeries agreement, facts;
};

DomainRun train_and_probe(double fact_density, std::int64_t seed) {
    auto sc = SynthLanguageConfig::dense();
    sc.fact_density = fact_density;
    sc.seed = seed;
    const auto corpus = gen_corpus(sc);
    const auto suites = gen_probe_suites(sc, corpus);
    const Vocabulary vocab(corpus.vocabulary);
    std::vector<TokenSeq> seqs;
    for (const auto& s : corpus.sentences) seqs.push_back(*vocab.encode(s));
    ToyMLMConfig tc;
    tc.seed = static_cast<std::uint64_t>(seed);
    const auto run = pretrain_toy(tc, vocab, seqs);
    std::vector<SeriesPoint> agree, facts;
    for (std::size_t i = 0; i < run.checkpoints.size(); ++i) {
        const auto m = model_from_snapshot(run.final_model, run.snapshots[i]);
        const auto step = run.checkpoints[i].step;
        agree.push_back({step, eval_minimal_pairs(suites.minimal_pairs, m).metric_value});
        facts.push_back({step, eval_cloze(suites.cloze, m, 1).metric_value});
    }
    const std::string tag = "density_" + std::to_string(fact_density) + "_seed_" + std::to_string(seed);
    return {ScoreSeries("agreement", tag, agree), ScoreSeries("facts", tag, facts)};
}

std::optional<std::int64_t> lp90_from_report(const nlohmann::json& report, const std::string& run, const std::string& task) {
    for (const auto& e : report.at("learning_progress").at(run))
        if (e.at("task_id") == task && e.at("x").get<double>() == 90.0)
            return e.at("step_at_x").is_null() ? std::nullopt : std::optional<std::int64_t>(e.at("step_at_x").get<std::int64_t>());
    return std::nullopt;
}

std::map<std::int64_t, DomainRun> dense_runs;

std::string c9_ordering() {
    const std::vector<std::int64_t> seeds = {0, 1, 2, 3, 4};  // 0 is the shipped default
    std::ostringstream msg;
    int held = 0;
    bool default_held = false;
    for (auto seed : seeds) {
        const auto t0 = Clock::now();
        const auto& r = dense_runs.emplace(seed, train_and_probe(0.2, seed)).first->second;
        const auto report = assemble_report({r.agreement, r.facts}, {}, AnalysisConfig{});
        const auto run = r.agreement.run_tag();
        const auto lp_a = lp90_from_report(report, run, "agreement"), lp_f = lp90_from_report(report, run, "facts");
        const double f0 = r.facts.points().front().value, f1 = r.facts.points().back().value;
        const bool ok = lp_a && lp_f && *lp_a < *lp_f && f1 > f0;
        held += ok;
        if (seed == 0) default_held = ok;
        std::cerr << "  seed " << seed << ": LP90 agreement " << (lp_a ? std::to_string(*lp_a) : "undefined")
                  << ", facts " << (lp_f ? std::to_string(*lp_f) : "undefined") << "; facts p@1 " << f0 << " -> " << f1
                  << " (" << seconds_since(t0) << " s)\n";
    }
    msg << held << "/5 seeds hold, default seed " << (default_held ? "holds" : "fails");
    check(default_held && held >= 4, msg.str());
    return msg.str();
}

std::string c10_domain_contrast() {
    if (!dense_runs.count(0)) dense_runs.emplace(0, train_and_probe(0.2, 0));
    const auto& dense = dense_runs.at(0);
    const auto sparse = train_and_probe(0.02, 0);
    const double gap = dense.facts.points().back().value - sparse.facts.points().back().value;
    const double agree_diff = std::abs(dense.agreement.points().back().value - sparse.agreement.points().back().value);
    std::ostringstream msg;
    msg << "final facts p@1 dense " << dense.facts.points().back().value << " vs sparse "
        << sparse.facts.points().back().value << " (gap " << gap << "); agreement difference " << agree_diff;
    check(gap >= 0.05 && agree_diff < 0.05, msg.str());
    return msg.str();
}

nlohmann::json pipeline_config() {
    const std::string d = "out/synth/";
    return {{"seed", 0},
            {"output_dir", "out"},
            {"synth", {{"sentence_count", 1500}, {"minimal_pairs", 40}, {"multichoice_items", 20}, {"labeled_sentences", 80}}},
            {"backend",
             {{"corpus", d + "corpus.txt"},
              {"vocab", d + "vocab.txt"},
              {"run_tag", "pipeline"},
              {"config", {{"total_steps", 200}, {"checkpoint_every", 50}, {"warmup_steps", 20}}}}},
            {"suites",
             {{{"task_id", "agreement"}, {"family", "minimal_pair"}, {"dataset", d + "minimal_pairs.jsonl"}},
              {{"task_id", "facts"}, {"family", "cloze"}, {"dataset", d + "cloze.jsonl"}, {"params", {{"k", 1}}}},
              {{"task_id", "comparison"}, {"family", "multichoice"}, {"dataset", d + "multichoice.jsonl"}},
              {{"task_id", "pos"}, {"family", "token_label"}, {"dataset", d + "token_labels.jsonl"}},
              {{"task_id", "chunks"}, {"family", "segmentation"}, {"dataset", d + "chunks.jsonl"}},
              {{"task_id", "arc_exists"}, {"family", "arc_pred"}, {"dataset", d + "arcs.jsonl"}},
              {{"task_id", "arc_label"}, {"family", "arc_class"}, {"dataset", d + "arcs.jsonl"}}}},
            {"baselines",
             {{{"kind", "random_guess"}},
              {{"kind", "random_vector"}, {"params", {{"d", 32}}}},
              {{"kind", "reference_checkpoint"}, {"params", {{"checkpoint", "final"}}}},
              {{"kind", "reference_checkpoint"}, {"params", {{"checkpoint", "initial"}, {"trials", 2}}}}}}};
}

std::string c11_reproducible_pipeline() {
    const auto root = fs::temp_directory_path() / "probetime_acceptance_pipeline";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto cfg = root / "config.json";
    std::ofstream(cfg) << pipeline_config().dump(2);
    auto run_all = [&] {
        for (const char* stage : {"synth", "pretrain", "probe", "analyze"}) {
            const std::string cmd = std::string(PROBETIME_BIN) + " " + stage + " --config " + cfg.string() +
                                    " --force > /dev/null 2>> " + (root / "log.txt").string();
            check(std::system(cmd.c_str()) == 0, std::string(stage) + " failed");
        }
        std::ifstream in(root / "out" / "analysis" / "report.json");
        return nlohmann::json::parse(in);
    };
    const auto first = run_all();
    const auto second = run_all();
    check(same_report(first, second), "reports differ between identical runs");
    fs::remove_all(root);
    return "synth, pretrain, probe, analyze twice; reports identical";
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
        {"metric-oracle equivalence", c1_metric_oracles},
        {"Kendall tau-b oracle", c2_kendall},
        {"EMA smoothing", c3_ema},
        {"pseudo-log-likelihood oracle", c4_pll},
        {"gradient check and pretraining determinism", c5_gradients_and_determinism},
        {"structural probe recovery and selectivity", c6_structural_recovery},
        {"span F1 and arc evaluator oracles", c7_span_and_arc_oracles},
        {"baseline contracts", c8_baselines},
        {"desk-scale acquisition order", c9_ordering},
        {"fact-density contrast", c10_domain_contrast},
        {"pipeline reproducibility", c11_reproducible_pipeline},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = Clock::now();
        std::string detail;
        bool ok = false;
        try {
            detail = criteria[i].second();
            ok = true;
        } catch (const std::exception& e) {
            detail = e.what();
        }
        failures += !ok;
        std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << i + 1 << ": " << criteria[i].first << " -- " << detail
                  << " [" << seconds_since(t0) << " s]" << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failures;
}
