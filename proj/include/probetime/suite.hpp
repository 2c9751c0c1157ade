#pragma once

// A probe task bound to its loaded data, and the single evaluation path used
// for every checkpoint and baseline backend.

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "probetime/backend.hpp"
#include "probetime/baselines.hpp"
#include "probetime/core.hpp"
#include "probetime/datasets.hpp"
#include "probetime/errors.hpp"
#include "probetime/probes_behavioral.hpp"
#include "probetime/probes_structural.hpp"

namespace probetime {

// {"task_id", "family", "dataset", "metric"?, "params"?}; unknown keys rejected.
inline ProbeTaskSpec task_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("suite entry must be an object", "suites");
    for (const auto& [key, value] : j.items()) {
        if (key != "task_id" && key != "family" && key != "dataset" && key != "metric" && key != "params")
            throw ConfigError("unknown key '" + key + "' in suite entry", key);
    }
    for (const char* key : {"task_id", "family", "dataset"}) {
        if (!j.contains(key) || !j[key].is_string()) throw ConfigError(std::string("suite entry needs string '") + key + "'", key);
    }
    ProbeTaskSpec t;
    t.task_id = j["task_id"].get<std::string>();
    t.family = parse_family(j["family"].get<std::string>());
    t.dataset_locator = j["dataset"].get<std::string>();
    t.metric = j.contains("metric") ? parse_metric(j["metric"].get<std::string>()) : default_metric(t.family);
    if (j.contains("params")) {
        if (!j["params"].is_object()) throw ConfigError("params must be an object", "params");
        for (const auto& [key, value] : j["params"].items()) {
            if (!value.is_number_integer()) throw ConfigError("param '" + key + "' must be an integer", key);
            t.params[key] = value.get<std::int64_t>();
        }
    }
    t.validate();
    return t;
}

inline nlohmann::json to_json(const ProbeTaskSpec& t) {
    return {{"task_id", t.task_id},
            {"family", std::string(to_string(t.family))},
            {"dataset", t.dataset_locator},
            {"metric", std::string(to_string(t.metric))},
            {"params", t.params}};
}

// Structural datasets are split by sentence index: i % 5 in {0,1,2} train,
// 3 dev, 4 test.
template <typename T>
struct Split {
    std::vector<T> train, dev, test;
};

template <typename T>
Split<T> split_by_index(const std::vector<T>& all) {
    Split<T> s;
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto r = i % 5;
        (r < 3 ? s.train : r == 3 ? s.dev : s.test).push_back(all[i]);
    }
    if (s.dev.empty()) s.dev = s.train;
    return s;
}

struct LoadedTask {
    ProbeTaskSpec spec;
    std::variant<std::vector<MinimalPairItem>, std::vector<ClozeItem>, std::vector<MultiChoiceItem>,
                 Split<TokenLabelSentence>, Split<ArcSentence>>
        data;
};

inline LoadedTask load_task(const ProbeTaskSpec& spec, const std::filesystem::path& base_dir = {}) {
    std::filesystem::path p(spec.dataset_locator);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    LoadedTask t{spec, {}};
    switch (spec.family) {
        case ProbeFamily::minimal_pair: t.data = load_minimal_pairs(p); break;
        case ProbeFamily::cloze: t.data = load_cloze(p); break;
        case ProbeFamily::multichoice: t.data = load_multichoice(p); break;
        case ProbeFamily::token_label:
        case ProbeFamily::segmentation: t.data = split_by_index(load_token_labels(p)); break;
        case ProbeFamily::arc_pred:
        case ProbeFamily::arc_class: t.data = split_by_index(load_arcs(p)); break;
    }
    return t;
}

inline ProbeHyper hyper_of(const ProbeTaskSpec& spec) {
    ProbeHyper h;
    h.epochs = static_cast<std::size_t>(spec.param("epochs", static_cast<std::int64_t>(h.epochs)));
    h.seed = static_cast<std::uint64_t>(spec.param("probe_seed", 0));
    if (spec.param("raw_mix", 0) != 0) h.normalization = MixNormalization::raw;
    return h;
}

// Scores one task on one backend. Structural tasks train a fresh probe on the
// train split (dev-selected epoch) and report the test split. The record's
// run_tag and step are left for the caller.
inline EvalRecord evaluate_task(const LoadedTask& task, const Backend& backend) {
    const auto& s = task.spec;
    switch (s.family) {
        case ProbeFamily::minimal_pair:
            return eval_minimal_pairs(std::get<std::vector<MinimalPairItem>>(task.data), backend, s.task_id);
        case ProbeFamily::cloze:
            return eval_cloze(std::get<std::vector<ClozeItem>>(task.data), backend,
                              static_cast<std::size_t>(s.param("k", 1)), s.task_id);
        case ProbeFamily::multichoice:
            return eval_multichoice(std::get<std::vector<MultiChoiceItem>>(task.data), backend, s.task_id);
        case ProbeFamily::token_label:
        case ProbeFamily::segmentation: {
            const auto& d = std::get<Split<TokenLabelSentence>>(task.data);
            const auto probe = train_probe(s, d.train, d.dev, backend, hyper_of(s));
            return s.family == ProbeFamily::token_label ? eval_token_labeling(probe.model, d.test, backend, s.task_id)
                                                        : eval_segmentation(probe.model, d.test, backend, s.task_id);
        }
        case ProbeFamily::arc_pred:
        case ProbeFamily::arc_class: {
            const auto& d = std::get<Split<ArcSentence>>(task.data);
            const auto probe = train_probe(s, d.train, d.dev, backend, hyper_of(s));
            const auto mode = s.family == ProbeFamily::arc_pred ? ArcMode::pred : ArcMode::cls;
            const auto seed = static_cast<std::uint64_t>(s.param("negative_sampling_seed", 0));
            return eval_arcs(probe.model, d.test, backend, mode, derive_seed(seed, 2), s.task_id);
        }
    }
    throw ConfigError("unhandled probe family", "family");
}

struct GuessValue {
    double value = 0.0;
    std::string note;
};

// Chance level for a task, computed from the items alone.
inline GuessValue random_guess_of(const LoadedTask& task, std::size_t vocab_size) {
    const auto& s = task.spec;
    switch (s.family) {
        case ProbeFamily::minimal_pair: return {random_guess_accuracy(std::get<std::vector<MinimalPairItem>>(task.data)), ""};
        case ProbeFamily::multichoice: return {random_guess_accuracy(std::get<std::vector<MultiChoiceItem>>(task.data)), ""};
        case ProbeFamily::cloze: {
            const auto g = random_guess_accuracy(std::get<std::vector<ClozeItem>>(task.data),
                                                 static_cast<std::size_t>(s.param("k", 1)), vocab_size);
            return {g.value, g.full_vocab_approximation ? "k/V approximation for items without candidates" : ""};
        }
        case ProbeFamily::token_label: return {random_guess_accuracy(std::get<Split<TokenLabelSentence>>(task.data).test), ""};
        case ProbeFamily::segmentation:
            return {0.0, "no closed-form chance level for span F1"};
        case ProbeFamily::arc_pred: return {0.5, "balanced candidate set"};
        case ProbeFamily::arc_class:
            return {random_guess_accuracy(std::get<Split<ArcSentence>>(task.data).test, false), ""};
    }
    return {};
}

// Package a task belongs to when the configuration names none.
inline std::string default_package(ProbeFamily f) {
    return is_behavioral(f) ? std::string(to_string(f)) : std::string("structural");
}

} // namespace probetime
