#pragma once

// A small pre-norm transformer encoder trained with a masked-token objective.
// It is the minimal contextual MLM that exposes both products the probes
// need (masked distributions and per-layer representations) and it is small
// enough to pretrain from scratch on a laptop CPU.
//
// Parameters live in one flat vector of doubles. A ParamLayout names the
// tensors inside it; the same layout indexes gradients and Adam moments.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "probetime/backend.hpp"
#include "probetime/core.hpp"
#include "probetime/errors.hpp"
#include "probetime/random.hpp"

namespace probetime {

static_assert(std::endian::native == std::endian::little, "weights.bin is written as little-endian float64");

// Dense early, then every total/50 steps. At one million steps this gives the
// doubling sequence 50..12800 plus a 20k-step grid: 60 checkpoints.
inline std::vector<std::int64_t> default_checkpoint_schedule(std::int64_t total_steps) {
    if (total_steps <= 0) throw ConfigError("total_steps must be positive", "total_steps");
    std::set<std::int64_t> steps{0, total_steps};
    const std::int64_t tail = std::max<std::int64_t>(1, total_steps / 50);
    for (std::int64_t s = tail; s < total_steps; s += tail) steps.insert(s);
    const auto early_end = static_cast<std::int64_t>(std::llround(0.0128 * static_cast<double>(total_steps)));
    std::int64_t s = early_end;
    for (int i = 0; i < 9 && s >= 1; ++i, s /= 2) steps.insert(s);
    return {steps.begin(), steps.end()};
}

inline std::vector<std::int64_t> uniform_checkpoint_schedule(std::int64_t total_steps, std::int64_t every) {
    if (total_steps <= 0 || every <= 0) throw ConfigError("total_steps and the interval must be positive");
    std::vector<std::int64_t> out;
    for (std::int64_t s = 0; s < total_steps; s += every) out.push_back(s);
    out.push_back(total_steps);
    return out;
}

// The full-scale recipe the toy preset is scaled down from. Kept for
// reference and reporting; the toy trainer runs without dropout.
struct FullScaleRecipe {
    static constexpr std::int64_t update_steps = 1'000'000;
    static constexpr std::int64_t batch_size = 256;
    static constexpr std::int64_t max_length = 512;
    static constexpr std::int64_t warmup_steps = 10'000;
    static constexpr double peak_lr = 0.0005;
    static constexpr double dropout = 0.1;
    static constexpr double attention_dropout = 0.1;
    static constexpr double weight_decay = 0.01;
    static constexpr double adam_beta1 = 0.9;
    static constexpr double adam_beta2 = 0.98;
    static constexpr double adam_eps = 1e-6;
    static constexpr double mask_rate = 0.15;
};

struct ToyMLMConfig {
    std::size_t vocab_size = 0;  // 0: take it from the vocabulary
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t ffn_dim = 128;
    std::size_t max_seq_len = 16;
    double mask_rate = FullScaleRecipe::mask_rate;
    std::size_t batch_size = 16;
    std::int64_t total_steps = 5000;
    std::int64_t warmup_steps = 250;
    double peak_lr = 3e-3;
    double adam_beta1 = FullScaleRecipe::adam_beta1;
    double adam_beta2 = FullScaleRecipe::adam_beta2;
    double adam_eps = FullScaleRecipe::adam_eps;
    double weight_decay = FullScaleRecipe::weight_decay;
    double init_std = 0.02;
    std::int64_t seed = 0;
    std::int64_t log_every = 50;
    std::vector<std::int64_t> checkpoint_schedule = uniform_checkpoint_schedule(5000, 250);

    static ToyMLMConfig toy_preset() { return {}; }

    // Architecture and optimizer of the full-scale run (RoBERTa-base sized).
    static ToyMLMConfig full_scale_preset() {
        ToyMLMConfig c;
        c.d_model = 768;
        c.n_layers = 12;
        c.n_heads = 12;
        c.ffn_dim = 3072;
        c.max_seq_len = FullScaleRecipe::max_length;
        c.batch_size = FullScaleRecipe::batch_size;
        c.total_steps = FullScaleRecipe::update_steps;
        c.warmup_steps = FullScaleRecipe::warmup_steps;
        c.peak_lr = FullScaleRecipe::peak_lr;
        c.checkpoint_schedule = default_checkpoint_schedule(c.total_steps);
        return c;
    }

    void validate() const {
        auto positive = [](std::size_t v, const char* key) {
            if (v == 0) throw ConfigError(std::string(key) + " must be positive", key);
        };
        positive(d_model, "d_model");
        positive(n_layers, "n_layers");
        positive(n_heads, "n_heads");
        positive(ffn_dim, "ffn_dim");
        positive(max_seq_len, "max_seq_len");
        positive(batch_size, "batch_size");
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads", "n_heads");
        if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in (0, 1)", "mask_rate");
        if (total_steps <= 0) throw ConfigError("total_steps must be positive", "total_steps");
        if (warmup_steps < 0 || warmup_steps > total_steps)
            throw ConfigError("warmup_steps must lie in [0, total_steps]", "warmup_steps");
        if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive", "peak_lr");
        if (log_every <= 0) throw ConfigError("log_every must be positive", "log_every");
        const auto& s = checkpoint_schedule;
        if (s.empty() || s.front() != 0) throw ConfigError("checkpoint_schedule must start at 0", "checkpoint_schedule");
        for (std::size_t i = 1; i < s.size(); ++i) {
            if (s[i] <= s[i - 1])
                throw ConfigError("checkpoint_schedule must be strictly increasing", "checkpoint_schedule");
        }
        if (s.back() > total_steps)
            throw ConfigError("checkpoint_schedule has step " + std::to_string(s.back()) + " beyond total_steps",
                              "checkpoint_schedule");
        if (s.back() != total_steps)
            throw ConfigError("checkpoint_schedule must end at total_steps", "checkpoint_schedule");
    }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size},     {"d_model", d_model},
                {"n_layers", n_layers},         {"n_heads", n_heads},
                {"ffn_dim", ffn_dim},           {"max_seq_len", max_seq_len},
                {"mask_rate", mask_rate},       {"batch_size", batch_size},
                {"total_steps", total_steps},   {"warmup_steps", warmup_steps},
                {"peak_lr", peak_lr},           {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},     {"adam_eps", adam_eps},
                {"weight_decay", weight_decay}, {"init_std", init_std},
                {"seed", seed},                 {"log_every", log_every},
                {"checkpoint_schedule", checkpoint_schedule}};
    }

    // Missing keys keep their defaults; unknown keys are rejected.
    static ToyMLMConfig from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("backend config must be an object", "backend");
        ToyMLMConfig c;
        bool schedule_given = false;
        std::optional<std::int64_t> checkpoint_every;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            const auto& v = it.value();
            try {
                if (k == "vocab_size") c.vocab_size = v.get<std::size_t>();
                else if (k == "d_model") c.d_model = v.get<std::size_t>();
                else if (k == "n_layers") c.n_layers = v.get<std::size_t>();
                else if (k == "n_heads") c.n_heads = v.get<std::size_t>();
                else if (k == "ffn_dim") c.ffn_dim = v.get<std::size_t>();
                else if (k == "max_seq_len") c.max_seq_len = v.get<std::size_t>();
                else if (k == "mask_rate") c.mask_rate = v.get<double>();
                else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
                else if (k == "total_steps") c.total_steps = v.get<std::int64_t>();
                else if (k == "warmup_steps") c.warmup_steps = v.get<std::int64_t>();
                else if (k == "peak_lr") c.peak_lr = v.get<double>();
                else if (k == "adam_beta1") c.adam_beta1 = v.get<double>();
                else if (k == "adam_beta2") c.adam_beta2 = v.get<double>();
                else if (k == "adam_eps") c.adam_eps = v.get<double>();
                else if (k == "weight_decay") c.weight_decay = v.get<double>();
                else if (k == "init_std") c.init_std = v.get<double>();
                else if (k == "seed") c.seed = v.get<std::int64_t>();
                else if (k == "log_every") c.log_every = v.get<std::int64_t>();
                else if (k == "checkpoint_schedule") {
                    c.checkpoint_schedule = v.get<std::vector<std::int64_t>>();
                    schedule_given = true;
                } else if (k == "checkpoint_every") checkpoint_every = v.get<std::int64_t>();
                else throw ConfigError("unknown backend key '" + k + "'", k);
            } catch (const nlohmann::json::exception&) {
                throw ConfigError("backend key '" + k + "' has the wrong type", k);
            }
        }
        if (!schedule_given) {
            c.checkpoint_schedule = checkpoint_every ? uniform_checkpoint_schedule(c.total_steps, *checkpoint_every)
                                                     : default_checkpoint_schedule(c.total_steps);
        }
        return c;
    }
};

struct TensorInfo {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
    bool decay = false;  // weight decay applies to matrices only
    bool is_gain = false;  // layer-norm gains start at 1
};

// Offsets of one encoder block's tensors in the flat parameter vector.
struct BlockOffsets {
    std::size_t ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

class ParamLayout {
public:
    ParamLayout() = default;

    ParamLayout(const ToyMLMConfig& c, std::size_t vocab_size) {
        const std::size_t d = c.d_model, f = c.ffn_dim;
        tok_emb = add("tok_emb", {vocab_size, d}, true);
        pos_emb = add("pos_emb", {c.max_seq_len, d}, true);
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            const std::string p = "block" + std::to_string(l) + ".";
            BlockOffsets b{};
            b.ln1_g = add(p + "ln1.gain", {d}, false, true);
            b.ln1_b = add(p + "ln1.bias", {d});
            b.wq = add(p + "attn.wq", {d, d}, true);
            b.bq = add(p + "attn.bq", {d});
            // No key bias: softmax is invariant to it, so it would carry a zero gradient.
            b.wk = add(p + "attn.wk", {d, d}, true);
            b.wv = add(p + "attn.wv", {d, d}, true);
            b.bv = add(p + "attn.bv", {d});
            b.wo = add(p + "attn.wo", {d, d}, true);
            b.bo = add(p + "attn.bo", {d});
            b.ln2_g = add(p + "ln2.gain", {d}, false, true);
            b.ln2_b = add(p + "ln2.bias", {d});
            b.w1 = add(p + "ffn.w1", {d, f}, true);
            b.b1 = add(p + "ffn.b1", {f});
            b.w2 = add(p + "ffn.w2", {f, d}, true);
            b.b2 = add(p + "ffn.b2", {d});
            blocks.push_back(b);
        }
        lnf_g = add("final_ln.gain", {d}, false, true);
        lnf_b = add("final_ln.bias", {d});
        out_bias = add("out_bias", {vocab_size});
    }

    std::size_t total() const noexcept { return total_; }
    const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }

    std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, out_bias = 0;
    std::vector<BlockOffsets> blocks;

private:
    std::size_t add(std::string name, std::vector<std::size_t> shape, bool decay = false, bool gain = false) {
        std::size_t count = 1;
        for (auto s : shape) count *= s;
        tensors_.push_back({std::move(name), std::move(shape), total_, count, decay, gain});
        const auto off = total_;
        total_ += count;
        return off;
    }

    std::vector<TensorInfo> tensors_;
    std::size_t total_ = 0;
};

// One statically masked training example.
struct MaskedExample {
    TokenSeq input;                     // tokens after 80/10/10 corruption
    std::vector<std::size_t> positions; // selected positions
    std::vector<TokenId> targets;       // original tokens at those positions
};

namespace nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;
using RowMap = Eigen::Map<RowVec>;
using CRowMap = Eigen::Map<const RowVec>;

// Parameter and gradient storage. Eigen picks its vectorized loop split from
// the runtime address of mapped data, so the base address must not vary
// between runs or sums come out in a different order.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

inline constexpr double kLayerNormEps = 1e-5;

inline void layernorm(const Mat& x, const CRowMap& g, const CRowMap& b, Mat& y, Mat& xhat, Eigen::VectorXd& rstd) {
    const auto d = static_cast<double>(x.cols());
    y.resize(x.rows(), x.cols());
    xhat.resize(x.rows(), x.cols());
    rstd.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        xhat.row(i) = x.row(i).array() - mean;
        const double r = 1.0 / std::sqrt(xhat.row(i).squaredNorm() / d + kLayerNormEps);
        rstd(i) = r;
        xhat.row(i) *= r;
        y.row(i) = xhat.row(i).cwiseProduct(g) + b;
    }
}

// Accumulates into dx, dg, db.
inline void layernorm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& rstd, const CRowMap& g, Mat& dx,
                               RowMap dg, RowMap db) {
    const auto d = static_cast<double>(dy.cols());
    dg += dy.cwiseProduct(xhat).colwise().sum();
    db += dy.colwise().sum();
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const RowVec dxh = dy.row(i).cwiseProduct(g);
        const double m1 = dxh.sum() / d;
        const double m2 = dxh.dot(xhat.row(i)) / d;
        dx.row(i).array() += rstd(i) * (dxh.array() - m1 - xhat.row(i).array() * m2);
    }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
    const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

template <typename Row>
inline void softmax_row(Row&& row) {
    const double m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
}

} // namespace nn

class ToyMLM final : public Backend {
public:
    // All parameters zero: every masked distribution is uniform.
    ToyMLM(ToyMLMConfig config, Vocabulary vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
        if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
        if (config_.vocab_size != vocab_.size())
            throw ConfigError("vocab_size " + std::to_string(config_.vocab_size) + " does not match the " +
                                  std::to_string(vocab_.size()) + "-token vocabulary",
                              "vocab_size");
        config_.validate();
        layout_ = ParamLayout(config_, vocab_.size());
        params_.assign(layout_.total(), 0.0);
    }

    // Normal(0, init_std) matrices, unit layer-norm gains, zero biases.
    static ToyMLM initialized(ToyMLMConfig config, Vocabulary vocab, std::uint64_t seed) {
        ToyMLM m(std::move(config), std::move(vocab));
        Rng rng(derive_seed(seed, 1));
        for (const auto& t : m.layout_.tensors()) {
            for (std::size_t i = 0; i < t.count; ++i) {
                double& p = m.params_[t.offset + i];
                if (t.is_gain) p = 1.0;
                else if (t.decay) p = rng.normal(0.0, m.config_.init_std);
                else p = 0.0;
            }
        }
        return m;
    }

    const ToyMLMConfig& config() const noexcept { return config_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    const Vocabulary& vocab() const override { return vocab_; }
    std::size_t num_layers() const override { return config_.n_layers; }
    std::size_t width() const override { return config_.d_model; }
    bool has_masked_lm() const override { return true; }
    std::string describe() const override { return "toy masked LM"; }
    std::uint64_t state_checksum() const override {
        return fnv1a(params_.data(), params_.size() * sizeof(double));
    }

    std::vector<MaskedDistribution> score_masked(std::span<const TokenId> tokens,
                                                 std::span<const std::size_t> positions) const override {
        check_tokens(tokens);
        for (auto p : positions) {
            if (p >= tokens.size())
                throw IndexError("masked position " + std::to_string(p) + " is outside a sequence of length " +
                                 std::to_string(tokens.size()));
            if (tokens[p] != vocab_.mask_id())
                throw ContractViolation("position " + std::to_string(p) + " does not hold the mask token");
        }
        Activations act;
        forward({tokens.begin(), tokens.end()}, {0}, {tokens.size()}, act);
        std::vector<Eigen::Index> rows(positions.begin(), positions.end());
        const nn::Mat probs = output_probs(act, rows);
        std::vector<MaskedDistribution> out;
        out.reserve(positions.size());
        for (std::size_t m = 0; m < positions.size(); ++m) {
            MaskedDistribution md;
            md.position = positions[m];
            md.probs.assign(probs.row(static_cast<Eigen::Index>(m)).data(),
                            probs.row(static_cast<Eigen::Index>(m)).data() + probs.cols());
            out.push_back(std::move(md));
        }
        return out;
    }

    LayerRepresentations encode(std::span<const TokenId> tokens) const override {
        check_tokens(tokens);
        Activations act;
        forward({tokens.begin(), tokens.end()}, {0}, {tokens.size()}, act);
        const std::size_t n = tokens.size(), d = config_.d_model;
        LayerRepresentations reps(config_.n_layers + 1, n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const double* e = &params_[layout_.tok_emb + static_cast<std::size_t>(tokens[i]) * d];
            std::copy(e, e + d, reps.at(0, i).begin());
        }
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            const auto& out = act.blocks[l].out;
            reps.layer(l + 1).assign(out.data(), out.data() + out.size());
        }
        return reps;
    }

    // Mean masked-token cross-entropy over every selected position in the
    // batch. A batch with no selected positions has loss 0 and zero gradient.
    // `grad` (if given) is overwritten with layout().total() entries.
    double loss_and_grad(std::span<const MaskedExample> batch, nn::Buffer* grad) const {
        if (grad) grad->assign(params_.size(), 0.0);
        std::vector<TokenId> tokens;
        std::vector<std::size_t> starts, lens;
        std::vector<Eigen::Index> rows;
        std::vector<TokenId> targets;
        for (const auto& ex : batch) {
            if (ex.positions.empty()) continue;
            check_tokens(ex.input);
            starts.push_back(tokens.size());
            lens.push_back(ex.input.size());
            for (std::size_t m = 0; m < ex.positions.size(); ++m) {
                if (ex.positions[m] >= ex.input.size()) throw IndexError("masked position outside the example");
                rows.push_back(static_cast<Eigen::Index>(tokens.size() + ex.positions[m]));
                targets.push_back(ex.targets[m]);
            }
            tokens.insert(tokens.end(), ex.input.begin(), ex.input.end());
        }
        if (rows.empty()) return 0.0;
        Activations act;
        forward(tokens, starts, lens, act);
        nn::Mat probs = output_probs(act, rows);
        const double inv = 1.0 / static_cast<double>(rows.size());
        double loss = 0.0;
        for (std::size_t m = 0; m < rows.size(); ++m) {
            const auto t = static_cast<Eigen::Index>(targets[m]);
            loss -= std::log(std::max(probs(static_cast<Eigen::Index>(m), t), 1e-300));
        }
        if (grad) {
            for (std::size_t m = 0; m < rows.size(); ++m) probs(static_cast<Eigen::Index>(m), targets[m]) -= 1.0;
            probs *= inv;
            backward(act, rows, probs, *grad);
        }
        return loss * inv;
    }

private:
    struct BlockActs {
        nn::Mat in, xhat1, a, q, k, v, ctx, h1, xhat2, b, u, g, out;
        Eigen::VectorXd rstd1, rstd2;
        std::vector<nn::Mat> probs;  // [sequence * H + head], n x n
    };
    struct Activations {
        std::vector<TokenId> tokens;
        std::vector<std::size_t> starts, lens;
        std::vector<BlockActs> blocks;
        nn::Mat xhatf, z;
        Eigen::VectorXd rstdf;
    };

    void check_tokens(std::span<const TokenId> tokens) const {
        if (tokens.size() > config_.max_seq_len)
            throw ContractViolation("sequence of length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                                    std::to_string(config_.max_seq_len));
        for (auto t : tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= vocab_.size())
                throw IndexError("token id " + std::to_string(t) + " is outside the vocabulary");
        }
    }

    nn::CMatMap W(std::size_t off, std::size_t rows, std::size_t cols) const {
        return {params_.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
    }
    nn::CRowMap Vec(std::size_t off, std::size_t n) const {
        return {params_.data() + off, static_cast<Eigen::Index>(n)};
    }
    static nn::MatMap GW(nn::Buffer& g, std::size_t off, std::size_t rows, std::size_t cols) {
        return {g.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
    }
    static nn::RowMap GV(nn::Buffer& g, std::size_t off, std::size_t n) {
        return {g.data() + off, static_cast<Eigen::Index>(n)};
    }

    // Sequences are packed row-wise; attention stays within each sequence.
    void forward(std::vector<TokenId> tokens, std::vector<std::size_t> starts, std::vector<std::size_t> lens,
                 Activations& act) const {
        const std::size_t d = config_.d_model, f = config_.ffn_dim, H = config_.n_heads, V = vocab_.size();
        const auto dh = static_cast<Eigen::Index>(d / H);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const auto N = static_cast<Eigen::Index>(tokens.size());
        act.tokens = std::move(tokens);
        act.starts = std::move(starts);
        act.lens = std::move(lens);
        const auto E = W(layout_.tok_emb, V, d);
        const auto Ppos = W(layout_.pos_emb, config_.max_seq_len, d);
        nn::Mat x(N, static_cast<Eigen::Index>(d));
        for (std::size_t s = 0; s < act.starts.size(); ++s) {
            for (std::size_t i = 0; i < act.lens[s]; ++i) {
                const auto r = static_cast<Eigen::Index>(act.starts[s] + i);
                x.row(r) = E.row(act.tokens[static_cast<std::size_t>(r)]) + Ppos.row(static_cast<Eigen::Index>(i));
            }
        }
        act.blocks.resize(config_.n_layers);
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            const auto& o = layout_.blocks[l];
            auto& B = act.blocks[l];
            B.in = std::move(x);
            nn::layernorm(B.in, Vec(o.ln1_g, d), Vec(o.ln1_b, d), B.a, B.xhat1, B.rstd1);
            B.q.noalias() = B.a * W(o.wq, d, d);
            B.q.rowwise() += Vec(o.bq, d);
            B.k.noalias() = B.a * W(o.wk, d, d);
            B.v.noalias() = B.a * W(o.wv, d, d);
            B.v.rowwise() += Vec(o.bv, d);
            B.ctx.setZero(N, static_cast<Eigen::Index>(d));
            B.probs.resize(act.starts.size() * H);
            for (std::size_t s = 0; s < act.starts.size(); ++s) {
                const auto st = static_cast<Eigen::Index>(act.starts[s]);
                const auto n = static_cast<Eigen::Index>(act.lens[s]);
                for (std::size_t h = 0; h < H; ++h) {
                    const auto c0 = static_cast<Eigen::Index>(h) * dh;
                    auto& Pm = B.probs[s * H + h];
                    Pm.noalias() = B.q.block(st, c0, n, dh) * B.k.block(st, c0, n, dh).transpose();
                    Pm *= scale;
                    for (Eigen::Index i = 0; i < n; ++i) nn::softmax_row(Pm.row(i));
                    B.ctx.block(st, c0, n, dh).noalias() = Pm * B.v.block(st, c0, n, dh);
                }
            }
            B.h1.noalias() = B.ctx * W(o.wo, d, d);
            B.h1.rowwise() += Vec(o.bo, d);
            B.h1 += B.in;
            nn::layernorm(B.h1, Vec(o.ln2_g, d), Vec(o.ln2_b, d), B.b, B.xhat2, B.rstd2);
            B.u.noalias() = B.b * W(o.w1, d, f);
            B.u.rowwise() += Vec(o.b1, f);
            B.g = B.u.unaryExpr([](double v) { return nn::gelu(v); });
            B.out.noalias() = B.g * W(o.w2, f, d);
            B.out.rowwise() += Vec(o.b2, d);
            B.out += B.h1;
            x = B.out;
        }
        nn::layernorm(x, Vec(layout_.lnf_g, d), Vec(layout_.lnf_b, d), act.z, act.xhatf, act.rstdf);
    }

    // Row-wise softmax over z E^T + out_bias at the given packed rows.
    nn::Mat output_probs(const Activations& act, const std::vector<Eigen::Index>& rows) const {
        const std::size_t d = config_.d_model, V = vocab_.size();
        nn::Mat zm(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
        for (std::size_t m = 0; m < rows.size(); ++m) zm.row(static_cast<Eigen::Index>(m)) = act.z.row(rows[m]);
        nn::Mat logits = zm * W(layout_.tok_emb, V, d).transpose();
        logits.rowwise() += Vec(layout_.out_bias, V);
        for (Eigen::Index m = 0; m < logits.rows(); ++m) nn::softmax_row(logits.row(m));
        return logits;
    }

    // dlogits: gradient of the mean loss w.r.t. the logits at `rows`.
    void backward(const Activations& act, const std::vector<Eigen::Index>& rows, const nn::Mat& dlogits,
                  nn::Buffer& G) const {
        const std::size_t d = config_.d_model, f = config_.ffn_dim, H = config_.n_heads, V = vocab_.size();
        const auto dh = static_cast<Eigen::Index>(d / H);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const auto N = act.z.rows();
        const auto E = W(layout_.tok_emb, V, d);
        auto dE = GW(G, layout_.tok_emb, V, d);

        nn::Mat zm(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
        for (std::size_t m = 0; m < rows.size(); ++m) zm.row(static_cast<Eigen::Index>(m)) = act.z.row(rows[m]);
        dE.noalias() += dlogits.transpose() * zm;
        GV(G, layout_.out_bias, V) += dlogits.colwise().sum();
        const nn::Mat dzm = dlogits * E;
        nn::Mat dz = nn::Mat::Zero(N, static_cast<Eigen::Index>(d));
        for (std::size_t m = 0; m < rows.size(); ++m) dz.row(rows[m]) += dzm.row(static_cast<Eigen::Index>(m));

        nn::Mat dx = nn::Mat::Zero(N, static_cast<Eigen::Index>(d));
        nn::layernorm_backward(dz, act.xhatf, act.rstdf, Vec(layout_.lnf_g, d), dx, GV(G, layout_.lnf_g, d),
                               GV(G, layout_.lnf_b, d));

        nn::Mat dh1, dg, du, db, dctx, dq, dk, dv, da, dP, dS;
        for (std::size_t l = config_.n_layers; l-- > 0;) {
            const auto& o = layout_.blocks[l];
            const auto& B = act.blocks[l];
            // out = h1 + W2 gelu(W1 LN2(h1) + b1) + b2
            dh1 = dx;
            GW(G, o.w2, f, d).noalias() += B.g.transpose() * dx;
            GV(G, o.b2, d) += dx.colwise().sum();
            dg.noalias() = dx * W(o.w2, f, d).transpose();
            du = dg.cwiseProduct(B.u.unaryExpr([](double v) { return nn::gelu_grad(v); }));
            GW(G, o.w1, d, f).noalias() += B.b.transpose() * du;
            GV(G, o.b1, f) += du.colwise().sum();
            db.noalias() = du * W(o.w1, d, f).transpose();
            nn::layernorm_backward(db, B.xhat2, B.rstd2, Vec(o.ln2_g, d), dh1, GV(G, o.ln2_g, d),
                                   GV(G, o.ln2_b, d));
            // h1 = in + Wo attn(LN1(in)) + bo
            GW(G, o.wo, d, d).noalias() += B.ctx.transpose() * dh1;
            GV(G, o.bo, d) += dh1.colwise().sum();
            dctx.noalias() = dh1 * W(o.wo, d, d).transpose();
            dq.setZero(N, static_cast<Eigen::Index>(d));
            dk.setZero(N, static_cast<Eigen::Index>(d));
            dv.setZero(N, static_cast<Eigen::Index>(d));
            for (std::size_t s = 0; s < act.starts.size(); ++s) {
                const auto st = static_cast<Eigen::Index>(act.starts[s]);
                const auto n = static_cast<Eigen::Index>(act.lens[s]);
                for (std::size_t h = 0; h < H; ++h) {
                    const auto c0 = static_cast<Eigen::Index>(h) * dh;
                    const auto& Pm = B.probs[s * H + h];
                    const auto dC = dctx.block(st, c0, n, dh);
                    dP.noalias() = dC * B.v.block(st, c0, n, dh).transpose();
                    dv.block(st, c0, n, dh).noalias() += Pm.transpose() * dC;
                    dS = Pm.cwiseProduct(dP);
                    const Eigen::VectorXd rowdot = dS.rowwise().sum();
                    dS -= (Pm.array().colwise() * rowdot.array()).matrix();
                    dS *= scale;
                    dq.block(st, c0, n, dh).noalias() += dS * B.k.block(st, c0, n, dh);
                    dk.block(st, c0, n, dh).noalias() += dS.transpose() * B.q.block(st, c0, n, dh);
                }
            }
            GW(G, o.wq, d, d).noalias() += B.a.transpose() * dq;
            GV(G, o.bq, d) += dq.colwise().sum();
            GW(G, o.wk, d, d).noalias() += B.a.transpose() * dk;
            GW(G, o.wv, d, d).noalias() += B.a.transpose() * dv;
            GV(G, o.bv, d) += dv.colwise().sum();
            da.noalias() = dq * W(o.wq, d, d).transpose();
            da.noalias() += dk * W(o.wk, d, d).transpose();
            da.noalias() += dv * W(o.wv, d, d).transpose();
            dx = dh1;
            nn::layernorm_backward(da, B.xhat1, B.rstd1, Vec(o.ln1_g, d), dx, GV(G, o.ln1_g, d), GV(G, o.ln1_b, d));
        }
        auto dPos = GW(G, layout_.pos_emb, config_.max_seq_len, d);
        for (std::size_t s = 0; s < act.starts.size(); ++s) {
            for (std::size_t i = 0; i < act.lens[s]; ++i) {
                const auto r = static_cast<Eigen::Index>(act.starts[s] + i);
                dE.row(act.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
                dPos.row(static_cast<Eigen::Index>(i)) += dx.row(r);
            }
        }
    }

    ToyMLMConfig config_;
    Vocabulary vocab_;
    ParamLayout layout_;
    nn::Buffer params_;
};

// ---------------------------------------------------------------------------
// Static masking

// Selects max(1, round(mask_rate * n)) positions per sentence; each selected
// token becomes [MASK] with p=0.8, a random non-special token with p=0.1, or
// stays unchanged. The pattern is a pure function of (seed, example index).
inline MaskedExample make_masked_example(const TokenSeq& sentence, std::size_t index, const ToyMLMConfig& config,
                                         const Vocabulary& vocab) {
    MaskedExample ex;
    ex.input = sentence;
    if (sentence.empty()) return ex;
    Rng rng(derive_seed(static_cast<std::uint64_t>(config.seed), 0x100000000ULL + index));
    const auto n = sentence.size();
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.mask_rate * static_cast<double>(n))));
    auto picks = rng.sample(n, k);
    std::sort(picks.begin(), picks.end());
    std::vector<TokenId> regular;
    for (std::size_t t = 0; t < vocab.size(); ++t) {
        if (!vocab.is_special(static_cast<TokenId>(t))) regular.push_back(static_cast<TokenId>(t));
    }
    for (auto p : picks) {
        ex.positions.push_back(p);
        ex.targets.push_back(sentence[p]);
        const double r = rng.uniform();
        if (r < 0.8) {
            ex.input[p] = vocab.mask_id();
        } else if (r < 0.9 && !regular.empty()) {
            ex.input[p] = regular[rng.below(regular.size())];
        }
    }
    return ex;
}

// ---------------------------------------------------------------------------
// Checkpoints: <run_dir>/step_<N>/manifest.json + weights.bin

struct AdamState {
    std::int64_t t = 0;  // completed updates
    std::vector<double> m;
    std::vector<double> v;
};

struct LoadedCheckpoint {
    ToyMLM model;
    std::int64_t step = 0;
    std::string run_tag;
    std::int64_t seed = 0;
    std::optional<AdamState> adam;
};

inline std::string step_dir_name(std::int64_t step) { return "step_" + std::to_string(step); }

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void append_doubles(std::string& out, std::span<const double> v) {
    const auto* p = reinterpret_cast<const char*>(v.data());
    out.append(p, v.size() * sizeof(double));
}

} // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const ToyMLM& model, std::int64_t step,
                            const std::string& run_tag, std::int64_t seed, const AdamState* adam) {
    std::filesystem::create_directories(dir);
    nlohmann::json tensors = nlohmann::json::array();
    std::string blob;
    std::size_t offset = 0;
    auto emit = [&](const std::string& name, const std::vector<std::size_t>& shape, std::span<const double> data) {
        tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"nbytes", data.size() * 8}});
        detail::append_doubles(blob, data);
        offset += data.size() * 8;
    };
    const auto params = model.params();
    for (const auto& t : model.layout().tensors()) emit(t.name, t.shape, params.subspan(t.offset, t.count));
    if (adam) {
        for (const auto& t : model.layout().tensors())
            emit("adam.m/" + t.name, t.shape, std::span<const double>(adam->m).subspan(t.offset, t.count));
        for (const auto& t : model.layout().tensors())
            emit("adam.v/" + t.name, t.shape, std::span<const double>(adam->v).subspan(t.offset, t.count));
    }
    nlohmann::json manifest = {
        {"format", "probetime-checkpoint"},
        {"format_version", 1},
        {"dtype", "float64-le"},
        {"step", step},
        {"run_tag", run_tag},
        {"seed", seed},
        {"config", model.config().to_json()},
        {"vocab", model.vocab().tokens()},
        {"tensors", tensors},
        {"adam_t", adam ? nlohmann::json(adam->t) : nlohmann::json(nullptr)},
    };
    detail::write_file(dir / "weights.bin", blob);
    detail::write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    if (manifest.value("format", "") != "probetime-checkpoint")
        throw ParseError("not a probetime checkpoint: " + dir.string());
    auto config = ToyMLMConfig::from_json(manifest.at("config"));
    Vocabulary vocab(manifest.at("vocab").get<std::vector<std::string>>());
    ToyMLM model(config, vocab);
    const std::string blob = detail::read_file(dir / "weights.bin");
    auto read_tensor = [&](const nlohmann::json& t, std::span<double> dst) {
        const auto off = t.at("offset").get<std::size_t>();
        const auto nbytes = t.at("nbytes").get<std::size_t>();
        if (nbytes != dst.size() * 8 || off + nbytes > blob.size())
            throw ParseError("tensor '" + t.at("name").get<std::string>() + "' does not match the layout");
        std::memcpy(dst.data(), blob.data() + off, nbytes);
    };
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& t : manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    auto params = model.params();
    for (const auto& t : model.layout().tensors()) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) throw ParseError("checkpoint lacks tensor '" + t.name + "'");
        read_tensor(*it->second, params.subspan(t.offset, t.count));
    }
    std::optional<AdamState> adam;
    if (!manifest.at("adam_t").is_null()) {
        AdamState s;
        s.t = manifest.at("adam_t").get<std::int64_t>();
        s.m.assign(model.layout().total(), 0.0);
        s.v.assign(model.layout().total(), 0.0);
        for (const auto& t : model.layout().tensors()) {
            read_tensor(*by_name.at("adam.m/" + t.name), std::span<double>(s.m).subspan(t.offset, t.count));
            read_tensor(*by_name.at("adam.v/" + t.name), std::span<double>(s.v).subspan(t.offset, t.count));
        }
        adam = std::move(s);
    }
    return {std::move(model), manifest.at("step").get<std::int64_t>(), manifest.at("run_tag").get<std::string>(),
            manifest.at("seed").get<std::int64_t>(), std::move(adam)};
}

// Checkpoints found under a run directory, ordered by step.
inline std::vector<CheckpointRef> list_checkpoints(const std::filesystem::path& run_dir) {
    std::vector<CheckpointRef> out;
    if (!std::filesystem::exists(run_dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("step_", 0) != 0) continue;
        if (!std::filesystem::exists(entry.path() / "manifest.json")) continue;
        auto manifest = nlohmann::json::parse(detail::read_file(entry.path() / "manifest.json"));
        out.push_back({manifest.at("step").get<std::int64_t>(), entry.path().string(),
                       manifest.at("run_tag").get<std::string>(), manifest.at("seed").get<std::int64_t>()});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i].step == out[i - 1].step)
            throw DuplicateCheckpoint("two checkpoints at step " + std::to_string(out[i].step) + " in " +
                                      run_dir.string());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pretraining

struct LossPoint {
    std::int64_t step = 0;
    double train_loss = 0.0;    // loss of the batch consumed at this step, before the update
    std::optional<double> heldout_loss;  // at checkpoint steps only

    friend bool operator==(const LossPoint&, const LossPoint&) = default;
};

inline std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
    std::string out = "step,train_loss,heldout_loss\n";
    for (const auto& p : curve) {
        out += std::to_string(p.step) + ',' + detail::format_double(p.train_loss) + ',' +
               (p.heldout_loss ? detail::format_double(*p.heldout_loss) : std::string()) + '\n';
    }
    return out;
}

inline std::vector<LossPoint> parse_loss_curve(std::string_view text) {
    auto lines = detail::lines_of(text);
    std::vector<LossPoint> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = detail::split(lines[i], ',');
        if (f.size() != 3) throw ParseError("expected 3 fields", i + 1);
        LossPoint p;
        p.step = detail::parse_int(f[0], i + 1, "step");
        p.train_loss = detail::parse_real(f[1], i + 1, "train_loss");
        if (!f[2].empty()) p.heldout_loss = detail::parse_real(f[2], i + 1, "heldout_loss");
        out.push_back(p);
    }
    return out;
}

struct PretrainOptions {
    std::filesystem::path run_dir;  // empty: keep everything in memory
    std::string run_tag = "run";
    bool resume = false;
    std::optional<std::int64_t> stop_after;  // simulate an interruption after this checkpoint
    std::function<void(std::int64_t step, double loss)> on_log;
};

struct PretrainResult {
    std::vector<CheckpointRef> checkpoints;
    std::vector<LossPoint> loss_curve;
    ToyMLM final_model;
    std::vector<std::vector<double>> snapshots;  // parameters at each checkpoint when run_dir is empty
};

// Linear warmup to peak_lr, then linear (power-1 polynomial) decay to zero.
inline double learning_rate(const ToyMLMConfig& c, std::int64_t step) {
    if (c.warmup_steps > 0 && step < c.warmup_steps)
        return c.peak_lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
    const double remaining = static_cast<double>(c.total_steps - step);
    const double span = static_cast<double>(std::max<std::int64_t>(1, c.total_steps - c.warmup_steps));
    return c.peak_lr * std::max(0.0, remaining / span);
}

inline void adam_update(ToyMLM& model, const nn::Buffer& grad, AdamState& s, double lr) {
    const auto& c = model.config();
    s.t += 1;
    const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(s.t));
    auto params = model.params();
    for (const auto& t : model.layout().tensors()) {
        const double wd = t.decay ? c.weight_decay : 0.0;
        for (std::size_t i = t.offset; i < t.offset + t.count; ++i) {
            const double g = grad[i];
            s.m[i] = c.adam_beta1 * s.m[i] + (1.0 - c.adam_beta1) * g;
            s.v[i] = c.adam_beta2 * s.v[i] + (1.0 - c.adam_beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            params[i] -= lr * (mhat / (std::sqrt(vhat) + c.adam_eps) + wd * params[i]);
        }
    }
}

// Deterministic data stream: epoch e visits the training examples in a
// seed-derived permutation; step t consumes stream slots [tB, (t+1)B).
class BatchStream {
public:
    BatchStream(std::size_t n_examples, std::size_t batch_size, std::uint64_t seed)
        : n_(n_examples), batch_(batch_size), seed_(seed) {}

    std::vector<std::size_t> batch(std::int64_t step) {
        std::vector<std::size_t> out;
        out.reserve(batch_);
        const auto start = static_cast<std::uint64_t>(step) * batch_;
        for (std::uint64_t slot = start; slot < start + batch_; ++slot) {
            const auto epoch = static_cast<std::int64_t>(slot / n_);
            if (epoch != epoch_) {
                order_.resize(n_);
                for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
                Rng rng(derive_seed(seed_, 0x200000000ULL + static_cast<std::uint64_t>(epoch)));
                rng.shuffle(order_);
                epoch_ = epoch;
            }
            out.push_back(order_[slot % n_]);
        }
        return out;
    }

private:
    std::size_t n_, batch_;
    std::uint64_t seed_;
    std::int64_t epoch_ = -1;
    std::vector<std::size_t> order_;
};

struct PreparedCorpus {
    std::vector<MaskedExample> train;
    std::vector<MaskedExample> heldout;
};

// Every 20th sentence is held out (at most 512); corpora under 20 sentences
// are evaluated on their own training split.
inline PreparedCorpus prepare_corpus(const std::vector<TokenSeq>& corpus, const ToyMLMConfig& config,
                                     const Vocabulary& vocab) {
    PreparedCorpus pc;
    std::size_t index = 0;
    const bool split = corpus.size() >= 20;
    for (const auto& raw : corpus) {
        if (raw.empty()) continue;
        TokenSeq s(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(std::min(raw.size(), config.max_seq_len)));
        auto ex = make_masked_example(s, index, config, vocab);
        if (split && index % 20 == 19) {
            if (pc.heldout.size() < 512) pc.heldout.push_back(std::move(ex));
        } else {
            pc.train.push_back(std::move(ex));
        }
        ++index;
    }
    if (pc.train.empty()) throw NoData("corpus has no non-empty sentences");
    if (!split) pc.heldout = pc.train;
    return pc;
}

inline double heldout_loss(const ToyMLM& model, const std::vector<MaskedExample>& heldout) {
    return model.loss_and_grad(heldout, nullptr);
}

inline PretrainResult pretrain_toy(ToyMLMConfig config, const Vocabulary& vocab, const std::vector<TokenSeq>& corpus,
                                   const PretrainOptions& opts = {}) {
    if (config.vocab_size == 0) config.vocab_size = vocab.size();
    config.validate();
    if (corpus.empty()) throw NoData("empty corpus");
    const auto data = prepare_corpus(corpus, config, vocab);
    const auto seed = static_cast<std::uint64_t>(config.seed);
    const std::set<std::int64_t> schedule(config.checkpoint_schedule.begin(), config.checkpoint_schedule.end());
    const bool to_disk = !opts.run_dir.empty();

    PretrainResult result{{}, {}, ToyMLM::initialized(config, vocab, seed), {}};
    ToyMLM& model = result.final_model;
    AdamState adam{0, std::vector<double>(model.parameter_count(), 0.0),
                   std::vector<double>(model.parameter_count(), 0.0)};
    std::int64_t start = 0;

    if (to_disk && opts.resume) {
        const auto existing = list_checkpoints(opts.run_dir);
        for (auto it = existing.rbegin(); it != existing.rend(); ++it) {
            if (!schedule.count(it->step)) continue;
            auto loaded = load_checkpoint(it->locator);
            if (!loaded.adam) continue;
            model = std::move(loaded.model);
            adam = std::move(*loaded.adam);
            start = it->step;
            break;
        }
        if (start > 0 && std::filesystem::exists(opts.run_dir / "loss.csv")) {
            for (const auto& p : parse_loss_curve(detail::read_file(opts.run_dir / "loss.csv")))
                if (p.step < start) result.loss_curve.push_back(p);
        }
        for (const auto& ref : existing) {
            if (ref.step < start) result.checkpoints.push_back(ref);
        }
    }

    BatchStream stream(data.train.size(), config.batch_size, seed);
    nn::Buffer grad;
    std::vector<MaskedExample> batch;
    for (std::int64_t t = start; t <= config.total_steps; ++t) {
        const bool at_checkpoint = schedule.count(t) > 0;
        const bool logged = at_checkpoint || t % config.log_every == 0;
        batch.clear();
        for (auto i : stream.batch(t)) batch.push_back(data.train[i]);
        const bool update = t < config.total_steps;
        const double loss = model.loss_and_grad(batch, update ? &grad : nullptr);
        if (logged) {
            LossPoint lp{t, loss, std::nullopt};
            if (at_checkpoint) lp.heldout_loss = heldout_loss(model, data.heldout);
            result.loss_curve.push_back(lp);
            if (opts.on_log) opts.on_log(t, loss);
        }
        if (at_checkpoint) {
            if (to_disk) {
                const auto dir = opts.run_dir / step_dir_name(t);
                save_checkpoint(dir, model, t, opts.run_tag, config.seed, &adam);
                detail::write_file(opts.run_dir / "loss.csv", loss_curve_csv(result.loss_curve));
                result.checkpoints.push_back({t, dir.string(), opts.run_tag, config.seed});
            } else {
                result.snapshots.emplace_back(model.params().begin(), model.params().end());
                result.checkpoints.push_back({t, "memory:" + std::to_string(t), opts.run_tag, config.seed});
            }
            if (opts.stop_after && t >= *opts.stop_after) break;
        }
        if (update) adam_update(model, grad, adam, learning_rate(config, t));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compares analytic gradients with central differences on a seeded sample
// of parameters: max |a - n| / (|a| + 1e-8).
inline GradCheckResult gradient_check(const ToyMLM& base, std::span<const MaskedExample> batch, double h = 1e-5,
                                      std::size_t samples = 256, std::uint64_t seed = 7) {
    ToyMLM model = base;
    nn::Buffer grad;
    model.loss_and_grad(batch, &grad);
    Rng rng(seed);
    auto idx = rng.sample(model.parameter_count(), samples);
    GradCheckResult r;
    auto params = model.params();
    for (auto i : idx) {
        const double orig = params[i];
        params[i] = orig + h;
        const double up = model.loss_and_grad(batch, nullptr);
        params[i] = orig - h;
        const double down = model.loss_and_grad(batch, nullptr);
        params[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(grad[i] - numeric) / (std::abs(grad[i]) + 1e-8);
        if (rel > r.max_rel_error || r.checked == 0) {
            r.max_rel_error = rel;
            r.worst_index = i;
            r.worst_analytic = grad[i];
            r.worst_numeric = numeric;
        }
        ++r.checked;
    }
    return r;
}

// Rebuilds a model from an in-memory snapshot taken during pretrain_toy.
inline ToyMLM model_from_snapshot(const ToyMLM& like, std::span<const double> params) {
    ToyMLM m = like;
    std::copy(params.begin(), params.end(), m.params().begin());
    return m;
}

} // namespace probetime
