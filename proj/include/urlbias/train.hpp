// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urlbias/bias.hpp"
#include "urlbias/metrics.hpp"
#include "urlbias/model.hpp"

namespace urlbias {

enum class DebiasMode { none, ade, blindeye };

inline const char* to_string(DebiasMode m) {
    switch (m) {
        case DebiasMode::none: return "none";
        case DebiasMode::ade: return "ade";
        case DebiasMode::blindeye: return "blindeye";
    }
    return "?";
}

inline DebiasMode debias_from_string(const std::string& s) {
    if (s == "none") return DebiasMode::none;
    if (s == "ade") return DebiasMode::ade;
    if (s == "blindeye") return DebiasMode::blindeye;
    throw Error("unknown debias mode '" + s + "' (expected none|ade|blindeye)");
}

struct TrainConfig {
    DebiasMode debias = DebiasMode::none;
    double lambda = 1.0;       // bias-constraint strength
    int epochs = 30;
    int batch_size = 64;
    uint64_t seed = 0;

    double embedding_lr = 1e-3, embedding_wd = 0.0;
    double classifier_lr = 1e-3, classifier_wd = 0.0;
    double bias_lr = 1e-3, bias_wd = 0.1;

    int64_t vocab_min_count = 1;
    size_t vocab_max_size = 100000;

    void validate() const {
        if (lambda < 0.0) throw Error("train: lambda must be >= 0");
        if (epochs < 1) throw Error("train: epochs must be >= 1");
        if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"debias", to_string(c.debias)},
                       {"lambda", c.lambda},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"embedding_lr", c.embedding_lr},
                       {"embedding_wd", c.embedding_wd},
                       {"classifier_lr", c.classifier_lr},
                       {"classifier_wd", c.classifier_wd},
                       {"bias_lr", c.bias_lr},
                       {"bias_wd", c.bias_wd},
                       {"vocab_min_count", c.vocab_min_count},
                       {"vocab_max_size", c.vocab_max_size}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.debias = debias_from_string(j.at("debias").get<std::string>());
    j.at("lambda").get_to(c.lambda);
    j.at("epochs").get_to(c.epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("seed").get_to(c.seed);
    j.at("embedding_lr").get_to(c.embedding_lr);
    j.at("embedding_wd").get_to(c.embedding_wd);
    j.at("classifier_lr").get_to(c.classifier_lr);
    j.at("classifier_wd").get_to(c.classifier_wd);
    j.at("bias_lr").get_to(c.bias_lr);
    j.at("bias_wd").get_to(c.bias_wd);
    j.at("vocab_min_count").get_to(c.vocab_min_count);
    j.at("vocab_max_size").get_to(c.vocab_max_size);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

using Scalar = float;
using MatF = nn::Mat<Scalar>;
using VecF = nn::Vec<Scalar>;

/// -sum_k y_k log yhat_k with natural logs and probabilities clamped below at
/// 1e-12. Zero exactly when yhat matches the one-hot target.
inline double classification_loss(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw Error("classification_loss: size mismatch");
    double loss = 0.0;
    for (size_t k = 0; k < y.size(); ++k) {
        if (y[k] == 0.0) continue;
        loss -= y[k] * std::log(std::clamp(yhat[k], nn::kLogClamp, 1.0));
    }
    return loss;
}

/// Soft cross-entropy between per-position class-distribution targets and
/// bias-predictor outputs, averaged over masked (non-PAD) positions. Zero
/// masked positions yield 0.
template <class S>
inline double bias_loss(const nn::Mat<S>& targets, const nn::Mat<S>& probs,
                        std::span<const uint8_t> mask) {
    if (targets.cols() != probs.cols() || targets.rows() != probs.rows() ||
        size_t(targets.cols()) != mask.size())
        throw Error("bias_loss: shape mismatch");
    double loss = 0.0;
    int64_t n = 0;
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        if (!mask[j]) continue;
        ++n;
        for (Eigen::Index k = 0; k < probs.rows(); ++k) {
            const double t = double(targets(k, j));
            if (t == 0.0) continue;
            loss -= t * std::log(std::clamp(double(probs(k, j)), nn::kLogClamp, 1.0));
        }
    }
    return n == 0 ? 0.0 : loss / double(n);
}

/// Cross-entropy of the predictor output against the uniform distribution,
/// averaged over masked positions; minimized exactly when the head is
/// maximally confused (the BlindEye objective). Equals ln K at the optimum.
template <class S>
inline double blindeye_confusion_loss(const nn::Mat<S>& probs, std::span<const uint8_t> mask) {
    double loss = 0.0;
    int64_t n = 0;
    const double u = 1.0 / double(probs.rows());
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        if (!mask[j]) continue;
        ++n;
        for (Eigen::Index k = 0; k < probs.rows(); ++k)
            loss -= u * std::log(std::clamp(double(probs(k, j)), nn::kLogClamp, 1.0));
    }
    return n == 0 ? 0.0 : loss / double(n);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepLog {
    int64_t step = 0;
    double loss_c = 0.0;      // classification loss (sub-step 1)
    double loss_b_fit = 0.0;  // bias loss before the theta_b update (sub-step 2)
    double loss_b = 0.0;      // sub-step 3 objective after the theta_b update
    double joint = 0.0;       // loss_c - lambda * loss_b
};

struct EpochLog {
    int epoch = 0;
    double loss_c = 0.0, loss_b = 0.0, joint = 0.0;
    double val_metric = 0.0;  // AUC for binary corpora, else -validation loss
    bool is_best = false;
};

struct TrainLogs {
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
};

inline std::vector<TokenizedSample> encode_corpus(const Corpus& corpus,
                                                  const TokenVocabulary& vocab_char,
                                                  const TokenVocabulary& vocab_word,
                                                  const BackboneConfig& cfg) {
    std::vector<TokenizedSample> out;
    out.reserve(corpus.size());
    for (const auto& rec : corpus.records)
        out.push_back(encode(rec, vocab_char, vocab_word, cfg.max_chars, cfg.max_words));
    return out;
}

/// One optimizer per parameter group and objective: theta_c and theta_e under
/// the classification loss, theta_b under the bias-fit loss, and theta_e
/// under the reversed (or confusion) loss. The last one sees identically zero
/// gradients when lambda is 0, making ade with lambda=0 reproduce plain
/// training exactly.
class Trainer {
public:
    Trainer(Model<Scalar>& model, std::vector<const ClassDistributionMatrix*> stream_bias,
            const TrainConfig& cfg)
        : model_(model),
          stream_bias_(std::move(stream_bias)),
          cfg_(cfg),
          dropout_rng_(nn::Rng(cfg.seed).fork(3)) {
        cfg_.validate();
        if (int(stream_bias_.size()) != model_.net->num_streams())
            throw Error("trainer: one bias matrix per embedded stream required");
        nn::AdamConfig<Scalar> emb{Scalar(cfg.embedding_lr)};
        emb.weight_decay = Scalar(cfg.embedding_wd);
        nn::AdamConfig<Scalar> cls{Scalar(cfg.classifier_lr)};
        cls.weight_decay = Scalar(cfg.classifier_wd);
        nn::AdamConfig<Scalar> bias{Scalar(cfg.bias_lr)};
        bias.weight_decay = Scalar(cfg.bias_wd);
        nn::AdamConfig<Scalar> adv{Scalar(cfg.embedding_lr)};  // decay stays on the primary path

        opt_embed_ = nn::Adam<Scalar>(model_.embedding_params(), emb);
        opt_cls_ = nn::Adam<Scalar>(model_.classifier_params(), cls);
        opt_bias_ = nn::Adam<Scalar>(model_.bias_params(), bias);
        opt_embed_adv_ = nn::Adam<Scalar>(model_.embedding_params(), adv);
    }

    const TrainConfig& config() const { return cfg_; }

    /// One training iteration on a batch: (1) classification step on theta_e
    /// and theta_c; for ade/blindeye additionally (2) bias-predictor fit with
    /// theta_e frozen and (3) embedding step against the bias head, through
    /// gradient reversal for ade or toward maximal confusion for blindeye.
    StepLog step(const std::vector<const TokenizedSample*>& batch) {
        if (batch.empty()) throw Error("trainer: empty batch");
        StepLog log;
        log.step = ++step_count_;
        const int B = int(batch.size());
        const int streams = model_.net->num_streams();
        auto embeddings = model_.net->embeddings();

        std::vector<nn::PackedIds> packed(streams);
        std::vector<nn::Ranges> ranges(streams);
        for (int s = 0; s < streams; ++s) {
            packed[s] = model_.pack(batch, s);
            ranges[s] = packed[s].ranges;
        }

        // (1) classification step
        {
            std::vector<MatF> x;
            for (int s = 0; s < streams; ++s) x.push_back(embeddings[s]->forward(packed[s]));
            MatF probs = model_.net->forward(x, ranges, true, &dropout_rng_);
            double loss = 0.0;
            MatF dlogits = probs;
            for (int i = 0; i < B; ++i) {
                const int y = batch[i]->label;
                loss -= std::log(std::clamp(double(probs(y, i)), nn::kLogClamp, 1.0));
                dlogits(y, i) -= Scalar(1);
            }
            log.loss_c = loss / B;
            dlogits /= Scalar(B);

            opt_embed_.zero_grads();
            opt_cls_.zero_grads();
            std::vector<MatF> dx;
            model_.net->backward(dlogits, true, &dx);
            for (int s = 0; s < streams; ++s) embeddings[s]->backward(packed[s], dx[s]);
            opt_cls_.step();
            opt_embed_.step();
        }

        if (cfg_.debias == DebiasMode::none) {
            log.joint = log.loss_c;
            check_finite(log);
            return log;
        }

        // re-embed with the updated theta_e; fixed for sub-steps (2) and (3)
        std::vector<MatF> x;
        std::vector<MatF> targets(streams);
        std::vector<std::vector<uint8_t>> masks(streams);
        std::vector<int64_t> n_masked(streams);
        for (int s = 0; s < streams; ++s) {
            x.push_back(embeddings[s]->forward(packed[s]));
            auto bt = bias_targets(packed[s].ids, *stream_bias_[s]);
            const int n = int(bt.targets.size());
            targets[s].resize(model_.config.num_classes, n);
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < model_.config.num_classes; ++k)
                    targets[s](k, j) = Scalar(bt.targets[j][k]);
            masks[s] = std::move(bt.mask);
            n_masked[s] = 0;
            for (auto m : masks[s]) n_masked[s] += m;
        }

        // (2) fit the bias predictor, theta_e frozen
        {
            opt_bias_.zero_grads();
            double fit_loss = 0.0;
            for (int s = 0; s < streams; ++s) {
                typename nn::BiasPredictor<Scalar>::Cache cache;
                MatF probs = model_.bias_heads[s].forward(x[s], cache);
                fit_loss += bias_loss(targets[s], probs, masks[s]) / streams;
                if (n_masked[s] == 0) continue;
                MatF dlogits = MatF::Zero(probs.rows(), probs.cols());
                for (Eigen::Index j = 0; j < probs.cols(); ++j)
                    if (masks[s][j])
                        dlogits.col(j) = (probs.col(j) - targets[s].col(j)) /
                                         Scalar(double(n_masked[s]) * streams);
                model_.bias_heads[s].backward(cache, dlogits, true);
            }
            log.loss_b_fit = fit_loss;
            opt_bias_.step();
        }

        // (3) embedding step against the refreshed head, theta_b frozen
        {
            opt_embed_adv_.zero_grads();
            const bool ade = cfg_.debias == DebiasMode::ade;
            double obj = 0.0;
            for (int s = 0; s < streams; ++s) {
                typename nn::BiasPredictor<Scalar>::Cache cache;
                MatF probs = model_.bias_heads[s].forward(x[s], cache);
                MatF dlogits = MatF::Zero(probs.rows(), probs.cols());
                const Scalar u = Scalar(1) / Scalar(model_.config.num_classes);
                if (ade) {
                    obj += bias_loss(targets[s], probs, masks[s]) / streams;
                    if (n_masked[s] == 0) continue;
                    for (Eigen::Index j = 0; j < probs.cols(); ++j)
                        if (masks[s][j])
                            dlogits.col(j) = (probs.col(j) - targets[s].col(j)) /
                                             Scalar(double(n_masked[s]) * streams);
                } else {
                    obj += blindeye_confusion_loss(probs, masks[s]) / streams;
                    if (n_masked[s] == 0) continue;
                    for (Eigen::Index j = 0; j < probs.cols(); ++j)
                        if (masks[s][j])
                            dlogits.col(j) = (probs.col(j).array() - u).matrix() /
                                             Scalar(double(n_masked[s]) * streams);
                }
                MatF dx = model_.bias_heads[s].backward(cache, dlogits, false);
                // ade maximizes the bias loss via gradient reversal; blindeye
                // descends the confusion loss directly, scaled by the same
                // strength knob.
                nn::GradientReversal<Scalar> grl{Scalar(cfg_.lambda)};
                MatF dx_embed = ade ? grl.backward(dx) : MatF(Scalar(cfg_.lambda) * dx);
                embeddings[s]->backward(packed[s], dx_embed);
            }
            log.loss_b = obj;
            opt_embed_adv_.step();
        }

        log.joint = log.loss_c - cfg_.lambda * log.loss_b;
        check_finite(log);
        return log;
    }

private:
    void check_finite(const StepLog& log) const {
        if (!std::isfinite(log.loss_c) || !std::isfinite(log.loss_b))
            throw Error("training diverged at step " + std::to_string(log.step) +
                        " (loss_c=" + std::to_string(log.loss_c) +
                        ", loss_b=" + std::to_string(log.loss_b) + ")");
    }

    Model<Scalar>& model_;
    std::vector<const ClassDistributionMatrix*> stream_bias_;
    TrainConfig cfg_;
    nn::Rng dropout_rng_;
    nn::Adam<Scalar> opt_embed_, opt_cls_, opt_bias_, opt_embed_adv_;
    int64_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    BackboneConfig config;
    TrainConfig train_config;
    std::vector<std::string> class_names;
    TokenVocabulary vocab_char, vocab_word;
    ClassDistributionMatrix bias_char, bias_word;
    std::vector<std::pair<std::string, MatF>> weights;
    TrainLogs logs;
    int best_epoch = -1;
    double best_val = 0.0;
};

namespace detail {

template <class T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("weights: truncated file");
    return v;
}

}  // namespace detail

/// Binary weight file: "UBWTS001", then for each tensor its name, shape and
/// little-endian float32 data in column-major order.
inline void save_weights(const std::vector<std::pair<std::string, MatF>>& weights,
                         const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write("UBWTS001", 8);
    detail::write_pod<uint32_t>(out, uint32_t(weights.size()));
    for (const auto& [name, w] : weights) {
        detail::write_pod<uint32_t>(out, uint32_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        detail::write_pod<uint32_t>(out, uint32_t(w.rows()));
        detail::write_pod<uint32_t>(out, uint32_t(w.cols()));
        out.write(reinterpret_cast<const char*>(w.data()),
                  std::streamsize(sizeof(float) * size_t(w.size())));
    }
}

inline std::vector<std::pair<std::string, MatF>> load_weights(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != "UBWTS001")
        throw Error("weights: bad magic in " + path.string());
    const uint32_t count = detail::read_pod<uint32_t>(in);
    std::vector<std::pair<std::string, MatF>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rows = detail::read_pod<uint32_t>(in);
        const uint32_t cols = detail::read_pod<uint32_t>(in);
        MatF w(rows, cols);
        in.read(reinterpret_cast<char*>(w.data()),
                std::streamsize(sizeof(float) * size_t(w.size())));
        if (!in) throw Error("weights: truncated tensor " + name);
        out.emplace_back(std::move(name), std::move(w));
    }
    return out;
}

inline void save_bias_matrices(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "# num_classes=" << ckpt.config.num_classes
        << " source_split=" << ckpt.bias_char.source_split << '\n';
    char buf[32];
    auto dump = [&](const ClassDistributionMatrix& m, const TokenVocabulary& v) {
        for (int32_t id = 0; id < m.size(); ++id) {
            out << to_string(m.mode) << '\t' << tsv_escape(v.tokens[id]) << '\t' << id;
            for (double p : m.rows[id]) {
                std::snprintf(buf, sizeof(buf), "%.9f", p);
                out << '\t' << buf;
            }
            out << '\n';
        }
    };
    dump(ckpt.bias_char, ckpt.vocab_char);
    dump(ckpt.bias_word, ckpt.vocab_word);
}

inline void save_trainlog(const TrainLogs& logs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& s : logs.steps) {
        nlohmann::json j{{"kind", "step"},     {"step", s.step},
                         {"loss_c", s.loss_c}, {"loss_b_fit", s.loss_b_fit},
                         {"loss_b", s.loss_b}, {"joint", s.joint}};
        out << j.dump() << '\n';
    }
    for (const auto& e : logs.epochs) {
        nlohmann::json j{{"kind", "epoch"},    {"epoch", e.epoch},
                         {"loss_c", e.loss_c}, {"loss_b", e.loss_b},
                         {"joint", e.joint},   {"val_metric", e.val_metric},
                         {"is_best", e.is_best}};
        out << j.dump() << '\n';
    }
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json cfg;
    cfg["backbone"] = ckpt.config;
    cfg["train"] = ckpt.train_config;
    cfg["class_names"] = ckpt.class_names;
    cfg["best_epoch"] = ckpt.best_epoch;
    cfg["best_val_metric"] = std::isfinite(ckpt.best_val) ? ckpt.best_val : 0.0;
    std::ofstream out(dir / "config.json");
    if (!out) throw Error("cannot write " + (dir / "config.json").string());
    out << cfg.dump(2) << '\n';
    save_vocab(ckpt.vocab_char, dir / "vocab_char.tsv");
    save_vocab(ckpt.vocab_word, dir / "vocab_word.tsv");
    save_bias_matrices(ckpt, dir / "bias_matrix.tsv");
    save_weights(ckpt.weights, dir / "weights.bin");
    save_trainlog(ckpt.logs, dir / "trainlog.jsonl");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    Checkpoint ckpt;
    std::ifstream in(dir / "config.json");
    if (!in) throw Error("load_checkpoint: missing " + (dir / "config.json").string());
    nlohmann::json cfg = nlohmann::json::parse(in);
    ckpt.config = cfg.at("backbone").get<BackboneConfig>();
    ckpt.train_config = cfg.at("train").get<TrainConfig>();
    ckpt.class_names = cfg.at("class_names").get<std::vector<std::string>>();
    ckpt.best_epoch = cfg.value("best_epoch", -1);
    ckpt.best_val = cfg.value("best_val_metric", 0.0);
    ckpt.vocab_char = load_vocab(dir / "vocab_char.tsv");
    ckpt.vocab_word = load_vocab(dir / "vocab_word.tsv");
    ckpt.bias_char = build_bias_matrix(ckpt.vocab_char);
    ckpt.bias_word = build_bias_matrix(ckpt.vocab_word);
    ckpt.weights = load_weights(dir / "weights.bin");
    return ckpt;
}

/// Instantiate a model from checkpointed weights; forward passes reproduce
/// the training-time model bit for bit on the same platform.
inline Model<Scalar> build_model(const Checkpoint& ckpt) {
    Model<Scalar> m = make_model<Scalar>(ckpt.config, ckpt.vocab_char.size(),
                                         ckpt.vocab_word.size(), 0);
    std::map<std::string, const MatF*> by_name;
    for (const auto& [name, w] : ckpt.weights) by_name[name] = &w;
    size_t assigned = 0;
    for (auto* t : m.all_params()) {
        auto it = by_name.find(t->name);
        if (it == by_name.end()) throw Error("checkpoint: missing tensor " + t->name);
        if (it->second->rows() != t->w.rows() || it->second->cols() != t->w.cols())
            throw Error("checkpoint: shape mismatch for " + t->name);
        t->w = *it->second;
        ++assigned;
    }
    if (assigned != ckpt.weights.size())
        throw Error("checkpoint: unexpected extra tensors in weights.bin");
    return m;
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<std::string, MatF>> snapshot_params(Model<Scalar>& m) {
    std::vector<std::pair<std::string, MatF>> out;
    for (auto* t : m.all_params()) out.emplace_back(t->name, t->w);
    return out;
}

inline void restore_params(Model<Scalar>& m, const std::vector<std::pair<std::string, MatF>>& s) {
    size_t i = 0;
    for (auto* t : m.all_params()) t->w = s[i++].second;
}

}  // namespace detail

/// Train a model on corpus_train, selecting the best epoch by validation AUC
/// (binary corpora) or lowest validation loss. Vocabularies and the class
/// distribution matrices are derived from corpus_train only. On divergence
/// the best checkpoint so far is written to out_dir (when given) before the
/// error propagates.
inline Checkpoint train_model(const Corpus& corpus_train, const Corpus* corpus_valid,
                              const BackboneConfig& bcfg, const TrainConfig& tcfg,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    bcfg.validate();
    tcfg.validate();
    if (corpus_train.empty()) throw Error("train: empty training corpus");
    if (corpus_train.num_classes != bcfg.num_classes)
        throw Error("train: corpus has " + std::to_string(corpus_train.num_classes) +
                    " classes but the model is configured for " +
                    std::to_string(bcfg.num_classes));

    Checkpoint ckpt;
    ckpt.config = bcfg;
    ckpt.train_config = tcfg;
    ckpt.class_names = corpus_train.class_names;
    ckpt.vocab_char = build_vocab(corpus_train, TokenMode::chars, 1, tcfg.vocab_max_size);
    ckpt.vocab_word =
        build_vocab(corpus_train, TokenMode::words, tcfg.vocab_min_count, tcfg.vocab_max_size);
    ckpt.bias_char = build_bias_matrix(ckpt.vocab_char);
    ckpt.bias_word = build_bias_matrix(ckpt.vocab_word);

    auto train_samples = encode_corpus(corpus_train, ckpt.vocab_char, ckpt.vocab_word, bcfg);
    std::vector<TokenizedSample> valid_samples;
    std::vector<int> valid_labels;
    if (corpus_valid && !corpus_valid->empty()) {
        valid_samples = encode_corpus(*corpus_valid, ckpt.vocab_char, ckpt.vocab_word, bcfg);
        for (const auto& r : corpus_valid->records) valid_labels.push_back(r.label);
    }

    Model<Scalar> model =
        make_model<Scalar>(bcfg, ckpt.vocab_char.size(), ckpt.vocab_word.size(), tcfg.seed);
    std::vector<const ClassDistributionMatrix*> stream_bias;
    for (auto mode : model.stream_modes())
        stream_bias.push_back(mode == TokenMode::chars ? &ckpt.bias_char : &ckpt.bias_word);
    Trainer trainer(model, stream_bias, tcfg);

    nn::Rng shuffle_rng = nn::Rng(tcfg.seed).fork(4);
    std::vector<size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), size_t{0});

    auto validate = [&]() -> double {
        if (valid_samples.empty()) return 0.0;
        std::vector<const TokenizedSample*> ptrs;
        for (const auto& s : valid_samples) ptrs.push_back(&s);
        MatF probs = predict_probs(model, ptrs);
        if (bcfg.num_classes == 2) {
            std::vector<double> scores(ptrs.size());
            for (size_t i = 0; i < ptrs.size(); ++i) scores[i] = double(probs(1, Eigen::Index(i)));
            return auc(scores, valid_labels);
        }
        double loss = 0.0;  // multi-class corpora select by validation loss
        for (size_t i = 0; i < ptrs.size(); ++i)
            loss -= std::log(
                std::clamp(double(probs(valid_labels[i], Eigen::Index(i))), nn::kLogClamp, 1.0));
        return -loss / double(ptrs.size());
    };

    std::vector<std::pair<std::string, MatF>> best = detail::snapshot_params(model);
    ckpt.best_val = -std::numeric_limits<double>::infinity();

    auto finalize = [&](bool restore) {
        if (restore) detail::restore_params(model, best);
        ckpt.weights = best;
        if (out_dir) save_checkpoint(ckpt, *out_dir);
    };

    try {
        for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            double sum_c = 0.0, sum_b = 0.0, sum_joint = 0.0;
            int64_t batches = 0;
            for (size_t start = 0; start < order.size(); start += size_t(tcfg.batch_size)) {
                std::vector<const TokenizedSample*> batch;
                for (size_t i = start;
                     i < std::min(order.size(), start + size_t(tcfg.batch_size)); ++i)
                    batch.push_back(&train_samples[order[i]]);
                StepLog s = trainer.step(batch);
                ckpt.logs.steps.push_back(s);
                sum_c += s.loss_c;
                sum_b += s.loss_b;
                sum_joint += s.joint;
                ++batches;
            }
            EpochLog e;
            e.epoch = epoch;
            e.loss_c = sum_c / double(batches);
            e.loss_b = sum_b / double(batches);
            e.joint = sum_joint / double(batches);
            e.val_metric = validate();
            // keep the most recent among equal bests so late-epoch refinements
            // of equal validation score win
            if (valid_samples.empty() || e.val_metric >= ckpt.best_val) {
                ckpt.best_val = valid_samples.empty() ? 0.0 : e.val_metric;
                ckpt.best_epoch = epoch;
                best = detail::snapshot_params(model);
                e.is_best = true;
            }
            ckpt.logs.epochs.push_back(e);
        }
    } catch (const Error&) {
        finalize(true);
        throw;
    }
    finalize(true);
    return ckpt;
}

}  // namespace urlbias
