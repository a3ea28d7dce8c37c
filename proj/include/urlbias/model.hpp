// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urlbias/nn.hpp"

namespace urlbias {

enum class BackboneKind { char_word_cnn, gated_cnn, lstm };

inline const char* to_string(BackboneKind k) {
    switch (k) {
        case BackboneKind::char_word_cnn: return "charcnn";
        case BackboneKind::gated_cnn: return "gatedcnn";
        case BackboneKind::lstm: return "lstm";
    }
    return "?";
}

inline BackboneKind backbone_from_string(const std::string& s) {
    if (s == "charcnn") return BackboneKind::char_word_cnn;
    if (s == "gatedcnn") return BackboneKind::gated_cnn;
    if (s == "lstm") return BackboneKind::lstm;
    throw Error("unknown backbone '" + s + "' (expected charcnn|gatedcnn|lstm)");
}

struct BackboneConfig {
    BackboneKind kind = BackboneKind::char_word_cnn;
    int num_classes = 2;
    int embedding_dim = 32;
    std::vector<int> char_kernels = {3, 4, 5, 6};
    std::vector<int> word_kernels = {1, 2, 3};
    int channels = 64;       // per kernel width
    int gated_width = 5;
    int lstm_hidden = 64;
    double dropout = 0.2;
    int max_chars = 200;
    int max_words = 50;
    int bias_hidden1 = 64;   // bias-predictor layer widths
    int bias_hidden2 = 64;

    void validate() const {
        if (num_classes < 2) throw Error("config: num_classes must be >= 2");
        if (embedding_dim < 1 || channels < 1 || lstm_hidden < 1 || gated_width < 1)
            throw Error("config: dimensions must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw Error("config: dropout must be in [0,1)");
        for (int w : char_kernels)
            if (w < 1 || w > max_chars) throw Error("config: char kernel width out of range");
        for (int w : word_kernels)
            if (w < 1 || w > max_words) throw Error("config: word kernel width out of range");
        if (gated_width > max_chars) throw Error("config: gated kernel width out of range");
    }

    /// The longest kernel touching each stream: sequences are padded to at
    /// least this many positions.
    int min_char_len() const {
        if (kind == BackboneKind::gated_cnn) return gated_width;
        if (kind == BackboneKind::lstm) return 1;
        int m = 1;
        for (int w : char_kernels) m = std::max(m, w);
        return m;
    }
    int min_word_len() const {
        int m = 1;
        for (int w : word_kernels) m = std::max(m, w);
        return m;
    }
};

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = nlohmann::json{{"kind", to_string(c.kind)},
                       {"num_classes", c.num_classes},
                       {"embedding_dim", c.embedding_dim},
                       {"char_kernels", c.char_kernels},
                       {"word_kernels", c.word_kernels},
                       {"channels", c.channels},
                       {"gated_width", c.gated_width},
                       {"lstm_hidden", c.lstm_hidden},
                       {"dropout", c.dropout},
                       {"max_chars", c.max_chars},
                       {"max_words", c.max_words},
                       {"bias_hidden1", c.bias_hidden1},
                       {"bias_hidden2", c.bias_hidden2}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
    c.kind = backbone_from_string(j.at("kind").get<std::string>());
    j.at("num_classes").get_to(c.num_classes);
    j.at("embedding_dim").get_to(c.embedding_dim);
    j.at("char_kernels").get_to(c.char_kernels);
    j.at("word_kernels").get_to(c.word_kernels);
    j.at("channels").get_to(c.channels);
    j.at("gated_width").get_to(c.gated_width);
    j.at("lstm_hidden").get_to(c.lstm_hidden);
    j.at("dropout").get_to(c.dropout);
    j.at("max_chars").get_to(c.max_chars);
    j.at("max_words").get_to(c.max_words);
    j.at("bias_hidden1").get_to(c.bias_hidden1);
    j.at("bias_hidden2").get_to(c.bias_hidden2);
}

/// A classifier over embedded token streams. Stream 0 is always the char
/// stream; the char/word CNN adds stream 1 for words. forward() caches the
/// activations backward() consumes, so passes on one instance are serial.
template <class S>
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual BackboneKind kind() const = 0;
    virtual int num_streams() const = 0;
    virtual std::vector<nn::Embedding<S>*> embeddings() = 0;
    virtual std::vector<nn::Tensor<S>*> classifier_params() = 0;

    /// Embedded streams -> class probabilities (K x batch). Dropout is active
    /// only when train is set, drawing from rng.
    virtual nn::Mat<S> forward(const std::vector<nn::Mat<S>>& x,
                               const std::vector<nn::Ranges>& ranges, bool train,
                               nn::Rng* rng) = 0;

    /// dlogits = probs - targets (K x batch). Fills per-stream embedding
    /// gradients into dx when given.
    virtual void backward(const nn::Mat<S>& dlogits, bool param_grads,
                          std::vector<nn::Mat<S>>* dx) = 0;
};

template <class S>
class CharWordCnn final : public Backbone<S> {
public:
    CharWordCnn(const BackboneConfig& cfg, int char_vocab, int word_vocab, nn::Rng rng)
        : cfg_(cfg) {
        emb_char_.init("embed_char.table", cfg.embedding_dim, char_vocab, rng);
        emb_word_.init("embed_word.table", cfg.embedding_dim, word_vocab, rng);
        for (int w : cfg.char_kernels) {
            char_convs_.emplace_back();
            char_convs_.back().init("char_conv" + std::to_string(w), w, cfg.embedding_dim,
                                    cfg.channels, rng);
        }
        for (int w : cfg.word_kernels) {
            word_convs_.emplace_back();
            word_convs_.back().init("word_conv" + std::to_string(w), w, cfg.embedding_dim,
                                    cfg.channels, rng);
        }
        const int feat = cfg.channels * int(cfg.char_kernels.size() + cfg.word_kernels.size());
        head_.init("head", feat, cfg.num_classes, rng);
        drop_.rate = cfg.dropout;
    }

    BackboneKind kind() const override { return BackboneKind::char_word_cnn; }
    int num_streams() const override { return 2; }

    std::vector<nn::Embedding<S>*> embeddings() override { return {&emb_char_, &emb_word_}; }

    std::vector<nn::Tensor<S>*> classifier_params() override {
        std::vector<nn::Tensor<S>*> out;
        for (auto& c : char_convs_) {
            out.push_back(&c.W);
            out.push_back(&c.b);
        }
        for (auto& c : word_convs_) {
            out.push_back(&c.W);
            out.push_back(&c.b);
        }
        out.push_back(&head_.W);
        out.push_back(&head_.b);
        return out;
    }

    nn::Mat<S> forward(const std::vector<nn::Mat<S>>& x, const std::vector<nn::Ranges>& ranges,
                       bool train, nn::Rng* rng) override {
        ranges_ = ranges;
        const int B = ranges[0].batch();
        const int C = cfg_.channels;
        char_caches_.assign(char_convs_.size(), {});
        word_caches_.assign(word_convs_.size(), {});
        features_.resize(C * Eigen::Index(char_convs_.size() + word_convs_.size()), B);
        Eigen::Index row = 0;
        for (size_t i = 0; i < char_convs_.size(); ++i, row += C)
            features_.middleRows(row, C) =
                char_convs_[i].forward(x[0], ranges[0], char_caches_[i]);
        for (size_t i = 0; i < word_convs_.size(); ++i, row += C)
            features_.middleRows(row, C) =
                word_convs_[i].forward(x[1], ranges[1], word_caches_[i]);
        dropped_ = drop_.forward(features_, train, rng, drop_cache_);
        return nn::softmax_columns(head_.forward(dropped_));
    }

    void backward(const nn::Mat<S>& dlogits, bool param_grads,
                  std::vector<nn::Mat<S>>* dx) override {
        nn::Mat<S> dfeat = drop_.backward(head_.backward(dropped_, dlogits, param_grads),
                                          drop_cache_);
        if (dx) {
            dx->assign(2, nn::Mat<S>());
            (*dx)[0].setZero(cfg_.embedding_dim, ranges_[0].total());
            (*dx)[1].setZero(cfg_.embedding_dim, ranges_[1].total());
        }
        const int C = cfg_.channels;
        Eigen::Index row = 0;
        for (size_t i = 0; i < char_convs_.size(); ++i, row += C)
            char_convs_[i].backward(dfeat.middleRows(row, C), ranges_[0], char_caches_[i],
                                    param_grads, dx ? &(*dx)[0] : nullptr);
        for (size_t i = 0; i < word_convs_.size(); ++i, row += C)
            word_convs_[i].backward(dfeat.middleRows(row, C), ranges_[1], word_caches_[i],
                                    param_grads, dx ? &(*dx)[1] : nullptr);
    }

private:
    BackboneConfig cfg_;
    nn::Embedding<S> emb_char_, emb_word_;
    std::vector<nn::ConvMaxPool<S>> char_convs_, word_convs_;
    nn::Dense<S> head_;
    nn::Dropout<S> drop_;

    std::vector<typename nn::ConvMaxPool<S>::Cache> char_caches_, word_caches_;
    typename nn::Dropout<S>::Cache drop_cache_;
    nn::Mat<S> features_, dropped_;
    std::vector<nn::Ranges> ranges_;
};

template <class S>
class GatedCnn final : public Backbone<S> {
public:
    GatedCnn(const BackboneConfig& cfg, int char_vocab, nn::Rng rng) : cfg_(cfg) {
        emb_.init("embed_char.table", cfg.embedding_dim, char_vocab, rng);
        conv_.init("gated_conv", cfg.gated_width, cfg.embedding_dim, cfg.channels, rng);
        head_.init("head", cfg.channels, cfg.num_classes, rng);
        drop_.rate = cfg.dropout;
    }

    BackboneKind kind() const override { return BackboneKind::gated_cnn; }
    int num_streams() const override { return 1; }
    std::vector<nn::Embedding<S>*> embeddings() override { return {&emb_}; }

    std::vector<nn::Tensor<S>*> classifier_params() override {
        return {&conv_.Wa, &conv_.ba, &conv_.Wb, &conv_.bb, &head_.W, &head_.b};
    }

    nn::Mat<S> forward(const std::vector<nn::Mat<S>>& x, const std::vector<nn::Ranges>& ranges,
                       bool train, nn::Rng* rng) override {
        ranges_ = ranges;
        pooled_ = conv_.forward(x[0], ranges[0], conv_cache_);
        dropped_ = drop_.forward(pooled_, train, rng, drop_cache_);
        return nn::softmax_columns(head_.forward(dropped_));
    }

    void backward(const nn::Mat<S>& dlogits, bool param_grads,
                  std::vector<nn::Mat<S>>* dx) override {
        nn::Mat<S> dpooled = drop_.backward(head_.backward(dropped_, dlogits, param_grads),
                                            drop_cache_);
        if (dx) {
            dx->assign(1, nn::Mat<S>());
            (*dx)[0].setZero(cfg_.embedding_dim, ranges_[0].total());
        }
        conv_.backward(dpooled, ranges_[0], conv_cache_, param_grads, dx ? &(*dx)[0] : nullptr);
    }

private:
    BackboneConfig cfg_;
    nn::Embedding<S> emb_;
    nn::GatedConvPool<S> conv_;
    nn::Dense<S> head_;
    nn::Dropout<S> drop_;

    typename nn::GatedConvPool<S>::Cache conv_cache_;
    typename nn::Dropout<S>::Cache drop_cache_;
    nn::Mat<S> pooled_, dropped_;
    std::vector<nn::Ranges> ranges_;
};

template <class S>
class LstmNet final : public Backbone<S> {
public:
    LstmNet(const BackboneConfig& cfg, int char_vocab, nn::Rng rng) : cfg_(cfg) {
        emb_.init("embed_char.table", cfg.embedding_dim, char_vocab, rng);
        lstm_.init("lstm", cfg.embedding_dim, cfg.lstm_hidden, rng);
        head_.init("head", cfg.lstm_hidden, cfg.num_classes, rng);
        drop_.rate = cfg.dropout;
    }

    BackboneKind kind() const override { return BackboneKind::lstm; }
    int num_streams() const override { return 1; }
    std::vector<nn::Embedding<S>*> embeddings() override { return {&emb_}; }

    std::vector<nn::Tensor<S>*> classifier_params() override {
        return {&lstm_.Wx, &lstm_.Wh, &lstm_.b, &head_.W, &head_.b};
    }

    nn::Mat<S> forward(const std::vector<nn::Mat<S>>& x, const std::vector<nn::Ranges>& ranges,
                       bool train, nn::Rng* rng) override {
        ranges_ = ranges;
        pooled_ = lstm_.forward(x[0], ranges[0], lstm_cache_);
        dropped_ = drop_.forward(pooled_, train, rng, drop_cache_);
        return nn::softmax_columns(head_.forward(dropped_));
    }

    void backward(const nn::Mat<S>& dlogits, bool param_grads,
                  std::vector<nn::Mat<S>>* dx) override {
        nn::Mat<S> dpooled = drop_.backward(head_.backward(dropped_, dlogits, param_grads),
                                            drop_cache_);
        if (dx) {
            dx->assign(1, nn::Mat<S>());
            (*dx)[0].setZero(cfg_.embedding_dim, ranges_[0].total());
        }
        lstm_.backward(dpooled, ranges_[0], lstm_cache_, param_grads, dx ? &(*dx)[0] : nullptr);
    }

private:
    BackboneConfig cfg_;
    nn::Embedding<S> emb_;
    nn::LstmMaxPool<S> lstm_;
    nn::Dense<S> head_;
    nn::Dropout<S> drop_;

    typename nn::LstmMaxPool<S>::Cache lstm_cache_;
    typename nn::Dropout<S>::Cache drop_cache_;
    nn::Mat<S> pooled_, dropped_;
    std::vector<nn::Ranges> ranges_;
};

/// Backbone plus one bias predictor per embedded stream. Parameter groups
/// (theta_e, theta_c, theta_b) are exposed separately because the adversarial
/// trainer steps them with separate optimizers.
template <class S>
struct Model {
    BackboneConfig config;
    std::unique_ptr<Backbone<S>> net;
    std::vector<nn::BiasPredictor<S>> bias_heads;

    std::vector<nn::Tensor<S>*> embedding_params() {
        std::vector<nn::Tensor<S>*> out;
        for (auto* e : net->embeddings()) out.push_back(&e->table);
        return out;
    }
    std::vector<nn::Tensor<S>*> classifier_params() { return net->classifier_params(); }
    std::vector<nn::Tensor<S>*> bias_params() {
        std::vector<nn::Tensor<S>*> out;
        for (auto& h : bias_heads)
            for (auto* t : h.params()) out.push_back(t);
        return out;
    }
    std::vector<nn::Tensor<S>*> all_params() {
        auto out = embedding_params();
        for (auto* t : classifier_params()) out.push_back(t);
        for (auto* t : bias_params()) out.push_back(t);
        return out;
    }

    /// Streams consumed by this backbone, in stream order.
    std::vector<TokenMode> stream_modes() const {
        if (config.kind == BackboneKind::char_word_cnn)
            return {TokenMode::chars, TokenMode::words};
        return {TokenMode::chars};
    }

    /// Minimum packed length per stream.
    std::vector<int> stream_min_lens() const {
        if (config.kind == BackboneKind::char_word_cnn)
            return {config.min_char_len(), config.min_word_len()};
        return {config.min_char_len()};
    }

    /// Pack and embed one stream for a batch of samples.
    nn::PackedIds pack(const std::vector<const TokenizedSample*>& batch, int stream) const {
        return nn::pack_ids(batch, stream_modes()[stream], stream_min_lens()[stream]);
    }
};

/// Batched inference: class probabilities (K x N) for a list of samples.
/// Dropout is off; forward caches inside the model make this non-reentrant.
template <class S>
inline nn::Mat<S> predict_probs(Model<S>& m, const std::vector<const TokenizedSample*>& samples,
                                int batch_size = 256) {
    const int n = int(samples.size());
    nn::Mat<S> out(m.config.num_classes, n);
    for (int start = 0; start < n; start += batch_size) {
        const int count = std::min(batch_size, n - start);
        std::vector<const TokenizedSample*> chunk(samples.begin() + start,
                                                  samples.begin() + start + count);
        std::vector<nn::Mat<S>> x;
        std::vector<nn::Ranges> ranges;
        auto emb = m.net->embeddings();
        for (int st = 0; st < m.net->num_streams(); ++st) {
            auto packed = m.pack(chunk, st);
            x.push_back(emb[st]->forward(packed));
            ranges.push_back(packed.ranges);
        }
        out.middleCols(start, count) = m.net->forward(x, ranges, false, nullptr);
    }
    return out;
}

/// Build a model with deterministic parameter init. Distinct seed streams for
/// the backbone and the bias heads keep backbone init identical across
/// debiasing modes.
template <class S>
inline Model<S> make_model(const BackboneConfig& cfg, int char_vocab, int word_vocab,
                           uint64_t seed) {
    cfg.validate();
    Model<S> m;
    m.config = cfg;
    nn::Rng root(seed);
    nn::Rng net_rng = root.fork(1);
    nn::Rng bias_rng = root.fork(2);
    switch (cfg.kind) {
        case BackboneKind::char_word_cnn:
            m.net = std::make_unique<CharWordCnn<S>>(cfg, char_vocab, word_vocab, net_rng);
            break;
        case BackboneKind::gated_cnn:
            m.net = std::make_unique<GatedCnn<S>>(cfg, char_vocab, net_rng);
            break;
        case BackboneKind::lstm:
            m.net = std::make_unique<LstmNet<S>>(cfg, char_vocab, net_rng);
            break;
    }
    const int streams = m.net->num_streams();
    m.bias_heads.resize(streams);
    for (int s = 0; s < streams; ++s)
        m.bias_heads[s].init("bias_head" + std::to_string(s), cfg.embedding_dim, cfg.bias_hidden1,
                             cfg.bias_hidden2, cfg.num_classes, bias_rng);
    return m;
}

}  // namespace urlbias
