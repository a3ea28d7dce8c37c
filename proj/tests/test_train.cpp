// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "urlbias/train.hpp"

using namespace urlbias;
using Catch::Approx;

namespace {

BackboneConfig small_config(BackboneKind kind = BackboneKind::char_word_cnn) {
    BackboneConfig cfg;
    cfg.kind = kind;
    cfg.embedding_dim = 8;
    cfg.channels = 4;
    cfg.char_kernels = {2, 3};
    cfg.word_kernels = {1, 2};
    cfg.gated_width = 3;
    cfg.lstm_hidden = 8;
    cfg.dropout = 0.1;
    cfg.max_chars = 48;
    cfg.max_words = 12;
    cfg.bias_hidden1 = 8;
    cfg.bias_hidden2 = 8;
    return cfg;
}

/// Linearly separable fixture: the path words differ cleanly by class.
Corpus separable_corpus(int n) {
    Corpus c;
    c.tag = SplitTag::train;
    for (int i = 0; i < n; ++i) {
        const std::string host = "http://site" + std::to_string(i % 5) + ".com/";
        if (i % 2 == 0)
            c.records.push_back({host + "home/welcome" + std::to_string(i % 3), 0, std::nullopt, ""});
        else
            c.records.push_back({host + "payload/inject" + std::to_string(i % 3), 1, std::nullopt, ""});
    }
    return c;
}

std::filesystem::path temp_dir(const char* name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("classification loss closed forms") {
    std::vector<double> y10{1.0, 0.0}, y01{0.0, 1.0};
    CHECK(classification_loss(y10, std::vector<double>{1.0, 0.0}) == 0.0);
    CHECK(classification_loss(y10, std::vector<double>{0.5, 0.5}) ==
          Approx(std::log(2.0)).margin(1e-12));
    CHECK(classification_loss(y01, std::vector<double>{0.9, 0.1}) ==
          Approx(-std::log(0.1)).margin(1e-12));
    // clamped at 1e-12 rather than diverging
    CHECK(classification_loss(y01, std::vector<double>{1.0, 0.0}) ==
          Approx(-std::log(1e-12)).margin(1e-9));
}

TEST_CASE("bias loss equals mean target entropy at its minimum") {
    nn::Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 2 + int(rng.below(3)), N = 1 + int(rng.below(6));
        MatF targets(K, N);
        for (int j = 0; j < N; ++j) {
            double sum = 0.0;
            for (int k = 0; k < K; ++k) sum += targets(k, j) = float(rng.uniform() + 1e-3);
            targets.col(j) /= float(sum);
        }
        std::vector<uint8_t> mask(N, 1);
        double mean_entropy = 0.0;
        for (int j = 0; j < N; ++j) {
            for (int k = 0; k < K; ++k) {
                double t = targets(k, j);
                mean_entropy -= t * std::log(t);
            }
        }
        mean_entropy /= N;
        CHECK(bias_loss(targets, targets, mask) == Approx(mean_entropy).margin(1e-5));

        // Gibbs: any other prediction does worse
        MatF other(K, N);
        for (int j = 0; j < N; ++j) {
            double sum = 0.0;
            for (int k = 0; k < K; ++k) sum += other(k, j) = float(rng.uniform() + 1e-3);
            other.col(j) /= float(sum);
        }
        CHECK(bias_loss(targets, other, mask) >= mean_entropy - 1e-6);
    }
}

TEST_CASE("bias loss closed form and empty mask") {
    MatF target(2, 1), pred(2, 1);
    target << 1.0f, 0.0f;
    pred << 0.5f, 0.5f;
    std::vector<uint8_t> mask{1};
    CHECK(bias_loss(target, pred, mask) == Approx(std::log(2.0)).margin(1e-6));
    std::vector<uint8_t> none{0};
    CHECK(bias_loss(target, pred, none) == 0.0);
}

TEST_CASE("blindeye confusion loss is minimized by the uniform output") {
    MatF uniform(2, 3);
    uniform.setConstant(0.5f);
    std::vector<uint8_t> mask{1, 1, 1};
    CHECK(blindeye_confusion_loss(uniform, mask) == Approx(std::log(2.0)).margin(1e-6));

    MatF skew(2, 1);
    skew << 0.9f, 0.1f;
    std::vector<uint8_t> one{1};
    CHECK(blindeye_confusion_loss(skew, one) ==
          Approx(-0.5 * (std::log(0.9) + std::log(0.1))).margin(1e-5));
    CHECK(blindeye_confusion_loss(skew, one) > std::log(2.0));

    MatF hot(3, 1);
    hot << 1.0f, 0.0f, 0.0f;
    CHECK(blindeye_confusion_loss(hot, one) > std::log(3.0));
}

TEST_CASE("ade with lambda zero reproduces plain training step for step") {
    auto corpus = separable_corpus(64);
    auto bcfg = small_config();
    TrainConfig plain;
    plain.debias = DebiasMode::none;
    plain.epochs = 2;
    plain.batch_size = 16;
    plain.seed = 99;
    TrainConfig zero = plain;
    zero.debias = DebiasMode::ade;
    zero.lambda = 0.0;

    auto a = train_model(corpus, nullptr, bcfg, plain);
    auto b = train_model(corpus, nullptr, bcfg, zero);
    REQUIRE(a.logs.steps.size() == b.logs.steps.size());
    for (size_t i = 0; i < a.logs.steps.size(); ++i)
        REQUIRE(std::abs(a.logs.steps[i].loss_c - b.logs.steps[i].loss_c) < 1e-6);

    // and the classifier-side weights coincide exactly
    for (size_t i = 0; i < a.weights.size(); ++i) {
        if (a.weights[i].first.rfind("bias_head", 0) == 0) continue;
        INFO(a.weights[i].first);
        REQUIRE((a.weights[i].second - b.weights[i].second).cwiseAbs().maxCoeff() == 0.0f);
    }
}

TEST_CASE("plain mode never touches the bias predictor") {
    auto corpus = separable_corpus(40);
    auto bcfg = small_config(BackboneKind::gated_cnn);
    TrainConfig tcfg;
    tcfg.debias = DebiasMode::none;
    tcfg.epochs = 2;
    tcfg.batch_size = 8;
    tcfg.seed = 5;
    auto ckpt = train_model(corpus, nullptr, bcfg, tcfg);

    // a freshly initialized model with the same seed has identical theta_b
    auto fresh = make_model<Scalar>(bcfg, ckpt.vocab_char.size(), ckpt.vocab_word.size(),
                                    tcfg.seed);
    auto model = build_model(ckpt);
    auto trained = model.bias_params();
    auto untouched = fresh.bias_params();
    REQUIRE(trained.size() == untouched.size());
    for (size_t i = 0; i < trained.size(); ++i)
        REQUIRE((trained[i]->w - untouched[i]->w).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("joint objective bookkeeping matches Lc - lambda*Lb at every step") {
    auto corpus = separable_corpus(48);
    auto bcfg = small_config(BackboneKind::gated_cnn);
    TrainConfig tcfg;
    tcfg.debias = DebiasMode::ade;
    tcfg.lambda = 0.7;
    tcfg.epochs = 2;
    tcfg.batch_size = 12;
    tcfg.seed = 3;
    auto ckpt = train_model(corpus, nullptr, bcfg, tcfg);
    REQUIRE_FALSE(ckpt.logs.steps.empty());
    for (const auto& s : ckpt.logs.steps)
        REQUIRE(s.joint == Approx(s.loss_c - tcfg.lambda * s.loss_b).margin(1e-9));
}

TEST_CASE("bias-predictor fit step does not increase the bias loss") {
    auto corpus = separable_corpus(32);
    auto bcfg = small_config();
    auto vocab_char = build_vocab(corpus, TokenMode::chars);
    auto vocab_word = build_vocab(corpus, TokenMode::words);
    auto bias_char = build_bias_matrix(vocab_char);
    auto bias_word = build_bias_matrix(vocab_word);
    auto samples = encode_corpus(corpus, vocab_char, vocab_word, bcfg);

    TrainConfig tcfg;
    tcfg.debias = DebiasMode::ade;
    tcfg.lambda = 0.0;   // isolate sub-step 2: no adversarial update on theta_e
    tcfg.bias_lr = 1e-4; // small fitting step
    tcfg.seed = 8;
    auto model = make_model<Scalar>(bcfg, vocab_char.size(), vocab_word.size(), tcfg.seed);
    Trainer trainer(model, {&bias_char, &bias_word}, tcfg);

    std::vector<const TokenizedSample*> batch;
    for (size_t i = 0; i < 16; ++i) batch.push_back(&samples[i]);
    for (int it = 0; it < 5; ++it) {
        auto log = trainer.step(batch);
        // loss_b re-evaluates the same batch and embeddings after the
        // theta_b update of sub-step 2
        REQUIRE(log.loss_b <= log.loss_b_fit + 1e-7);
    }
}

TEST_CASE("training is deterministic under a fixed seed") {
    auto corpus = separable_corpus(60);
    SplitResult sr = split(corpus, SplitSpec::random(1, 0.8));
    auto bcfg = small_config(BackboneKind::lstm);
    TrainConfig tcfg;
    tcfg.debias = DebiasMode::ade;
    tcfg.epochs = 2;
    tcfg.batch_size = 16;
    tcfg.seed = 77;

    auto a = train_model(sr.train, &sr.test, bcfg, tcfg);
    auto b = train_model(sr.train, &sr.test, bcfg, tcfg);
    REQUIRE(a.logs.steps.size() == b.logs.steps.size());
    for (size_t i = 0; i < a.logs.steps.size(); ++i) {
        REQUIRE(a.logs.steps[i].loss_c == b.logs.steps[i].loss_c);
        REQUIRE(a.logs.steps[i].loss_b == b.logs.steps[i].loss_b);
    }
    for (size_t i = 0; i < a.weights.size(); ++i)
        REQUIRE((a.weights[i].second - b.weights[i].second).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("plain training separates an easy fixture within 50 epochs") {
    auto corpus = separable_corpus(100);
    auto sr = split(corpus, SplitSpec::random(2, 0.8));
    auto bcfg = small_config();
    TrainConfig tcfg;
    tcfg.debias = DebiasMode::none;
    tcfg.epochs = 50;
    tcfg.batch_size = 16;
    tcfg.seed = 1;
    auto ckpt = train_model(sr.train, &sr.test, bcfg, tcfg);
    CHECK(ckpt.best_val == 1.0);
    // reaches a perfect ranking well before the epoch cap
    bool early = false;
    for (const auto& e : ckpt.logs.epochs)
        if (e.epoch <= 50 && e.val_metric == 1.0) early = true;
    CHECK(early);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    auto corpus = separable_corpus(40);
    auto bcfg = small_config();
    TrainConfig tcfg;
    tcfg.debias = DebiasMode::ade;
    tcfg.epochs = 2;
    tcfg.batch_size = 10;
    tcfg.seed = 13;
    auto dir = temp_dir("urlbias_ckpt_test");
    auto ckpt = train_model(corpus, nullptr, bcfg, tcfg, dir);

    auto loaded = load_checkpoint(dir);
    CHECK(loaded.config.embedding_dim == bcfg.embedding_dim);
    CHECK(loaded.train_config.lambda == tcfg.lambda);
    CHECK(loaded.vocab_char.tokens == ckpt.vocab_char.tokens);
    CHECK(loaded.vocab_word.class_counts == ckpt.vocab_word.class_counts);
    REQUIRE(loaded.weights.size() == ckpt.weights.size());

    auto m1 = build_model(ckpt);
    auto m2 = build_model(loaded);
    auto samples = encode_corpus(corpus, ckpt.vocab_char, ckpt.vocab_word, bcfg);
    std::vector<const TokenizedSample*> ptrs;
    for (size_t i = 0; i < 8; ++i) ptrs.push_back(&samples[i]);
    MatF p1 = predict_probs(m1, ptrs);
    MatF p2 = predict_probs(m2, ptrs);
    REQUIRE((p1 - p2).cwiseAbs().maxCoeff() == 0.0f);

    // bias matrix artifact exists and holds both streams
    std::ifstream bm(dir / "bias_matrix.tsv");
    REQUIRE(bm.good());
    std::string line;
    std::getline(bm, line);
    REQUIRE(line.rfind("# num_classes=2", 0) == 0);
}

TEST_CASE("divergent training aborts with the checkpoint retained") {
    auto corpus = separable_corpus(24);
    auto bcfg = small_config(BackboneKind::gated_cnn);
    TrainConfig tcfg;
    tcfg.debias = DebiasMode::none;
    tcfg.epochs = 3;
    tcfg.batch_size = 8;
    tcfg.seed = 2;
    tcfg.classifier_lr = 1e22;  // guaranteed blow-up
    tcfg.embedding_lr = 1e22;
    auto dir = temp_dir("urlbias_diverge_test");
    REQUIRE_THROWS_AS(train_model(corpus, nullptr, bcfg, tcfg, dir), Error);
    // the best snapshot so far was still written
    REQUIRE(std::filesystem::exists(dir / "weights.bin"));
    auto loaded = load_checkpoint(dir);
    auto model = build_model(loaded);
    REQUIRE_FALSE(loaded.weights.empty());
}
