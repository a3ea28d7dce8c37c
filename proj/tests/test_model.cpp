// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "urlbias/model.hpp"

using namespace urlbias;
using nn::Mat;
using nn::Rng;
using Catch::Approx;

namespace {

TokenizedSample sample_of(std::vector<int32_t> char_ids, std::vector<int32_t> word_ids,
                          int label) {
    TokenizedSample s;
    s.char_ids = std::move(char_ids);
    s.word_ids = std::move(word_ids);
    for (auto id : s.char_ids) s.char_text.push_back(id == kPadId ? kPadToken : "c");
    for (auto id : s.word_ids) s.word_text.push_back(id == kPadId ? kPadToken : "w");
    s.label = label;
    return s;
}

BackboneConfig tiny_config(BackboneKind kind) {
    BackboneConfig cfg;
    cfg.kind = kind;
    cfg.embedding_dim = 4;
    cfg.channels = 3;
    cfg.char_kernels = {2, 3};
    cfg.word_kernels = {1, 2};
    cfg.gated_width = 3;
    cfg.lstm_hidden = 5;
    cfg.dropout = 0.0;
    cfg.max_chars = 8;
    cfg.max_words = 4;
    cfg.bias_hidden1 = 4;
    cfg.bias_hidden2 = 4;
    return cfg;
}

std::vector<TokenizedSample> tiny_batch() {
    return {
        sample_of({2, 3, 4, 5, 2, 3, kPadId, kPadId}, {2, 3, kPadId, kPadId}, 1),
        sample_of({5, 4, 3, 2, kPadId, kPadId, kPadId, kPadId}, {3, 4, 2, kPadId}, 0),
        sample_of({2, 2, 6, 6, 5, 3, 4, 2}, {4, kPadId, kPadId, kPadId}, 1),
    };
}

/// Test harness bundling a model with a fixed batch and the classification
/// loss as a scalar function of all parameters.
template <class S>
struct Harness {
    Model<S> model;
    std::vector<const TokenizedSample*> batch;
    std::vector<nn::PackedIds> packed;
    std::vector<nn::Ranges> ranges;
    std::vector<int> labels;

    Harness(BackboneKind kind, const std::vector<TokenizedSample>& samples, uint64_t seed = 7)
        : model(make_model<S>(tiny_config(kind), 8, 6, seed)) {
        for (const auto& s : samples) {
            batch.push_back(&s);
            labels.push_back(s.label);
        }
        const int streams = model.net->num_streams();
        for (int st = 0; st < streams; ++st) {
            packed.push_back(model.pack(batch, st));
            ranges.push_back(packed.back().ranges);
        }
    }

    std::vector<Mat<S>> embed() const {
        std::vector<Mat<S>> x;
        auto emb = const_cast<Model<S>&>(model).net->embeddings();
        for (size_t st = 0; st < packed.size(); ++st) x.push_back(emb[st]->forward(packed[st]));
        return x;
    }

    Mat<S> forward() { return model.net->forward(embed(), ranges, false, nullptr); }

    /// Nudge every parameter off its init point. Zero-initialized biases put
    /// PAD-window activations exactly on the ReLU kink, where the central
    /// difference straddles the nondifferentiable point.
    void perturb_params(Rng& rng) {
        for (auto* t : model.all_params())
            for (Eigen::Index c = 0; c < t->w.cols(); ++c)
                for (Eigen::Index r = 0; r < t->w.rows(); ++r)
                    t->w(r, c) += S(0.05 * rng.normal());
        for (auto* t : model.embedding_params()) t->w.col(kPadId).setZero();
    }

    double class_loss() {
        Mat<S> probs = forward();
        double loss = 0.0;
        for (int i = 0; i < int(labels.size()); ++i) {
            nn::Vec<S> y = nn::Vec<S>::Zero(probs.rows());
            y[labels[i]] = S(1);
            loss += nn::cross_entropy<S>(y, probs.col(i));
        }
        return loss / double(labels.size());
    }

    /// Analytic gradients of class_loss into every parameter tensor.
    void backward_class_loss() {
        for (auto* t : model.all_params()) t->zero_grad();
        Mat<S> probs = forward();
        Mat<S> dlogits = probs;
        for (int i = 0; i < int(labels.size()); ++i) dlogits(labels[i], i) -= S(1);
        dlogits /= S(labels.size());
        std::vector<Mat<S>> dx;
        model.net->backward(dlogits, true, &dx);
        auto emb = model.net->embeddings();
        for (size_t st = 0; st < packed.size(); ++st) emb[st]->backward(packed[st], dx[st]);
    }
};

}  // namespace

TEST_CASE("embedding lookup returns table rows and zero for PAD") {
    Rng rng(3);
    nn::Embedding<double> emb;
    emb.init("e", 4, 6, rng);
    CHECK(emb.table.w.col(kPadId).norm() == 0.0);

    TokenizedSample s = sample_of({3, kPadId, 5}, {2}, 0);
    auto packed = nn::pack_ids({&s}, TokenMode::chars, 3);
    auto x = emb.forward(packed);
    REQUIRE(x.rows() == 4);
    REQUIRE(x.cols() == 3);
    CHECK((x.col(0) - emb.table.w.col(3)).norm() == 0.0);
    CHECK(x.col(1).norm() == 0.0);  // PAD position embeds to zero
}

TEST_CASE("packing trims trailing padding but keeps kernel-width positions") {
    TokenizedSample s = sample_of({2, 3, kPadId, kPadId, kPadId}, {2, kPadId}, 0);
    auto packed = nn::pack_ids({&s}, TokenMode::chars, 4);
    CHECK(packed.ranges.length(0) == 4);  // 2 real + 2 PAD to reach min length
    auto packed1 = nn::pack_ids({&s}, TokenMode::chars, 1);
    CHECK(packed1.ranges.length(0) == 2);

    TokenizedSample all_pad = sample_of({kPadId, kPadId}, {kPadId}, 0);
    auto packed2 = nn::pack_ids({&all_pad}, TokenMode::chars, 3);
    CHECK(packed2.ranges.length(0) == 3);
}

TEST_CASE("classify outputs a probability distribution for every backbone") {
    auto samples = tiny_batch();
    for (auto kind : {BackboneKind::char_word_cnn, BackboneKind::gated_cnn, BackboneKind::lstm}) {
        Harness<double> h(kind, samples);
        auto probs = h.forward();
        REQUIRE(probs.rows() == 2);
        REQUIRE(probs.cols() == 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(probs.col(i).sum() == Approx(1.0).margin(1e-6));
            CHECK(probs.col(i).minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("all-PAD input produces a finite learned prior") {
    std::vector<TokenizedSample> samples = {
        sample_of(std::vector<int32_t>(8, kPadId), std::vector<int32_t>(4, kPadId), 0)};
    for (auto kind : {BackboneKind::char_word_cnn, BackboneKind::gated_cnn, BackboneKind::lstm}) {
        Harness<double> h(kind, samples);
        auto probs = h.forward();
        REQUIRE(probs.allFinite());
        CHECK(probs.col(0).sum() == Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("backbone gradients match central finite differences") {
    auto samples = tiny_batch();
    Rng noise(123);
    for (auto kind : {BackboneKind::char_word_cnn, BackboneKind::gated_cnn, BackboneKind::lstm}) {
        Harness<double> h(kind, samples);
        h.perturb_params(noise);
        h.backward_class_loss();
        auto loss = [&] { return h.class_loss(); };

        auto res_c = testing::check_tensors(h.model.classifier_params(), loss);
        INFO("classifier " << to_string(kind) << " worst: " << res_c.worst);
        CHECK(res_c.max_rel < 1e-3);

        auto res_e = testing::check_tensors(h.model.embedding_params(), loss, 1e-6, kPadId);
        INFO("embedding " << to_string(kind) << " worst: " << res_e.worst);
        CHECK(res_e.max_rel < 1e-3);
        REQUIRE(res_c.checked + res_e.checked > 50);
    }
}

TEST_CASE("bias predictor is a per-position distribution and position independent") {
    Rng rng(9);
    nn::BiasPredictor<double> head;
    head.init("bh", 4, 4, 4, 2, rng);
    Mat<double> x(4, 3);
    x.col(0) << 0.1, -0.2, 0.3, 0.4;
    x.col(1) << 0.5, 0.5, -0.5, 0.0;
    x.col(2) = x.col(0);  // identical position
    typename nn::BiasPredictor<double>::Cache cache;
    auto probs = head.forward(x, cache);
    for (int j = 0; j < 3; ++j) CHECK(probs.col(j).sum() == Approx(1.0).margin(1e-6));
    CHECK((probs.col(0) - probs.col(2)).norm() == 0.0);
}

TEST_CASE("bias predictor gradients (parameters and inputs) match finite differences") {
    Rng rng(21);
    nn::BiasPredictor<double> head;
    head.init("bh", 4, 4, 4, 2, rng);

    nn::Embedding<double> emb;
    emb.init("e", 4, 7, rng);
    TokenizedSample s = sample_of({2, 4, 6, kPadId}, {2}, 1);
    auto packed = nn::pack_ids({&s}, TokenMode::chars, 4);

    // soft targets with a masked PAD position
    Mat<double> targets(2, 4);
    targets << 1.0, 0.3, 0.0, 0.5,
               0.0, 0.7, 1.0, 0.5;
    std::vector<uint8_t> mask = {1, 1, 1, 0};
    const double n_masked = 3.0;

    auto loss = [&] {
        typename nn::BiasPredictor<double>::Cache cache;
        auto probs = head.forward(emb.forward(packed), cache);
        double out = 0.0;
        for (int j = 0; j < 4; ++j) {
            if (!mask[j]) continue;
            out += nn::cross_entropy<double>(nn::Vec<double>(targets.col(j)),
                                             nn::Vec<double>(probs.col(j)));
        }
        return out / n_masked;
    };

    for (auto* t : head.params()) t->zero_grad();
    emb.table.zero_grad();
    typename nn::BiasPredictor<double>::Cache cache;
    auto probs = head.forward(emb.forward(packed), cache);
    Mat<double> dlogits = Mat<double>::Zero(2, 4);
    for (int j = 0; j < 4; ++j)
        if (mask[j]) dlogits.col(j) = (probs.col(j) - targets.col(j)) / n_masked;
    Mat<double> dx = head.backward(cache, dlogits, true);
    emb.backward(packed, dx);

    auto res_p = testing::check_tensors(head.params(), loss);
    INFO("bias head params worst: " << res_p.worst);
    CHECK(res_p.max_rel < 1e-3);
    auto res_e = testing::check_tensors({&emb.table}, loss, 1e-6, kPadId);
    INFO("bias head embeddings worst: " << res_e.worst);
    CHECK(res_e.max_rel < 1e-3);
}

TEST_CASE("gradient reversal is the identity forward and -lambda backward") {
    nn::GradientReversal<double> grl{0.5};
    Mat<double> v(2, 2);
    v << 1.0, -2.0, 3.5, 0.0;
    CHECK((grl.forward(v) - v).norm() == 0.0);

    // composite h(x) = g(grl(x)) where g is a softplus of a linear map
    nn::Vec<double> w(3);
    w << 0.7, -1.3, 0.4;
    nn::Vec<double> x(3);
    x << 0.2, 0.5, -0.1;
    auto g_of = [&](const nn::Vec<double>& v_in) {
        double z = w.dot(v_in);
        return std::log1p(std::exp(z));
    };
    auto h_of = [&] { return g_of(grl.forward(x)); };

    // analytic: dh/dx = grl.backward(dg/dv)
    double z = w.dot(x);
    nn::Vec<double> dg = w * (1.0 / (1.0 + std::exp(-z)));
    Mat<double> dh = grl.backward(Mat<double>(dg));
    // the reversal propagates minus lambda times the true derivative of g
    for (int i = 0; i < 3; ++i) {
        double numeric = testing::central_diff(x[i], h_of, 1e-5);
        CHECK(dh(i, 0) == Approx(-0.5 * numeric).epsilon(1e-4));
        CHECK(dh(i, 0) == Approx(-0.5 * dg[i]).margin(1e-12));
    }

    nn::GradientReversal<double> off{0.0};
    CHECK(off.backward(Mat<double>(dg)).norm() == 0.0);
}

TEST_CASE("each backbone overfits a two-record fixture") {
    std::vector<TokenizedSample> samples = {
        sample_of({2, 3, 2, 3, 2, 3, kPadId, kPadId}, {2, 2, kPadId, kPadId}, 1),
        sample_of({4, 5, 4, 5, 4, 5, kPadId, kPadId}, {3, 4, kPadId, kPadId}, 0),
    };
    for (auto kind : {BackboneKind::char_word_cnn, BackboneKind::gated_cnn, BackboneKind::lstm}) {
        Harness<double> h(kind, samples, 11);
        nn::AdamConfig<double> opt_cfg;
        opt_cfg.lr = 1e-2;
        auto params = h.model.all_params();
        std::vector<nn::Tensor<double>*> trainable = h.model.embedding_params();
        for (auto* t : h.model.classifier_params()) trainable.push_back(t);
        nn::Adam<double> opt(trainable, opt_cfg);
        for (int step = 0; step < 200; ++step) {
            h.backward_class_loss();
            opt.step();
        }
        auto probs = h.forward();
        int correct = 0;
        for (int i = 0; i < 2; ++i) {
            int pred = probs(1, i) >= 0.5 ? 1 : 0;
            correct += pred == h.labels[i];
        }
        INFO("backbone " << to_string(kind));
        CHECK(correct == 2);
    }
}

TEST_CASE("forward passes are deterministic at evaluation") {
    auto samples = tiny_batch();
    Harness<double> a(BackboneKind::char_word_cnn, samples, 5);
    Harness<double> b(BackboneKind::char_word_cnn, samples, 5);
    CHECK((a.forward() - b.forward()).norm() == 0.0);
}
