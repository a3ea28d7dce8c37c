// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#include <catch2/catch_amalgamated.hpp>

#include "urlbias/eval.hpp"
#include "urlbias/interpret.hpp"
#include "urlbias/train.hpp"

using namespace urlbias;
using nn::Mat;
using Catch::Approx;

namespace {

/// F(x) = sum(w .* x) over a single stream; constant gradient w.
class LinearTarget final : public EmbeddedTarget<double> {
public:
    explicit LinearTarget(Mat<double> w) : w_(std::move(w)) {}
    double value_and_grad(const std::vector<Mat<double>>& x,
                          std::vector<Mat<double>>& grads) override {
        grads.assign(1, w_);
        return w_.cwiseProduct(x[0]).sum();
    }

private:
    Mat<double> w_;
};

struct TrainedFixture {
    Checkpoint ckpt;
    Model<Scalar> model;
    std::vector<TokenizedSample> samples;
};

TrainedFixture& trained_fixture() {
    static TrainedFixture* fix = [] {
        Corpus corpus;
        corpus.tag = SplitTag::train;
        for (int i = 0; i < 80; ++i) {
            const std::string host = "http://site" + std::to_string(i % 7) + ".com/";
            if (i % 2 == 0)
                corpus.records.push_back({host + "home/welcome" + std::to_string(i % 4), 0,
                                          std::nullopt, ""});
            else
                corpus.records.push_back({host + "payload/inject" + std::to_string(i % 4), 1,
                                          std::nullopt, ""});
        }
        BackboneConfig cfg;
        cfg.kind = BackboneKind::char_word_cnn;
        cfg.embedding_dim = 8;
        cfg.channels = 4;
        cfg.char_kernels = {2, 3};
        cfg.word_kernels = {1, 2};
        cfg.dropout = 0.1;
        cfg.max_chars = 48;
        cfg.max_words = 12;
        cfg.bias_hidden1 = 8;
        cfg.bias_hidden2 = 8;
        TrainConfig tcfg;
        tcfg.debias = DebiasMode::none;
        tcfg.epochs = 20;
        tcfg.batch_size = 16;
        tcfg.seed = 12;
        auto* out = new TrainedFixture{train_model(corpus, nullptr, cfg, tcfg), {}, {}};
        out->model = build_model(out->ckpt);
        out->samples = encode_corpus(corpus, out->ckpt.vocab_char, out->ckpt.vocab_word, cfg);
        return out;
    }();
    return *fix;
}

}  // namespace

TEST_CASE("integrated gradients are exact for a linear model at any step count") {
    nn::Rng rng(2);
    Mat<double> w(3, 5), x(3, 5);
    for (int c = 0; c < 5; ++c)
        for (int r = 0; r < 3; ++r) {
            w(r, c) = rng.normal();
            x(r, c) = rng.normal();
        }
    LinearTarget f(w);
    std::vector<Mat<double>> xs{x}, zero{Mat<double>::Zero(3, 5)};

    for (int steps : {1, 7, 64}) {
        auto ig = integrated_gradients_raw(f, xs, zero, steps);
        REQUIRE((ig[0] - w.cwiseProduct(x)).cwiseAbs().maxCoeff() < 1e-12);
    }
    // completeness is exact in the linear case
    auto ig = integrated_gradients_raw(f, xs, zero, 1);
    CHECK(ig[0].sum() == Approx(f.value(xs)).margin(1e-9));
}

TEST_CASE("integrated gradients vanish when the baseline equals the input") {
    nn::Rng rng(4);
    Mat<double> w(2, 3), x(2, 3);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 2; ++r) {
            w(r, c) = rng.normal();
            x(r, c) = rng.normal();
        }
    LinearTarget f(w);
    std::vector<Mat<double>> xs{x};
    auto ig = integrated_gradients_raw(f, xs, xs, 16);
    CHECK(ig[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("smoothgrad of a linear model equals the exact attribution for any sigma") {
    nn::Rng rng(6);
    Mat<double> w(2, 4), x(2, 4);
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 2; ++r) {
            w(r, c) = rng.normal();
            x(r, c) = rng.normal();
        }
    LinearTarget f(w);
    std::vector<Mat<double>> xs{x}, zero{Mat<double>::Zero(2, 4)};
    for (double sigma : {0.0, 0.5, 3.0}) {
        auto sg = smoothgrad_raw(f, xs, zero, 4, 5, sigma, nn::Rng(11));
        REQUIRE((sg[0] - w.cwiseProduct(x)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("smoothgrad with zero noise and one draw is plain integrated gradients") {
    auto& fix = trained_fixture();
    ExplainOptions plain;
    plain.steps = 16;
    ExplainOptions degenerate = plain;
    degenerate.smooth_n = 1;
    degenerate.sigma = 0.0;
    auto a = explain_sample(fix.model, fix.samples[1], plain);
    auto b = explain_sample(fix.model, fix.samples[1], degenerate);
    REQUIRE(a.size() == b.size());
    for (size_t s = 0; s < a.size(); ++s) {
        REQUIRE(a[s].scores.size() == b[s].scores.size());
        for (size_t i = 0; i < a[s].scores.size(); ++i)
            REQUIRE(a[s].scores[i] == Approx(b[s].scores[i]).margin(1e-12));
    }
}

TEST_CASE("smoothgrad is seed-deterministic and seed-sensitive") {
    auto& fix = trained_fixture();
    ExplainOptions opt;
    opt.steps = 8;
    opt.smooth_n = 1;
    opt.sigma = 0.2;
    opt.seed = 5;
    auto a = explain_sample(fix.model, fix.samples[3], opt);
    auto b = explain_sample(fix.model, fix.samples[3], opt);
    opt.seed = 6;
    auto c = explain_sample(fix.model, fix.samples[3], opt);
    REQUIRE(a[0].scores == b[0].scores);
    CHECK(a[0].scores != c[0].scores);
}

TEST_CASE("two large smoothgrad runs agree within Monte Carlo tolerance") {
    auto& fix = trained_fixture();
    auto& sample = fix.samples[5];
    ExplainOptions opt;
    opt.steps = 4;
    opt.sigma = 0.2;

    // empirical per-element spread of single-draw maps
    std::vector<std::vector<double>> singles;
    for (int k = 0; k < 100; ++k) {
        opt.smooth_n = 1;
        opt.seed = 1000 + uint64_t(k);
        auto maps = explain_sample(fix.model, sample, opt);
        std::vector<double> flat;
        for (const auto& m : maps) flat.insert(flat.end(), m.scores.begin(), m.scores.end());
        singles.push_back(std::move(flat));
    }
    const size_t dim = singles[0].size();
    std::vector<double> sd(dim, 0.0);
    for (size_t j = 0; j < dim; ++j) {
        double mean = 0.0;
        for (const auto& s : singles) mean += s[j] / 100.0;
        for (const auto& s : singles) sd[j] += (s[j] - mean) * (s[j] - mean) / 99.0;
        sd[j] = std::sqrt(sd[j]);
    }

    opt.smooth_n = 500;
    opt.seed = 21;
    auto a = explain_sample(fix.model, sample, opt);
    opt.seed = 22;
    auto b = explain_sample(fix.model, sample, opt);
    std::vector<double> fa, fb;
    for (const auto& m : a) fa.insert(fa.end(), m.scores.begin(), m.scores.end());
    for (const auto& m : b) fb.insert(fb.end(), m.scores.begin(), m.scores.end());
    for (size_t j = 0; j < dim; ++j) {
        const double stderr_diff = sd[j] * std::sqrt(2.0 / 500.0);
        REQUIRE(std::abs(fa[j] - fb[j]) < 3.0 * stderr_diff + 1e-9);
    }
}

TEST_CASE("completeness holds on a trained backbone and tightens with steps") {
    auto& fix = trained_fixture();
    auto probe = [&](const TokenizedSample& sample, int steps, double& rel_gap) {
        const int target = sample.label;
        std::vector<const TokenizedSample*> one{&sample};
        std::vector<nn::Mat<Scalar>> x, zero;
        std::vector<nn::Ranges> ranges;
        auto emb = fix.model.net->embeddings();
        for (int s = 0; s < fix.model.net->num_streams(); ++s) {
            auto packed = fix.model.pack(one, s);
            ranges.push_back(packed.ranges);
            x.push_back(emb[s]->forward(packed));
            zero.push_back(nn::Mat<Scalar>::Zero(x.back().rows(), x.back().cols()));
        }
        ClassProbabilityTarget<Scalar> f(*fix.model.net, ranges, target);
        const double fx = double(f.value(x));
        const double f0 = double(f.value(zero));
        auto ig = integrated_gradients_raw(f, x, zero, steps);
        double total = 0.0;
        for (const auto& m : ig) total += double(m.sum());
        rel_gap = std::abs(total - (fx - f0)) / std::max(std::abs(fx - f0), 1e-9);
        return fx - f0;
    };

    double gap16 = 0.0, gap64 = 0.0, gap256 = 0.0;
    int used = 0;
    for (int i = 0; i < 20; ++i) {
        const auto& sample = fix.samples[i];
        double g16, g64, g256;
        const double delta = probe(sample, 16, g16);
        probe(sample, 64, g64);
        probe(sample, 256, g256);
        REQUIRE(std::abs(delta) > 0.05);  // overfit model is confident
        REQUIRE(g256 <= 1e-2);
        gap16 += g16;
        gap64 += g64;
        gap256 += g256;
        ++used;
    }
    CHECK(used == 20);
    CHECK(gap256 / used <= gap64 / used + 1e-9);
    CHECK(gap64 / used <= gap16 / used + 1e-9);
}

TEST_CASE("PAD positions carry zero attribution") {
    auto& fix = trained_fixture();
    ExplainOptions opt;
    opt.steps = 8;
    // a single-word URL forces PAD extension up to the kernel widths
    UrlRecord tiny{"ab", 1, std::nullopt, ""};
    auto sample = encode(tiny, fix.ckpt.vocab_char, fix.ckpt.vocab_word,
                         fix.ckpt.config.max_chars, fix.ckpt.config.max_words);
    auto maps = explain_sample(fix.model, sample, opt);
    bool saw_pad = false;
    for (const auto& m : maps)
        for (size_t i = 0; i < m.tokens.size(); ++i)
            if (m.tokens[i] == kPadToken) {
                saw_pad = true;
                REQUIRE(m.scores[i] == 0.0);
            }
    CHECK(saw_pad);
}

TEST_CASE("rendering normalizes to the peak score and survives an all-zero map") {
    SensitivityMap map;
    map.stream = "word";
    map.tokens = {"alpha", "beta"};
    map.scores = {0.0, 0.25};
    auto ansi = render_ansi(map);
    CHECK(ansi.find("\x1b[48;2;255;0;0m") != std::string::npos);    // full red peak
    CHECK(ansi.find("\x1b[48;2;255;255;255m") != std::string::npos);  // neutral zero

    SensitivityMap zero = map;
    zero.scores = {0.0, 0.0};
    auto neutral = render_ansi(zero);
    CHECK(neutral.find("48;2;255;255;255") != std::string::npos);
    CHECK(neutral.find("48;2;255;0;0") == std::string::npos);

    auto html = render_html({map});
    CHECK(html.find("rgb(255,0,0)") != std::string::npos);
    CHECK(html.find("alpha") != std::string::npos);
}

TEST_CASE("json rendering round-trips scores to six significant digits") {
    SensitivityMap map;
    map.stream = "char";
    map.tokens = {"a", "b", "c"};
    map.scores = {0.123456789, -4.2e-5, 3.14159265};
    auto j = map_json(map);
    auto text = j.dump();
    auto back = nlohmann::json::parse(text);
    for (size_t i = 0; i < map.scores.size(); ++i) {
        double restored = back["tokens"][i]["score"].get<double>();
        REQUIRE(restored == Approx(map.scores[i]).epsilon(1e-6));
    }
}
