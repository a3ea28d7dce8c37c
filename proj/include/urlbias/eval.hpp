// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "urlbias/metrics.hpp"
#include "urlbias/train.hpp"

namespace urlbias {

/// Malicious-class probability for every record, in corpus order.
inline std::vector<double> score_corpus(Model<Scalar>& model, const Checkpoint& ckpt,
                                        const Corpus& corpus) {
    if (corpus.empty()) throw Error("evaluate: empty corpus");
    if (ckpt.config.num_classes != 2)
        throw Error("evaluate: ranking metrics are defined for binary corpora");
    auto samples = encode_corpus(corpus, ckpt.vocab_char, ckpt.vocab_word, ckpt.config);
    std::vector<const TokenizedSample*> ptrs;
    ptrs.reserve(samples.size());
    for (const auto& s : samples) ptrs.push_back(&s);
    MatF probs = predict_probs(model, ptrs);
    std::vector<double> scores(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) scores[i] = double(probs(1, Eigen::Index(i)));
    return scores;
}

inline MetricsReport evaluate(Model<Scalar>& model, const Checkpoint& ckpt, const Corpus& corpus,
                              std::string split_id = "") {
    auto scores = score_corpus(model, ckpt, corpus);
    std::vector<int> labels;
    labels.reserve(corpus.size());
    for (const auto& r : corpus.records) labels.push_back(r.label);
    return compute_metrics(scores, labels, std::move(split_id));
}

inline MetricsReport evaluate(const Checkpoint& ckpt, const Corpus& corpus,
                              std::string split_id = "") {
    auto model = build_model(ckpt);
    return evaluate(model, ckpt, corpus, std::move(split_id));
}

// ---------------------------------------------------------------------------
// Sliding-window backtest: retrain from scratch on everything before each
// window, evaluate inside it.
// ---------------------------------------------------------------------------

struct BacktestPoint {
    Date window_start;
    MetricsReport report;
    std::string error;  // non-empty when this fold failed
};

inline std::vector<BacktestPoint> backtest(const Corpus& corpus, Window window,
                                           const BackboneConfig& bcfg, const TrainConfig& tcfg,
                                           double valid_ratio = 0.1,
                                           std::ostream* progress = nullptr) {
    auto folds = backtest_folds(corpus, window);
    std::vector<BacktestPoint> out;
    for (const auto& fold : folds) {
        BacktestPoint point;
        point.window_start = fold.window_start;
        try {
            const Corpus* valid = nullptr;
            SplitResult carve;
            if (valid_ratio > 0.0 && fold.train.size() >= 20) {
                carve = split(fold.train, SplitSpec::random(tcfg.seed, 1.0 - valid_ratio));
                valid = &carve.test;
            }
            const Corpus& train_side = valid ? carve.train : fold.train;
            auto ckpt = train_model(train_side, valid, bcfg, tcfg);
            point.report = evaluate(ckpt, fold.test, format_date(fold.window_start));
        } catch (const Error& e) {
            point.error = e.what();
        }
        if (progress)
            (*progress) << "window " << format_date(point.window_start) << ": "
                        << (point.error.empty()
                                ? "auc=" + std::to_string(point.report.auc)
                                : "failed: " + point.error)
                        << '\n';
        out.push_back(std::move(point));
    }
    return out;
}

inline void write_backtest_csv(const std::vector<BacktestPoint>& series,
                               const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "window_start,auc,bacc,f1\n";
    char buf[64];
    for (const auto& p : series) {
        if (!p.error.empty()) continue;
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", p.report.auc,
                      p.report.balanced_accuracy, p.report.f1);
        out << format_date(p.window_start) << ',' << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic bias benchmark.
//
// Every URL carries a genuine structural signal and a spurious decoy token:
//   - signal: a path segment "<atom>-<atom>" repeats the same atom for
//     malicious URLs and pairs two different atoms for benign ones (with the
//     configured consistency). Individual atoms are class-balanced, so only
//     the repetition pattern separates the classes; it survives in both
//     splits.
//   - decoy: one token that is perfectly class-correlated in the training
//     split. Malicious-side decoys are digit strings and benign-side decoys
//     are uppercase strings, giving char-level models an equally spurious
//     byte-level shortcut. In the test split decoys flip sides (swap) or lose
//     their correlation (uniform).
// A model that leans on decoys aces training and collapses on the test
// split; a debiased model must fall back on the repetition pattern.
// ---------------------------------------------------------------------------

struct SyntheticBenchSpec {
    int n_train = 8000;
    int n_test = 2000;
    int decoy_vocab = 200;          // split evenly between the two classes
    int signal_atoms = 16;
    double signal_consistency = 0.9;
    enum class FlipMode { swap, uniform } flip = FlipMode::swap;
    uint64_t seed = 0;

    void validate() const {
        if (n_train < 4 || n_test < 4) throw Error("bench: need at least 4 records per split");
        if (decoy_vocab < 2 || decoy_vocab % 2 != 0)
            throw Error("bench: decoy vocabulary must be even and >= 2");
        if (signal_atoms < 2) throw Error("bench: need at least 2 signal atoms");
        if (signal_consistency <= 0.5 || signal_consistency > 1.0)
            throw Error("bench: consistency must be in (0.5, 1]");
    }
};

inline const char* to_string(SyntheticBenchSpec::FlipMode m) {
    return m == SyntheticBenchSpec::FlipMode::swap ? "swap" : "uniform";
}

struct SyntheticBench {
    SyntheticBenchSpec spec;
    Corpus train, test;
    std::vector<std::string> decoys_malicious;  // digit strings
    std::vector<std::string> decoys_benign;     // uppercase strings
    std::vector<std::string> atoms;             // lowercase two-char fragments

    /// Decoy surface forms as the word tokenizer emits them (lowercased).
    std::vector<std::string> decoy_word_tokens(int side) const;
};

namespace detail {

inline std::vector<std::string> distinct_words(nn::Rng& rng, int count, int len_lo, int len_hi,
                                               char alpha_lo, int alpha_n,
                                               const std::set<std::string>& avoid = {}) {
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (int(out.size()) < count) {
        const int len = len_lo + int(rng.below(uint64_t(len_hi - len_lo + 1)));
        std::string w;
        for (int i = 0; i < len; ++i) w.push_back(char(alpha_lo + int(rng.below(alpha_n))));
        if (avoid.count(w)) continue;
        if (seen.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

inline std::string lowercased(std::string s) {
    for (auto& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace detail

inline std::vector<std::string> SyntheticBench::decoy_word_tokens(int side) const {
    std::vector<std::string> out;
    for (const auto& d : side == 1 ? decoys_malicious : decoys_benign)
        out.push_back(detail::lowercased(d));
    return out;
}

inline SyntheticBench generate_synthetic_bench(const SyntheticBenchSpec& spec) {
    spec.validate();
    SyntheticBench bench;
    bench.spec = spec;

    nn::Rng root(spec.seed);
    nn::Rng vocab_rng = root.fork(11);
    bench.decoys_malicious =
        detail::distinct_words(vocab_rng, spec.decoy_vocab / 2, 6, 6, '0', 10);
    bench.decoys_benign = detail::distinct_words(vocab_rng, spec.decoy_vocab / 2, 6, 6, 'A', 26);
    bench.atoms = detail::distinct_words(vocab_rng, spec.signal_atoms, 2, 2, 'a', 26);
    // word tokenization lowercases, so keep filler clear of decoy word forms
    std::set<std::string> avoid;
    for (const auto& d : bench.decoys_benign) avoid.insert(detail::lowercased(d));
    auto filler = detail::distinct_words(vocab_rng, 300, 4, 7, 'a', 26, avoid);

    auto make_split = [&](int n, bool is_test, uint64_t stream, Date base,
                          int month_span) -> Corpus {
        nn::Rng rng = root.fork(stream);
        Corpus corpus;
        corpus.tag = is_test ? SplitTag::test : SplitTag::train;
        for (int i = 0; i < n; ++i) {
            const int label = i % 2;

            // structural signal: repeated atom pair for malicious URLs
            const bool consistent = rng.uniform() < spec.signal_consistency;
            const bool repeat = (label == 1) == consistent;
            const std::string& a = bench.atoms[rng.below(bench.atoms.size())];
            std::string b = a;
            while (repeat == false && b == a) b = bench.atoms[rng.below(bench.atoms.size())];

            // decoy side: perfectly class-bound in train, flipped or free in test
            int side = label;
            if (is_test)
                side = spec.flip == SyntheticBenchSpec::FlipMode::swap ? 1 - label
                                                                       : int(rng.below(2));
            const auto& decoys = side == 1 ? bench.decoys_malicious : bench.decoys_benign;
            const std::string& decoy = decoys[rng.below(decoys.size())];

            std::string url = "http://" + filler[rng.below(filler.size())] + ".com/" + a + "-" +
                              b + "/" + decoy;
            const int extra = 1 + int(rng.below(3));
            for (int e = 0; e < extra; ++e) url += "/" + filler[rng.below(filler.size())];

            UrlRecord rec;
            rec.url = std::move(url);
            rec.label = label;
            rec.timestamp = add_months(base, int(rng.below(uint64_t(month_span))));
            rec.source = is_test ? "synth-test" : "synth-train";
            corpus.records.push_back(std::move(rec));
        }
        rng.shuffle(corpus.records);
        return corpus;
    };

    bench.train = make_split(spec.n_train, false, 21, *parse_date("2016-01-15"), 12);
    bench.test = make_split(spec.n_test, true, 22, *parse_date("2017-01-15"), 6);
    return bench;
}

inline void save_synthetic_bench(const SyntheticBench& bench, const std::filesystem::path& dir) {
    save_corpus(bench.train, dir / "train");
    save_corpus(bench.test, dir / "test");
    nlohmann::json manifest;
    manifest["n_train"] = bench.spec.n_train;
    manifest["n_test"] = bench.spec.n_test;
    manifest["decoy_vocab"] = bench.spec.decoy_vocab;
    manifest["signal_atoms"] = bench.spec.signal_atoms;
    manifest["signal_consistency"] = bench.spec.signal_consistency;
    manifest["flip_mode"] = to_string(bench.spec.flip);
    manifest["seed"] = bench.spec.seed;
    manifest["decoys_malicious"] = bench.decoys_malicious;
    manifest["decoys_benign"] = bench.decoys_benign;
    manifest["atoms"] = bench.atoms;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

}  // namespace urlbias
