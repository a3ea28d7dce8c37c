// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urlbias/model.hpp"

namespace urlbias {

/// Per-token attribution for one embedded stream. Positive scores pull toward
/// the target class, negative away from it; PAD positions carry score 0.
struct SensitivityMap {
    std::string stream;  // "char" or "word"
    std::vector<std::string> tokens;
    std::vector<double> scores;
    int target_class = 1;
    std::string method;      // "ig" or "smoothgrad+ig"
    int steps = 0;           // path resolution
    int smooth_n = 0;        // smoothgrad draws (0 = off)
    double sigma = 0.0;
    std::string baseline = "zero-embedding";
};

/// A differentiable scalar over embedded streams: returns the value and the
/// gradient with respect to every stream coordinate.
template <class S>
class EmbeddedTarget {
public:
    virtual ~EmbeddedTarget() = default;
    virtual S value_and_grad(const std::vector<nn::Mat<S>>& x,
                             std::vector<nn::Mat<S>>& grads) = 0;

    S value(const std::vector<nn::Mat<S>>& x) {
        std::vector<nn::Mat<S>> scratch;
        return value_and_grad(x, scratch);
    }
};

/// Probability of one class under a frozen backbone, as a function of the
/// embedded input streams.
template <class S>
class ClassProbabilityTarget final : public EmbeddedTarget<S> {
public:
    ClassProbabilityTarget(Backbone<S>& net, std::vector<nn::Ranges> ranges, int target_class)
        : net_(net), ranges_(std::move(ranges)), target_(target_class) {}

    S value_and_grad(const std::vector<nn::Mat<S>>& x, std::vector<nn::Mat<S>>& grads) override {
        nn::Mat<S> probs = net_.forward(x, ranges_, false, nullptr);
        if (target_ < 0 || target_ >= probs.rows())
            throw Error("interpret: target class out of range");
        // dF/dz_j = p_c (delta_cj - p_j) for the softmax probability p_c
        nn::Mat<S> dlogits = -probs(target_, 0) * probs;
        dlogits(target_, 0) += probs(target_, 0);
        net_.backward(dlogits, false, &grads);
        return probs(target_, 0);
    }

private:
    Backbone<S>& net_;
    std::vector<nn::Ranges> ranges_;
    int target_;
};

/// Midpoint-rule integrated gradients from baseline to input, one matrix per
/// stream: (x - x') .* mean over steps of dF/dx along the straight path.
template <class S>
inline std::vector<nn::Mat<S>> integrated_gradients_raw(EmbeddedTarget<S>& f,
                                                        const std::vector<nn::Mat<S>>& x,
                                                        const std::vector<nn::Mat<S>>& baseline,
                                                        int steps) {
    if (steps < 1) throw Error("integrated_gradients: steps must be >= 1");
    std::vector<nn::Mat<S>> mean_grad;
    for (const auto& m : x) mean_grad.push_back(nn::Mat<S>::Zero(m.rows(), m.cols()));
    std::vector<nn::Mat<S>> point(x.size()), grads;
    for (int k = 1; k <= steps; ++k) {
        const S alpha = S((double(k) - 0.5) / double(steps));
        for (size_t s = 0; s < x.size(); ++s)
            point[s] = baseline[s] + alpha * (x[s] - baseline[s]);
        f.value_and_grad(point, grads);
        for (size_t s = 0; s < x.size(); ++s) mean_grad[s] += grads[s];
    }
    std::vector<nn::Mat<S>> out;
    for (size_t s = 0; s < x.size(); ++s)
        out.push_back((x[s] - baseline[s]).cwiseProduct(mean_grad[s] / S(steps)));
    return out;
}

/// SmoothGrad over integrated gradients: the path-gradient average is taken
/// around Gaussian-perturbed copies of the input, while the displacement
/// factor stays anchored at the true input. Linear targets therefore keep
/// their exact attributions for any sigma, and PAD positions stay at zero.
template <class S>
inline std::vector<nn::Mat<S>> smoothgrad_raw(EmbeddedTarget<S>& f,
                                              const std::vector<nn::Mat<S>>& x,
                                              const std::vector<nn::Mat<S>>& baseline, int steps,
                                              int n, double sigma, nn::Rng rng) {
    if (n < 1) throw Error("smoothgrad: n must be >= 1");
    if (sigma < 0.0) throw Error("smoothgrad: sigma must be >= 0");
    std::vector<nn::Mat<S>> accum;
    for (const auto& m : x) accum.push_back(nn::Mat<S>::Zero(m.rows(), m.cols()));
    std::vector<nn::Mat<S>> noisy(x.size()), point(x.size()), grads;
    for (int draw = 0; draw < n; ++draw) {
        for (size_t s = 0; s < x.size(); ++s) {
            noisy[s] = x[s];
            if (sigma > 0.0)
                for (Eigen::Index c = 0; c < noisy[s].cols(); ++c)
                    for (Eigen::Index r = 0; r < noisy[s].rows(); ++r)
                        noisy[s](r, c) += S(sigma * rng.normal());
        }
        for (int k = 1; k <= steps; ++k) {
            const S alpha = S((double(k) - 0.5) / double(steps));
            for (size_t s = 0; s < x.size(); ++s)
                point[s] = baseline[s] + alpha * (noisy[s] - baseline[s]);
            f.value_and_grad(point, grads);
            for (size_t s = 0; s < x.size(); ++s) accum[s] += grads[s];
        }
    }
    std::vector<nn::Mat<S>> out;
    for (size_t s = 0; s < x.size(); ++s)
        out.push_back((x[s] - baseline[s]).cwiseProduct(accum[s] / S(n * steps)));
    return out;
}

// ---------------------------------------------------------------------------
// Model-level wrapper
// ---------------------------------------------------------------------------

struct ExplainOptions {
    int target_class = 1;
    int steps = 128;
    int smooth_n = 0;   // 0 = plain integrated gradients
    double sigma = -1;  // < 0: 0.1 * (max - min) over the embedding tables
    uint64_t seed = 0;
};

/// Attribution maps for one sample, one per embedded stream. The baseline is
/// the all-zero embedding sequence (an all-PAD input).
template <class S>
inline std::vector<SensitivityMap> explain_sample(Model<S>& model, const TokenizedSample& sample,
                                                  const ExplainOptions& opt) {
    const int streams = model.net->num_streams();
    std::vector<const TokenizedSample*> one{&sample};
    std::vector<nn::PackedIds> packed(streams);
    std::vector<nn::Ranges> ranges(streams);
    std::vector<nn::Mat<S>> x, baseline;
    auto emb = model.net->embeddings();
    for (int s = 0; s < streams; ++s) {
        packed[s] = model.pack(one, s);
        ranges[s] = packed[s].ranges;
        x.push_back(emb[s]->forward(packed[s]));
        baseline.push_back(nn::Mat<S>::Zero(x.back().rows(), x.back().cols()));
    }

    double sigma = opt.sigma;
    if (sigma < 0.0) {
        S lo = std::numeric_limits<S>::max(), hi = std::numeric_limits<S>::lowest();
        for (auto* e : emb) {
            lo = std::min(lo, e->table.w.minCoeff());
            hi = std::max(hi, e->table.w.maxCoeff());
        }
        sigma = 0.1 * double(hi - lo);
    }

    ClassProbabilityTarget<S> target(*model.net, ranges, opt.target_class);
    std::vector<nn::Mat<S>> raw =
        opt.smooth_n > 0
            ? smoothgrad_raw(target, x, baseline, opt.steps, opt.smooth_n, sigma,
                             nn::Rng(opt.seed).fork(7))
            : integrated_gradients_raw(target, x, baseline, opt.steps);

    auto modes = model.stream_modes();
    std::vector<SensitivityMap> maps;
    for (int s = 0; s < streams; ++s) {
        SensitivityMap map;
        map.stream = to_string(modes[s]);
        map.target_class = opt.target_class;
        map.method = opt.smooth_n > 0 ? "smoothgrad+ig" : "ig";
        map.steps = opt.steps;
        map.smooth_n = opt.smooth_n;
        map.sigma = opt.smooth_n > 0 ? sigma : 0.0;
        const auto& text = modes[s] == TokenMode::chars ? sample.char_text : sample.word_text;
        const int len = ranges[s].length(0);
        for (int t = 0; t < len; ++t) {
            map.tokens.push_back(t < int(text.size()) ? text[t] : kPadToken);
            map.scores.push_back(double(raw[s].col(t).sum()));
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

/// Red for positive, blue for negative, scaled by |score| / max|score|.
inline void score_color(double score, double max_abs, int& r, int& g, int& b) {
    const double t = max_abs > 0.0 ? std::clamp(std::abs(score) / max_abs, 0.0, 1.0) : 0.0;
    const int fade = int(std::lround(255.0 * (1.0 - t)));
    if (score >= 0.0) {
        r = 255;
        g = b = fade;
    } else {
        b = 255;
        r = g = fade;
    }
}

}  // namespace detail

inline std::string render_ansi(const SensitivityMap& map) {
    double max_abs = 0.0;
    for (double s : map.scores) max_abs = std::max(max_abs, std::abs(s));
    std::string out = map.stream + ": ";
    char buf[64];
    for (size_t i = 0; i < map.tokens.size(); ++i) {
        if (map.tokens[i] == kPadToken) continue;
        int r, g, b;
        detail::score_color(map.scores[i], max_abs, r, g, b);
        std::snprintf(buf, sizeof(buf), "\x1b[48;2;%d;%d;%dm\x1b[30m", r, g, b);
        out += buf;
        out += map.tokens[i];
        out += "\x1b[0m";
        if (map.stream == "word") out += ' ';
    }
    out += '\n';
    return out;
}

inline std::string render_html(const std::vector<SensitivityMap>& maps,
                               const std::string& title = "attribution") {
    std::string out =
        "<!doctype html><html><head><meta charset='utf-8'><title>" + title +
        "</title><style>body{font-family:monospace;margin:2em}span.tok{padding:1px 2px;"
        "border-radius:2px}</style></head><body><h3>" +
        title + "</h3>\n";
    char buf[128];
    for (const auto& map : maps) {
        double max_abs = 0.0;
        for (double s : map.scores) max_abs = std::max(max_abs, std::abs(s));
        out += "<p><b>" + map.stream + "</b> (method " + map.method + ", target class " +
               std::to_string(map.target_class) + "):<br>\n";
        for (size_t i = 0; i < map.tokens.size(); ++i) {
            if (map.tokens[i] == kPadToken) continue;
            int r, g, b;
            detail::score_color(map.scores[i], max_abs, r, g, b);
            std::snprintf(buf, sizeof(buf),
                          "<span class='tok' style='background-color:rgb(%d,%d,%d)' title='%.6g'>",
                          r, g, b, map.scores[i]);
            out += buf;
            std::string tok;
            for (char c : map.tokens[i]) {
                if (c == '<') tok += "&lt;";
                else if (c == '>') tok += "&gt;";
                else if (c == '&') tok += "&amp;";
                else tok.push_back(c);
            }
            out += tok + "</span>";
            if (map.stream == "word") out += ' ';
        }
        out += "</p>\n";
    }
    out += "</body></html>\n";
    return out;
}

inline nlohmann::json map_json(const SensitivityMap& map) {
    nlohmann::json j;
    j["stream"] = map.stream;
    j["target_class"] = map.target_class;
    j["method"] = map.method;
    j["steps"] = map.steps;
    j["smooth_n"] = map.smooth_n;
    j["sigma"] = map.sigma;
    j["baseline"] = map.baseline;
    auto& toks = j["tokens"] = nlohmann::json::array();
    for (size_t i = 0; i < map.tokens.size(); ++i)
        toks.push_back({{"token", bytes_to_utf8(map.tokens[i])}, {"score", map.scores[i]}});
    return j;
}

inline nlohmann::json maps_json(const std::vector<SensitivityMap>& maps) {
    nlohmann::json j;
    auto& arr = j["streams"] = nlohmann::json::array();
    for (const auto& m : maps) arr.push_back(map_json(m));
    return j;
}

}  // namespace urlbias
