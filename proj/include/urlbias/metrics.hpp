// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urlbias/common.hpp"

namespace urlbias {

/// Rank-statistic AUC: the probability that a uniformly random positive
/// outranks a uniformly random negative, ties counting one half.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("auc: size mismatch");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw Error("auc: labels must be 0/1");
        n_pos += size_t(y);
    }
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw Error("auc: undefined for single-class inputs (" + std::to_string(n_pos) +
                    " positives of " + std::to_string(n) + ")");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // average ranks over tied score groups
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j);  // 1-based ranks i+1 .. j
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        i = j;
    }
    return (pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1)) /
           (double(n_pos) * double(n_neg));
}

struct Confusion {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    static Confusion at_threshold(std::span<const double> scores, std::span<const int> labels,
                                  double threshold = 0.5) {
        Confusion c;
        for (size_t i = 0; i < scores.size(); ++i) {
            const bool pred = scores[i] >= threshold;
            if (labels[i] == 1) (pred ? c.tp : c.fn)++;
            else (pred ? c.fp : c.tn)++;
        }
        return c;
    }
};

inline double balanced_accuracy(const Confusion& c) {
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
        throw Error("balanced_accuracy: both classes required");
    const double tpr = double(c.tp) / double(c.tp + c.fn);
    const double tnr = double(c.tn) / double(c.tn + c.fp);
    return 0.5 * (tpr + tnr);
}

inline double f1(const Confusion& c) {
    if (2 * c.tp + c.fp + c.fn == 0) return 0.0;  // no positives anywhere
    return 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
}

inline double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                                double threshold = 0.5) {
    return balanced_accuracy(Confusion::at_threshold(scores, labels, threshold));
}

inline double f1(std::span<const double> scores, std::span<const int> labels,
                 double threshold = 0.5) {
    return f1(Confusion::at_threshold(scores, labels, threshold));
}

struct MetricsReport {
    double auc = 0.0;
    double balanced_accuracy = 0.0;
    double f1 = 0.0;
    Confusion confusion;
    size_t sample_count = 0;
    std::string split;
};

inline MetricsReport compute_metrics(std::span<const double> scores, std::span<const int> labels,
                                     std::string split_id = "") {
    MetricsReport r;
    r.auc = auc(scores, labels);
    r.confusion = Confusion::at_threshold(scores, labels);
    r.balanced_accuracy = balanced_accuracy(r.confusion);
    r.f1 = f1(r.confusion);
    r.sample_count = scores.size();
    r.split = std::move(split_id);
    return r;
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
    return nlohmann::json{{"auc", r.auc},
                          {"balanced_accuracy", r.balanced_accuracy},
                          {"f1", r.f1},
                          {"tp", r.confusion.tp},
                          {"fp", r.confusion.fp},
                          {"tn", r.confusion.tn},
                          {"fn", r.confusion.fn},
                          {"sample_count", r.sample_count},
                          {"split", r.split}};
}

inline void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << metrics_json(r).dump(2) << '\n';
}

}  // namespace urlbias
