// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urlbias/tokenizer.hpp"

namespace urlbias {

/// Per-token class distribution: row i holds the probability of token i
/// appearing in each class, normalized over that token's training occurrences.
/// Rows for tokens with no training occurrences (OOV, PAD) are uniform.
struct ClassDistributionMatrix {
    std::vector<std::vector<double>> rows;  // M x K
    int num_classes = 2;
    TokenMode mode = TokenMode::words;
    std::string source_split = "unspecified";

    int32_t size() const { return int32_t(rows.size()); }
    std::span<const double> row(int32_t id) const { return rows[id]; }
};

inline ClassDistributionMatrix build_bias_matrix(const TokenVocabulary& vocab) {
    if (vocab.source_split == "test")
        throw Error("build_bias_matrix: class statistics must come from the training split");
    ClassDistributionMatrix m;
    m.num_classes = vocab.num_classes;
    m.mode = vocab.mode;
    m.source_split = vocab.source_split;
    m.rows.reserve(vocab.size());
    const double uniform = 1.0 / double(vocab.num_classes);
    for (int32_t id = 0; id < vocab.size(); ++id) {
        int64_t total = vocab.total_count(id);
        std::vector<double> row(vocab.num_classes, uniform);
        if (total > 0)
            for (int k = 0; k < vocab.num_classes; ++k)
                row[k] = double(vocab.class_counts[id][k]) / double(total);
        m.rows.push_back(std::move(row));
    }
    return m;
}

/// Normalized Shannon entropy of a class distribution: 0 for a one-hot row
/// (token confined to one class), 1 for a uniform row, independent of log base.
inline double token_entropy(std::span<const double> row) {
    double h = 0.0;
    for (double p : row)
        if (p > 0.0) h -= p * std::log(p);
    return h / std::log(double(row.size()));
}

struct EntropyHistogram {
    std::vector<double> edges;   // bins + 1 edges over [0, 1]
    std::vector<int64_t> counts; // per-bin token counts, reserved ids excluded
};

inline EntropyHistogram entropy_histogram(const ClassDistributionMatrix& matrix, int bins) {
    if (bins < 2) throw Error("entropy_histogram: bins must be >= 2");
    EntropyHistogram h;
    h.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) h.edges[b] = double(b) / double(bins);
    h.counts.assign(bins, 0);
    for (int32_t id = 2; id < matrix.size(); ++id) {
        double e = token_entropy(matrix.row(id));
        int b = std::min(bins - 1, int(e * bins));  // last bin right-inclusive
        ++h.counts[b];
    }
    return h;
}

struct LowEntropyToken {
    std::string token;
    double entropy = 0.0;
    int dominant_class = 0;   // argmax of the row, ties to the lowest index
    int64_t total_count = 0;
};

/// The k least class-diverse tokens with at least min_count occurrences,
/// ascending by entropy; ties prefer higher counts, then token order.
inline std::vector<LowEntropyToken> top_k_low_entropy(const ClassDistributionMatrix& matrix,
                                                      const TokenVocabulary& vocab, size_t k,
                                                      int64_t min_count = 5) {
    if (k < 1) throw Error("top_k_low_entropy: k must be >= 1");
    std::vector<LowEntropyToken> all;
    for (int32_t id = 2; id < matrix.size(); ++id) {
        int64_t total = vocab.total_count(id);
        if (total < min_count) continue;
        auto row = matrix.row(id);
        LowEntropyToken t;
        t.token = vocab.tokens[id];
        t.entropy = token_entropy(row);
        t.total_count = total;
        t.dominant_class =
            int(std::max_element(row.begin(), row.end()) - row.begin());
        all.push_back(std::move(t));
    }
    std::sort(all.begin(), all.end(), [](const LowEntropyToken& a, const LowEntropyToken& b) {
        if (a.entropy != b.entropy) return a.entropy < b.entropy;
        if (a.total_count != b.total_count) return a.total_count > b.total_count;
        return a.token < b.token;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

/// Per-position soft labels for the bias predictor: each real token gets its
/// row of B, PAD positions get the uniform row with mask 0.
struct BiasTargets {
    std::vector<std::vector<double>> targets;  // positions x K
    std::vector<uint8_t> mask;                 // 1 = real token position
};

inline BiasTargets bias_targets(std::span<const int32_t> ids,
                                const ClassDistributionMatrix& matrix) {
    BiasTargets out;
    out.targets.reserve(ids.size());
    out.mask.reserve(ids.size());
    const std::vector<double> uniform(matrix.num_classes, 1.0 / matrix.num_classes);
    for (int32_t id : ids) {
        if (id == kPadId) {
            out.targets.push_back(uniform);
            out.mask.push_back(0);
        } else {
            out.targets.push_back(matrix.rows[id]);
            out.mask.push_back(1);
        }
    }
    return out;
}

inline BiasTargets bias_targets(const TokenizedSample& sample,
                                const ClassDistributionMatrix& matrix) {
    return bias_targets(matrix.mode == TokenMode::chars ? std::span<const int32_t>(sample.char_ids)
                                                        : std::span<const int32_t>(sample.word_ids),
                        matrix);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct BiasReport {
    struct Row {
        std::string token;
        int64_t total = 0;
        std::vector<int64_t> class_counts;
        double entropy = 0.0;
    };
    std::vector<Row> rows;                 // all non-reserved tokens, by id
    EntropyHistogram histogram;
    std::vector<LowEntropyToken> top_k;
    TokenMode mode = TokenMode::words;
    int num_classes = 2;
};

inline BiasReport build_bias_report(const TokenVocabulary& vocab,
                                    const ClassDistributionMatrix& matrix, int bins = 20,
                                    size_t k = 5, int64_t min_count = 5) {
    BiasReport rep;
    rep.mode = vocab.mode;
    rep.num_classes = vocab.num_classes;
    for (int32_t id = 2; id < vocab.size(); ++id) {
        BiasReport::Row row;
        row.token = vocab.tokens[id];
        row.total = vocab.total_count(id);
        row.class_counts = vocab.class_counts[id];
        row.entropy = token_entropy(matrix.row(id));
        rep.rows.push_back(std::move(row));
    }
    rep.histogram = entropy_histogram(matrix, bins);
    rep.top_k = top_k_low_entropy(matrix, vocab, k, min_count);
    return rep;
}

inline void write_bias_report_tsv(const BiasReport& rep, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "token\ttotal";
    for (int c = 0; c < rep.num_classes; ++c) out << "\tcount_class_" << c;
    out << "\tentropy\n";
    char buf[32];
    for (const auto& row : rep.rows) {
        out << tsv_escape(row.token) << '\t' << row.total;
        for (int64_t c : row.class_counts) out << '\t' << c;
        std::snprintf(buf, sizeof(buf), "%.6f", row.entropy);
        out << '\t' << buf << '\n';
    }
}

inline nlohmann::json bias_report_json(const BiasReport& rep) {
    nlohmann::json j;
    j["mode"] = to_string(rep.mode);
    j["num_tokens"] = rep.rows.size();
    j["histogram"]["edges"] = rep.histogram.edges;
    j["histogram"]["counts"] = rep.histogram.counts;
    auto& top = j["top_k"] = nlohmann::json::array();
    for (const auto& t : rep.top_k)
        top.push_back({{"token", bytes_to_utf8(t.token)},
                       {"entropy", t.entropy},
                       {"dominant_class", t.dominant_class},
                       {"total_count", t.total_count}});
    return j;
}

/// Histogram as a self-contained SVG bar chart.
inline void write_histogram_svg(const EntropyHistogram& hist, const std::filesystem::path& path,
                                const std::string& title = "token class-entropy distribution") {
    const int width = 640, height = 360, margin = 48;
    int64_t peak = 1;
    for (int64_t c : hist.counts) peak = std::max(peak, c);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
        << "</text>\n";
    const double plot_w = width - 2.0 * margin, plot_h = height - 2.0 * margin;
    const size_t bins = hist.counts.size();
    for (size_t b = 0; b < bins; ++b) {
        double h = plot_h * double(hist.counts[b]) / double(peak);
        double x = margin + plot_w * double(b) / double(bins);
        out << "<rect x='" << x + 1 << "' y='" << height - margin - h << "' width='"
            << plot_w / double(bins) - 2 << "' height='" << h
            << "' fill='steelblue'><title>[" << hist.edges[b] << ", " << hist.edges[b + 1]
            << "]: " << hist.counts[b] << "</title></rect>\n";
    }
    out << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin
        << "' y2='" << height - margin << "' stroke='black'/>\n"
        << "<text x='" << margin << "' y='" << height - margin + 16 << "' font-size='12'>0</text>\n"
        << "<text x='" << width - margin << "' y='" << height - margin + 16
        << "' text-anchor='end' font-size='12'>1</text>\n"
        << "<text x='" << margin - 6 << "' y='" << margin << "' text-anchor='end' font-size='12'>"
        << peak << "</text>\n</svg>\n";
}

}  // namespace urlbias
