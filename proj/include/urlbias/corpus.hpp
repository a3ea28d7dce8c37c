// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urlbias/common.hpp"

namespace urlbias {

constexpr size_t kMaxUrlBytes = 4096;

/// One labeled URL sample. `url` holds raw bytes; `timestamp` is optional and
/// records without one are excluded from time-based splits.
struct UrlRecord {
    std::string url;
    int label = 0;
    std::optional<Date> timestamp;
    std::string source;

    bool operator==(const UrlRecord&) const = default;
};

/// Marks which side of a split a corpus came from. Bias statistics may only be
/// derived from training data; the `test` tag makes that enforceable.
enum class SplitTag { unspecified, train, test };

inline const char* to_string(SplitTag t) {
    switch (t) {
        case SplitTag::train: return "train";
        case SplitTag::test: return "test";
        default: return "unspecified";
    }
}

struct Corpus {
    std::vector<UrlRecord> records;
    int num_classes = 2;
    std::vector<std::string> class_names = {"benign", "malicious"};
    SplitTag tag = SplitTag::unspecified;

    size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

enum class FileFormat { jsonl, csv };

struct IngestResult {
    Corpus corpus;
    size_t rejected = 0;    ///< malformed or invariant-violating lines skipped
    size_t truncated = 0;   ///< URLs cut to kMaxUrlBytes
    std::vector<std::string> warnings;  ///< first few skip reasons, for diagnostics

    void warn(std::string msg) {
        if (warnings.size() < 10) warnings.push_back(std::move(msg));
    }
};

namespace detail {

inline std::optional<UrlRecord> record_from_fields(std::string url, const std::string& label_text,
                                                   const std::string& ts_text,
                                                   std::string source, int num_classes,
                                                   std::string& why) {
    if (url.empty()) {
        why = "empty url";
        return std::nullopt;
    }
    if (label_text.empty()) {
        why = "missing label";
        return std::nullopt;
    }
    int label = 0;
    try {
        size_t pos = 0;
        label = std::stoi(label_text, &pos);
        if (pos != label_text.size()) throw std::invalid_argument(label_text);
    } catch (const std::exception&) {
        why = "non-integer label '" + label_text + "'";
        return std::nullopt;
    }
    if (label < 0 || label >= num_classes) {
        why = "label " + std::to_string(label) + " outside [0," +
              std::to_string(num_classes) + ")";
        return std::nullopt;
    }
    UrlRecord rec;
    rec.url = std::move(url);
    rec.label = label;
    if (!ts_text.empty()) {
        auto d = parse_date(ts_text);
        if (!d) {
            why = "unparseable timestamp '" + ts_text + "'";
            return std::nullopt;
        }
        rec.timestamp = *d;
    }
    rec.source = std::move(source);
    return rec;
}

/// RFC4180-style CSV row parser (quoted fields, doubled quotes). Returns false
/// on unbalanced quotes.
inline bool parse_csv_row(const std::string& line, std::vector<std::string>& out) {
    out.clear();
    std::string field;
    bool quoted = false;
    size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
        ++i;
    }
    if (quoted) return false;
    out.push_back(std::move(field));
    return true;
}

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

}  // namespace detail

/// Parse a labeled URL dataset from JSONL or CSV. Malformed lines are skipped
/// and counted; an unreadable file or a file with zero valid records is fatal.
inline IngestResult ingest(const std::filesystem::path& path, FileFormat format,
                           int num_classes = 2,
                           std::vector<std::string> class_names = {"benign", "malicious"}) {
    if (num_classes < 2) throw Error("ingest: num_classes must be >= 2");
    if (int(class_names.size()) != num_classes) {
        class_names.clear();
        for (int k = 0; k < num_classes; ++k) class_names.push_back("class_" + std::to_string(k));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("ingest: cannot open " + path.string());

    IngestResult res;
    res.corpus.num_classes = num_classes;
    res.corpus.class_names = std::move(class_names);

    std::string line;
    size_t lineno = 0;
    std::vector<int> col_index;  // csv: position of url/label/timestamp/source
    bool header_seen = false;

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::string url, label_text, ts_text, source, why;
        if (format == FileFormat::jsonl) {
            auto doc = nlohmann::json::parse(line, nullptr, false);
            if (doc.is_discarded() || !doc.is_object()) {
                ++res.rejected;
                res.warn("line " + std::to_string(lineno) + ": invalid JSON");
                continue;
            }
            if (doc.contains("url") && doc["url"].is_string())
                url = utf8_to_bytes(doc["url"].get<std::string>());
            if (doc.contains("label") && doc["label"].is_number_integer())
                label_text = std::to_string(doc["label"].get<int>());
            if (doc.contains("timestamp") && doc["timestamp"].is_string())
                ts_text = doc["timestamp"].get<std::string>();
            if (doc.contains("source") && doc["source"].is_string())
                source = doc["source"].get<std::string>();
        } else {
            std::vector<std::string> fields;
            if (!detail::parse_csv_row(line, fields)) {
                ++res.rejected;
                res.warn("line " + std::to_string(lineno) + ": unbalanced quotes");
                continue;
            }
            if (!header_seen) {
                header_seen = true;
                col_index.assign(4, -1);
                static const char* names[4] = {"url", "label", "timestamp", "source"};
                for (int j = 0; j < int(fields.size()); ++j)
                    for (int k = 0; k < 4; ++k)
                        if (fields[j] == names[k]) col_index[k] = j;
                if (col_index[0] < 0 || col_index[1] < 0)
                    throw Error("ingest: CSV header must name 'url' and 'label' columns");
                continue;
            }
            auto get = [&](int k) -> std::string {
                int j = col_index[k];
                return (j >= 0 && j < int(fields.size())) ? fields[j] : "";
            };
            url = get(0);
            label_text = get(1);
            ts_text = get(2);
            source = get(3);
        }

        auto rec = detail::record_from_fields(std::move(url), label_text, ts_text,
                                              std::move(source), num_classes, why);
        if (!rec) {
            ++res.rejected;
            res.warn("line " + std::to_string(lineno) + ": " + why);
            continue;
        }
        if (rec->url.size() > kMaxUrlBytes) {
            rec->url.resize(kMaxUrlBytes);
            ++res.truncated;
        }
        res.corpus.records.push_back(std::move(*rec));
    }
    if (res.corpus.records.empty())
        throw Error("ingest: no valid records in " + path.string() + " (" +
                    std::to_string(res.rejected) + " rejected)");
    return res;
}

inline void write_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& rec : corpus.records) {
        nlohmann::json doc;
        doc["url"] = bytes_to_utf8(rec.url);
        doc["label"] = rec.label;
        if (rec.timestamp) doc["timestamp"] = format_date(*rec.timestamp);
        if (!rec.source.empty()) doc["source"] = rec.source;
        out << doc.dump() << '\n';
    }
}

inline void write_csv(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "url,label,timestamp,source\n";
    for (const auto& rec : corpus.records) {
        out << detail::csv_quote(rec.url) << ',' << rec.label << ','
            << (rec.timestamp ? format_date(*rec.timestamp) : "") << ','
            << detail::csv_quote(rec.source) << '\n';
    }
}

/// Persist a corpus as a directory: records.jsonl + header.json.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_jsonl(corpus, dir / "records.jsonl");
    nlohmann::json header;
    header["num_classes"] = corpus.num_classes;
    header["class_names"] = corpus.class_names;
    header["record_count"] = corpus.records.size();
    header["split_tag"] = to_string(corpus.tag);
    std::ofstream out(dir / "header.json");
    if (!out) throw Error("cannot write " + (dir / "header.json").string());
    out << header.dump(2) << '\n';
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
    std::ifstream hin(dir / "header.json");
    if (!hin) throw Error("load_corpus: missing " + (dir / "header.json").string());
    nlohmann::json header = nlohmann::json::parse(hin);
    int k = header.at("num_classes").get<int>();
    std::vector<std::string> names = header.at("class_names").get<std::vector<std::string>>();
    auto res = ingest(dir / "records.jsonl", FileFormat::jsonl, k, names);
    if (res.rejected != 0)
        throw Error("load_corpus: corrupt records.jsonl in " + dir.string());
    if (header.contains("record_count") &&
        header["record_count"].get<size_t>() != res.corpus.records.size())
        throw Error("load_corpus: record_count mismatch in " + dir.string());
    if (header.contains("split_tag")) {
        std::string t = header["split_tag"].get<std::string>();
        res.corpus.tag = t == "train"  ? SplitTag::train
                         : t == "test" ? SplitTag::test
                                       : SplitTag::unspecified;
    }
    return std::move(res.corpus);
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
    enum class Kind { random, by_source, time_window };
    Kind kind = Kind::random;

    // random
    uint64_t seed = 0;
    double train_ratio = 0.9;

    // by_source
    std::vector<std::string> train_sources, test_sources;

    // time_window
    std::optional<Date> train_end, test_start, test_end;

    static SplitSpec random(uint64_t seed, double train_ratio) {
        SplitSpec s;
        s.kind = Kind::random;
        s.seed = seed;
        s.train_ratio = train_ratio;
        return s;
    }
    static SplitSpec by_source(std::vector<std::string> train, std::vector<std::string> test) {
        SplitSpec s;
        s.kind = Kind::by_source;
        s.train_sources = std::move(train);
        s.test_sources = std::move(test);
        return s;
    }
    static SplitSpec time_window(Date train_end, Date test_start, Date test_end) {
        SplitSpec s;
        s.kind = Kind::time_window;
        s.train_end = train_end;
        s.test_start = test_start;
        s.test_end = test_end;
        return s;
    }

    void validate() const {
        switch (kind) {
            case Kind::random:
                if (!(train_ratio > 0.0 && train_ratio < 1.0))
                    throw Error("split: random ratio must be in (0,1)");
                break;
            case Kind::by_source:
                if (train_sources.empty() || test_sources.empty())
                    throw Error("split: by-source requires both source lists");
                break;
            case Kind::time_window:
                if (!train_end || !test_start || !test_end)
                    throw Error("split: time-window requires all three dates");
                if (!(*train_end < *test_start && *test_start <= *test_end))
                    throw Error("split: need train-end < test-start <= test-end");
                break;
        }
    }
};

struct SplitResult {
    Corpus train, test;
};

/// Partition a corpus into disjoint train/test sides. Random splits shuffle
/// with the given seed; time-window splits drop untimestamped records and
/// anything in the gap between train-end and test-start.
inline SplitResult split(const Corpus& corpus, const SplitSpec& spec) {
    spec.validate();
    SplitResult out;
    for (Corpus* c : {&out.train, &out.test}) {
        c->num_classes = corpus.num_classes;
        c->class_names = corpus.class_names;
    }
    out.train.tag = SplitTag::train;
    out.test.tag = SplitTag::test;

    switch (spec.kind) {
        case SplitSpec::Kind::random: {
            std::vector<size_t> idx(corpus.records.size());
            std::iota(idx.begin(), idx.end(), size_t{0});
            std::mt19937_64 rng(spec.seed);
            std::shuffle(idx.begin(), idx.end(), rng);
            size_t n_train = size_t(std::llround(spec.train_ratio * double(idx.size())));
            n_train = std::min(n_train, idx.size());
            std::vector<bool> in_train(corpus.records.size(), false);
            for (size_t i = 0; i < n_train; ++i) in_train[idx[i]] = true;
            // record order within each side stays corpus order
            for (size_t i = 0; i < corpus.records.size(); ++i)
                (in_train[i] ? out.train : out.test).records.push_back(corpus.records[i]);
            break;
        }
        case SplitSpec::Kind::by_source: {
            std::set<std::string> tr(spec.train_sources.begin(), spec.train_sources.end());
            std::set<std::string> te(spec.test_sources.begin(), spec.test_sources.end());
            for (const auto& rec : corpus.records) {
                if (tr.count(rec.source)) out.train.records.push_back(rec);
                else if (te.count(rec.source)) out.test.records.push_back(rec);
            }
            break;
        }
        case SplitSpec::Kind::time_window: {
            for (const auto& rec : corpus.records) {
                if (!rec.timestamp) continue;
                if (*rec.timestamp <= *spec.train_end) out.train.records.push_back(rec);
                else if (*rec.timestamp >= *spec.test_start && *rec.timestamp <= *spec.test_end)
                    out.test.records.push_back(rec);
            }
            break;
        }
    }
    if (out.train.empty() || out.test.empty())
        throw Error("split: produced an empty side (train=" + std::to_string(out.train.size()) +
                    ", test=" + std::to_string(out.test.size()) + ")");
    return out;
}

// ---------------------------------------------------------------------------
// Chronological backtest folds
// ---------------------------------------------------------------------------

struct Window {
    int count = 1;
    enum class Unit { days, months } unit = Unit::months;

    /// Parse "<N>m" (calendar months) or "<N>d" (days), e.g. "1m", "14d".
    static Window parse(std::string_view text) {
        if (text.size() < 2) throw Error("window: expected <N>m or <N>d, got '" + std::string(text) + "'");
        char unit = text.back();
        int n = 0;
        for (char c : text.substr(0, text.size() - 1)) {
            if (c < '0' || c > '9') throw Error("window: bad count in '" + std::string(text) + "'");
            n = n * 10 + (c - '0');
        }
        if (n <= 0) throw Error("window: count must be positive");
        Window w;
        w.count = n;
        w.unit = unit == 'm' ? Unit::months : unit == 'd' ? Unit::days
                 : throw Error("window: unit must be 'm' or 'd'");
        return w;
    }

    std::string str() const {
        return std::to_string(count) + (unit == Unit::months ? "m" : "d");
    }
};

struct BacktestFold {
    Date window_start;
    Date window_end;  // exclusive
    Corpus train, test;
};

/// Enumerate chronological folds: fold k tests on records inside window k and
/// trains on every record strictly before the window start. Month windows are
/// calendar-aligned. Folds whose train or test side is empty are omitted.
inline std::vector<BacktestFold> backtest_folds(const Corpus& corpus, Window window, Date start,
                                                Date end) {
    if (start > end) throw Error("backtest_folds: start after end");
    std::vector<std::pair<Date, Date>> windows;  // [begin, end)
    if (window.unit == Window::Unit::months) {
        Date w = month_floor(start);
        while (w <= end) {
            Date next = add_months(w, window.count);
            next = month_floor(next);
            windows.emplace_back(w, next);
            w = next;
        }
    } else {
        Date w = start;
        while (w <= end) {
            Date next = w + std::chrono::days{window.count};
            windows.emplace_back(w, next);
            w = next;
        }
    }

    size_t non_empty = 0;
    for (auto [b, e] : windows) {
        for (const auto& rec : corpus.records)
            if (rec.timestamp && *rec.timestamp >= b && *rec.timestamp < e) {
                ++non_empty;
                break;
            }
    }
    if (non_empty < 2)
        throw Error("backtest_folds: need at least 2 non-empty windows, found " +
                    std::to_string(non_empty));

    std::vector<BacktestFold> folds;
    for (auto [b, e] : windows) {
        BacktestFold fold;
        fold.window_start = b;
        fold.window_end = e;
        for (Corpus* c : {&fold.train, &fold.test}) {
            c->num_classes = corpus.num_classes;
            c->class_names = corpus.class_names;
        }
        fold.train.tag = SplitTag::train;
        fold.test.tag = SplitTag::test;
        for (const auto& rec : corpus.records) {
            if (!rec.timestamp) continue;
            if (*rec.timestamp < b) fold.train.records.push_back(rec);
            else if (*rec.timestamp < e) fold.test.records.push_back(rec);
        }
        if (!fold.train.empty() && !fold.test.empty()) folds.push_back(std::move(fold));
    }
    return folds;
}

/// Convenience overload deriving the window range from the corpus timestamps.
inline std::vector<BacktestFold> backtest_folds(const Corpus& corpus, Window window) {
    std::optional<Date> lo, hi;
    for (const auto& rec : corpus.records) {
        if (!rec.timestamp) continue;
        if (!lo || *rec.timestamp < *lo) lo = rec.timestamp;
        if (!hi || *rec.timestamp > *hi) hi = rec.timestamp;
    }
    if (!lo) throw Error("backtest_folds: corpus has no timestamped records");
    return backtest_folds(corpus, window, *lo, *hi);
}

}  // namespace urlbias
