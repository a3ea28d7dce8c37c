// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "urlbias/corpus.hpp"

namespace urlbias {

// Reserved token ids, present in every vocabulary.
constexpr int32_t kOovId = 0;
constexpr int32_t kPadId = 1;
inline const std::string kOovToken = "<unk>";
inline const std::string kPadToken = "<pad>";

enum class TokenMode { chars, words };

inline const char* to_string(TokenMode m) { return m == TokenMode::chars ? "char" : "word"; }

/// Word-boundary characters for URLs. The set mirrors the separators URL
/// grammars use; matching token shapes show up in production corpora
/// (scheme/host/path/query fragments, url-encoded runs).
inline bool is_word_delimiter(unsigned char c) {
    switch (c) {
        case '/': case '.': case '?': case '=': case '&': case '%': case '-':
        case '_': case ':': case '@': case '+': case '~': case '#': case ',':
        case ';': case ' ':
            return true;
        default:
            return false;
    }
}

/// Split a URL into lowercased word tokens, discarding delimiters (or keeping
/// them as standalone tokens when keep_delimiters is set).
inline std::vector<std::string> tokenize_words(std::string_view url,
                                               bool keep_delimiters = false) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            out.push_back(current);
            current.clear();
        }
    };
    for (unsigned char c : url) {
        if (is_word_delimiter(c)) {
            flush();
            if (keep_delimiters) out.emplace_back(1, char(c));
        } else {
            current.push_back(char(std::tolower(c)));
        }
    }
    flush();
    return out;
}

/// One token per byte. Bytes outside printable ASCII map to the OOV token;
/// case is preserved (unlike word tokens).
inline std::vector<std::string> tokenize_chars(std::string_view url) {
    std::vector<std::string> out;
    out.reserve(url.size());
    for (unsigned char c : url) {
        if (c >= 0x20 && c <= 0x7E) out.emplace_back(1, char(c));
        else out.push_back(kOovToken);
    }
    return out;
}

/// Token <-> id mapping with per-class occurrence counts collected from the
/// training split. Ids 0/1 are reserved for OOV/PAD; the PAD row of
/// class_counts is all zeros.
struct TokenVocabulary {
    TokenMode mode = TokenMode::words;
    std::vector<std::string> tokens;                  // id -> surface form
    std::unordered_map<std::string, int32_t> ids;     // surface form -> id
    std::vector<std::vector<int64_t>> class_counts;   // M x K
    int num_classes = 2;
    std::string source_split = "unspecified";

    int32_t size() const { return int32_t(tokens.size()); }

    int32_t id_of(const std::string& token) const {
        auto it = ids.find(token);
        return it == ids.end() ? kOovId : it->second;
    }

    int64_t total_count(int32_t id) const {
        int64_t t = 0;
        for (int64_t c : class_counts[id]) t += c;
        return t;
    }
};

/// Build a vocabulary over the training corpus: every token with total
/// occurrence >= min_count, most frequent first (ties by token string), capped
/// at max_size entries beyond the two reserved ids.
inline TokenVocabulary build_vocab(const Corpus& train, TokenMode mode, int64_t min_count = 1,
                                   size_t max_size = 100000, bool keep_delimiters = false) {
    if (train.empty()) throw Error("build_vocab: empty corpus");
    if (train.tag == SplitTag::test)
        throw Error("build_vocab: refusing to derive token statistics from a test split");
    if (min_count < 1) min_count = 1;

    const int K = train.num_classes;
    std::unordered_map<std::string, std::vector<int64_t>> counts;
    for (const auto& rec : train.records) {
        auto toks = mode == TokenMode::chars ? tokenize_chars(rec.url)
                                             : tokenize_words(rec.url, keep_delimiters);
        for (auto& t : toks) {
            if (t == kOovToken) continue;  // out-of-alphabet bytes stay on the reserved id
            auto& row = counts[t];
            if (row.empty()) row.assign(K, 0);
            ++row[rec.label];
        }
    }

    std::vector<std::pair<std::string, int64_t>> order;  // token, total
    order.reserve(counts.size());
    for (const auto& [tok, row] : counts) {
        int64_t total = 0;
        for (int64_t c : row) total += c;
        if (total >= min_count) order.emplace_back(tok, total);
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (order.size() > max_size) order.resize(max_size);
    if (order.empty()) throw Error("build_vocab: no token meets min_count");

    TokenVocabulary vocab;
    vocab.mode = mode;
    vocab.num_classes = K;
    vocab.source_split = to_string(train.tag);
    vocab.tokens = {kOovToken, kPadToken};
    vocab.class_counts.assign(2, std::vector<int64_t>(K, 0));
    for (const auto& [tok, total] : order) {
        (void)total;
        vocab.ids[tok] = vocab.size();
        vocab.tokens.push_back(tok);
        vocab.class_counts.push_back(counts[tok]);
    }
    vocab.ids[kOovToken] = kOovId;
    vocab.ids[kPadToken] = kPadId;
    return vocab;
}

/// A URL encoded against both vocabularies: parallel id and surface-token
/// sequences, truncated and PAD-filled to the configured lengths.
struct TokenizedSample {
    std::vector<int32_t> char_ids, word_ids;
    std::vector<std::string> char_text, word_text;
    int label = 0;

    int32_t char_len() const {  // positions before padding
        int32_t n = 0;
        for (int32_t id : char_ids)
            if (id != kPadId) ++n;
        return n;
    }
};

namespace detail {

inline void encode_stream(const std::vector<std::string>& toks, const TokenVocabulary& vocab,
                          size_t max_len, std::vector<int32_t>& ids,
                          std::vector<std::string>& text) {
    ids.clear();
    text.clear();
    ids.reserve(max_len);
    text.reserve(max_len);
    for (size_t i = 0; i < toks.size() && i < max_len; ++i) {
        ids.push_back(vocab.id_of(toks[i]));
        text.push_back(toks[i]);
    }
    while (ids.size() < max_len) {
        ids.push_back(kPadId);
        text.push_back(kPadToken);
    }
}

}  // namespace detail

inline TokenizedSample encode(const UrlRecord& record, const TokenVocabulary& vocab_char,
                              const TokenVocabulary& vocab_word, size_t max_chars = 200,
                              size_t max_words = 50) {
    TokenizedSample s;
    s.label = record.label;
    detail::encode_stream(tokenize_chars(record.url), vocab_char, max_chars, s.char_ids,
                          s.char_text);
    detail::encode_stream(tokenize_words(record.url), vocab_word, max_words, s.word_ids,
                          s.word_text);
    return s;
}

// ---------------------------------------------------------------------------
// TSV persistence: one comment header line, then token / id / per-class counts.
// ---------------------------------------------------------------------------

inline void save_vocab(const TokenVocabulary& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "# mode=" << to_string(vocab.mode) << " num_classes=" << vocab.num_classes
        << " source_split=" << vocab.source_split << '\n';
    for (int32_t id = 0; id < vocab.size(); ++id) {
        out << tsv_escape(vocab.tokens[id]) << '\t' << id;
        for (int64_t c : vocab.class_counts[id]) out << '\t' << c;
        out << '\n';
    }
}

inline TokenVocabulary load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    TokenVocabulary vocab;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# mode=", 0) != 0)
        throw Error("load_vocab: missing header in " + path.string());
    {
        std::istringstream hs(line.substr(1));
        std::string field;
        while (hs >> field) {
            auto eq = field.find('=');
            if (eq == std::string::npos) continue;
            auto key = field.substr(0, eq), val = field.substr(eq + 1);
            if (key == "mode") vocab.mode = val == "char" ? TokenMode::chars : TokenMode::words;
            else if (key == "num_classes") vocab.num_classes = std::stoi(val);
            else if (key == "source_split") vocab.source_split = val;
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t pos = 0;
        while (true) {
            auto tab = line.find('\t', pos);
            fields.push_back(line.substr(pos, tab == std::string::npos ? tab : tab - pos));
            if (tab == std::string::npos) break;
            pos = tab + 1;
        }
        if (int(fields.size()) != 2 + vocab.num_classes)
            throw Error("load_vocab: malformed row in " + path.string());
        int32_t id = std::stoi(fields[1]);
        if (id != vocab.size()) throw Error("load_vocab: ids must be dense and ordered");
        vocab.tokens.push_back(tsv_unescape(fields[0]));
        std::vector<int64_t> row(vocab.num_classes);
        for (int k = 0; k < vocab.num_classes; ++k) row[k] = std::stoll(fields[2 + k]);
        vocab.class_counts.push_back(std::move(row));
    }
    if (vocab.size() < 2 || vocab.tokens[kOovId] != kOovToken || vocab.tokens[kPadId] != kPadToken)
        throw Error("load_vocab: reserved ids missing in " + path.string());
    for (int32_t id = 0; id < vocab.size(); ++id) vocab.ids[vocab.tokens[id]] = id;
    return vocab;
}

}  // namespace urlbias
