// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 urlbias contributors

#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace urlbias {

/// Library-wide error type. Fatal conditions throw this; recoverable ones are
/// reported through result structs.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Calendar dates (day resolution)
// ---------------------------------------------------------------------------

using Date = std::chrono::sys_days;

inline std::optional<Date> parse_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto num = [](std::string_view v) -> std::optional<int> {
        int out = 0;
        for (char c : v) {
            if (c < '0' || c > '9') return std::nullopt;
            out = out * 10 + (c - '0');
        }
        return out;
    };
    auto y = num(s.substr(0, 4)), m = num(s.substr(5, 2)), d = num(s.substr(8, 2));
    if (!y || !m || !d) return std::nullopt;
    std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{unsigned(*m)},
                                    std::chrono::day{unsigned(*d)}};
    if (!ymd.ok()) return std::nullopt;
    return Date{ymd};
}

inline std::string format_date(Date d) {
    std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", int(ymd.year()), unsigned(ymd.month()),
                  unsigned(ymd.day()));
    return buf;
}

/// Start of the calendar month containing d.
inline Date month_floor(Date d) {
    std::chrono::year_month_day ymd{d};
    return Date{std::chrono::year_month_day{ymd.year(), ymd.month(), std::chrono::day{1}}};
}

inline Date add_months(Date d, int n) {
    std::chrono::year_month_day ymd{d};
    auto ym = std::chrono::year_month{ymd.year(), ymd.month()} + std::chrono::months{n};
    std::chrono::year_month_day shifted{ym.year(), ym.month(), ymd.day()};
    if (!shifted.ok()) shifted = ym.year() / ym.month() / std::chrono::last;
    return Date{shifted};
}

// ---------------------------------------------------------------------------
// Byte-string transport
//
// URLs are raw byte strings. JSON documents must be valid UTF-8, so on disk
// each byte maps to the Unicode code point of its Latin-1 character; this is
// lossless in both directions for anything this library writes. Foreign files
// containing code points above U+00FF get those characters replaced with 0x1A
// (SUB), which downstream tokenization treats as out-of-alphabet anyway.
// ---------------------------------------------------------------------------

inline std::string bytes_to_utf8(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size());
    for (unsigned char c : bytes) {
        if (c < 0x80) {
            out.push_back(char(c));
        } else {
            out.push_back(char(0xC0 | (c >> 6)));
            out.push_back(char(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

inline std::string utf8_to_bytes(std::string_view utf8) {
    std::string out;
    out.reserve(utf8.size());
    size_t i = 0;
    while (i < utf8.size()) {
        unsigned char c = utf8[i];
        uint32_t cp = 0;
        int extra = 0;
        if (c < 0x80) {
            cp = c;
        } else if ((c & 0xE0) == 0xC0) {
            cp = c & 0x1F;
            extra = 1;
        } else if ((c & 0xF0) == 0xE0) {
            cp = c & 0x0F;
            extra = 2;
        } else if ((c & 0xF8) == 0xF0) {
            cp = c & 0x07;
            extra = 3;
        } else {
            out.push_back(char(0x1A));
            ++i;
            continue;
        }
        if (i + extra >= utf8.size()) {
            out.push_back(char(0x1A));
            break;
        }
        bool ok = true;
        for (int k = 1; k <= extra; ++k) {
            unsigned char cc = utf8[i + k];
            if ((cc & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (!ok) {
            out.push_back(char(0x1A));
            ++i;
            continue;
        }
        out.push_back(cp <= 0xFF ? char(cp) : char(0x1A));
        i += 1 + extra;
    }
    return out;
}

// ---------------------------------------------------------------------------
// TSV-safe token escaping: percent-encode '%', control bytes and DEL so that
// arbitrary tokens survive tab-separated files.
// ---------------------------------------------------------------------------

inline std::string tsv_escape(std::string_view token) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    out.reserve(token.size());
    for (unsigned char c : token) {
        if (c == '%' || c < 0x21 || c == 0x7F) {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        } else {
            out.push_back(char(c));
        }
    }
    return out;
}

inline std::string tsv_unescape(std::string_view token) {
    auto hexval = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    };
    std::string out;
    out.reserve(token.size());
    for (size_t i = 0; i < token.size(); ++i) {
        if (token[i] == '%' && i + 2 < token.size()) {
            int hi = hexval(token[i + 1]), lo = hexval(token[i + 2]);
            if (hi >= 0 && lo >= 0) {
                out.push_back(char(hi * 16 + lo));
                i += 2;
                continue;
            }
        }
        out.push_back(token[i]);
    }
    return out;
}

}  // namespace urlbias
