#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Just enough Unicode for CLIP-style text cleaning and pre-tokenization.
// Category tests cover Latin, Greek, Cyrillic, CJK and the common symbol and
// punctuation blocks; code points outside those default to letters.

namespace capfuse::unicode {

inline constexpr char32_t kReplacement = 0xFFFD;

inline std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        int len = 0;
        char32_t cp = 0;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 >> 5) == 0x6) {
            len = 2;
            cp = b0 & 0x1f;
        } else if ((b0 >> 4) == 0xe) {
            len = 3;
            cp = b0 & 0x0f;
        } else if ((b0 >> 3) == 0x1e) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            out.push_back(kReplacement);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(kReplacement);
            ++i;
            continue;
        }
        bool ok = true;
        for (int k = 1; k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (b & 0x3f);
        }
        const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
        if (!ok || overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            out.push_back(kReplacement);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xc0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3f));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xe0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        out += static_cast<char>(0x80 | (cp & 0x3f));
    } else {
        out += static_cast<char>(0xf0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        out += static_cast<char>(0x80 | (cp & 0x3f));
    }
}

inline std::string encode_utf8(const std::vector<char32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t c : cps) append_utf8(out, c);
    return out;
}

/// White_Space property (what str.split() and \s both treat as separators).
inline bool is_space(char32_t c) {
    return (c >= 0x09 && c <= 0x0d) || c == 0x20 || c == 0x85 || c == 0xa0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200a) || c == 0x2028 || c == 0x2029 || c == 0x202f || c == 0x205f || c == 0x3000 ||
           (c >= 0x1c && c <= 0x1f);
}

inline bool is_number(char32_t c) {
    if (c >= '0' && c <= '9') return true;
    if (c < 0x80) return false;
    return c == 0xb2 || c == 0xb3 || c == 0xb9 || (c >= 0xbc && c <= 0xbe) || (c >= 0x660 && c <= 0x669) ||
           (c >= 0x6f0 && c <= 0x6f9) || (c >= 0x966 && c <= 0x96f) || c == 0x2070 || (c >= 0x2074 && c <= 0x2079) ||
           (c >= 0x2080 && c <= 0x2089) || (c >= 0x2150 && c <= 0x2189) || (c >= 0x2460 && c <= 0x249b) ||
           (c >= 0x24ea && c <= 0x24ff) || (c >= 0x2776 && c <= 0x2793) || (c >= 0xff10 && c <= 0xff19);
}

inline bool is_letter(char32_t c) {
    if (c < 0x80) return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    if (c < 0xc0) return c == 0xaa || c == 0xb5 || c == 0xba;
    if (c == 0xd7 || c == 0xf7) return false;
    if (c <= 0x2ff) return !(c >= 0x2c2 && c <= 0x2c5) && !(c >= 0x2d2 && c <= 0x2df) && !(c >= 0x2e5 && c <= 0x2eb);
    if (c <= 0x36f) return false;  // combining marks
    if (c == 0x37e || c == 0x387 || c == 0x3f6 || (c >= 0x482 && c <= 0x489)) return false;
    if (c <= 0x52f) return true;
    if (is_number(c) || is_space(c)) return false;
    if (c >= 0x2000 && c <= 0x2bff) return c == 0x2071 || c == 0x207f || (c >= 0x2090 && c <= 0x209c);
    if (c >= 0x2e00 && c <= 0x2e7f) return false;
    if (c >= 0x3000 && c <= 0x303f) return c == 0x3005 || c == 0x3006 || (c >= 0x3031 && c <= 0x3035);
    if (c >= 0xfe00 && c <= 0xfe0f) return false;
    if (c >= 0xfe10 && c <= 0xfe6f) return false;
    if (c >= 0xff00 && c <= 0xff20) return false;
    if (c >= 0xff3b && c <= 0xff40) return false;
    if (c >= 0xff5b && c <= 0xff65) return false;
    if (c == kReplacement || (c >= 0xfff0 && c <= 0xfffd)) return false;
    if (c >= 0x1f000 && c <= 0x1faff) return false;
    if (c >= 0xe0000) return false;
    return true;
}

inline char32_t to_lower(char32_t c) {
    if (c < 0x80) return (c >= 'A' && c <= 'Z') ? c + 32 : c;
    if ((c >= 0xc0 && c <= 0xde) && c != 0xd7) return c + 32;
    if (c >= 0x100 && c <= 0x137) return c | 1;
    if (c >= 0x139 && c <= 0x148) return (c & 1) ? c + 1 : c;
    if (c >= 0x14a && c <= 0x177) return c | 1;
    if (c == 0x178) return 0xff;
    if (c >= 0x179 && c <= 0x17e) return (c & 1) ? c + 1 : c;
    if (c >= 0x391 && c <= 0x3ab && c != 0x3a2) return c + 32;
    if (c == 0x386) return 0x3ac;
    if (c >= 0x388 && c <= 0x38a) return c + 37;
    if (c == 0x38c) return 0x3cc;
    if (c == 0x38e || c == 0x38f) return c + 63;
    if (c >= 0x410 && c <= 0x42f) return c + 32;
    if (c >= 0x400 && c <= 0x40f) return c + 80;
    if (c >= 0x460 && c <= 0x481) return c | 1;
    if (c >= 0x48a && c <= 0x4bf) return c | 1;
    if (c >= 0x4d0 && c <= 0x52f) return c | 1;
    if (c >= 0xff21 && c <= 0xff3a) return c + 32;
    return c;
}

/// Typographic quote normalization and ligature expansion, as applied by
/// common mojibake/text fixers before tokenization.
inline void fix_text(std::vector<char32_t>& cps) {
    std::vector<char32_t> out;
    out.reserve(cps.size());
    for (char32_t c : cps) {
        switch (c) {
        case 0x2018: case 0x2019: case 0x201a: case 0x201b: out.push_back('\''); break;
        case 0x201c: case 0x201d: case 0x201e: case 0x201f: out.push_back('"'); break;
        case 0xfb00: out.insert(out.end(), {'f', 'f'}); break;
        case 0xfb01: out.insert(out.end(), {'f', 'i'}); break;
        case 0xfb02: out.insert(out.end(), {'f', 'l'}); break;
        case 0xfb03: out.insert(out.end(), {'f', 'f', 'i'}); break;
        case 0xfb04: out.insert(out.end(), {'f', 'f', 'l'}); break;
        case 0xfb06: out.insert(out.end(), {'s', 't'}); break;
        default:
            if (c == 0x0d || (c < 0x20 && c != 0x09 && c != 0x0a && c != 0x0c) || c == 0x7f) {
                if (c == 0x0d) out.push_back('\n');
                break;  // control characters are dropped
            }
            if (c >= 0xff01 && c <= 0xff5e) {
                out.push_back(c - 0xfee0);  // fullwidth ASCII
                break;
            }
            if (c == 0x3000) {
                out.push_back(' ');
                break;
            }
            out.push_back(c);
        }
    }
    cps = std::move(out);
}

/// HTML character-reference decoding with the same matching rules as the
/// HTML5 algorithm: numeric references with optional ';', a fixed table of
/// common named references, and the legacy names that may omit ';'.
inline std::string html_unescape(std::string_view s) {
    struct Named {
        std::string_view name;
        char32_t cp;
        bool legacy;  // also valid without the trailing ';'
    };
    static const Named kNamed[] = {
        {"amp", '&', true},       {"AMP", '&', true},       {"lt", '<', true},         {"LT", '<', true},
        {"gt", '>', true},        {"GT", '>', true},        {"quot", '"', true},       {"QUOT", '"', true},
        {"nbsp", 0xa0, true},     {"copy", 0xa9, true},     {"COPY", 0xa9, true},      {"reg", 0xae, true},
        {"REG", 0xae, true},      {"deg", 0xb0, true},      {"times", 0xd7, true},     {"eacute", 0xe9, true},
        {"middot", 0xb7, true},   {"apos", '\'', false},    {"hellip", 0x2026, false}, {"mdash", 0x2014, false},
        {"ndash", 0x2013, false}, {"lsquo", 0x2018, false}, {"rsquo", 0x2019, false},  {"ldquo", 0x201c, false},
        {"rdquo", 0x201d, false}, {"trade", 0x2122, false}};
    static constexpr char32_t kCp1252[32] = {
        0x20ac, 0x81,   0x201a, 0x192,  0x201e, 0x2026, 0x2020, 0x2021, 0x2c6,  0x2030, 0x160,
        0x2039, 0x152,  0x8d,   0x17d,  0x8f,   0x90,   0x2018, 0x2019, 0x201c, 0x201d, 0x2022,
        0x2013, 0x2014, 0x2dc,  0x2122, 0x161,  0x203a, 0x153,  0x9d,   0x17e,  0x178};
    auto lookup = [&](std::string_view name, bool with_semi) -> const Named* {
        for (const auto& n : kNamed)
            if (n.name == name && (with_semi || n.legacy)) return &n;
        return nullptr;
    };
    auto is_digit = [](char c, bool hex) {
        return (c >= '0' && c <= '9') || (hex && ((c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F')));
    };

    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] != '&') {
            out += s[i++];
            continue;
        }
        std::size_t j = i + 1;
        if (j < s.size() && s[j] == '#') {
            const bool hex = j + 1 < s.size() && (s[j + 1] == 'x' || s[j + 1] == 'X');
            std::size_t k = j + (hex ? 2 : 1);
            const std::size_t digits_start = k;
            while (k < s.size() && is_digit(s[k], hex)) ++k;
            if (k == digits_start) {
                out += s[i++];
                continue;
            }
            std::uint64_t num = 0;
            bool huge = false;
            for (std::size_t d = digits_start; d < k; ++d) {
                const char c = s[d];
                const int v = c <= '9' ? c - '0' : (c | 0x20) - 'a' + 10;
                num = num * (hex ? 16 : 10) + static_cast<std::uint64_t>(v);
                if (num > 0x10FFFF) huge = true;
            }
            if (k < s.size() && s[k] == ';') ++k;
            i = k;
            if (huge || num == 0 || (num >= 0xD800 && num <= 0xDFFF)) {
                append_utf8(out, kReplacement);
            } else if (num >= 0x80 && num <= 0x9f) {
                append_utf8(out, kCp1252[num - 0x80]);
            } else if (num == 0x0d) {
                out += '\r';
            } else if ((num >= 0x1 && num <= 0x8) || num == 0xb || (num >= 0xe && num <= 0x1f) || num == 0x7f ||
                       (num >= 0xfdd0 && num <= 0xfdef) || (num & 0xfffe) == 0xfffe) {
                // invalid code points decode to nothing
            } else {
                append_utf8(out, static_cast<char32_t>(num));
            }
            continue;
        }
        std::size_t k = j;
        while (k < s.size() && k - j < 32 && s[k] != '\t' && s[k] != '\n' && s[k] != '\f' && s[k] != ' ' &&
               s[k] != '<' && s[k] != '&' && s[k] != '#' && s[k] != ';')
            ++k;
        const bool semi = k < s.size() && s[k] == ';';
        const std::string_view name = s.substr(j, k - j);
        if (const Named* n = lookup(name, semi); n && !name.empty()) {
            append_utf8(out, n->cp);
            i = k + (semi ? 1 : 0);
            continue;
        }
        // longest legacy name that prefixes the run; the rest stays literal
        bool matched = false;
        for (std::size_t len = name.size() - (name.empty() ? 0 : 1); len >= 2 && !name.empty(); --len) {
            if (const Named* n = lookup(name.substr(0, len), false)) {
                append_utf8(out, n->cp);
                i = j + len;
                matched = true;
                break;
            }
        }
        if (!matched) out += s[i++];
    }
    return out;
}

} // namespace capfuse::unicode
