#pragma once

#include <zlib.h>

#include <array>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capfuse/analysis/unicode.hpp"
#include "capfuse/error.hpp"

namespace capfuse {

inline constexpr std::string_view kStartOfText = "<start_of_text>";
inline constexpr std::string_view kEndOfText = "<end_of_text>";
inline constexpr std::size_t kClipContextLength = 77;
// The published merges file is sliced to this many lines after its header.
inline constexpr std::size_t kClipMergeLines = 49152 - 256 - 2;

// Byte-level BPE in the CLIP layout: ids 0..255 are the byte symbols, 256..511
// the same symbols with the end-of-word marker, then one id per merge line,
// then the start/end specials.
class BpeTokenizer {
public:
    using Merge = std::pair<std::string, std::string>;

    /// Reads a merges file (plain or gzip). The first line is a header.
    static BpeTokenizer from_file(const std::filesystem::path& path, std::size_t context_limit = kClipContextLength) {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) fail(Errc::VocabLoadError, "cannot open merges file " + path.string());
        std::string data;
        char buf[1 << 16];
        int n = 0;
        while ((n = gzread(f, buf, sizeof buf)) > 0) data.append(buf, static_cast<std::size_t>(n));
        int err = 0;
        const char* msg = gzerror(f, &err);
        const std::string errmsg = msg ? msg : "";
        gzclose(f);
        if (n < 0 || (err != Z_OK && err != Z_STREAM_END))
            fail(Errc::VocabLoadError, "cannot read merges file " + path.string() + ": " + errmsg);
        return from_text(data, context_limit);
    }

    static BpeTokenizer from_text(std::string_view data, std::size_t context_limit = kClipContextLength) {
        std::vector<std::string_view> lines;
        std::size_t start = 0;
        for (;;) {
            const auto nl = data.find('\n', start);
            lines.push_back(data.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
            if (nl == std::string_view::npos) break;
            start = nl + 1;
        }
        if (lines.size() < 2) fail(Errc::VocabLoadError, "merges file has no merge lines");
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 1; i < lines.size() && i <= kClipMergeLines; ++i) {
            std::vector<std::string> parts;
            std::size_t p = 0;
            const auto line = lines[i];
            while (p < line.size()) {
                while (p < line.size() && ascii_space(line[p])) ++p;
                const auto q = p;
                while (p < line.size() && !ascii_space(line[p])) ++p;
                if (p > q) parts.emplace_back(line.substr(q, p - q));
            }
            if (!parts.empty() && parts.size() != 2)
                fail(Errc::VocabLoadError, "merges line " + std::to_string(i + 1) + " does not hold a pair");
            rows.push_back(std::move(parts));
        }
        return BpeTokenizer(rows, context_limit);
    }

    static BpeTokenizer from_merges(const std::vector<Merge>& merges, std::size_t context_limit = kClipContextLength) {
        std::vector<std::vector<std::string>> rows;
        for (const auto& [a, b] : merges) rows.push_back({a, b});
        return BpeTokenizer(rows, context_limit);
    }

    int sot() const noexcept { return sot_; }
    int eot() const noexcept { return eot_; }
    std::size_t vocab_size() const noexcept { return encoder_.size(); }
    std::size_t context_limit() const noexcept { return context_limit_; }
    std::size_t merge_count() const noexcept { return ranks_.size(); }

    /// Lowercased, entity-decoded, whitespace-collapsed text as tokenized.
    static std::string clean(std::string_view text) {
        auto cps = unicode::decode_utf8(text);
        unicode::fix_text(cps);
        std::string s = unicode::html_unescape(unicode::html_unescape(unicode::encode_utf8(cps)));
        cps = unicode::decode_utf8(s);
        std::vector<char32_t> out;
        bool pending_space = false;
        for (char32_t c : cps) {
            if (unicode::is_space(c)) {
                pending_space = !out.empty();
                continue;
            }
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(unicode::to_lower(c));
        }
        return unicode::encode_utf8(out);
    }

    /// Pre-tokenizer pieces of cleaned text: specials, contractions, letter
    /// runs, single digits, and runs of other non-space characters.
    static std::vector<std::string> split_words(std::string_view cleaned) {
        const auto cps = unicode::decode_utf8(cleaned);
        std::vector<std::string> out;
        auto starts_with = [&](std::size_t i, std::string_view lit) {
            if (i + lit.size() > cps.size()) return false;
            for (std::size_t k = 0; k < lit.size(); ++k)
                if (cps[i + k] != static_cast<char32_t>(lit[k])) return false;
            return true;
        };
        static constexpr std::string_view kContractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
        std::size_t i = 0;
        while (i < cps.size()) {
            const char32_t c = cps[i];
            std::size_t len = 0;
            if (starts_with(i, kStartOfText)) {
                len = kStartOfText.size();
            } else if (starts_with(i, kEndOfText)) {
                len = kEndOfText.size();
            } else if (c == '\'') {
                for (auto k : kContractions)
                    if (starts_with(i, k)) {
                        len = k.size();
                        break;
                    }
            }
            if (len == 0) {
                if (unicode::is_letter(c)) {
                    while (i + len < cps.size() && unicode::is_letter(cps[i + len])) ++len;
                } else if (unicode::is_number(c)) {
                    len = 1;
                } else if (!unicode::is_space(c)) {
                    auto other = [](char32_t x) {
                        return !unicode::is_space(x) && !unicode::is_letter(x) && !unicode::is_number(x);
                    };
                    while (i + len < cps.size() && other(cps[i + len])) ++len;
                } else {
                    ++i;
                    continue;
                }
            }
            out.push_back(unicode::encode_utf8(std::vector<char32_t>(cps.begin() + i, cps.begin() + i + len)));
            i += len;
        }
        return out;
    }

    /// Token ids of `text` without the start/end specials.
    std::vector<int> encode(std::string_view text) const {
        std::vector<int> ids;
        for (const auto& word : split_words(clean(text))) {
            if (word == kStartOfText) {
                ids.push_back(sot_);
                continue;
            }
            if (word == kEndOfText) {
                ids.push_back(eot_);
                continue;
            }
            for (const auto& sym : bpe(word)) {
                const auto it = encoder_.find(sym);
                if (it == encoder_.end()) fail(Errc::VocabLoadError, "symbol missing from vocabulary: " + sym);
                ids.push_back(it->second);
            }
        }
        return ids;
    }

    /// [start] + encode(text) + [end], never truncated.
    std::vector<int> tokenize(std::string_view text) const {
        std::vector<int> ids{sot_};
        const auto body = encode(text);
        ids.insert(ids.end(), body.begin(), body.end());
        ids.push_back(eot_);
        return ids;
    }

    std::size_t token_length(std::string_view text) const { return encode(text).size() + 2; }

    std::string decode(const std::vector<int>& ids) const {
        std::string sym;
        for (int id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= decoder_.size()) fail(Errc::InvalidArgument, "token id out of range");
            sym += decoder_[static_cast<std::size_t>(id)];
        }
        std::string bytes;
        const auto cps = unicode::decode_utf8(sym);
        for (std::size_t i = 0; i < cps.size(); ++i) {
            if (cps[i] == '<' && i + 3 < cps.size() && cps[i + 1] == '/' && cps[i + 2] == 'w' && cps[i + 3] == '>') {
                bytes += ' ';
                i += 3;
                continue;
            }
            const auto it = byte_decoder_.find(cps[i]);
            if (it != byte_decoder_.end()) {
                bytes += static_cast<char>(it->second);
            } else {
                unicode::append_utf8(bytes, cps[i]);
            }
        }
        return bytes;
    }

    /// The symbol sequence BPE assigns to one pre-tokenized word.
    std::vector<std::string> bpe(std::string_view word) const {
        std::vector<std::string> w;
        for (unsigned char b : word) w.push_back(byte_symbol_[b]);
        if (w.empty()) return w;
        w.back() += "</w>";
        if (w.size() == 1) return w;
        for (;;) {
            std::size_t best = std::numeric_limits<std::size_t>::max();
            std::size_t best_i = 0;
            for (std::size_t i = 0; i + 1 < w.size(); ++i) {
                const auto it = ranks_.find(pair_key(w[i], w[i + 1]));
                if (it != ranks_.end() && it->second < best) {
                    best = it->second;
                    best_i = i;
                }
            }
            if (best == std::numeric_limits<std::size_t>::max()) break;
            const std::string first = w[best_i], second = w[best_i + 1];
            std::vector<std::string> merged;
            merged.reserve(w.size());
            for (std::size_t i = 0; i < w.size();) {
                if (i + 1 < w.size() && w[i] == first && w[i + 1] == second) {
                    merged.push_back(first + second);
                    i += 2;
                } else {
                    merged.push_back(w[i]);
                    ++i;
                }
            }
            w = std::move(merged);
            if (w.size() == 1) break;
        }
        return w;
    }

private:
    BpeTokenizer(const std::vector<std::vector<std::string>>& rows, std::size_t context_limit)
        : context_limit_(context_limit) {
        if (context_limit <= 2) fail(Errc::VocabLoadError, "context limit must exceed 2");
        init_bytes();
        std::vector<std::string> vocab;
        for (int b = 0; b < 256; ++b) vocab.push_back(byte_symbol_[byte_order_[b]]);
        for (int b = 0; b < 256; ++b) vocab.push_back(byte_symbol_[byte_order_[b]] + "</w>");
        std::unordered_map<std::string, bool> known;
        for (const auto& v : vocab) known[v] = true;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto& row = rows[r];
            if (row.size() == 2) {
                if (!known.count(row[0]) || !known.count(row[1]))
                    fail(Errc::VocabLoadError, "merge " + std::to_string(r + 1) + " (" + row[0] + " " + row[1] +
                                                   ") references an unknown symbol");
                ranks_.insert_or_assign(pair_key(row[0], row[1]), r);
                vocab.push_back(row[0] + row[1]);
                known[vocab.back()] = true;
            } else {
                vocab.emplace_back();  // blank line: occupies an id, never produced
            }
        }
        if (ranks_.empty()) fail(Errc::VocabLoadError, "merges file holds no merge rules");
        vocab.emplace_back(kStartOfText);
        vocab.emplace_back(kEndOfText);
        decoder_ = vocab;
        for (std::size_t i = 0; i < vocab.size(); ++i) encoder_[vocab[i]] = static_cast<int>(i);
        sot_ = static_cast<int>(vocab.size() - 2);
        eot_ = static_cast<int>(vocab.size() - 1);
    }

    // Printable bytes map to themselves; the rest are shifted above 255 so
    // every symbol is a visible, non-space code point.
    void init_bytes() {
        std::vector<int> bs;
        for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
        for (int b = 0xa1; b <= 0xac; ++b) bs.push_back(b);
        for (int b = 0xae; b <= 0xff; ++b) bs.push_back(b);
        std::vector<char32_t> cs(bs.begin(), bs.end());
        std::array<bool, 256> present{};
        for (int b : bs) present[b] = true;
        char32_t extra = 0;
        for (int b = 0; b < 256; ++b)
            if (!present[b]) {
                bs.push_back(b);
                cs.push_back(256 + extra++);
            }
        for (std::size_t i = 0; i < 256; ++i) {
            std::string s;
            unicode::append_utf8(s, cs[i]);
            byte_symbol_[bs[i]] = s;
            byte_order_[i] = bs[i];
            byte_decoder_[cs[i]] = bs[i];
        }
    }

    static bool ascii_space(char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }

    static std::string pair_key(const std::string& a, const std::string& b) { return a + ' ' + b; }

    std::size_t context_limit_;
    std::array<std::string, 256> byte_symbol_;
    std::array<int, 256> byte_order_{};
    std::unordered_map<char32_t, int> byte_decoder_;
    std::unordered_map<std::string, std::size_t> ranks_;
    std::unordered_map<std::string, int> encoder_;
    std::vector<std::string> decoder_;
    int sot_ = 0;
    int eot_ = 0;
};

} // namespace capfuse
