#include "groundgen/text.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <stdexcept>

namespace groundgen::text {

namespace {

unsigned char byte_at(std::string_view s, std::size_t i) {
    return static_cast<unsigned char>(s[i]);
}

}  // namespace

std::size_t whitespace_length(std::string_view s, std::size_t pos) {
    if (pos >= s.size()) return 0;
    const unsigned char c = byte_at(s, pos);
    if (c == ' ' || (c >= '\t' && c <= '\r')) return 1;
    const std::size_t left = s.size() - pos;
    if (c == 0xC2 && left >= 2) {
        const unsigned char c1 = byte_at(s, pos + 1);
        if (c1 == 0x85 || c1 == 0xA0) return 2;
        return 0;
    }
    if (left < 3) return 0;
    const unsigned char c1 = byte_at(s, pos + 1);
    const unsigned char c2 = byte_at(s, pos + 2);
    if (c == 0xE1 && c1 == 0x9A && c2 == 0x80) return 3;  // U+1680
    if (c == 0xE2 && c1 == 0x80) {
        if (c2 <= 0x8A) return 3;                            // U+2000..U+200A
        if (c2 == 0xA8 || c2 == 0xA9 || c2 == 0xAF) return 3;  // U+2028, U+2029, U+202F
        return 0;
    }
    if (c == 0xE2 && c1 == 0x81 && c2 == 0x9F) return 3;  // U+205F
    if (c == 0xE3 && c1 == 0x80 && c2 == 0x80) return 3;  // U+3000
    return 0;
}

bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = byte_at(s, i);
        std::size_t extra = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= s.size()) return false;
        for (std::size_t k = 1; k <= extra; ++k) {
            const unsigned char cc = byte_at(s, i + k);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Overlong forms, surrogates, out of range.
        if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
            (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
            return false;
        }
        i += extra + 1;
    }
    return true;
}

std::string_view trim(std::string_view s) {
    std::size_t begin = 0;
    while (begin < s.size()) {
        const std::size_t w = whitespace_length(s, begin);
        if (w == 0) break;
        begin += w;
    }
    // Whitespace widths are only decodable left to right.
    std::size_t last_content_end = begin;
    for (std::size_t i = begin; i < s.size();) {
        const std::size_t w = whitespace_length(s, i);
        if (w == 0) {
            ++i;
            last_content_end = i;
        } else {
            i += w;
        }
    }
    return s.substr(begin, last_content_end - begin);
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    std::size_t start = std::string_view::npos;
    while (i < s.size()) {
        const std::size_t w = whitespace_length(s, i);
        if (w > 0) {
            if (start != std::string_view::npos) {
                out.push_back(s.substr(start, i - start));
                start = std::string_view::npos;
            }
            i += w;
        } else {
            if (start == std::string_view::npos) start = i;
            ++i;
        }
    }
    if (start != std::string_view::npos) out.push_back(s.substr(start));
    return out;
}

std::string normalize_whitespace(std::string_view s) {
    std::string out;
    for (const auto tok : split_whitespace(s)) {
        if (!out.empty()) out.push_back(' ');
        out.append(tok);
    }
    return out;
}

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    for (const auto tok : split_whitespace(s)) {
        std::string w;
        w.reserve(tok.size());
        for (const char c : tok) {
            if (kMarkdownSyntaxChars.find(c) == std::string_view::npos) w.push_back(c);
        }
        if (!w.empty()) out.push_back(std::move(w));
    }
    return out;
}

std::size_t word_count(std::string_view s) {
    std::size_t n = 0;
    for (const auto tok : split_whitespace(s)) {
        for (const char c : tok) {
            if (kMarkdownSyntaxChars.find(c) == std::string_view::npos) {
                ++n;
                break;
            }
        }
    }
    return n;
}

std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string normalize_token(std::string_view token) {
    std::string out;
    out.reserve(token.size());
    for (const char c : token) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::ispunct(u)) continue;
        out.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
    }
    return out;
}

std::vector<std::string> normalized_words(std::string_view s) {
    std::vector<std::string> out;
    for (const auto& w : words(s)) {
        auto n = normalize_token(w);
        if (!n.empty()) out.push_back(std::move(n));
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

}  // namespace groundgen::text
