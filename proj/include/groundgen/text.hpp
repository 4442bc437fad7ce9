#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace groundgen::text {

// Byte length of the Unicode whitespace character starting at s[pos], or 0.
std::size_t whitespace_length(std::string_view s, std::size_t pos);

bool is_valid_utf8(std::string_view s);

std::string_view trim(std::string_view s);

// Collapses every run of Unicode whitespace to one ASCII space and trims.
std::string normalize_whitespace(std::string_view s);

// Raw whitespace-delimited tokens, as views into `s`.
std::vector<std::string_view> split_whitespace(std::string_view s);

// Characters removed from a token before it counts as a word.
inline constexpr std::string_view kMarkdownSyntaxChars = "#*_`~|>[]()!-+=";

/// The pipeline tokenizer. Splits on Unicode whitespace, deletes Markdown
/// syntax characters from each token, and drops tokens left empty. Every word
/// count in the pipeline (passage bounds, format gate, metrics) goes through
/// this function.
std::vector<std::string> words(std::string_view s);

std::size_t word_count(std::string_view s);

std::string to_lower_ascii(std::string_view s);

// Lowercases and removes ASCII punctuation. May return an empty string.
std::string normalize_token(std::string_view token);

// words(), normalized, with tokens that normalize to nothing dropped.
std::vector<std::string> normalized_words(std::string_view s);

std::string sha256_hex(std::string_view data);

}  // namespace groundgen::text
