#pragma once

#include "groundgen/html.hpp"

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace groundgen::content {

class ContentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptyAfterCleaning : public ContentError {
public:
    using ContentError::ContentError;
};

class NoPassages : public ContentError {
public:
    using ContentError::ContentError;
};

class EmptyInput : public ContentError {
public:
    using ContentError::ContentError;
};

struct RawDocument {
    std::string doc_id;
    std::string source_uri;
    std::string html;
    std::string fetched_at;
};

struct CleaningConfig {
    // Elements dropped with their whole subtree.
    std::vector<std::string> drop_tags = {"nav", "header", "footer", "aside", "script", "style",
                                          "form", "noscript", "iframe", "svg", "button", "input",
                                          "select", "textarea", "template", "head", "dialog"};
    std::vector<std::string> drop_roles = {"navigation", "banner", "contentinfo", "complementary",
                                           "search", "form", "dialog", "alertdialog", "menu", "menubar"};
    // Matched against class/id pieces split on whitespace, '-' and '_'.
    std::vector<std::string> noise_words = {"nav", "navbar", "navbox", "navigation", "menu", "sidebar",
                                            "breadcrumb", "breadcrumbs", "cookie", "cookies", "banner",
                                            "advert", "advertisement", "ads", "sponsored", "share",
                                            "social", "editsection", "noprint", "reference", "toc",
                                            "catlinks", "printfooter"};
    // Text-density fallback: a container whose text is mostly link text.
    double max_link_density = 0.7;
    std::size_t min_links_for_density = 4;
};

struct CleanDocument {
    std::string doc_id;
    html::Node root;  // "#document" element holding the retained content
};

struct Heading {
    int level = 1;  // 1..6
    std::string title;
    std::size_t byte_offset = 0;  // start of the "#" line in the markdown
};

struct MarkdownDoc {
    std::string doc_id;
    std::string markdown;
    std::vector<Heading> headings;
};

struct TocEntry {
    std::string title;
    int level = 0;  // 0 for synthetic entries (untitled lead text, headingless documents)
    std::size_t begin = 0;
    std::size_t body_begin = 0;  // first byte after the heading line
    std::size_t end = 0;
    bool synthetic = false;
    std::vector<TocEntry> children;
};

struct Toc {
    std::vector<TocEntry> entries;
};

struct SegmentationConfig {
    std::size_t min_words = 40;
    std::size_t max_words = 600;
};

struct Passage {
    std::string passage_id;
    std::string doc_id;
    std::vector<std::string> section_path;
    std::string text;
    std::size_t word_count = 0;
    // Set when the bounds could not be met, e.g. a whole document shorter than min_words.
    bool below_min = false;
};

CleanDocument clean_html(const RawDocument& doc, const CleaningConfig& rules = {});

MarkdownDoc to_markdown(const CleanDocument& doc);

Toc derive_toc(const MarkdownDoc& doc);

/// Segments a Markdown document into passages. Each TOC entry's own text (from
/// its heading line to its first child or span end) is a candidate; short
/// candidates are merged forward into a sibling (backward at a section tail)
/// and long ones are split, preferring paragraph, then line, then sentence
/// boundaries. Passages are exact slices of the Markdown body, so their
/// whitespace-normalized concatenation reproduces the body minus heading lines.
std::vector<Passage> split_passages(const MarkdownDoc& doc, const Toc& toc, const SegmentationConfig& cfg);

// Composite of the first k passages (retrieval order), joined by blank lines.
Passage assemble_multi_grounding(const std::vector<Passage>& passages, std::size_t k);

// clean_html -> to_markdown -> derive_toc -> split_passages.
std::vector<Passage> prepare_document(const RawDocument& doc, const CleaningConfig& rules,
                                      const SegmentationConfig& cfg);

// Markdown body with heading lines removed; the reference text for coverage.
std::string body_without_headings(const MarkdownDoc& doc);

}  // namespace groundgen::content
