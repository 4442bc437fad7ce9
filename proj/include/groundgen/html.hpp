#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace groundgen::html {

class MalformedHtml : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Node {
    enum class Kind { Element, Text };

    Kind kind = Kind::Element;
    std::string name;  // lowercase tag name; "#document" for the root
    std::vector<std::pair<std::string, std::string>> attributes;
    std::string text;  // decoded character data for text nodes
    std::vector<Node> children;

    static Node element(std::string name);
    static Node text_node(std::string text);

    bool is_element() const { return kind == Kind::Element; }
    bool is_text() const { return kind == Kind::Text; }
    bool is(std::string_view tag) const { return kind == Kind::Element && name == tag; }

    // nullptr when absent.
    const std::string* attribute(std::string_view key) const;
};

bool is_void_element(std::string_view tag);
bool is_block_element(std::string_view tag);

/// Error-tolerant parse into a DOM rooted at a "#document" element. Missing
/// end tags are implied, stray end tags are dropped, and script/style bodies
/// are read as raw text. Throws MalformedHtml only for empty or non-UTF-8
/// input, where no tree can be built.
Node parse(std::string_view html);

// Replaces character references (&amp;, &#233;, &#x2014;, ...) with UTF-8.
std::string decode_entities(std::string_view s);

std::string text_content(const Node& node);

// Canonical serialization: lowercase tags, double-quoted attributes, a newline
// after each block-level end tag.
std::string serialize(const Node& node);

}  // namespace groundgen::html
