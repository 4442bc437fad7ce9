#include "groundgen/html.hpp"

#include "groundgen/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <initializer_list>

namespace groundgen::html {

namespace {

template <typename Range>
bool in_list(std::string_view tag, const Range& list) {
    return std::find(std::begin(list), std::end(list), tag) != std::end(list);
}

bool in_list(std::string_view tag, std::initializer_list<std::string_view> list) {
    return std::find(list.begin(), list.end(), tag) != list.end();
}

constexpr std::string_view kVoid[] = {
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr"};

constexpr std::string_view kBlock[] = {
    "address", "article", "aside", "blockquote", "body", "caption", "dd", "details",
    "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer",
    "form", "h1", "h2", "h3", "h4", "h5", "h6", "head", "header", "hgroup",
    "hr", "html", "li", "main", "nav", "ol", "p", "pre", "section", "summary",
    "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul"};

// Start tags that implicitly close an open <p>.
constexpr std::string_view kClosesParagraph[] = {
    "address", "article", "aside", "blockquote", "details", "dialog", "div", "dl",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4",
    "h5", "h6", "header", "hgroup", "hr", "li", "main", "menu", "nav", "ol", "p",
    "pre", "section", "table", "ul", "dd", "dt"};

constexpr std::string_view kScopeBoundary[] = {
    "#document", "html", "table", "td", "th", "caption", "template", "object", "applet",
    "marquee", "button"};

constexpr std::string_view kHeadings[] = {"h1", "h2", "h3", "h4", "h5", "h6"};

struct NamedEntity {
    std::string_view name;
    char32_t codepoint;
};

constexpr std::array<NamedEntity, 58> kEntities = {{
    {"amp", U'&'},      {"lt", U'<'},        {"gt", U'>'},       {"quot", U'"'},
    {"apos", U'\''},    {"nbsp", 0xA0},      {"ndash", 0x2013},  {"mdash", 0x2014},
    {"hellip", 0x2026}, {"copy", 0xA9},      {"reg", 0xAE},      {"trade", 0x2122},
    {"laquo", 0xAB},    {"raquo", 0xBB},     {"lsquo", 0x2018},  {"rsquo", 0x2019},
    {"ldquo", 0x201C},  {"rdquo", 0x201D},   {"sbquo", 0x201A},  {"bdquo", 0x201E},
    {"times", 0xD7},    {"divide", 0xF7},    {"deg", 0xB0},      {"middot", 0xB7},
    {"bull", 0x2022},   {"euro", 0x20AC},    {"pound", 0xA3},    {"yen", 0xA5},
    {"cent", 0xA2},     {"sect", 0xA7},      {"para", 0xB6},     {"plusmn", 0xB1},
    {"frac12", 0xBD},   {"frac14", 0xBC},    {"frac34", 0xBE},   {"sup2", 0xB2},
    {"sup3", 0xB3},     {"micro", 0xB5},     {"eacute", 0xE9},   {"egrave", 0xE8},
    {"aacute", 0xE1},   {"agrave", 0xE0},    {"iacute", 0xED},   {"oacute", 0xF3},
    {"uacute", 0xFA},   {"ntilde", 0xF1},    {"ouml", 0xF6},     {"uuml", 0xFC},
    {"auml", 0xE4},     {"ccedil", 0xE7},    {"szlig", 0xDF},    {"shy", 0xAD},
    {"thinsp", 0x2009}, {"ensp", 0x2002},    {"emsp", 0x2003},   {"zwj", 0x200D},
    {"zwnj", 0x200C},   {"minus", 0x2212},
}};

void append_utf8(std::string& out, char32_t cp) {
    if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

bool is_name_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '-' || c == '_' || c == ':' || c == '.';
}

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f';
}

// Case-insensitive search for "</tag" starting at pos.
std::size_t find_end_tag(std::string_view s, std::string_view tag, std::size_t pos) {
    while (pos < s.size()) {
        const auto lt = s.find("</", pos);
        if (lt == std::string_view::npos) return std::string_view::npos;
        if (lt + 2 + tag.size() <= s.size()) {
            bool match = true;
            for (std::size_t i = 0; i < tag.size(); ++i) {
                if (std::tolower(static_cast<unsigned char>(s[lt + 2 + i])) != tag[i]) {
                    match = false;
                    break;
                }
            }
            const std::size_t after = lt + 2 + tag.size();
            if (match && (after == s.size() || is_space(s[after]) || s[after] == '>' || s[after] == '/')) {
                return lt;
            }
        }
        pos = lt + 2;
    }
    return std::string_view::npos;
}

class TreeBuilder {
public:
    TreeBuilder() : root_(Node::element("#document")) { stack_.push_back(&root_); }

    void text(std::string data) {
        if (data.empty()) return;
        auto& kids = stack_.back()->children;
        if (!kids.empty() && kids.back().is_text()) {
            kids.back().text += data;
        } else {
            kids.push_back(Node::text_node(std::move(data)));
        }
    }

    void start_tag(std::string name, std::vector<std::pair<std::string, std::string>> attrs, bool self_closing) {
        imply_end_tags(name);
        Node el = Node::element(name);
        el.attributes = std::move(attrs);
        auto& kids = stack_.back()->children;
        kids.push_back(std::move(el));
        if (!is_void_element(name) && !self_closing) stack_.push_back(&kids.back());
    }

    void end_tag(std::string_view name) {
        for (std::size_t i = stack_.size(); i-- > 1;) {
            if (stack_[i]->name == name) {
                stack_.resize(i);
                return;
            }
            // A heading end tag closes any open heading, whatever its level.
            if (in_list(name, kHeadings) && in_list(stack_[i]->name, kHeadings)) {
                stack_.resize(i);
                return;
            }
        }
    }

    Node finish() { return std::move(root_); }

private:
    // Index of the nearest open element named `tag` before any of `boundary`,
    // or 0 when none.
    template <typename Range>
    std::size_t find_in_scope(std::string_view tag, const Range& boundary) const {
        for (std::size_t i = stack_.size(); i-- > 1;) {
            if (stack_[i]->name == tag) return i;
            if (in_list(stack_[i]->name, boundary)) return 0;
        }
        return 0;
    }

    template <typename Range>
    void close_if_open(std::string_view tag, const Range& boundary) {
        if (const auto i = find_in_scope(tag, boundary); i > 0) stack_.resize(i);
    }

    void close_if_open(std::string_view tag, std::initializer_list<std::string_view> boundary) {
        close_if_open<std::initializer_list<std::string_view>>(tag, boundary);
    }

    void imply_end_tags(std::string_view name) {
        if (in_list(name, kClosesParagraph)) close_if_open("p", kScopeBoundary);
        if (in_list(name, kHeadings) && in_list(stack_.back()->name, kHeadings)) stack_.pop_back();
        if (name == "li") close_if_open("li", {"ul", "ol", "#document"});
        if (name == "dt" || name == "dd") {
            close_if_open("dt", {"dl", "#document"});
            close_if_open("dd", {"dl", "#document"});
        }
        if (name == "td" || name == "th") {
            close_if_open("td", {"tr", "table", "#document"});
            close_if_open("th", {"tr", "table", "#document"});
        }
        if (name == "tr") {
            close_if_open("td", {"tr", "table", "#document"});
            close_if_open("th", {"tr", "table", "#document"});
            close_if_open("tr", {"table", "#document"});
        }
        if (name == "thead" || name == "tbody" || name == "tfoot") {
            close_if_open("tr", {"table", "#document"});
            for (const auto sect : {"thead", "tbody", "tfoot"}) close_if_open(sect, {"table", "#document"});
        }
        if (name == "option") close_if_open("option", {"select", "#document"});
    }

    Node root_;
    std::vector<Node*> stack_;
};

}  // namespace

Node Node::element(std::string name) {
    Node n;
    n.kind = Kind::Element;
    n.name = std::move(name);
    return n;
}

Node Node::text_node(std::string text) {
    Node n;
    n.kind = Kind::Text;
    n.text = std::move(text);
    return n;
}

const std::string* Node::attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes) {
        if (k == key) return &v;
    }
    return nullptr;
}

bool is_void_element(std::string_view tag) { return in_list(tag, kVoid); }
bool is_block_element(std::string_view tag) { return in_list(tag, kBlock); }

std::string decode_entities(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] != '&') {
            out.push_back(s[i++]);
            continue;
        }
        const auto semi = s.find(';', i + 1);
        if (semi == std::string_view::npos || semi - i > 12) {
            out.push_back(s[i++]);
            continue;
        }
        const auto body = s.substr(i + 1, semi - i - 1);
        bool decoded = false;
        if (!body.empty() && body[0] == '#') {
            const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
            const auto digits = body.substr(hex ? 2 : 1);
            if (!digits.empty()) {
                std::uint32_t cp = 0;
                bool ok = true;
                for (const char c : digits) {
                    const auto u = static_cast<unsigned char>(c);
                    int d = -1;
                    if (std::isdigit(u)) d = c - '0';
                    else if (hex && c >= 'a' && c <= 'f') d = c - 'a' + 10;
                    else if (hex && c >= 'A' && c <= 'F') d = c - 'A' + 10;
                    if (d < 0) {
                        ok = false;
                        break;
                    }
                    cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
                    if (cp > 0x10FFFF) cp = 0x110000;
                }
                if (ok) {
                    append_utf8(out, cp);
                    decoded = true;
                }
            }
        } else {
            for (const auto& e : kEntities) {
                if (e.name == body) {
                    append_utf8(out, e.codepoint);
                    decoded = true;
                    break;
                }
            }
        }
        if (decoded) {
            i = semi + 1;
        } else {
            out.push_back(s[i++]);
        }
    }
    return out;
}

Node parse(std::string_view html) {
    if (text::trim(html).empty()) throw MalformedHtml("empty document");
    if (!text::is_valid_utf8(html)) throw MalformedHtml("document is not valid UTF-8");

    TreeBuilder builder;
    std::size_t i = 0;
    std::string pending_text;
    auto flush_text = [&] {
        if (!pending_text.empty()) {
            builder.text(decode_entities(pending_text));
            pending_text.clear();
        }
    };

    while (i < html.size()) {
        if (html[i] != '<') {
            const auto next = html.find('<', i);
            const auto end = next == std::string_view::npos ? html.size() : next;
            pending_text.append(html.substr(i, end - i));
            i = end;
            continue;
        }
        if (html.substr(i, 4) == "<!--") {
            const auto close = html.find("-->", i + 4);
            i = close == std::string_view::npos ? html.size() : close + 3;
            continue;
        }
        if (i + 1 < html.size() && (html[i + 1] == '!' || html[i + 1] == '?')) {
            const auto close = html.find('>', i);
            i = close == std::string_view::npos ? html.size() : close + 1;
            continue;
        }
        const bool is_end = i + 1 < html.size() && html[i + 1] == '/';
        std::size_t p = i + (is_end ? 2 : 1);
        if (p >= html.size() || !std::isalpha(static_cast<unsigned char>(html[p]))) {
            pending_text.push_back('<');
            ++i;
            continue;
        }
        std::string name;
        while (p < html.size() && is_name_char(html[p])) {
            name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(html[p]))));
            ++p;
        }

        std::vector<std::pair<std::string, std::string>> attrs;
        bool self_closing = false;
        while (p < html.size() && html[p] != '>') {
            if (is_space(html[p])) {
                ++p;
                continue;
            }
            if (html[p] == '/') {
                self_closing = true;
                ++p;
                continue;
            }
            self_closing = false;
            std::string key;
            while (p < html.size() && !is_space(html[p]) && html[p] != '=' && html[p] != '>' &&
                   !(html[p] == '/' && p + 1 < html.size() && html[p + 1] == '>')) {
                key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(html[p]))));
                ++p;
            }
            while (p < html.size() && is_space(html[p])) ++p;
            std::string value;
            if (p < html.size() && html[p] == '=') {
                ++p;
                while (p < html.size() && is_space(html[p])) ++p;
                if (p < html.size() && (html[p] == '"' || html[p] == '\'')) {
                    const char q = html[p++];
                    const auto close = html.find(q, p);
                    const auto end = close == std::string_view::npos ? html.size() : close;
                    value = decode_entities(html.substr(p, end - p));
                    p = end == html.size() ? end : end + 1;
                } else {
                    const auto start = p;
                    while (p < html.size() && !is_space(html[p]) && html[p] != '>') ++p;
                    value = decode_entities(html.substr(start, p - start));
                }
            }
            if (!key.empty() && std::none_of(attrs.begin(), attrs.end(), [&](const auto& a) { return a.first == key; })) {
                attrs.emplace_back(std::move(key), std::move(value));
            }
        }
        i = p < html.size() ? p + 1 : html.size();

        flush_text();
        if (is_end) {
            builder.end_tag(name);
            continue;
        }
        builder.start_tag(name, std::move(attrs), self_closing);

        if (!self_closing && (name == "script" || name == "style" || name == "textarea" || name == "title")) {
            const auto close = find_end_tag(html, name, i);
            const auto end = close == std::string_view::npos ? html.size() : close;
            const auto body = html.substr(i, end - i);
            if (name == "textarea" || name == "title") builder.text(decode_entities(body));
            else builder.text(std::string(body));
            builder.end_tag(name);
            if (close == std::string_view::npos) {
                i = html.size();
            } else {
                const auto gt = html.find('>', close);
                i = gt == std::string_view::npos ? html.size() : gt + 1;
            }
        }
    }
    flush_text();
    return builder.finish();
}

std::string text_content(const Node& node) {
    if (node.is_text()) return node.text;
    std::string out;
    for (const auto& c : node.children) out += text_content(c);
    return out;
}

namespace {

void escape_into(std::string& out, std::string_view s, bool attribute) {
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"':
                if (attribute) out += "&quot;";
                else out.push_back(c);
                break;
            default: out.push_back(c);
        }
    }
}

void serialize_into(std::string& out, const Node& node) {
    if (node.is_text()) {
        escape_into(out, node.text, false);
        return;
    }
    const bool is_root = node.name == "#document";
    if (!is_root) {
        out.push_back('<');
        out += node.name;
        for (const auto& [k, v] : node.attributes) {
            out.push_back(' ');
            out += k;
            out += "=\"";
            escape_into(out, v, true);
            out.push_back('"');
        }
        out.push_back('>');
        if (is_void_element(node.name)) {
            if (is_block_element(node.name)) out.push_back('\n');
            return;
        }
    }
    for (const auto& c : node.children) serialize_into(out, c);
    if (!is_root) {
        out += "</";
        out += node.name;
        out.push_back('>');
        if (is_block_element(node.name)) out.push_back('\n');
    }
}

}  // namespace

std::string serialize(const Node& node) {
    std::string out;
    serialize_into(out, node);
    return out;
}

}  // namespace groundgen::html
