#include "groundgen/content_prep.hpp"

#include "groundgen/text.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <string_view>
#include <utility>

namespace groundgen::content {

namespace {

using html::Node;

bool contains(const std::vector<std::string>& list, std::string_view v) {
    return std::find(list.begin(), list.end(), v) != list.end();
}

std::vector<std::string> attribute_pieces(std::string_view value) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : value) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '-' || c == '_') {
            if (!cur.empty()) out.push_back(text::to_lower_ascii(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(text::to_lower_ascii(cur));
    return out;
}

bool is_noise(const Node& el, const CleaningConfig& rules) {
    if (contains(rules.drop_tags, el.name)) return true;
    if (const auto* role = el.attribute("role"); role && contains(rules.drop_roles, text::to_lower_ascii(*role))) {
        return true;
    }
    if (el.attribute("hidden")) return true;
    if (const auto* aria = el.attribute("aria-hidden"); aria && text::to_lower_ascii(*aria) == "true") return true;
    if (const auto* style = el.attribute("style")) {
        std::string compact;
        for (const char c : text::to_lower_ascii(*style)) {
            if (c != ' ') compact.push_back(c);
        }
        if (compact.find("display:none") != std::string::npos) return true;
    }
    for (const auto* key : {"class", "id"}) {
        if (const auto* v = el.attribute(key)) {
            for (const auto& piece : attribute_pieces(*v)) {
                if (contains(rules.noise_words, piece)) return true;
            }
        }
    }
    return false;
}

void strip_noise(Node& node, const CleaningConfig& rules) {
    auto& kids = node.children;
    kids.erase(std::remove_if(kids.begin(), kids.end(),
                              [&](const Node& c) { return c.is_element() && is_noise(c, rules); }),
               kids.end());
    for (auto& c : kids) {
        if (c.is_element()) strip_noise(c, rules);
    }
}

struct LinkStats {
    std::size_t text_chars = 0;
    std::size_t link_chars = 0;
    std::size_t links = 0;
};

LinkStats link_stats(const Node& node, bool in_link = false) {
    LinkStats s;
    if (node.is_text()) {
        const auto n = text::normalize_whitespace(node.text).size();
        s.text_chars = n;
        if (in_link) s.link_chars = n;
        return s;
    }
    const bool is_link = node.is("a");
    if (is_link) ++s.links;
    for (const auto& c : node.children) {
        const auto cs = link_stats(c, in_link || is_link);
        s.text_chars += cs.text_chars;
        s.link_chars += cs.link_chars;
        s.links += cs.links;
    }
    return s;
}

bool is_link_farm(const Node& el, const CleaningConfig& rules) {
    static constexpr std::string_view kContainers[] = {"div", "ul", "ol", "table", "section", "dl"};
    if (std::find(std::begin(kContainers), std::end(kContainers), el.name) == std::end(kContainers)) return false;
    const auto s = link_stats(el);
    if (s.links < rules.min_links_for_density || s.text_chars == 0) return false;
    return static_cast<double>(s.link_chars) / static_cast<double>(s.text_chars) > rules.max_link_density;
}

void strip_link_farms(Node& node, const CleaningConfig& rules) {
    auto& kids = node.children;
    kids.erase(std::remove_if(kids.begin(), kids.end(),
                              [&](const Node& c) { return c.is_element() && is_link_farm(c, rules); }),
               kids.end());
    for (auto& c : kids) {
        if (c.is_element()) strip_link_farms(c, rules);
    }
}

bool is_main_region(const Node& el) {
    if (el.is("main")) return true;
    const auto* role = el.attribute("role");
    return role && text::to_lower_ascii(*role) == "main";
}

const Node* find_first(const Node& node, bool (*pred)(const Node&)) {
    for (const auto& c : node.children) {
        if (!c.is_element()) continue;
        if (pred(c)) return &c;
        if (const auto* hit = find_first(c, pred)) return hit;
    }
    return nullptr;
}

// Outermost <article> elements in document order.
void collect_articles(const Node& node, std::vector<const Node*>& out) {
    for (const auto& c : node.children) {
        if (!c.is_element()) continue;
        if (c.is("article")) out.push_back(&c);
        else collect_articles(c, out);
    }
}

const Node* find_body(const Node& root) {
    return find_first(root, [](const Node& n) { return n.is("body"); });
}

// ---------------------------------------------------------------------------
// Markdown rendering

std::string collapse_inline(std::string_view s) {
    // Collapse whitespace runs but keep a leading/trailing space marker so
    // adjacent inline fragments stay separated.
    std::string out;
    bool pending_space = false;
    std::size_t i = 0;
    while (i < s.size()) {
        const auto w = text::whitespace_length(s, i);
        if (w > 0) {
            pending_space = true;
            i += w;
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(s[i++]);
    }
    if (pending_space) out.push_back(' ');
    return out;
}

std::string plain_text(const Node& node) { return text::normalize_whitespace(html::text_content(node)); }

std::string render_inline(const Node& node);

std::string render_inline_children(const Node& node) {
    std::string out;
    for (const auto& c : node.children) out += render_inline(c);
    return out;
}

std::string wrap(std::string_view marker, const std::string& inner) {
    const auto t = text::trim(inner);
    if (t.empty()) return inner;
    // Keep surrounding spaces outside the emphasis markers.
    const bool lead = !inner.empty() && inner.front() == ' ';
    const bool tail = !inner.empty() && inner.back() == ' ';
    std::string out;
    if (lead) out.push_back(' ');
    out += marker;
    out += t;
    out += marker;
    if (tail) out.push_back(' ');
    return out;
}

std::string render_inline(const Node& node) {
    if (node.is_text()) return collapse_inline(node.text);
    const auto& n = node.name;
    if (n == "br") return "\n";
    if (n == "img") {
        const auto* src = node.attribute("src");
        if (!src || src->empty()) return "";
        const auto* alt = node.attribute("alt");
        return "![" + (alt ? text::normalize_whitespace(*alt) : std::string()) + "](" + *src + ")";
    }
    if (n == "a") {
        auto inner = render_inline_children(node);
        const auto* href = node.attribute("href");
        const auto label = text::trim(inner);
        if (!href || href->empty() || label.empty()) return inner;
        const bool lead = inner.front() == ' ';
        const bool tail = inner.back() == ' ';
        return std::string(lead ? " " : "") + "[" + std::string(label) + "](" + *href + ")" + (tail ? " " : "");
    }
    if (n == "strong" || n == "b") return wrap("**", render_inline_children(node));
    if (n == "em" || n == "i") return wrap("*", render_inline_children(node));
    if (n == "code" || n == "kbd" || n == "samp") return wrap("`", collapse_inline(html::text_content(node)));
    return render_inline_children(node);
}

// Trims each line of an inline rendering and drops empty lines.
std::string tidy_lines(const std::string& s) {
    std::string out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto nl = s.find('\n', start);
        if (nl == std::string::npos) nl = s.size();
        const auto line = text::trim(std::string_view(s).substr(start, nl - start));
        if (!line.empty()) {
            if (!out.empty()) out.push_back('\n');
            out.append(line);
        }
        start = nl + 1;
    }
    return out;
}

class BlockWriter {
public:
    explicit BlockWriter(bool top_level) : top_level_(top_level) {}

    void block(std::string text) {
        if (text.empty()) return;
        blocks_.push_back(std::move(text));
        headings_.push_back(std::nullopt);
    }

    void heading(int level, std::string title) {
        if (title.empty()) return;
        if (!top_level_) {
            block(std::move(title));
            return;
        }
        std::string line(static_cast<std::size_t>(level), '#');
        line.push_back(' ');
        line += title;
        blocks_.push_back(std::move(line));
        headings_.push_back(Heading{level, std::move(title), 0});
    }

    bool empty() const { return blocks_.empty(); }

    std::string join(std::string_view sep) const {
        std::string out;
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            if (i) out += sep;
            out += blocks_[i];
        }
        return out;
    }

    MarkdownDoc finish(std::string doc_id) const {
        MarkdownDoc doc;
        doc.doc_id = std::move(doc_id);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            if (i) doc.markdown += "\n\n";
            if (headings_[i]) {
                auto h = *headings_[i];
                h.byte_offset = doc.markdown.size();
                doc.headings.push_back(std::move(h));
            }
            doc.markdown += blocks_[i];
        }
        if (!doc.markdown.empty()) doc.markdown.push_back('\n');
        return doc;
    }

private:
    bool top_level_;
    std::vector<std::string> blocks_;
    std::vector<std::optional<Heading>> headings_;
};

void render_blocks(const Node& node, BlockWriter& out);

std::string render_list(const Node& list) {
    const bool ordered = list.is("ol");
    std::size_t number = 1;
    if (const auto* start = list.attribute("start")) {
        try {
            number = static_cast<std::size_t>(std::stoul(*start));
        } catch (...) {
        }
    }
    std::string out;
    for (const auto& item : list.children) {
        if (!item.is_element()) {
            if (text::trim(item.text).empty()) continue;
        }
        BlockWriter inner(false);
        if (item.is("li")) {
            render_blocks(item, inner);
        } else {
            // Stray text or a list nested without an <li>.
            Node wrapper = Node::element("div");
            wrapper.children.push_back(item);
            render_blocks(wrapper, inner);
        }
        if (inner.empty()) continue;
        const std::string marker = ordered ? std::to_string(number++) + ". " : "- ";
        const std::string indent(marker.size(), ' ');
        const auto body = inner.join("\n");
        std::size_t start = 0;
        bool first = true;
        while (start <= body.size()) {
            auto nl = body.find('\n', start);
            if (nl == std::string::npos) nl = body.size();
            const auto line = std::string_view(body).substr(start, nl - start);
            if (!out.empty()) out.push_back('\n');
            out += first ? marker : indent;
            out.append(line);
            first = false;
            start = nl + 1;
        }
    }
    return out;
}

std::string table_cell(const Node& cell) {
    std::string s = text::normalize_whitespace(render_inline_children(cell));
    std::string out;
    for (const char c : s) {
        if (c == '|') out += "\\|";
        else out.push_back(c);
    }
    return out;
}

void collect_rows(const Node& node, std::vector<const Node*>& rows) {
    for (const auto& c : node.children) {
        if (!c.is_element()) continue;
        if (c.is("tr")) rows.push_back(&c);
        else if (c.is("thead") || c.is("tbody") || c.is("tfoot")) collect_rows(c, rows);
    }
}

std::string render_table(const Node& table) {
    std::vector<const Node*> rows;
    collect_rows(table, rows);
    std::vector<std::vector<std::string>> cells;
    bool header = false;
    std::size_t columns = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<std::string> row;
        bool all_th = true;
        for (const auto& c : rows[r]->children) {
            if (c.is("td") || c.is("th")) {
                row.push_back(table_cell(c));
                if (!c.is("th")) all_th = false;
            }
        }
        if (row.empty()) continue;
        if (cells.empty()) header = all_th;
        columns = std::max(columns, row.size());
        cells.push_back(std::move(row));
    }
    if (cells.empty()) return "";
    std::string caption;
    for (const auto& c : table.children) {
        if (c.is("caption")) caption = plain_text(c);
    }
    auto emit_row = [&](const std::vector<std::string>& row) {
        std::string line = "|";
        for (std::size_t i = 0; i < columns; ++i) {
            line += ' ';
            if (i < row.size()) line += row[i];
            line += " |";
        }
        return line;
    };
    std::string out;
    if (!caption.empty()) out = caption + "\n\n";
    std::size_t first_data = 0;
    if (header) {
        out += emit_row(cells[0]);
        first_data = 1;
    } else {
        out += emit_row({});
    }
    out += "\n|";
    for (std::size_t i = 0; i < columns; ++i) out += " --- |";
    for (std::size_t r = first_data; r < cells.size(); ++r) {
        out += '\n';
        out += emit_row(cells[r]);
    }
    return out;
}

std::string prefix_lines(const std::string& body, std::string_view prefix) {
    std::string out;
    std::size_t start = 0;
    while (start <= body.size()) {
        auto nl = body.find('\n', start);
        if (nl == std::string::npos) nl = body.size();
        const auto line = std::string_view(body).substr(start, nl - start);
        if (!out.empty()) out.push_back('\n');
        if (line.empty()) {
            out += text::trim(prefix);
        } else {
            out += prefix;
            out += line;
        }
        start = nl + 1;
    }
    return out;
}

void render_element_block(const Node& el, BlockWriter& out) {
    const auto& n = el.name;
    if (n.size() == 2 && n[0] == 'h' && n[1] >= '1' && n[1] <= '6') {
        out.heading(n[1] - '0', plain_text(el));
    } else if (n == "p") {
        out.block(tidy_lines(render_inline_children(el)));
    } else if (n == "ul" || n == "ol") {
        out.block(render_list(el));
    } else if (n == "table") {
        out.block(render_table(el));
    } else if (n == "pre") {
        auto code = html::text_content(el);
        while (!code.empty() && code.back() == '\n') code.pop_back();
        if (!text::trim(code).empty()) out.block("```\n" + code + "\n```");
    } else if (n == "blockquote") {
        BlockWriter inner(false);
        render_blocks(el, inner);
        if (!inner.empty()) out.block(prefix_lines(inner.join("\n\n"), "> "));
    } else if (n == "hr") {
        out.block("---");
    } else if (n == "dt") {
        out.block(tidy_lines(wrap("**", render_inline_children(el))));
    } else {
        // Containers (div, section, article, main, li, dd, figure, ...) and
        // unknown block elements: recurse.
        render_blocks(el, out);
    }
}

void render_blocks(const Node& node, BlockWriter& out) {
    std::string paragraph;
    auto flush = [&] {
        auto p = tidy_lines(paragraph);
        paragraph.clear();
        out.block(std::move(p));
    };
    for (const auto& c : node.children) {
        if (c.is_text() || !html::is_block_element(c.name)) {
            // Inline content; a "figure"-style wrapper without block children
            // still lands here and degrades to its text.
            paragraph += render_inline(c);
            continue;
        }
        flush();
        render_element_block(c, out);
    }
    flush();
}

// ---------------------------------------------------------------------------
// Segmentation

struct Candidate {
    std::string text;
    std::size_t words = 0;
    std::vector<std::string> path;
};

std::vector<std::string> common_prefix(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < a.size() && i < b.size() && a[i] == b[i]; ++i) out.push_back(a[i]);
    return out;
}

std::vector<std::string> parent_of(const std::vector<std::string>& path) {
    if (path.empty()) return {};
    return {path.begin(), path.end() - 1};
}

void collect_candidates(const MarkdownDoc& doc, const TocEntry& entry, std::vector<std::string> path,
                        std::vector<Candidate>& out) {
    if (!entry.synthetic) path.push_back(entry.title);
    const std::size_t own_end = entry.children.empty() ? entry.end : entry.children.front().begin;
    if (own_end > entry.body_begin) {
        const auto body = text::trim(std::string_view(doc.markdown).substr(entry.body_begin, own_end - entry.body_begin));
        if (!body.empty()) out.push_back(Candidate{std::string(body), text::word_count(body), path});
    }
    for (const auto& child : entry.children) collect_candidates(doc, child, path, out);
}

// Boundary strength between two adjacent tokens, by the whitespace between them.
enum class Boundary : int { Paragraph = 0, Line = 1, Sentence = 3, Word = 10 };

struct Unit {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t words = 0;
    Boundary after = Boundary::Word;  // boundary following this unit
};

bool ends_sentence(std::string_view tok) {
    while (!tok.empty() && (tok.back() == '"' || tok.back() == '\'' || tok.back() == ')' || tok.back() == ']' ||
                            tok.back() == '*' || tok.back() == '_')) {
        tok.remove_suffix(1);
    }
    return !tok.empty() && (tok.back() == '.' || tok.back() == '?' || tok.back() == '!');
}

std::vector<Unit> tokenize_units(std::string_view s) {
    std::vector<Unit> units;
    std::size_t i = 0;
    while (i < s.size()) {
        const auto w = text::whitespace_length(s, i);
        if (w > 0) {
            i += w;
            continue;
        }
        Unit u;
        u.begin = i;
        while (i < s.size() && text::whitespace_length(s, i) == 0) ++i;
        u.end = i;
        const auto tok = s.substr(u.begin, u.end - u.begin);
        u.words = text::word_count(tok);
        // Inspect the following whitespace run.
        std::size_t newlines = 0;
        std::size_t j = i;
        while (j < s.size()) {
            const auto ww = text::whitespace_length(s, j);
            if (ww == 0) break;
            if (s[j] == '\n') ++newlines;
            j += ww;
        }
        if (newlines >= 2) u.after = Boundary::Paragraph;
        else if (newlines == 1) u.after = Boundary::Line;
        else if (ends_sentence(tok)) u.after = Boundary::Sentence;
        else u.after = Boundary::Word;
        units.push_back(u);
    }
    return units;
}

struct Piece {
    std::size_t first = 0;  // unit index range [first, last)
    std::size_t last = 0;
    bool short_piece = false;
};

// Partitions units into the fewest pieces with min <= words <= max, then the
// cheapest boundaries; ties prefer the longest leading piece.
std::vector<Piece> partition_units(const std::vector<Unit>& units, const SegmentationConfig& cfg) {
    const std::size_t n = units.size();
    std::vector<std::size_t> prefix(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + units[i].words;

    constexpr auto kInf = std::numeric_limits<std::size_t>::max();
    std::vector<std::pair<std::size_t, std::size_t>> best(n + 1, {kInf, kInf});  // (pieces, penalty)
    best[n] = {0, 0};
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = i + 1; j <= n; ++j) {
            const auto w = prefix[j] - prefix[i];
            if (w > cfg.max_words) break;
            if (w < cfg.min_words || best[j].first == kInf) continue;
            const std::size_t penalty = best[j].second + (j < n ? static_cast<std::size_t>(units[j - 1].after) : 0);
            const std::pair<std::size_t, std::size_t> cand{best[j].first + 1, penalty};
            if (cand < best[i]) best[i] = cand;
        }
    }

    std::vector<Piece> pieces;
    if (best[0].first != kInf) {
        std::size_t i = 0;
        while (i < n) {
            std::size_t chosen = 0;
            for (std::size_t j = i + 1; j <= n; ++j) {
                const auto w = prefix[j] - prefix[i];
                if (w > cfg.max_words) break;
                if (w < cfg.min_words || best[j].first == kInf) continue;
                const std::size_t penalty =
                    best[j].second + (j < n ? static_cast<std::size_t>(units[j - 1].after) : 0);
                if (best[j].first + 1 == best[i].first && penalty == best[i].second) chosen = j;
            }
            pieces.push_back(Piece{i, chosen, false});
            i = chosen;
        }
        return pieces;
    }

    // Infeasible bounds (max_words < ~2*min_words): greedy fill, flag short pieces.
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && prefix[j + 1] - prefix[i] <= cfg.max_words) ++j;
        pieces.push_back(Piece{i, j, prefix[j] - prefix[i] < cfg.min_words});
        i = j;
    }
    return pieces;
}

}  // namespace

CleanDocument clean_html(const RawDocument& doc, const CleaningConfig& rules) {
    Node root = html::parse(doc.html);
    strip_noise(root, rules);

    Node content = Node::element("#document");
    if (const auto* main = find_first(root, is_main_region)) {
        content.children.push_back(*main);
    } else {
        std::vector<const Node*> articles;
        collect_articles(root, articles);
        if (!articles.empty()) {
            for (const auto* a : articles) content.children.push_back(*a);
        } else if (const auto* body = find_body(root)) {
            content.children = body->children;
        } else {
            content.children = std::move(root.children);
        }
    }
    strip_link_farms(content, rules);

    if (text::word_count(html::text_content(content)) == 0) {
        throw EmptyAfterCleaning("no content text survives cleaning in " + doc.doc_id);
    }
    return CleanDocument{doc.doc_id, std::move(content)};
}

MarkdownDoc to_markdown(const CleanDocument& doc) {
    BlockWriter writer(true);
    render_blocks(doc.root, writer);
    return writer.finish(doc.doc_id);
}

Toc derive_toc(const MarkdownDoc& doc) {
    Toc toc;
    const auto size = doc.markdown.size();
    if (doc.headings.empty()) {
        TocEntry root;
        root.synthetic = true;
        root.end = size;
        toc.entries.push_back(std::move(root));
        return toc;
    }
    const auto first = doc.headings.front().byte_offset;
    if (first > 0 && !text::trim(std::string_view(doc.markdown).substr(0, first)).empty()) {
        TocEntry lead;
        lead.synthetic = true;
        lead.end = first;
        toc.entries.push_back(std::move(lead));
    }

    // Flat entries with spans, then nest by level.
    std::vector<TocEntry> flat;
    for (std::size_t i = 0; i < doc.headings.size(); ++i) {
        const auto& h = doc.headings[i];
        TocEntry e;
        e.title = h.title;
        e.level = h.level;
        e.begin = h.byte_offset;
        const auto nl = doc.markdown.find('\n', h.byte_offset);
        e.body_begin = nl == std::string::npos ? size : nl + 1;
        e.end = size;
        for (std::size_t j = i + 1; j < doc.headings.size(); ++j) {
            if (doc.headings[j].level <= h.level) {
                e.end = doc.headings[j].byte_offset;
                break;
            }
        }
        flat.push_back(std::move(e));
    }

    // Stack of index paths into the tree being built.
    std::vector<TocEntry*> stack;
    for (auto& e : flat) {
        while (!stack.empty() && stack.back()->level >= e.level) stack.pop_back();
        auto& siblings = stack.empty() ? toc.entries : stack.back()->children;
        siblings.push_back(std::move(e));
        stack.push_back(&siblings.back());
    }
    return toc;
}

std::vector<Passage> split_passages(const MarkdownDoc& doc, const Toc& toc, const SegmentationConfig& cfg) {
    if (cfg.min_words < 1 || cfg.max_words <= cfg.min_words) {
        throw std::invalid_argument("segmentation requires 1 <= min_words < max_words");
    }
    std::vector<Candidate> cands;
    for (const auto& e : toc.entries) collect_candidates(doc, e, {}, cands);

    std::size_t total_words = 0;
    for (const auto& c : cands) total_words += c.words;
    if (cands.empty() || total_words == 0) throw NoPassages("document " + doc.doc_id + " has no text");

    // Merge short candidates.
    bool whole_doc_short = false;
    for (;;) {
        auto it = std::find_if(cands.begin(), cands.end(), [&](const Candidate& c) { return c.words < cfg.min_words; });
        if (it == cands.end()) break;
        if (cands.size() == 1) {
            whole_doc_short = true;
            break;
        }
        const auto i = static_cast<std::size_t>(it - cands.begin());
        const bool has_next = i + 1 < cands.size();
        const bool has_prev = i > 0;
        const auto parent = parent_of(cands[i].path);
        std::size_t into;
        if (has_next && parent_of(cands[i + 1].path) == parent) into = i + 1;
        else if (has_prev && parent_of(cands[i - 1].path) == parent) into = i - 1;
        else if (has_next) into = i + 1;
        else into = i - 1;

        const auto lo = std::min(i, into);
        const auto hi = std::max(i, into);
        Candidate merged;
        merged.text = cands[lo].text + "\n\n" + cands[hi].text;
        merged.words = cands[lo].words + cands[hi].words;
        merged.path = common_prefix(cands[lo].path, cands[hi].path);
        cands[lo] = std::move(merged);
        cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(hi));
    }

    std::vector<Passage> out;
    auto emit = [&](std::string text_slice, const std::vector<std::string>& path, bool flagged) {
        Passage p;
        p.doc_id = doc.doc_id;
        p.passage_id = doc.doc_id + "#" + std::to_string(out.size());
        p.section_path = path;
        p.word_count = text::word_count(text_slice);
        p.text = std::move(text_slice);
        p.below_min = flagged;
        out.push_back(std::move(p));
    };

    for (auto& c : cands) {
        if (c.words <= cfg.max_words) {
            emit(std::move(c.text), c.path, whole_doc_short);
            continue;
        }
        const auto units = tokenize_units(c.text);
        for (const auto& piece : partition_units(units, cfg)) {
            const auto begin = units[piece.first].begin;
            const auto end = units[piece.last - 1].end;
            emit(c.text.substr(begin, end - begin), c.path, piece.short_piece);
        }
    }
    return out;
}

Passage assemble_multi_grounding(const std::vector<Passage>& passages, std::size_t k) {
    if (passages.empty()) throw EmptyInput("no passages to assemble");
    if (k < 1 || k > passages.size()) {
        throw std::invalid_argument("k must lie in [1, " + std::to_string(passages.size()) + "]");
    }
    Passage out;
    std::vector<std::string> doc_ids;
    for (std::size_t i = 0; i < k; ++i) {
        const auto& p = passages[i];
        if (i) {
            out.passage_id += "+";
            out.text += "\n\n";
        }
        out.passage_id += p.passage_id;
        out.text += p.text;
        if (std::find(doc_ids.begin(), doc_ids.end(), p.doc_id) == doc_ids.end()) doc_ids.push_back(p.doc_id);
    }
    for (std::size_t i = 0; i < doc_ids.size(); ++i) {
        if (i) out.doc_id += "+";
        out.doc_id += doc_ids[i];
    }
    if (k == 1) out.section_path = passages[0].section_path;
    out.word_count = text::word_count(out.text);
    return out;
}

std::vector<Passage> prepare_document(const RawDocument& doc, const CleaningConfig& rules,
                                      const SegmentationConfig& cfg) {
    const auto clean = clean_html(doc, rules);
    const auto md = to_markdown(clean);
    return split_passages(md, derive_toc(md), cfg);
}

std::string body_without_headings(const MarkdownDoc& doc) {
    std::string out;
    std::size_t pos = 0;
    for (const auto& h : doc.headings) {
        out.append(doc.markdown, pos, h.byte_offset - pos);
        out.push_back('\n');
        const auto nl = doc.markdown.find('\n', h.byte_offset);
        pos = nl == std::string::npos ? doc.markdown.size() : nl + 1;
    }
    out.append(doc.markdown, pos, std::string::npos);
    return out;
}

}  // namespace groundgen::content
