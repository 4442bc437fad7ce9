#include "doctest.h"

#include "groundgen/content_prep.hpp"
#include "groundgen/text.hpp"

#include <fstream>
#include <random>
#include <sstream>

using namespace groundgen;
using namespace groundgen::content;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing fixture " << path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fixture(const std::string& name) { return read_file(std::string(GROUNDGEN_TEST_DATA) + "/" + name); }

std::string filler(std::size_t n, const std::string& stem = "w") {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += stem + std::to_string(i);
    }
    return out;
}

struct Section {
    int level;
    std::string title;
    std::vector<std::size_t> paragraphs;  // word counts
};

MarkdownDoc build_markdown(const std::vector<Section>& sections) {
    MarkdownDoc doc;
    doc.doc_id = "d";
    int counter = 0;
    for (const auto& s : sections) {
        if (!doc.markdown.empty()) doc.markdown += "\n\n";
        doc.headings.push_back(Heading{s.level, s.title, doc.markdown.size()});
        doc.markdown += std::string(static_cast<std::size_t>(s.level), '#') + " " + s.title;
        for (const auto n : s.paragraphs) {
            doc.markdown += "\n\n" + filler(n, "s" + std::to_string(counter++) + "w");
        }
    }
    doc.markdown += "\n";
    return doc;
}

std::string joined_passages(const std::vector<Passage>& ps) {
    std::string all;
    for (const auto& p : ps) all += p.text + " ";
    return text::normalize_whitespace(all);
}

}  // namespace

TEST_CASE("clean_html keeps only the article") {
    RawDocument doc{"a", "", R"(<html><body>
        <nav><a href="/">Home</a> <a href="/x">Other</a></nav>
        <article><p>First paragraph here.</p><p>Second paragraph here.</p><p>Third paragraph here.</p></article>
        <footer><p>Copyright notice</p></footer></body></html>)", ""};
    const auto clean = clean_html(doc);
    REQUIRE(clean.root.children.size() == 1);
    const auto& article = clean.root.children[0];
    CHECK(article.is("article"));
    std::size_t paragraphs = 0;
    for (const auto& c : article.children) paragraphs += c.is("p") ? 1 : 0;
    CHECK(paragraphs == 3);
    const auto text_out = html::text_content(clean.root);
    CHECK(text_out.find("Home") == std::string::npos);
    CHECK(text_out.find("Copyright") == std::string::npos);
}

TEST_CASE("clean_html rejects a page with only a footer cookie banner") {
    RawDocument doc{"b", "", "<html><body><footer><div class=\"consent\">We use cookies. <a href=\"#\">OK</a></div></footer></body></html>", ""};
    CHECK_THROWS_AS(clean_html(doc), EmptyAfterCleaning);
}

TEST_CASE("clean_html: malformed only when no DOM can be built") {
    CHECK_THROWS_AS(clean_html(RawDocument{"c", "", "", ""}), html::MalformedHtml);
    CHECK_THROWS_AS(clean_html(RawDocument{"c", "", "<p>caf\xE9</p>", ""}), html::MalformedHtml);
    // Unclosed tags and stray end tags are tolerated.
    const auto clean = clean_html(RawDocument{"c", "", "<div><p>one<p>two</span></div></b>", ""});
    CHECK(to_markdown(clean).markdown == "one\n\ntwo\n");
}

TEST_CASE("clean_html drops ARIA-role and class-marked noise plus link farms") {
    RawDocument doc{"d", "", R"(<body>
        <div role="navigation">Menu text</div>
        <div class="mw-editsection">edit</div>
        <p>Real content sentence stays.</p>
        <div><a href="1">One</a> <a href="2">Two</a> <a href="3">Three</a> <a href="4">Four</a></div>
        <p style="display: none">hidden text</p>
        </body>)", ""};
    const auto md = to_markdown(clean_html(doc)).markdown;
    CHECK(md == "Real content sentence stays.\n");
}

TEST_CASE("clean_html golden fixture") {
    const auto clean = clean_html(RawDocument{"wiki_sample_01", "", fixture("wiki_sample_01.html"), ""});
    CHECK(html::serialize(clean.root) == fixture("wiki_sample_01.clean.html"));
}

TEST_CASE("to_markdown maps headings and paragraphs") {
    CleanDocument doc{"h", html::parse("<h2>History</h2><p>text</p>")};
    const auto md = to_markdown(doc);
    CHECK(md.markdown.find("## History\n\ntext") != std::string::npos);
    REQUIRE(md.headings.size() == 1);
    CHECK(md.headings[0].level == 2);
    CHECK(md.headings[0].title == "History");
    CHECK(md.markdown.compare(md.headings[0].byte_offset, 10, "## History") == 0);
}

TEST_CASE("to_markdown renders a 2x2 table as a pipe table with two data rows") {
    CleanDocument doc{"t", html::parse("<table><tr><td>a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr></table>")};
    const auto md = to_markdown(doc).markdown;
    CHECK(md == "|  |  |\n| --- | --- |\n| a | b |\n| c | d |\n");
}

TEST_CASE("to_markdown keeps lists, links, images and emphasis") {
    CleanDocument doc{"l", html::parse(R"(<ol><li>first <a href="/x">link</a></li><li><b>bold</b> and <em>em</em></li></ol>
        <p><img src="/a.png" alt="A picture"></p><pre>int x;
int y;</pre><blockquote><p>quoted</p></blockquote>)")};
    const auto md = to_markdown(doc).markdown;
    CHECK(md ==
          "1. first [link](/x)\n2. **bold** and *em*\n\n![A picture](/a.png)\n\n```\nint x;\nint y;\n```\n\n> quoted\n");
}

TEST_CASE("to_markdown golden fixture from the cleaned page") {
    CleanDocument doc{"wiki_sample_01", html::parse(fixture("wiki_sample_01.clean.html"))};
    const auto md = to_markdown(doc);
    CHECK(md.markdown == fixture("wiki_sample_01.md"));
    // Heading index invariants.
    for (std::size_t i = 0; i < md.headings.size(); ++i) {
        const auto& h = md.headings[i];
        if (i) CHECK(h.byte_offset > md.headings[i - 1].byte_offset);
        const auto line = std::string(static_cast<std::size_t>(h.level), '#') + " " + h.title;
        CHECK(md.markdown.compare(h.byte_offset, line.size(), line) == 0);
    }
}

TEST_CASE("derive_toc nests by level") {
    const auto md = build_markdown({{1, "A", {5}}, {2, "B", {5}}, {2, "C", {5}}, {1, "D", {5}}});
    const auto toc = derive_toc(md);
    REQUIRE(toc.entries.size() == 2);
    CHECK(toc.entries[0].title == "A");
    REQUIRE(toc.entries[0].children.size() == 2);
    CHECK(toc.entries[0].children[0].title == "B");
    CHECK(toc.entries[0].children[1].title == "C");
    CHECK(toc.entries[1].title == "D");
    // Spans: A runs to D, children nest and partition.
    CHECK(toc.entries[0].end == toc.entries[1].begin);
    CHECK(toc.entries[1].end == md.markdown.size());
    const auto& b = toc.entries[0].children[0];
    const auto& c = toc.entries[0].children[1];
    CHECK(b.end == c.begin);
    CHECK(c.end == toc.entries[0].end);
    CHECK(b.begin >= toc.entries[0].begin);
}

TEST_CASE("derive_toc without headings yields one synthetic root") {
    MarkdownDoc md{"x", "just some text\n", {}};
    const auto toc = derive_toc(md);
    REQUIRE(toc.entries.size() == 1);
    CHECK(toc.entries[0].synthetic);
    CHECK(toc.entries[0].begin == 0);
    CHECK(toc.entries[0].end == md.markdown.size());
}

TEST_CASE("derive_toc promotes a leading deeper heading") {
    const auto md = build_markdown({{2, "B", {3}}, {1, "A", {3}}});
    const auto toc = derive_toc(md);
    REQUIRE(toc.entries.size() == 2);
    CHECK(toc.entries[0].title == "B");
    CHECK(toc.entries[0].children.empty());
    CHECK(toc.entries[1].title == "A");
}

TEST_CASE("split_passages: sections within bounds stay whole") {
    const auto md = build_markdown({{2, "S1", {120}}, {2, "S2", {140}}, {2, "S3", {90}}});
    const auto ps = split_passages(md, derive_toc(md), {50, 200});
    REQUIRE(ps.size() == 3);
    CHECK(ps[0].word_count == 120);
    CHECK(ps[1].word_count == 140);
    CHECK(ps[2].word_count == 90);
    CHECK(ps[1].section_path == std::vector<std::string>{"S2"});
}

TEST_CASE("split_passages: long section splits at paragraph boundaries") {
    const auto md = build_markdown({{2, "Long", {150, 150, 150}}});
    const auto ps = split_passages(md, derive_toc(md), {40, 200});
    REQUIRE(ps.size() == 3);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(ps[i].word_count == 150);
        // Each passage is exactly one paragraph.
        CHECK(ps[i].text.find("\n\n") == std::string::npos);
        CHECK(ps[i].text.rfind("s" + std::to_string(i) + "w0 ", 0) == 0);
    }
}

TEST_CASE("split_passages: uneven paragraphs still respect bounds") {
    const auto md = build_markdown({{2, "Long", {195, 10, 300}}});
    const SegmentationConfig cfg{40, 200};
    const auto ps = split_passages(md, derive_toc(md), cfg);
    std::size_t total = 0;
    for (const auto& p : ps) {
        CHECK(p.word_count >= cfg.min_words);
        CHECK(p.word_count <= cfg.max_words);
        total += p.word_count;
    }
    CHECK(total == 505);
    CHECK(ps.size() == 3);
}

TEST_CASE("split_passages: short section merges forward") {
    const auto md = build_markdown({{2, "Tiny", {20}}, {2, "Body", {100}}});
    const auto ps = split_passages(md, derive_toc(md), {50, 600});
    REQUIRE(ps.size() == 1);
    CHECK(ps[0].word_count == 120);
    CHECK_FALSE(ps[0].below_min);
}

TEST_CASE("split_passages: short tail merges backward") {
    const auto md = build_markdown({{2, "Body", {100}}, {2, "Tail", {10}}});
    const auto ps = split_passages(md, derive_toc(md), {50, 600});
    REQUIRE(ps.size() == 1);
    CHECK(ps[0].word_count == 110);
    CHECK(ps[0].text.rfind("s0w0", 0) == 0);
}

TEST_CASE("split_passages: whole document shorter than min is flagged") {
    const auto md = build_markdown({{2, "Only", {12}}});
    const auto ps = split_passages(md, derive_toc(md), {40, 600});
    REQUIRE(ps.size() == 1);
    CHECK(ps[0].below_min);
    CHECK(ps[0].word_count == 12);
}

TEST_CASE("split_passages: NoPassages when nothing but headings") {
    MarkdownDoc md{"e", "# A\n\n## B\n", {{1, "A", 0}, {2, "B", 5}}};
    CHECK_THROWS_AS(split_passages(md, derive_toc(md), {40, 600}), NoPassages);
}

TEST_CASE("split_passages rejects inverted bounds") {
    const auto md = build_markdown({{2, "S", {10}}});
    CHECK_THROWS_AS(split_passages(md, derive_toc(md), {50, 50}), std::invalid_argument);
}

TEST_CASE("split_passages property: coverage, bounds, determinism") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Section> sections;
        const auto n_sections = 1 + rng() % 6;
        std::size_t total = 0;
        for (std::size_t s = 0; s < n_sections; ++s) {
            Section sec{static_cast<int>(1 + rng() % 3), "T" + std::to_string(s), {}};
            const auto n_par = rng() % 4;  // may be empty
            for (std::size_t p = 0; p < n_par; ++p) {
                const auto w = 1 + rng() % 260;
                sec.paragraphs.push_back(w);
                total += w;
            }
            sections.push_back(sec);
        }
        if (total == 0) continue;
        const auto md = build_markdown(sections);
        const SegmentationConfig cfg{30, 120};
        const auto ps = split_passages(md, derive_toc(md), cfg);
        CHECK(joined_passages(ps) == text::normalize_whitespace(body_without_headings(md)));
        for (const auto& p : ps) {
            CHECK(p.word_count == text::word_count(p.text));
            CHECK(p.word_count <= cfg.max_words);
            if (total >= cfg.min_words) CHECK(p.word_count >= cfg.min_words);
        }
        const auto again = split_passages(md, derive_toc(md), cfg);
        REQUIRE(again.size() == ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) CHECK(again[i].text == ps[i].text);
    }
}

TEST_CASE("prepare_document on the golden page covers the body") {
    const RawDocument doc{"wiki_sample_01", "", fixture("wiki_sample_01.html"), ""};
    const auto md = to_markdown(clean_html(doc));
    const auto ps = prepare_document(doc, {}, {});
    CHECK(joined_passages(ps) == text::normalize_whitespace(body_without_headings(md)));
    CHECK(ps.front().passage_id == "wiki_sample_01#0");
}

TEST_CASE("assemble_multi_grounding") {
    std::vector<Passage> ps;
    for (int i = 1; i <= 4; ++i) {
        Passage p;
        p.passage_id = "p" + std::to_string(i);
        p.doc_id = "q1";
        p.text = filler(static_cast<std::size_t>(10 * i), "t" + std::to_string(i));
        p.word_count = text::word_count(p.text);
        ps.push_back(p);
    }
    SUBCASE("top three") {
        const auto m = assemble_multi_grounding(ps, 3);
        CHECK(m.text == ps[0].text + "\n\n" + ps[1].text + "\n\n" + ps[2].text);
        CHECK(m.passage_id == "p1+p2+p3");
        CHECK(m.doc_id == "q1");
        CHECK(m.word_count == 60);
    }
    SUBCASE("k = 1 is identity on text") {
        const auto m = assemble_multi_grounding({ps[0]}, 1);
        CHECK(m.text == ps[0].text);
    }
    SUBCASE("word counts add") {
        Passage a = ps[0], b = ps[0];
        a.text = filler(40, "a");
        b.text = filler(60, "b");
        CHECK(assemble_multi_grounding({a, b}, 2).word_count == 100);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(assemble_multi_grounding({}, 1), EmptyInput);
        CHECK_THROWS_AS(assemble_multi_grounding(ps, 5), std::invalid_argument);
        CHECK_THROWS_AS(assemble_multi_grounding(ps, 0), std::invalid_argument);
    }
}
