#include "groundgen/task_templates.hpp"

#include "groundgen/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

namespace groundgen::templates {

std::string_view to_string(TaskName t) {
    switch (t) {
        case TaskName::qa: return "qa";
        case TaskName::summarization: return "summarization";
        case TaskName::extraction: return "extraction";
    }
    return "qa";
}

TaskName task_name_from_string(std::string_view s) {
    if (s == "qa") return TaskName::qa;
    if (s == "summarization") return TaskName::summarization;
    if (s == "extraction") return TaskName::extraction;
    throw TemplateError("unknown task name '" + std::string(s) + "'");
}

namespace {

Rational reduced(std::int64_t num, std::int64_t den) {
    if (den == 0) throw TemplateError("rational with zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    const auto g = std::gcd(num < 0 ? -num : num, den);
    return Rational{num / (g ? g : 1), den / (g ? g : 1)};
}

std::int64_t parse_int(std::string_view s) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw TemplateError("bad number '" + std::string(s) + "'");
    return v;
}

}  // namespace

Rational Rational::parse(std::string_view s) {
    s = text::trim(s);
    if (const auto slash = s.find('/'); slash != std::string_view::npos) {
        return reduced(parse_int(text::trim(s.substr(0, slash))), parse_int(text::trim(s.substr(slash + 1))));
    }
    if (const auto dot = s.find('.'); dot != std::string_view::npos) {
        const auto frac = s.substr(dot + 1);
        if (frac.size() > 12) throw TemplateError("too many decimals in '" + std::string(s) + "'");
        std::int64_t den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
        const auto whole_part = s.substr(0, dot);
        const std::int64_t whole = whole_part.empty() ? 0 : parse_int(whole_part);
        const std::int64_t f = frac.empty() ? 0 : parse_int(frac);
        return reduced(whole * den + f, den);
    }
    return reduced(parse_int(s), 1);
}

Rational Rational::from_double(double v) {
    if (!std::isfinite(v)) throw TemplateError("non-finite rational");
    std::int64_t den = 1;
    for (int i = 0; i < 9; ++i) {
        const double scaled = v * static_cast<double>(den);
        if (std::abs(scaled - std::round(scaled)) < 1e-9) break;
        den *= 10;
    }
    return reduced(static_cast<std::int64_t>(std::llround(v * static_cast<double>(den))), den);
}

std::string Rational::str() const {
    return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

TaskSpec TaskSpec::defaults(TaskName name) {
    TaskSpec t;
    t.task_name = name;
    switch (name) {
        case TaskName::qa:
            t.markers = {"[document]", "[question]", "[answer]"};
            t.length_ratio_cap = {3, 2};
            break;
        case TaskName::summarization:
            t.markers = {"[document]", "[summarize]", "[summary]"};
            t.instruction_marker_text = "Summarize the document in one paragraph.";
            t.length_ratio_cap = {1, 4};
            break;
        case TaskName::extraction:
            t.markers = {"[document]", "[instruction]", "[response]"};
            t.length_ratio_cap = {3, 2};
            break;
    }
    return t;
}

void TaskSpec::validate() const {
    if (markers.size() < 2) throw TemplateError("a task needs the document marker and at least one element marker");
    for (std::size_t i = 0; i < markers.size(); ++i) {
        if (text::trim(markers[i]).empty()) throw TemplateError("empty marker");
        if (text::trim(markers[i]).size() != markers[i].size()) {
            throw TemplateError("marker '" + markers[i] + "' has surrounding whitespace");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (markers[i].find(markers[j]) != std::string::npos || markers[j].find(markers[i]) != std::string::npos) {
                throw TemplateError("markers '" + markers[j] + "' and '" + markers[i] + "' overlap");
            }
        }
    }
    if (instruction_marker_text && text::trim(*instruction_marker_text).empty()) {
        throw TemplateError("instruction_marker_text is blank");
    }
    if (instruction_marker_text && markers.size() < 3) {
        throw TemplateError("a fixed instruction needs a separate response marker");
    }
    if (length_ratio_cap.num <= 0 || length_ratio_cap.den <= 0) throw TemplateError("length_ratio_cap must be > 0");
    if (min_example_words < 1) throw TemplateError("min_example_words must be >= 1");
}

std::vector<std::string> TaskSpec::element_markers() const { return {markers.begin() + 1, markers.end()}; }

std::vector<std::string> TaskSpec::generated_markers() const {
    return {markers.begin() + (instruction_marker_text ? 2 : 1), markers.end()};
}

std::string marker_name(std::string_view marker) {
    if (marker.size() >= 2 && marker.front() == '[' && marker.back() == ']') {
        return std::string(marker.substr(1, marker.size() - 2));
    }
    return std::string(marker);
}

const std::string* ParsedExample::get(std::string_view marker) const {
    for (const auto& e : elements) {
        if (e.marker == marker) return &e.text;
    }
    return nullptr;
}

std::string FormatError::message() const {
    switch (kind) {
        case Kind::MissingMarker: return "MissingMarker(" + marker + ")";
        case Kind::EmptyElement: return "EmptyElement(" + marker + ")";
        case Kind::OutOfOrderMarkers: return "OutOfOrderMarkers";
    }
    return "FormatError";
}

std::string generation_cue(const TaskSpec& task) {
    if (task.instruction_marker_text) {
        return task.markers[1] + " " + *task.instruction_marker_text + "\n" + task.markers[2];
    }
    return task.markers[1];
}

void validate_exemplar(const TaskSpec& task, const Exemplar& ex) {
    if (text::trim(ex.content).empty()) throw InvalidExemplar("exemplar content is empty");
    auto expected = task.element_markers();
    std::size_t offset = 0;
    // With a fixed instruction the exemplar may omit the instruction marker.
    if (task.instruction_marker_text && (ex.elements.empty() || ex.elements[0].marker != expected[0])) offset = 1;
    if (ex.elements.size() + offset != expected.size()) {
        throw InvalidExemplar("exemplar has " + std::to_string(ex.elements.size()) + " elements, task expects " +
                              std::to_string(expected.size() - offset));
    }
    for (std::size_t i = 0; i < ex.elements.size(); ++i) {
        if (ex.elements[i].marker != expected[i + offset]) {
            throw InvalidExemplar("exemplar element " + std::to_string(i) + " is '" + ex.elements[i].marker +
                                  "', expected '" + expected[i + offset] + "'");
        }
        if (text::trim(ex.elements[i].text).empty()) throw InvalidExemplar("exemplar element text is empty");
    }
}

PromptText build_prompt(const TaskSpec& task, const std::vector<Exemplar>& exemplars,
                        const content::Passage& target) {
    if (exemplars.size() != task.shots) {
        throw ShotCountMismatch("task expects " + std::to_string(task.shots) + " exemplars, got " +
                                std::to_string(exemplars.size()));
    }
    if (text::trim(target.text).empty()) throw EmptyContent("target passage " + target.passage_id + " is empty");

    const auto& doc = task.document_marker();
    std::string out;
    for (const auto& ex : exemplars) {
        validate_exemplar(task, ex);
        out += doc + " " + ex.content;
        for (std::size_t m = 1; m < task.markers.size(); ++m) {
            const auto& marker = task.markers[m];
            std::string body;
            if (m == 1 && task.instruction_marker_text) {
                body = *task.instruction_marker_text;
            } else {
                for (const auto& el : ex.elements) {
                    if (el.marker == marker) body = el.text;
                }
            }
            out += "\n" + marker + " " + body;
        }
        out += "\n\n";
    }
    PromptText prompt;
    prompt.cue = generation_cue(task);
    out += doc + " " + target.text + "\n" + prompt.cue;
    prompt.text = std::move(out);
    return prompt;
}

namespace {

struct Occurrence {
    std::size_t pos;
    std::size_t marker;  // index into the element marker list
};

}  // namespace

ParseResult parse_completion(const TaskSpec& task, std::string_view cue, std::string_view completion) {
    std::string full;
    full.reserve(cue.size() + completion.size());
    full.append(cue);
    full.append(completion);

    // Anything from the next document marker on is the model starting a new exemplar.
    if (const auto cut = full.find(task.document_marker()); cut != std::string::npos) full.resize(cut);

    const auto required = task.element_markers();
    std::vector<Occurrence> occ;
    for (std::size_t i = 0; i < full.size();) {
        std::size_t hit = required.size();
        for (std::size_t m = 0; m < required.size(); ++m) {
            if (full.compare(i, required[m].size(), required[m]) == 0 &&
                (hit == required.size() || required[m].size() > required[hit].size())) {
                hit = m;
            }
        }
        if (hit == required.size()) {
            ++i;
        } else {
            occ.push_back({i, hit});
            i += required[hit].size();
        }
    }

    bool in_order = occ.size() >= required.size();
    for (std::size_t k = 0; in_order && k < required.size(); ++k) in_order = occ[k].marker == k;
    if (!in_order) {
        for (std::size_t m = 0; m < required.size(); ++m) {
            const bool seen = std::any_of(occ.begin(), occ.end(), [&](const Occurrence& o) { return o.marker == m; });
            if (!seen) return FormatError{FormatError::Kind::MissingMarker, marker_name(required[m])};
        }
        return FormatError{FormatError::Kind::OutOfOrderMarkers, {}};
    }

    ParsedExample out;
    out.raw_completion = std::string(completion);
    for (std::size_t k = 0; k < required.size(); ++k) {
        const auto start = occ[k].pos + required[k].size();
        // The last element stops at any further marker: a new example pattern.
        const auto end = k + 1 < occ.size() ? occ[k + 1].pos : full.size();
        const auto body = text::trim(std::string_view(full).substr(start, end - start));
        if (body.empty()) return FormatError{FormatError::Kind::EmptyElement, marker_name(required[k])};
        out.elements.push_back(Element{required[k], std::string(body)});
    }
    return out;
}

std::string render_elements(const std::vector<Element>& elements) {
    std::string out;
    for (const auto& e : elements) {
        if (!out.empty()) out.push_back('\n');
        out += e.marker + " " + e.text;
    }
    return out;
}

std::string render_completion(std::string_view cue, const std::vector<Element>& elements) {
    const auto full = render_elements(elements);
    if (full.compare(0, cue.size(), cue) != 0) {
        throw TemplateError("rendered elements do not start with the cue '" + std::string(cue) + "'");
    }
    return full.substr(cue.size());
}

std::vector<Exemplar> select_exemplars(const std::vector<Exemplar>& pool, std::size_t shots, std::size_t rotation) {
    if (pool.size() < shots) {
        throw ShotCountMismatch("exemplar pool has " + std::to_string(pool.size()) + " entries, need " +
                                std::to_string(shots));
    }
    std::vector<Exemplar> out;
    out.reserve(shots);
    for (std::size_t i = 0; i < shots; ++i) out.push_back(pool[(rotation + i) % pool.size()]);
    return out;
}

std::vector<Exemplar> load_exemplars(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TemplateError("cannot open exemplar file " + path);
    std::vector<Exemplar> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Exemplar ex;
            ex.content = j.at("content").get<std::string>();
            for (const auto& el : j.at("elements")) {
                ex.elements.push_back(Element{el.at("marker").get<std::string>(), el.at("text").get<std::string>()});
            }
            out.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            throw TemplateError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace groundgen::templates
