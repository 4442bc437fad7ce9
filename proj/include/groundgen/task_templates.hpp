#pragma once

#include "groundgen/content_prep.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace groundgen::templates {

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShotCountMismatch : public TemplateError {
public:
    using TemplateError::TemplateError;
};

class EmptyContent : public TemplateError {
public:
    using TemplateError::TemplateError;
};

class InvalidExemplar : public TemplateError {
public:
    using TemplateError::TemplateError;
};

enum class TaskName { qa, summarization, extraction };

std::string_view to_string(TaskName t);
TaskName task_name_from_string(std::string_view s);  // throws TemplateError

/// Exact positive rational, so length caps compare without rounding.
struct Rational {
    std::int64_t num = 1;
    std::int64_t den = 1;

    // Accepts "3/2", "1.5", "0.25", "2".
    static Rational parse(std::string_view s);
    static Rational from_double(double v);

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    std::string str() const;
    bool operator==(const Rational&) const = default;
};

struct TaskSpec {
    TaskName task_name = TaskName::qa;
    std::vector<std::string> markers;  // markers[0] is the document marker
    // Fixed instruction carried by markers[1] (summarization's "[summarize]").
    std::optional<std::string> instruction_marker_text;
    Rational length_ratio_cap{3, 2};
    std::size_t min_example_words = 10;
    std::size_t shots = 4;

    static TaskSpec defaults(TaskName name);

    void validate() const;  // throws TemplateError

    const std::string& document_marker() const { return markers.front(); }
    // Markers after the document marker, in order.
    std::vector<std::string> element_markers() const;
    // Element markers the model writes itself (excludes a fixed instruction marker).
    std::vector<std::string> generated_markers() const;
    // Marker whose text is the reward-model instruction (question / instruction).
    const std::string& instruction_marker() const { return markers[1]; }
    // Marker whose text is the reward-model response (answer / summary).
    const std::string& response_marker() const { return markers.back(); }
};

// "[question]" -> "question"; other strings are returned unchanged.
std::string marker_name(std::string_view marker);

struct Element {
    std::string marker;
    std::string text;
    bool operator==(const Element&) const = default;
};

struct Exemplar {
    std::string content;
    std::vector<Element> elements;
};

struct ParsedExample {
    std::vector<Element> elements;  // in TaskSpec marker order
    std::string raw_completion;

    // nullptr when the marker is absent.
    const std::string* get(std::string_view marker) const;
};

struct FormatError {
    enum class Kind { MissingMarker, EmptyElement, OutOfOrderMarkers };
    Kind kind;
    std::string marker;  // offending marker name; empty for OutOfOrderMarkers

    std::string message() const;
    bool operator==(const FormatError&) const = default;
};

using ParseResult = std::variant<ParsedExample, FormatError>;

struct PromptText {
    std::string text;
    std::string cue;  // trailing generation cue, re-prepended by the parser
};

/// The cue that ends every prompt: the first element marker, and when that
/// marker carries a fixed instruction, the instruction plus the next marker.
std::string generation_cue(const TaskSpec& task);

PromptText build_prompt(const TaskSpec& task, const std::vector<Exemplar>& exemplars,
                        const content::Passage& target);

ParseResult parse_completion(const TaskSpec& task, std::string_view cue, std::string_view completion);

// Renders elements as marker text ("[question] q\n[answer] a").
std::string render_elements(const std::vector<Element>& elements);

// The completion a model would emit after `cue` to produce `elements`.
std::string render_completion(std::string_view cue, const std::vector<Element>& elements);

// `shots` exemplars starting at `rotation`, wrapping around the pool.
std::vector<Exemplar> select_exemplars(const std::vector<Exemplar>& pool, std::size_t shots, std::size_t rotation);

void validate_exemplar(const TaskSpec& task, const Exemplar& ex);

// JSONL of {content, elements: [{marker, text}]}.
std::vector<Exemplar> load_exemplars(const std::string& path);

}  // namespace groundgen::templates
