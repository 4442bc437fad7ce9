#pragma once

#include "groundgen/content_prep.hpp"
#include "groundgen/model_gateway.hpp"
#include "groundgen/task_templates.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace groundgen::filter {

enum class Gate { format, faithfulness, quality };
enum class Decision { keep, reject };
enum class Reason {
    ok,
    missing_marker,
    empty_element,
    out_of_order,
    too_short,
    too_long,
    below_entailment_threshold,
    below_reward_threshold,
    scoring_error,
};
enum class OnScoringError { reject, keep_flagged };
enum class HypothesisMode { generated_elements, answer_only };

std::string_view to_string(Gate g);
std::string_view to_string(Decision d);
std::string_view to_string(Reason r);
Gate gate_from_string(std::string_view s);  // throw std::invalid_argument
Reason reason_from_string(std::string_view s);
OnScoringError on_scoring_error_from_string(std::string_view s);
HypothesisMode hypothesis_mode_from_string(std::string_view s);
std::string_view to_string(OnScoringError e);
std::string_view to_string(HypothesisMode m);

struct FilterVerdict {
    Gate gate = Gate::format;
    Decision decision = Decision::keep;
    Reason reason = Reason::ok;
    std::optional<double> score;
    std::string detail;  // offending marker, word counts, or scoring error text

    bool kept() const { return decision == Decision::keep; }
};

struct FilterConfig {
    std::size_t min_example_words = 10;
    templates::Rational length_ratio_cap{3, 2};
    double entailment_threshold = 0.5;
    double reward_threshold = 0.5;
    std::vector<Gate> gate_order{Gate::format, Gate::faithfulness, Gate::quality};
    OnScoringError on_scoring_error = OnScoringError::reject;
    HypothesisMode hypothesis_mode = HypothesisMode::generated_elements;
    bool reward_includes_content = false;

    // Length rule defaults taken from the task.
    static FilterConfig for_task(const templates::TaskSpec& task);
    void validate() const;  // throws std::invalid_argument
};

struct GenerationRecord {
    std::size_t index = 0;  // position in the generation run
    content::Passage passage;
    std::string prompt_hash;
    std::string cue;
    std::string raw_completion;
    templates::ParseResult parsed = templates::FormatError{templates::FormatError::Kind::MissingMarker, {}};
    std::string model_id;
    std::optional<double> entailment;
    std::optional<double> reward;
    std::vector<FilterVerdict> verdicts;

    const templates::ParsedExample* example() const { return std::get_if<templates::ParsedExample>(&parsed); }
};

// Word count of the elements the model generated (fixed instruction excluded).
std::size_t generated_words(const templates::ParsedExample& ex, const templates::TaskSpec& task);

FilterVerdict format_gate(const GenerationRecord& record, const FilterConfig& cfg, const templates::TaskSpec& task);

gateway::NliRequest nli_request(const GenerationRecord& record, const FilterConfig& cfg,
                                const templates::TaskSpec& task);
gateway::RewardRequest reward_request(const GenerationRecord& record, const FilterConfig& cfg,
                                      const templates::TaskSpec& task);

// Threshold rules, shared by the single-record gates and the batched chain.
FilterVerdict entailment_verdict(double score, const FilterConfig& cfg);
FilterVerdict reward_verdict(double score, const FilterConfig& cfg);
FilterVerdict scoring_error_verdict(Gate gate, const std::string& what, const FilterConfig& cfg);

// Pre: format_gate kept the record.
FilterVerdict faithfulness_gate(const GenerationRecord& record, const FilterConfig& cfg,
                                const templates::TaskSpec& task, gateway::NliClient& nli);
FilterVerdict quality_gate(const GenerationRecord& record, const FilterConfig& cfg, const templates::TaskSpec& task,
                           gateway::RewardClient& reward);

struct ChainResult {
    std::vector<GenerationRecord> kept;
    std::vector<GenerationRecord> rejected;
};

// Gates applied in cfg.gate_order, short-circuiting on the first reject. Scoring
// stages are fanned out through gateway::map_batched; output keeps input order.
ChainResult run_chain(std::vector<GenerationRecord> records, const FilterConfig& cfg, const templates::TaskSpec& task,
                      gateway::NliClient& nli, gateway::RewardClient& reward, std::size_t max_in_flight = 4);

struct FunnelStage {
    Gate gate;
    std::size_t in = 0;
    std::size_t kept = 0;
    std::map<Reason, std::size_t> rejected;  // by reason
    std::size_t flagged = 0;                 // kept despite a scoring error

    std::size_t rejected_total() const;
};

struct Funnel {
    std::size_t input = 0;
    std::vector<FunnelStage> stages;
    std::size_t kept = 0;
};

Funnel tally(const ChainResult& result, const FilterConfig& cfg);
std::string render_funnel(const Funnel& f);

}  // namespace groundgen::filter
