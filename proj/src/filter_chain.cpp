#include "groundgen/filter_chain.hpp"

#include "groundgen/text.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace groundgen::filter {

using templates::FormatError;
using templates::ParsedExample;
using templates::TaskSpec;

namespace {

template <class E, std::size_t N>
E from_table(std::string_view s, const std::pair<E, std::string_view> (&table)[N], const char* what) {
    for (const auto& [e, name] : table) {
        if (name == s) return e;
    }
    throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <class E, std::size_t N>
std::string_view name_of(E e, const std::pair<E, std::string_view> (&table)[N]) {
    for (const auto& [v, name] : table) {
        if (v == e) return name;
    }
    return "?";
}

constexpr std::pair<Gate, std::string_view> kGates[] = {
    {Gate::format, "format"}, {Gate::faithfulness, "faithfulness"}, {Gate::quality, "quality"}};
constexpr std::pair<Decision, std::string_view> kDecisions[] = {{Decision::keep, "keep"}, {Decision::reject, "reject"}};
constexpr std::pair<Reason, std::string_view> kReasons[] = {
    {Reason::ok, "ok"},
    {Reason::missing_marker, "missing_marker"},
    {Reason::empty_element, "empty_element"},
    {Reason::out_of_order, "out_of_order"},
    {Reason::too_short, "too_short"},
    {Reason::too_long, "too_long"},
    {Reason::below_entailment_threshold, "below_entailment_threshold"},
    {Reason::below_reward_threshold, "below_reward_threshold"},
    {Reason::scoring_error, "scoring_error"},
};
constexpr std::pair<OnScoringError, std::string_view> kOnError[] = {{OnScoringError::reject, "reject"},
                                                                    {OnScoringError::keep_flagged, "keep_flagged"}};
constexpr std::pair<HypothesisMode, std::string_view> kHypothesis[] = {
    {HypothesisMode::generated_elements, "generated_elements"}, {HypothesisMode::answer_only, "answer_only"}};

}  // namespace

std::string_view to_string(Gate g) { return name_of(g, kGates); }
std::string_view to_string(Decision d) { return name_of(d, kDecisions); }
std::string_view to_string(Reason r) { return name_of(r, kReasons); }
std::string_view to_string(OnScoringError e) { return name_of(e, kOnError); }
std::string_view to_string(HypothesisMode m) { return name_of(m, kHypothesis); }
Gate gate_from_string(std::string_view s) { return from_table(s, kGates, "gate"); }
Reason reason_from_string(std::string_view s) { return from_table(s, kReasons, "reason"); }
OnScoringError on_scoring_error_from_string(std::string_view s) { return from_table(s, kOnError, "on_scoring_error"); }
HypothesisMode hypothesis_mode_from_string(std::string_view s) { return from_table(s, kHypothesis, "hypothesis mode"); }

FilterConfig FilterConfig::for_task(const TaskSpec& task) {
    FilterConfig cfg;
    cfg.min_example_words = task.min_example_words;
    cfg.length_ratio_cap = task.length_ratio_cap;
    return cfg;
}

void FilterConfig::validate() const {
    if (min_example_words < 1) throw std::invalid_argument("min_example_words must be >= 1");
    if (length_ratio_cap.num <= 0 || length_ratio_cap.den <= 0) {
        throw std::invalid_argument("length_ratio_cap must be > 0");
    }
    for (const double t : {entailment_threshold, reward_threshold}) {
        // Values above 1 are accepted: they reject every scored record.
        if (!std::isfinite(t) || t < 0.0) throw std::invalid_argument("thresholds must be finite and >= 0");
    }
    const std::set<Gate> distinct(gate_order.begin(), gate_order.end());
    if (gate_order.size() != 3 || distinct.size() != 3) {
        throw std::invalid_argument("gate_order must list format, faithfulness and quality once each");
    }
    // Scoring needs the parsed example, so format always runs first.
    if (gate_order.front() != Gate::format) throw std::invalid_argument("gate_order must start with format");
}

std::size_t generated_words(const ParsedExample& ex, const TaskSpec& task) {
    std::size_t w = 0;
    for (const auto& m : task.generated_markers()) {
        if (const auto* t = ex.get(m)) w += text::word_count(*t);
    }
    return w;
}

FilterVerdict format_gate(const GenerationRecord& record, const FilterConfig& cfg, const TaskSpec& task) {
    FilterVerdict v;
    v.gate = Gate::format;
    if (const auto* e = std::get_if<FormatError>(&record.parsed)) {
        v.decision = Decision::reject;
        switch (e->kind) {
            case FormatError::Kind::MissingMarker: v.reason = Reason::missing_marker; break;
            case FormatError::Kind::EmptyElement: v.reason = Reason::empty_element; break;
            case FormatError::Kind::OutOfOrderMarkers: v.reason = Reason::out_of_order; break;
        }
        v.detail = e->marker;
        return v;
    }
    const auto& ex = std::get<ParsedExample>(record.parsed);
    const auto w = static_cast<std::int64_t>(generated_words(ex, task));
    const auto content_words = static_cast<std::int64_t>(text::word_count(record.passage.text));
    v.detail = std::to_string(w) + "/" + std::to_string(content_words);
    if (w < static_cast<std::int64_t>(cfg.min_example_words)) {
        v.decision = Decision::reject;
        v.reason = Reason::too_short;
    } else if (w * cfg.length_ratio_cap.den > cfg.length_ratio_cap.num * content_words) {
        v.decision = Decision::reject;
        v.reason = Reason::too_long;
    }
    return v;
}

namespace {

const ParsedExample& require_example(const GenerationRecord& record) {
    const auto* ex = record.example();
    if (!ex) throw std::logic_error("scoring gate reached by a record that failed parsing");
    return *ex;
}

std::string element_text(const ParsedExample& ex, const std::string& marker) {
    const auto* t = ex.get(marker);
    return t ? *t : std::string();
}

}  // namespace

gateway::NliRequest nli_request(const GenerationRecord& record, const FilterConfig& cfg, const TaskSpec& task) {
    const auto& ex = require_example(record);
    gateway::NliRequest req;
    req.premise = record.passage.text;
    if (cfg.hypothesis_mode == HypothesisMode::answer_only) {
        req.hypothesis = element_text(ex, task.response_marker());
    } else {
        for (const auto& m : task.generated_markers()) {
            if (!req.hypothesis.empty()) req.hypothesis += ' ';
            req.hypothesis += element_text(ex, m);
        }
    }
    return req;
}

gateway::RewardRequest reward_request(const GenerationRecord& record, const FilterConfig& cfg, const TaskSpec& task) {
    const auto& ex = require_example(record);
    gateway::RewardRequest req;
    req.instruction = element_text(ex, task.instruction_marker());
    if (req.instruction.empty() && task.instruction_marker_text) req.instruction = *task.instruction_marker_text;
    if (cfg.reward_includes_content) req.instruction = record.passage.text + "\n\n" + req.instruction;
    req.response = element_text(ex, task.response_marker());
    return req;
}

FilterVerdict entailment_verdict(double score, const FilterConfig& cfg) {
    FilterVerdict v{Gate::faithfulness, Decision::keep, Reason::ok, score, {}};
    if (score < cfg.entailment_threshold) {
        v.decision = Decision::reject;
        v.reason = Reason::below_entailment_threshold;
    }
    return v;
}

FilterVerdict reward_verdict(double score, const FilterConfig& cfg) {
    FilterVerdict v{Gate::quality, Decision::keep, Reason::ok, score, {}};
    if (score < cfg.reward_threshold) {
        v.decision = Decision::reject;
        v.reason = Reason::below_reward_threshold;
    }
    return v;
}

FilterVerdict scoring_error_verdict(Gate gate, const std::string& what, const FilterConfig& cfg) {
    FilterVerdict v;
    v.gate = gate;
    v.reason = Reason::scoring_error;
    v.decision = cfg.on_scoring_error == OnScoringError::reject ? Decision::reject : Decision::keep;
    v.detail = what;
    return v;
}

FilterVerdict faithfulness_gate(const GenerationRecord& record, const FilterConfig& cfg, const TaskSpec& task,
                                gateway::NliClient& nli) {
    const auto req = nli_request(record, cfg, task);
    try {
        return entailment_verdict(nli.score_nli(req).value, cfg);
    } catch (const std::exception& e) {
        return scoring_error_verdict(Gate::faithfulness, e.what(), cfg);
    }
}

FilterVerdict quality_gate(const GenerationRecord& record, const FilterConfig& cfg, const TaskSpec& task,
                           gateway::RewardClient& reward) {
    const auto req = reward_request(record, cfg, task);
    try {
        return reward_verdict(reward.score_reward(req).value, cfg);
    } catch (const std::exception& e) {
        return scoring_error_verdict(Gate::quality, e.what(), cfg);
    }
}

namespace {

template <class Req, class Score, class Verdict>
void scoring_stage(std::vector<GenerationRecord>& records, std::vector<std::size_t>& alive, std::size_t max_in_flight,
                   Gate gate, const FilterConfig& cfg, const std::vector<Req>& reqs, Score score, Verdict verdict,
                   std::optional<double> GenerationRecord::*slot) {
    const auto outcomes = gateway::map_batched(reqs, max_in_flight, score);
    std::vector<std::size_t> survivors;
    for (std::size_t k = 0; k < alive.size(); ++k) {
        auto& rec = records[alive[k]];
        FilterVerdict v;
        if (outcomes[k].ok()) {
            v = verdict(*outcomes[k].value, cfg);
            rec.*slot = *outcomes[k].value;
        } else {
            v = scoring_error_verdict(gate, outcomes[k].error_message(), cfg);
        }
        rec.verdicts.push_back(v);
        if (v.kept()) survivors.push_back(alive[k]);
    }
    alive = std::move(survivors);
}

}  // namespace

ChainResult run_chain(std::vector<GenerationRecord> records, const FilterConfig& cfg, const TaskSpec& task,
                      gateway::NliClient& nli, gateway::RewardClient& reward, std::size_t max_in_flight) {
    cfg.validate();
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].verdicts.clear();
        records[i].entailment.reset();
        records[i].reward.reset();
        alive.push_back(i);
    }

    for (const auto gate : cfg.gate_order) {
        if (alive.empty()) break;
        if (gate == Gate::format) {
            std::vector<std::size_t> survivors;
            for (const auto i : alive) {
                auto v = format_gate(records[i], cfg, task);
                records[i].verdicts.push_back(v);
                if (v.kept()) survivors.push_back(i);
            }
            alive = std::move(survivors);
        } else if (gate == Gate::faithfulness) {
            std::vector<gateway::NliRequest> reqs;
            for (const auto i : alive) reqs.push_back(nli_request(records[i], cfg, task));
            scoring_stage(
                records, alive, max_in_flight, gate, cfg, reqs,
                [&](const gateway::NliRequest& r) { return nli.score_nli(r).value; }, entailment_verdict,
                &GenerationRecord::entailment);
        } else {
            std::vector<gateway::RewardRequest> reqs;
            for (const auto i : alive) reqs.push_back(reward_request(records[i], cfg, task));
            scoring_stage(
                records, alive, max_in_flight, gate, cfg, reqs,
                [&](const gateway::RewardRequest& r) { return reward.score_reward(r).value; }, reward_verdict,
                &GenerationRecord::reward);
        }
    }

    ChainResult out;
    for (auto& r : records) {
        const bool kept = !r.verdicts.empty() && r.verdicts.back().kept();
        (kept ? out.kept : out.rejected).push_back(std::move(r));
    }
    return out;
}

std::size_t FunnelStage::rejected_total() const {
    std::size_t n = 0;
    for (const auto& [reason, count] : rejected) n += count;
    return n;
}

Funnel tally(const ChainResult& result, const FilterConfig& cfg) {
    Funnel f;
    f.input = result.kept.size() + result.rejected.size();
    f.kept = result.kept.size();
    for (const auto g : cfg.gate_order) f.stages.push_back(FunnelStage{g, 0, 0, {}, 0});
    auto stage_of = [&](Gate g) -> FunnelStage& {
        return *std::find_if(f.stages.begin(), f.stages.end(), [&](const FunnelStage& s) { return s.gate == g; });
    };
    for (const auto* list : {&result.kept, &result.rejected}) {
        for (const auto& r : *list) {
            for (const auto& v : r.verdicts) {
                auto& s = stage_of(v.gate);
                ++s.in;
                if (v.kept()) {
                    ++s.kept;
                    if (v.reason == Reason::scoring_error) ++s.flagged;
                } else {
                    ++s.rejected[v.reason];
                }
            }
        }
    }
    return f;
}

std::string render_funnel(const Funnel& f) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "stage" << std::right << std::setw(8) << "in" << std::setw(8) << "kept"
       << std::setw(10) << "rejected" << "  reasons\n";
    for (const auto& s : f.stages) {
        os << std::left << std::setw(14) << to_string(s.gate) << std::right << std::setw(8) << s.in << std::setw(8)
           << s.kept << std::setw(10) << s.rejected_total() << "  ";
        bool first = true;
        for (const auto& [reason, count] : s.rejected) {
            os << (first ? "" : ", ") << to_string(reason) << "=" << count;
            first = false;
        }
        if (s.flagged) os << (first ? "" : ", ") << "flagged=" << s.flagged;
        os << '\n';
    }
    os << "kept " << f.kept << " of " << f.input;
    if (f.input) os << " (" << std::fixed << std::setprecision(1) << 100.0 * f.kept / f.input << "%)";
    os << '\n';
    return os.str();
}

}  // namespace groundgen::filter
