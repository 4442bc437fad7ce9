#include "doctest.h"

#include "groundgen/filter_chain.hpp"
#include "groundgen/text.hpp"

#include <cmath>
#include <random>

using namespace groundgen;
using namespace groundgen::filter;
using templates::TaskName;
using templates::TaskSpec;

namespace {

std::string words_of(std::size_t n, const std::string& stem) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += stem + std::to_string(i);
    }
    return out;
}

GenerationRecord qa_record(std::size_t content_words, std::size_t q_words, std::size_t a_words,
                           const std::string& tag = "r") {
    GenerationRecord r;
    r.passage.passage_id = tag;
    r.passage.doc_id = tag;
    r.passage.text = words_of(content_words, "c");
    templates::ParsedExample ex;
    ex.elements = {{"[question]", words_of(q_words, "q")}, {"[answer]", words_of(a_words, "a")}};
    r.parsed = ex;
    return r;
}

GenerationRecord summary_record(std::size_t content_words, std::size_t s_words) {
    const auto task = TaskSpec::defaults(TaskName::summarization);
    GenerationRecord r;
    r.passage.text = words_of(content_words, "c");
    templates::ParsedExample ex;
    ex.elements = {{"[summarize]", *task.instruction_marker_text}, {"[summary]", words_of(s_words, "s")}};
    r.parsed = ex;
    return r;
}

// NLI mock with a fixed score per premise; throws for premises listed as down.
class ScriptedNli : public gateway::NliClient {
public:
    std::map<std::string, double> scores;
    double fallback = 1.0;
    bool down = false;
    gateway::MockStats stats;
    std::string model_id() const override { return "scripted-nli"; }

protected:
    gateway::ScoreResult do_score(const gateway::NliRequest& req) override {
        ++stats.calls;
        if (down) throw gateway::TimeoutError("nli down");
        const auto it = scores.find(req.premise);
        return gateway::ScoreResult{it == scores.end() ? fallback : it->second, "scripted-nli", 0, 1};
    }
};

class ScriptedReward : public gateway::RewardClient {
public:
    std::map<std::string, double> scores;  // by response
    double fallback = 1.0;
    bool down = false;
    gateway::MockStats stats;
    std::string model_id() const override { return "scripted-reward"; }

protected:
    gateway::ScoreResult do_score(const gateway::RewardRequest& req) override {
        ++stats.calls;
        if (down) throw gateway::EndpointError(500, "reward down");
        const auto it = scores.find(req.response);
        return gateway::ScoreResult{it == scores.end() ? fallback : it->second, "scripted-reward", 0, 1};
    }
};

}  // namespace

TEST_CASE("format gate length rules") {
    const auto task = TaskSpec::defaults(TaskName::qa);
    const auto cfg = FilterConfig::for_task(task);
    CHECK(cfg.length_ratio_cap == templates::Rational{3, 2});

    auto v = format_gate(qa_record(100, 75, 76), cfg, task);
    CHECK(v.decision == Decision::reject);
    CHECK(v.reason == Reason::too_long);
    CHECK(format_gate(qa_record(100, 75, 75), cfg, task).kept());

    // Answer of 9 words and a question that yields no words after markdown stripping.
    auto r = qa_record(100, 0, 9);
    std::get<templates::ParsedExample>(r.parsed).elements[0].text = "**";
    v = format_gate(r, cfg, task);
    CHECK(v.reason == Reason::too_short);
    CHECK(format_gate(qa_record(100, 1, 9), cfg, task).kept());

    const auto sum = TaskSpec::defaults(TaskName::summarization);
    const auto scfg = FilterConfig::for_task(sum);
    CHECK(format_gate(summary_record(200, 50), scfg, sum).kept());
    CHECK(format_gate(summary_record(200, 51), scfg, sum).reason == Reason::too_long);
    // The fixed instruction does not count toward the example length.
    CHECK(generated_words(*summary_record(200, 50).example(), sum) == 50);
}

TEST_CASE("format gate maps parse errors") {
    const auto task = TaskSpec::defaults(TaskName::qa);
    const auto cfg = FilterConfig::for_task(task);
    GenerationRecord r;
    r.passage.text = "some content";
    using K = templates::FormatError::Kind;
    r.parsed = templates::FormatError{K::MissingMarker, "answer"};
    CHECK(format_gate(r, cfg, task).reason == Reason::missing_marker);
    CHECK(format_gate(r, cfg, task).detail == "answer");
    r.parsed = templates::FormatError{K::EmptyElement, "question"};
    CHECK(format_gate(r, cfg, task).reason == Reason::empty_element);
    r.parsed = templates::FormatError{K::OutOfOrderMarkers, ""};
    CHECK(format_gate(r, cfg, task).reason == Reason::out_of_order);
}

TEST_CASE("faithfulness and quality thresholds") {
    const auto task = TaskSpec::defaults(TaskName::qa);
    auto cfg = FilterConfig::for_task(task);
    const auto rec = qa_record(100, 8, 20);
    ScriptedNli nli;
    nli.fallback = 0.92;
    auto v = faithfulness_gate(rec, cfg, task, nli);
    CHECK(v.kept());
    CHECK(*v.score == 0.92);
    nli.fallback = 0.49;
    v = faithfulness_gate(rec, cfg, task, nli);
    CHECK(v.reason == Reason::below_entailment_threshold);
    nli.down = true;
    v = faithfulness_gate(rec, cfg, task, nli);
    CHECK(v.decision == Decision::reject);
    CHECK(v.reason == Reason::scoring_error);
    CHECK(!v.score);
    cfg.on_scoring_error = OnScoringError::keep_flagged;
    v = faithfulness_gate(rec, cfg, task, nli);
    CHECK(v.kept());
    CHECK(v.reason == Reason::scoring_error);

    cfg = FilterConfig::for_task(task);
    ScriptedReward reward;
    reward.fallback = 0.5;
    CHECK(quality_gate(rec, cfg, task, reward).kept());
    reward.fallback = 0.499;
    CHECK(quality_gate(rec, cfg, task, reward).reason == Reason::below_reward_threshold);
    reward.fallback = 0.501;
    CHECK(quality_gate(rec, cfg, task, reward).kept());
}

TEST_CASE("scoring requests") {
    const auto task = TaskSpec::defaults(TaskName::qa);
    auto cfg = FilterConfig::for_task(task);
    const auto rec = qa_record(5, 2, 3);
    const auto nli = nli_request(rec, cfg, task);
    CHECK(nli.premise == rec.passage.text);
    CHECK(nli.hypothesis == "q0 q1 a0 a1 a2");
    cfg.hypothesis_mode = HypothesisMode::answer_only;
    CHECK(nli_request(rec, cfg, task).hypothesis == "a0 a1 a2");
    const auto rw = reward_request(rec, cfg, task);
    CHECK(rw.instruction == "q0 q1");
    CHECK(rw.response == "a0 a1 a2");
    cfg.reward_includes_content = true;
    CHECK(reward_request(rec, cfg, task).instruction == rec.passage.text + "\n\nq0 q1");

    const auto sum = TaskSpec::defaults(TaskName::summarization);
    const auto srec = summary_record(200, 4);
    CHECK(reward_request(srec, FilterConfig::for_task(sum), sum).instruction == *sum.instruction_marker_text);
    CHECK(nli_request(srec, FilterConfig::for_task(sum), sum).hypothesis == "s0 s1 s2 s3");

    GenerationRecord bad;
    CHECK_THROWS_AS(nli_request(bad, cfg, task), std::logic_error);
}

TEST_CASE("config validation") {
    FilterConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.reward_threshold = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.reward_threshold = 1.01;
    CHECK_NOTHROW(cfg.validate());
    cfg = {};
    cfg.entailment_threshold = std::nan("");
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.gate_order = {Gate::faithfulness, Gate::format, Gate::quality};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.gate_order = {Gate::format, Gate::quality, Gate::faithfulness};
    CHECK_NOTHROW(cfg.validate());
    cfg.gate_order = {Gate::format, Gate::quality, Gate::quality};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.min_example_words = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(gate_from_string("quality") == Gate::quality);
    CHECK(reason_from_string(to_string(Reason::too_long)) == Reason::too_long);
    CHECK_THROWS_AS(gate_from_string("nope"), std::invalid_argument);
}

TEST_CASE("run_chain: ten records funnel to four kept") {
    const auto task = TaskSpec::defaults(TaskName::qa);
    const auto cfg = FilterConfig::for_task(task);
    std::vector<GenerationRecord> recs;
    ScriptedNli nli;
    ScriptedReward reward;
    for (int i = 0; i < 10; ++i) {
        auto r = qa_record(60, 6, 12, "p" + std::to_string(i));
        r.passage.text += " tag" + std::to_string(i);
        r.index = static_cast<std::size_t>(i);
        if (i < 2) r.parsed = templates::FormatError{templates::FormatError::Kind::MissingMarker, "answer"};
        if (i >= 2 && i < 5) nli.scores[r.passage.text] = 0.3;
        if (i == 5) {
            std::get<templates::ParsedExample>(r.parsed).elements[1].text = "short answer words here now";
            reward.scores["short answer words here now"] = 0.2;
        }
        recs.push_back(r);
    }
    const auto out = run_chain(recs, cfg, task, nli, reward, 3);
    REQUIRE(out.kept.size() == 4);
    REQUIRE(out.rejected.size() == 6);
    std::map<Gate, int> by_gate;
    for (const auto& r : out.rejected) {
        ++by_gate[r.verdicts.back().gate];
        CHECK(r.verdicts.back().decision == Decision::reject);
        for (std::size_t k = 0; k + 1 < r.verdicts.size(); ++k) CHECK(r.verdicts[k].kept());
    }
    CHECK(by_gate[Gate::format] == 2);
    CHECK(by_gate[Gate::faithfulness] == 3);
    CHECK(by_gate[Gate::quality] == 1);
    for (std::size_t k = 0; k < out.kept.size(); ++k) {
        CHECK(out.kept[k].index == 6 + k);
        REQUIRE(out.kept[k].verdicts.size() == 3);
        CHECK(out.kept[k].verdicts[1].score);
        CHECK(out.kept[k].verdicts[2].score);
        CHECK(out.kept[k].entailment == 1.0);
    }
    // Format rejects never reach a scorer.
    CHECK(nli.stats.calls == 8);
    CHECK(reward.stats.calls == 5);

    const auto f = tally(out, cfg);
    CHECK(f.input == 10);
    CHECK(f.kept == 4);
    CHECK(f.stages[0].rejected.at(Reason::missing_marker) == 2);
    CHECK(f.stages[1].in == 8);
    CHECK(f.stages[1].rejected.at(Reason::below_entailment_threshold) == 3);
    CHECK(f.stages[2].rejected.at(Reason::below_reward_threshold) == 1);
    const auto table = render_funnel(f);
    CHECK(table.find("kept 4 of 10 (40.0%)") != std::string::npos);
}

TEST_CASE("run_chain edge cases") {
    const auto task = TaskSpec::defaults(TaskName::qa);
    auto cfg = FilterConfig::for_task(task);
    ScriptedNli nli;
    ScriptedReward reward;
    auto empty = run_chain({}, cfg, task, nli, reward);
    CHECK(empty.kept.empty());
    CHECK(empty.rejected.empty());

    std::vector<GenerationRecord> recs;
    for (int i = 0; i < 7; ++i) {
        auto r = qa_record(50, 5, 10 + static_cast<std::size_t>(i));
        r.index = static_cast<std::size_t>(i);
        recs.push_back(r);
    }
    auto all = run_chain(recs, cfg, task, nli, reward, 2);
    REQUIRE(all.kept.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) CHECK(all.kept[i].index == i);

    // Everything rejected by format: zero scoring calls.
    for (auto& r : recs) r.parsed = templates::FormatError{templates::FormatError::Kind::OutOfOrderMarkers, ""};
    ScriptedNli nli2;
    ScriptedReward reward2;
    auto none = run_chain(recs, cfg, task, nli2, reward2);
    CHECK(none.rejected.size() == 7);
    CHECK(nli2.stats.calls == 0);
    CHECK(reward2.stats.calls == 0);

    // Scorer down: reject by default, keep flagged when configured.
    recs.clear();
    recs.push_back(qa_record(50, 5, 10));
    reward.down = true;
    CHECK(run_chain(recs, cfg, task, nli, reward).rejected.size() == 1);
    cfg.on_scoring_error = OnScoringError::keep_flagged;
    const auto flagged = run_chain(recs, cfg, task, nli, reward);
    REQUIRE(flagged.kept.size() == 1);
    CHECK(flagged.kept[0].verdicts.back().reason == Reason::scoring_error);
    CHECK(tally(flagged, cfg).stages[2].flagged == 1);
}

TEST_CASE("property: kept set is monotone in both thresholds") {
    const auto task = TaskSpec::defaults(TaskName::qa);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<GenerationRecord> recs;
    ScriptedNli nli;
    ScriptedReward reward;
    for (int i = 0; i < 60; ++i) {
        auto r = qa_record(40, 4, 8, "p");
        r.passage.text += " x" + std::to_string(i);
        std::get<templates::ParsedExample>(r.parsed).elements[1].text += " y" + std::to_string(i);
        const double pick = u(rng);
        nli.scores[r.passage.text] = pick < 0.1 ? 0.0 : pick > 0.9 ? 1.0 : u(rng);
        reward.scores[std::get<templates::ParsedExample>(r.parsed).elements[1].text] = u(rng) < 0.1 ? 0.5 : u(rng);
        recs.push_back(r);
    }
    const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<std::vector<std::size_t>> kept(grid.size(), std::vector<std::size_t>(grid.size()));
    for (std::size_t a = 0; a < grid.size(); ++a) {
        for (std::size_t b = 0; b < grid.size(); ++b) {
            auto cfg = FilterConfig::for_task(task);
            cfg.entailment_threshold = grid[a];
            cfg.reward_threshold = grid[b];
            const auto out = run_chain(recs, cfg, task, nli, reward);
            CHECK(out.kept.size() + out.rejected.size() == recs.size());
            kept[a][b] = out.kept.size();
        }
    }
    for (std::size_t a = 0; a < grid.size(); ++a) {
        for (std::size_t b = 0; b < grid.size(); ++b) {
            if (a + 1 < grid.size()) CHECK(kept[a + 1][b] <= kept[a][b]);
            if (b + 1 < grid.size()) CHECK(kept[a][b + 1] <= kept[a][b]);
        }
    }
    CHECK(kept[0][0] == recs.size());
    CHECK(kept[4][4] < kept[0][0]);
}
