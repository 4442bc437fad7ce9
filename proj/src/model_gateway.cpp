#include "groundgen/model_gateway.hpp"

#include "groundgen/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace groundgen::gateway {

using json = nlohmann::json;

EndpointError::EndpointError(int status, std::string body)
    : GatewayError("endpoint returned HTTP " + std::to_string(status) + ": " + body.substr(0, 200)),
      status_(status),
      body_(std::move(body)) {}

namespace {

bool blank(const std::string& s) { return text::trim(s).empty(); }

std::int64_t elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - since).count();
}

std::string truncate_at_stops(std::string s, const std::vector<std::string>& stops) {
    auto cut = s.size();
    for (const auto& stop : stops) {
        if (stop.empty()) continue;
        cut = std::min(cut, s.find(stop));
    }
    s.resize(std::min(cut, s.size()));
    return s;
}

}  // namespace

void CompletionRequest::validate() const {
    if (blank(prompt)) throw PreconditionError("completion prompt is empty");
    if (max_new_tokens < 1) throw PreconditionError("max_new_tokens must be >= 1");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw PreconditionError("temperature must be >= 0");
}

void NliRequest::validate() const {
    if (blank(premise)) throw PreconditionError("NLI premise is empty");
    if (blank(hypothesis)) throw PreconditionError("NLI hypothesis is empty");
}

void RewardRequest::validate() const {
    if (blank(instruction)) throw PreconditionError("reward instruction is empty");
    if (blank(response)) throw PreconditionError("reward response is empty");
}

std::chrono::milliseconds RetryPolicy::delay_before(int attempt) const {
    const double d = static_cast<double>(base.count()) * std::pow(factor, std::max(0, attempt - 2));
    return std::chrono::milliseconds(static_cast<std::int64_t>(d));
}

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ConcurrencyGauge::Scope::Scope(ConcurrencyGauge& g) : g_(g) {
    const int now = ++g_.current_;
    int prev = g_.peak_.load();
    while (now > prev && !g_.peak_.compare_exchange_weak(prev, now)) {
    }
}

ConcurrencyGauge::Scope::~Scope() { --g_.current_; }

CompletionText CompletionClient::complete(const CompletionRequest& req) {
    req.validate();
    return do_complete(req);
}

ScoreResult NliClient::score_nli(const NliRequest& req) {
    req.validate();
    return do_score(req);
}

ScoreResult RewardClient::score_reward(const RewardRequest& req) {
    req.validate();
    return do_score(req);
}

// ---- HTTP clients ----

namespace {

std::string checked_body(const HttpResponse& res) {
    if (res.status == 429) throw RateLimited("endpoint rate limited (HTTP 429)");
    if (res.status == 408) throw TimeoutError("endpoint timed out (HTTP 408)");
    if (res.status < 200 || res.status >= 300) throw EndpointError(res.status, res.body);
    return res.body;
}

json parse_body(const std::string& body) {
    try {
        return json::parse(body);
    } catch (const json::exception&) {
        throw EndpointError(200, "malformed JSON response: " + body);
    }
}

double score_value(const json& v, const std::string& body) {
    if (v.is_number()) {
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw EndpointError(200, "non-finite score: " + body);
        return d;
    }
    throw EndpointError(200, "score is not a number: " + body);
}

}  // namespace

std::string decode_completion_response(const std::string& body) {
    const auto j = parse_body(body);
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty() ||
        !j["choices"][0].contains("text") || !j["choices"][0]["text"].is_string()) {
        throw EndpointError(200, "completion response lacks choices[0].text: " + body);
    }
    return j["choices"][0]["text"].get<std::string>();
}

double decode_nli_response(const std::string& body) {
    const auto j = parse_body(body);
    if (!j.is_object() || !j.contains("entailment")) throw EndpointError(200, "NLI response lacks entailment: " + body);
    const auto& v = j["entailment"];
    if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
    if (v.is_string()) {
        const auto s = text::to_lower_ascii(text::trim(v.get<std::string>()));
        if (s == "true" || s == "1") return 1.0;
        if (s == "false" || s == "0") return 0.0;
        throw EndpointError(200, "unrecognized NLI label: " + body);
    }
    return std::clamp(score_value(v, body), 0.0, 1.0);
}

double decode_reward_response(const std::string& body, RewardTransform transform) {
    const auto j = parse_body(body);
    if (!j.is_object() || !j.contains("score")) throw EndpointError(200, "reward response lacks score: " + body);
    const double raw = score_value(j["score"], body);
    if (transform == RewardTransform::logistic) return 1.0 / (1.0 + std::exp(-raw));
    return std::clamp(raw, 0.0, 1.0);
}

HttpCompletionClient::HttpCompletionClient(EndpointConfig cfg, std::unique_ptr<HttpTransport> transport,
                                           Sleeper sleep)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleep_(std::move(sleep)) {}

CompletionText HttpCompletionClient::do_complete(const CompletionRequest& req) {
    const json payload{{"model", cfg_.model_id},
                       {"prompt", req.prompt},
                       {"max_tokens", req.max_new_tokens},
                       {"temperature", req.temperature},
                       {"stop", req.stop_sequences}};
    const auto body = payload.dump();
    const auto t0 = std::chrono::steady_clock::now();
    CompletionText out;
    const auto text =
        with_retry(cfg_.retry, sleep_, [&] { return checked_body(transport_->post_json("/v1/completions", body)); },
                   out.attempts);
    out.text = truncate_at_stops(decode_completion_response(text), req.stop_sequences);
    out.model_id = cfg_.model_id;
    out.latency_ms = elapsed_ms(t0);
    return out;
}

HttpNliClient::HttpNliClient(EndpointConfig cfg, std::unique_ptr<HttpTransport> transport, Sleeper sleep)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleep_(std::move(sleep)) {}

ScoreResult HttpNliClient::do_score(const NliRequest& req) {
    const auto body = json{{"premise", req.premise}, {"hypothesis", req.hypothesis}}.dump();
    const auto t0 = std::chrono::steady_clock::now();
    ScoreResult out;
    const auto text = with_retry(
        cfg_.retry, sleep_, [&] { return checked_body(transport_->post_json("/score/nli", body)); }, out.attempts);
    out.value = decode_nli_response(text);
    out.model_id = cfg_.model_id;
    out.latency_ms = elapsed_ms(t0);
    return out;
}

HttpRewardClient::HttpRewardClient(EndpointConfig cfg, std::unique_ptr<HttpTransport> transport, Sleeper sleep)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleep_(std::move(sleep)) {}

ScoreResult HttpRewardClient::do_score(const RewardRequest& req) {
    const auto body = json{{"instruction", req.instruction}, {"response", req.response}}.dump();
    const auto t0 = std::chrono::steady_clock::now();
    ScoreResult out;
    const auto text = with_retry(
        cfg_.retry, sleep_, [&] { return checked_body(transport_->post_json("/score/reward", body)); },
        out.attempts);
    out.value = decode_reward_response(text, cfg_.reward_transform);
    out.model_id = cfg_.model_id;
    out.latency_ms = elapsed_ms(t0);
    return out;
}

// ---- Mocks ----

MockLatency::MockLatency(std::chrono::milliseconds max_latency, std::uint64_t seed) : max_(max_latency), rng_(seed) {}

void MockLatency::wait() {
    if (max_.count() <= 0) return;
    std::int64_t d;
    {
        std::lock_guard lock(mu_);
        d = static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(max_.count() + 1));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(d));
}

namespace {

std::string join_words(const std::vector<std::string>& w, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end && i < w.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += w[i];
    }
    return out;
}

}  // namespace

std::string extractive_completion(const std::string& prompt) {
    const std::string doc = "[document] ";
    const auto start = prompt.rfind(doc);
    if (start == std::string::npos) return "";
    const auto last_nl = prompt.rfind('\n');
    if (last_nl == std::string::npos || last_nl < start) return "";
    const auto cue_marker = std::string(text::trim(std::string_view(prompt).substr(last_nl + 1)));
    // The target runs up to the first cue line.
    auto target_end = last_nl;
    if (cue_marker == "[summary]") {
        const auto prev = prompt.rfind('\n', last_nl - 1);
        if (prev != std::string::npos && prev > start) target_end = prev;
    }
    const auto target = prompt.substr(start + doc.size(), target_end - start - doc.size());
    const auto w = text::words(target);
    if (w.empty()) return "";
    const auto n = w.size();

    if (cue_marker == "[summary]") return " " + join_words(w, 0, std::max<std::size_t>(10, n / 4)) + ".";
    const auto body_len = std::clamp<std::size_t>(n / 3, 12, 60);
    std::string follow;
    if (cue_marker == "[question]") follow = "[answer]";
    if (cue_marker == "[instruction]") follow = "[response]";
    if (follow.empty()) return " " + join_words(w, 0, body_len) + ".";
    const auto lead = cue_marker == "[question]" ? "What does the passage say about " : "Restate what is said about ";
    return " " + std::string(lead) + join_words(w, 0, 3) + "?\n" + follow + " " + join_words(w, 0, body_len) + ".";
}

std::shared_ptr<MockCompletionClient> MockCompletionClient::extractive() {
    auto c = std::shared_ptr<MockCompletionClient>(new MockCompletionClient(Mode::extractive));
    c->model_id_ = "mock-extractive";
    return c;
}

std::shared_ptr<MockCompletionClient> MockCompletionClient::from_table(std::map<std::string, std::string> table) {
    auto c = std::shared_ptr<MockCompletionClient>(new MockCompletionClient(Mode::table));
    c->table_ = std::move(table);
    c->model_id_ = "mock-table";
    return c;
}

std::shared_ptr<MockCompletionClient> MockCompletionClient::from_table_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw GatewayError("cannot open mock table " + path);
    std::map<std::string, std::string> table;
    try {
        const auto j = json::parse(in);
        for (const auto& [k, v] : j.items()) table[k] = v.get<std::string>();
    } catch (const json::exception& e) {
        throw GatewayError("bad mock table " + path + ": " + e.what());
    }
    return from_table(std::move(table));
}

void MockCompletionClient::set_latency(std::chrono::milliseconds max_latency, std::uint64_t seed) {
    latency_ = std::make_unique<MockLatency>(max_latency, seed);
}

void MockCompletionClient::fail_prompts(std::vector<std::string> prompt_hashes) { failing_ = std::move(prompt_hashes); }

CompletionText MockCompletionClient::do_complete(const CompletionRequest& req) {
    ConcurrencyGauge::Scope scope(stats_.gauge);
    ++stats_.calls;
    if (latency_) latency_->wait();
    const auto t0 = std::chrono::steady_clock::now();
    CompletionText out;
    out.model_id = model_id_;
    const auto hash = text::sha256_hex(req.prompt);
    if (std::find(failing_.begin(), failing_.end(), hash) != failing_.end()) {
        throw EndpointError(500, "scripted failure for prompt " + hash);
    }
    if (mode_ == Mode::table) {
        const auto it = table_.find(hash);
        if (it == table_.end()) throw EndpointError(404, "no canned completion for prompt " + hash);
        out.text = it->second;
    } else {
        out.text = extractive_completion(req.prompt);
    }
    out.text = truncate_at_stops(out.text, req.stop_sequences);
    out.latency_ms = elapsed_ms(t0);
    return out;
}

void MockNliClient::set_override(const std::string& premise, const std::string& hypothesis, double value) {
    std::lock_guard lock(mu_);
    overrides_[{premise, hypothesis}] = value;
}

void MockNliClient::set_latency(std::chrono::milliseconds max_latency, std::uint64_t seed) {
    latency_ = std::make_unique<MockLatency>(max_latency, seed);
}

ScoreResult MockNliClient::do_score(const NliRequest& req) {
    ConcurrencyGauge::Scope scope(stats_.gauge);
    ++stats_.calls;
    if (latency_) latency_->wait();
    ScoreResult out;
    out.model_id = model_id();
    {
        std::lock_guard lock(mu_);
        if (const auto it = overrides_.find({req.premise, req.hypothesis}); it != overrides_.end()) {
            out.value = it->second;
            return out;
        }
    }
    if (req.premise == req.hypothesis) {
        out.value = 1.0;
        return out;
    }
    const auto premise = text::normalized_words(req.premise);
    const std::set<std::string> vocab(premise.begin(), premise.end());
    const auto hyp = text::normalized_words(req.hypothesis);
    if (hyp.empty()) return out;
    const auto found = std::count_if(hyp.begin(), hyp.end(), [&](const auto& t) { return vocab.count(t) > 0; });
    out.value = static_cast<double>(found) / static_cast<double>(hyp.size());
    return out;
}

MockRewardClient::MockRewardClient(std::size_t target_words) : target_(target_words) {
    if (target_ == 0) throw GatewayError("mock reward target must be > 0");
}

void MockRewardClient::set_latency(std::chrono::milliseconds max_latency, std::uint64_t seed) {
    latency_ = std::make_unique<MockLatency>(max_latency, seed);
}

ScoreResult MockRewardClient::do_score(const RewardRequest& req) {
    ConcurrencyGauge::Scope scope(stats_.gauge);
    ++stats_.calls;
    if (latency_) latency_->wait();
    ScoreResult out;
    out.model_id = model_id();
    out.value = std::min(1.0, static_cast<double>(text::word_count(req.response)) / static_cast<double>(target_));
    return out;
}

// ---- Factories ----

namespace {

bool is_http(const std::string& url) { return url.rfind("http://", 0) == 0 || url.rfind("https://", 0) == 0; }

[[noreturn]] void unknown_url(const std::string& kind, const std::string& url) {
    throw GatewayError("unsupported " + kind + " endpoint URL '" + url + "'");
}

}  // namespace

std::shared_ptr<CompletionClient> make_completion_client(const EndpointConfig& cfg) {
    if (is_http(cfg.url)) {
        return std::make_shared<HttpCompletionClient>(cfg, make_http_transport(cfg.url, cfg.api_key, cfg.timeout));
    }
    std::shared_ptr<MockCompletionClient> mock;
    if (cfg.url == "mock:extractive") mock = MockCompletionClient::extractive();
    if (cfg.url.rfind("mock:table:", 0) == 0) mock = MockCompletionClient::from_table_file(cfg.url.substr(11));
    if (!mock) unknown_url("completion", cfg.url);
    if (!cfg.model_id.empty()) mock->set_model_id(cfg.model_id);
    return mock;
}

std::shared_ptr<NliClient> make_nli_client(const EndpointConfig& cfg) {
    if (is_http(cfg.url)) {
        return std::make_shared<HttpNliClient>(cfg, make_http_transport(cfg.url, cfg.api_key, cfg.timeout));
    }
    if (cfg.url == "mock:lexical") return std::make_shared<MockNliClient>();
    unknown_url("NLI", cfg.url);
}

std::shared_ptr<RewardClient> make_reward_client(const EndpointConfig& cfg) {
    if (is_http(cfg.url)) {
        return std::make_shared<HttpRewardClient>(cfg, make_http_transport(cfg.url, cfg.api_key, cfg.timeout));
    }
    if (cfg.url.rfind("mock:length:", 0) == 0) {
        std::size_t n = 0;
        try {
            n = std::stoul(cfg.url.substr(12));
        } catch (const std::exception&) {
            unknown_url("reward", cfg.url);
        }
        return std::make_shared<MockRewardClient>(n);
    }
    if (cfg.url == "mock:length") return std::make_shared<MockRewardClient>();
    unknown_url("reward", cfg.url);
}

}  // namespace groundgen::gateway
