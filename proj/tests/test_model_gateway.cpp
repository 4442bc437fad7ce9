#include "doctest.h"

#include <httplib.h>

#include "groundgen/model_gateway.hpp"
#include "groundgen/task_templates.hpp"
#include "groundgen/text.hpp"

#include <json.hpp>

#include <cmath>
#include <numeric>

using namespace groundgen;
using namespace groundgen::gateway;
using namespace std::chrono_literals;

namespace {

// Local HTTP server on an ephemeral port, stopped on destruction.
class TestServer {
public:
    TestServer() {
        port_ = svr.bind_to_any_port("127.0.0.1");
        REQUIRE(port_ > 0);
        thread_ = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }
    ~TestServer() {
        svr.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    httplib::Server svr;

private:
    int port_ = 0;
    std::thread thread_;
};

struct RecordingSleeper {
    std::shared_ptr<std::vector<std::chrono::milliseconds>> delays = std::make_shared<std::vector<std::chrono::milliseconds>>();
    Sleeper fn() {
        auto d = delays;
        return [d](std::chrono::milliseconds ms) { d->push_back(ms); };
    }
};

EndpointConfig cfg_for(const std::string& url) {
    EndpointConfig c;
    c.url = url;
    c.model_id = "test-model";
    c.timeout = 2000ms;
    return c;
}

int unused_port() {
    httplib::Server s;
    const int p = s.bind_to_any_port("127.0.0.1");
    return p;  // socket closed when s is destroyed
}

}  // namespace

TEST_CASE("retry policy delays grow exponentially from one second") {
    RetryPolicy p;
    CHECK(p.max_attempts == 5);
    CHECK(p.delay_before(2) == 1000ms);
    CHECK(p.delay_before(3) == 2000ms);
    CHECK(p.delay_before(4) == 4000ms);
    CHECK(p.delay_before(5) == 8000ms);
}

TEST_CASE("with_retry only retries transient errors") {
    RetryPolicy p;
    RecordingSleeper sleeper;
    int attempts = 0;
    int calls = 0;
    CHECK_THROWS_AS(with_retry(p, sleeper.fn(), [&]() -> int { ++calls; throw EndpointError(400, "bad"); }, attempts),
                    EndpointError);
    CHECK(calls == 1);
    calls = 0;
    CHECK_THROWS_AS(with_retry(p, sleeper.fn(), [&]() -> int { ++calls; throw EndpointError(503, "busy"); }, attempts),
                    EndpointError);
    CHECK(calls == 5);
    CHECK(attempts == 5);
    CHECK(sleeper.delays->size() == 4);
}

TEST_CASE("HTTP completion: 429 twice then 200 succeeds after two retries") {
    TestServer server;
    std::atomic<int> hits{0};
    std::string seen_body;
    std::string seen_auth;
    server.svr.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (++hits <= 2) {
            res.status = 429;
            return;
        }
        seen_body = req.body;
        seen_auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"text":" Who built it? [answer] J. Doe.\n[document] x"}]})", "application/json");
    });
    auto cfg = cfg_for(server.url());
    cfg.api_key = "secret";
    RecordingSleeper sleeper;
    HttpCompletionClient client(cfg, make_http_transport(cfg.url, cfg.api_key, cfg.timeout), sleeper.fn());
    CompletionRequest req;
    req.prompt = "[document] text\n[question]";
    req.stop_sequences = {"[document]"};
    const auto out = client.complete(req);
    CHECK(out.attempts == 3);
    CHECK(hits == 3);
    CHECK(*sleeper.delays == std::vector<std::chrono::milliseconds>{1000ms, 2000ms});
    CHECK(out.text == " Who built it? [answer] J. Doe.\n");
    CHECK(out.model_id == "test-model");
    CHECK(seen_auth == "Bearer secret");
    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["prompt"] == req.prompt);
    CHECK(body["max_tokens"] == 1024);
    CHECK(body["temperature"] == 0.0);
    CHECK(body["stop"] == nlohmann::json::array({"[document]"}));
}

TEST_CASE("HTTP completion: unreachable host with budget 3 times out after 3 attempts") {
    auto cfg = cfg_for("http://127.0.0.1:" + std::to_string(unused_port()));
    cfg.retry.max_attempts = 3;
    cfg.timeout = 500ms;
    RecordingSleeper sleeper;
    HttpCompletionClient client(cfg, make_http_transport(cfg.url, "", cfg.timeout), sleeper.fn());
    CompletionRequest req;
    req.prompt = "p";
    CHECK_THROWS_AS(client.complete(req), TimeoutError);
    CHECK(sleeper.delays->size() == 2);
    CHECK_THROWS_AS(client.probe(), TimeoutError);
}

TEST_CASE("HTTP errors: 4xx is permanent, 5xx is retried") {
    TestServer server;
    std::atomic<int> hits{0};
    server.svr.Post("/score/nli", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 400;
        res.set_content("bad request", "text/plain");
    });
    server.svr.Post("/score/reward", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 502;
    });
    RecordingSleeper sleeper;
    auto cfg = cfg_for(server.url());
    HttpNliClient nli(cfg, make_http_transport(cfg.url, "", cfg.timeout), sleeper.fn());
    try {
        nli.score_nli({"p", "h"});
        FAIL("expected EndpointError");
    } catch (const EndpointError& e) {
        CHECK(e.status() == 400);
        CHECK(e.body() == "bad request");
    }
    CHECK(hits == 1);
    hits = 0;
    HttpRewardClient reward(cfg, make_http_transport(cfg.url, "", cfg.timeout), sleeper.fn());
    CHECK_THROWS_AS(reward.score_reward({"q", "a"}), EndpointError);
    CHECK(hits == 5);
}

TEST_CASE("HTTP scoring round trip") {
    TestServer server;
    server.svr.Post("/score/nli", [](const httplib::Request& req, httplib::Response& res) {
        const auto j = nlohmann::json::parse(req.body);
        res.set_content(j["premise"] == j["hypothesis"] ? R"({"entailment": "TRUE"})" : R"({"entailment": 0.25})",
                        "application/json");
    });
    server.svr.Post("/score/reward", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"score": 0.0})", "application/json");
    });
    auto cfg = cfg_for(server.url() + "/");
    auto nli = make_nli_client(cfg);
    CHECK(nli->score_nli({"same", "same"}).value == 1.0);
    CHECK(nli->score_nli({"a", "b"}).value == 0.25);
    auto reward = make_reward_client(cfg);
    CHECK(reward->score_reward({"q", "a"}).value == 0.5);  // logistic(0)
    cfg.reward_transform = RewardTransform::identity;
    CHECK(make_reward_client(cfg)->score_reward({"q", "a"}).value == 0.0);
    CHECK_NOTHROW(nli->probe());
}

TEST_CASE("response decoding") {
    CHECK(decode_nli_response(R"({"entailment": true})") == 1.0);
    CHECK(decode_nli_response(R"({"entailment": "false"})") == 0.0);
    CHECK(decode_nli_response(R"({"entailment": 0.7})") == 0.7);
    CHECK_THROWS_AS(decode_nli_response(R"({"label": 1})"), EndpointError);
    CHECK_THROWS_AS(decode_nli_response("not json"), EndpointError);
    CHECK(decode_reward_response(R"({"score": 2.0})", RewardTransform::logistic) ==
          doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
    CHECK(decode_reward_response(R"({"score": 1.7})", RewardTransform::identity) == 1.0);
    CHECK_THROWS_AS(decode_completion_response(R"({"choices": []})"), EndpointError);
}

TEST_CASE("preconditions fail before any call") {
    MockRewardClient reward;
    CHECK_THROWS_AS(reward.score_reward({"question", ""}), PreconditionError);
    CHECK_THROWS_AS(reward.score_reward({"  ", "answer"}), PreconditionError);
    CHECK(reward.stats().calls == 0);
    MockNliClient nli;
    CHECK_THROWS_AS(nli.score_nli({"", "h"}), PreconditionError);
    CHECK(nli.stats().calls == 0);
    auto comp = MockCompletionClient::extractive();
    CompletionRequest req;
    req.prompt = "x";
    req.max_new_tokens = 0;
    CHECK_THROWS_AS(comp->complete(req), PreconditionError);
    CHECK(comp->stats().calls == 0);
}

TEST_CASE("mock completion table returns canned text byte-exactly") {
    const std::string prompt = "[document] abc\n[question]";
    const std::string canned = " Q?\n[answer] A \xC3\xA9  \n";
    auto mock = MockCompletionClient::from_table({{text::sha256_hex(prompt), canned}});
    CompletionRequest req;
    req.prompt = prompt;
    CHECK(mock->complete(req).text == canned);
    req.prompt = "other";
    try {
        mock->complete(req);
        FAIL("expected EndpointError");
    } catch (const EndpointError& e) {
        CHECK(e.status() == 404);
    }
    CHECK(mock->stats().calls == 2);
}

TEST_CASE("mock NLI rules") {
    MockNliClient nli;
    CHECK(nli.score_nli({"The sky is blue.", "The sky is blue."}).value == 1.0);
    nli.set_override("The sky is blue.", "The sky is green.", 0.0);
    CHECK(nli.score_nli({"The sky is blue.", "The sky is green."}).value == 0.0);
    CHECK(nli.score_nli({"The sky is blue.", "the SKY is red"}).value == 0.75);
}

TEST_CASE("mock reward is length scaled and deterministic") {
    MockRewardClient reward(20);
    CHECK(reward.score_reward({"q", "one two three four"}).value == 0.2);
    CHECK(reward.score_reward({"q", std::string(200, 'a') + " b c d e f g h i j k l m n o p q r s t u v"}).value == 1.0);
    CHECK(reward.score_reward({"q", "one two three four"}).value == 0.2);
}

TEST_CASE("mock extractive completions parse under the default tasks") {
    for (auto name : {templates::TaskName::qa, templates::TaskName::summarization, templates::TaskName::extraction}) {
        auto task = templates::TaskSpec::defaults(name);
        task.shots = 0;
        content::Passage p;
        p.text = "The Harrow Creek Bridge is a stone arch bridge in the county of Dunmore. It was designed by the "
                 "engineer Jane Doe and opened in 1932 after four years of construction, replacing an older timber "
                 "crossing that had washed away in the flood of 1927.";
        const auto prompt = templates::build_prompt(task, {}, p);
        const auto completion = extractive_completion(prompt.text);
        const auto parsed = templates::parse_completion(task, prompt.cue, completion);
        CHECK_MESSAGE(std::holds_alternative<templates::ParsedExample>(parsed), to_string(name));
    }
}

TEST_CASE("factory dispatch") {
    CHECK(make_completion_client(cfg_for("mock:extractive"))->model_id() == "test-model");
    CHECK(make_nli_client(cfg_for("mock:lexical")) != nullptr);
    CHECK(make_reward_client(cfg_for("mock:length:12"))->model_id() == "mock-reward-length-12");
    CHECK_THROWS_AS(make_completion_client(cfg_for("ftp://x")), GatewayError);
    CHECK_THROWS_AS(make_reward_client(cfg_for("mock:length:abc")), GatewayError);
    CHECK_THROWS_AS(make_completion_client(cfg_for("mock:table:/nonexistent.json")), GatewayError);
}

TEST_CASE("map_batched basics") {
    const std::vector<int> empty;
    CHECK(map_batched(empty, 3, [](int x) { return x; }).empty());
    CHECK_THROWS_AS(map_batched(empty, 0, [](int x) { return x; }), std::invalid_argument);

    std::vector<int> reqs(10);
    std::iota(reqs.begin(), reqs.end(), 0);
    const auto out = map_batched(reqs, 3, [](int x) {
        if (x == 5) throw EndpointError(500, "permanent");
        return x * 10;
    });
    REQUIRE(out.size() == 10);
    for (int i = 0; i < 10; ++i) {
        if (i == 5) {
            CHECK(!out[i].ok());
            CHECK(out[i].error_message().find("500") != std::string::npos);
        } else {
            CHECK(out[i].ok());
            CHECK(*out[i].value == i * 10);
        }
    }
}

TEST_CASE("property: map_batched bounds concurrency and preserves order") {
    for (int trial = 0; trial < 10; ++trial) {
        MockRewardClient reward(5);
        reward.set_latency(5ms, static_cast<std::uint64_t>(trial));
        std::vector<RewardRequest> reqs;
        for (int i = 0; i < 20; ++i) reqs.push_back({"q", std::string(static_cast<std::size_t>(i % 6) * 2, 'x') + " w"});
        const auto out = map_batched(reqs, 3, [&](const RewardRequest& r) { return reward.score_reward(r).value; });
        CHECK(reward.stats().gauge.peak() <= 3);
        CHECK(reward.stats().gauge.peak() >= 2);
        for (std::size_t i = 0; i < reqs.size(); ++i) {
            REQUIRE(out[i].ok());
            CHECK(*out[i].value == std::min(1.0, static_cast<double>(text::word_count(reqs[i].response)) / 5.0));
        }
    }
}
