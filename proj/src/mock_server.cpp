#include "groundgen/mock_server.hpp"

#include <httplib.h>
#include <json.hpp>

namespace groundgen::gateway {

using nlohmann::json;

namespace {

// Runs a handler, translating gateway errors back into the status codes the client maps from.
template <class F>
void respond(httplib::Response& res, F&& f) {
    try {
        res.set_content(f().dump(), "application/json");
    } catch (const RateLimited& e) {
        res.status = 429;
        res.set_content(e.what(), "text/plain");
    } catch (const EndpointError& e) {
        res.status = e.status() >= 400 ? e.status() : 500;
        res.set_content(e.body(), "text/plain");
    } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(e.what(), "text/plain");
    } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(e.what(), "text/plain");
    }
}

}  // namespace

MockHttpServer::MockHttpServer(std::shared_ptr<CompletionClient> completion, std::shared_ptr<NliClient> nli,
                               std::shared_ptr<RewardClient> reward)
    : completion_(std::move(completion)), nli_(std::move(nli)), reward_(std::move(reward)),
      server_(std::make_unique<httplib::Server>()) {
    server_->Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    server_->Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] {
            const auto j = json::parse(req.body);
            CompletionRequest r;
            r.prompt = j.at("prompt").get<std::string>();
            r.max_new_tokens = j.value("max_tokens", r.max_new_tokens);
            r.temperature = j.value("temperature", r.temperature);
            r.stop_sequences = j.value("stop", std::vector<std::string>{});
            const auto out = completion_->complete(r);
            return json{{"model", out.model_id}, {"choices", json::array({json{{"text", out.text}}})}};
        });
    });
    server_->Post("/score/nli", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] {
            const auto j = json::parse(req.body);
            const auto s = nli_->score_nli({j.at("premise").get<std::string>(), j.at("hypothesis").get<std::string>()});
            return json{{"entailment", s.value}};
        });
    });
    server_->Post("/score/reward", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] {
            const auto j = json::parse(req.body);
            const auto s =
                reward_->score_reward({j.at("instruction").get<std::string>(), j.at("response").get<std::string>()});
            return json{{"score", s.value}};
        });
    });
}

MockHttpServer::~MockHttpServer() { stop(); }

int MockHttpServer::start(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw GatewayError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

bool MockHttpServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

void MockHttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace groundgen::gateway
