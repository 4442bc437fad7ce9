// Local HTTP stand-in for the completion, NLI and reward services.
#include "groundgen/mock_server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {
groundgen::gateway::MockHttpServer* g_server = nullptr;
void on_signal(int) {
    if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
    using namespace groundgen::gateway;
    CLI::App app{"Mock completion/NLI/reward service"};
    std::string host = "127.0.0.1";
    int port = 8089;
    std::string completion = "mock:extractive";
    std::string nli = "mock:lexical";
    std::string reward = "mock:length:20";
    int latency_ms = 0;
    std::uint64_t seed = 1;
    app.add_option("--host", host);
    app.add_option("--port", port);
    app.add_option("--completion", completion, "mock:extractive or mock:table:<path>");
    app.add_option("--nli", nli, "mock:lexical");
    app.add_option("--reward", reward, "mock:length[:N]");
    app.add_option("--latency-ms", latency_ms, "Random per-request latency upper bound");
    app.add_option("--seed", seed, "Latency RNG seed");
    CLI11_PARSE(app, argc, argv);

    try {
        EndpointConfig c;
        c.url = completion;
        auto comp = make_completion_client(c);
        c.url = nli;
        auto n = make_nli_client(c);
        c.url = reward;
        auto r = make_reward_client(c);
        if (latency_ms > 0) {
            if (auto m = std::dynamic_pointer_cast<MockCompletionClient>(comp)) {
                m->set_latency(std::chrono::milliseconds(latency_ms), seed);
            }
        }
        MockHttpServer server(comp, n, r);
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cerr << "listening on http://" << host << ":" << port << '\n';
        if (!server.listen(host, port)) {
            std::cerr << "cannot listen on " << host << ":" << port << '\n';
            return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }
    return 0;
}
