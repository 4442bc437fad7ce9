#pragma once

#include "groundgen/model_gateway.hpp"

#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace groundgen::gateway {

// Serves the three endpoint contracts over HTTP, backed by in-process clients:
//   POST /v1/completions -> {"choices":[{"text":...}], "model": ...}
//   POST /score/nli      -> {"entailment": p}
//   POST /score/reward   -> {"score": p}   (a probability; pair with the identity transform)
// GET / answers 200 so startup probes succeed.
class MockHttpServer {
public:
    MockHttpServer(std::shared_ptr<CompletionClient> completion, std::shared_ptr<NliClient> nli,
                   std::shared_ptr<RewardClient> reward);
    ~MockHttpServer();
    MockHttpServer(const MockHttpServer&) = delete;
    MockHttpServer& operator=(const MockHttpServer&) = delete;

    // Binds host:port (port 0 picks a free one) and serves on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    // Blocks serving on the calling thread.
    bool listen(const std::string& host, int port);
    void stop();

private:
    std::shared_ptr<CompletionClient> completion_;
    std::shared_ptr<NliClient> nli_;
    std::shared_ptr<RewardClient> reward_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace groundgen::gateway
