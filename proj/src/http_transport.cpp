#include <httplib.h>

#include "groundgen/model_gateway.hpp"

namespace groundgen::gateway {

namespace {

class HttplibTransport : public HttpTransport {
public:
    HttplibTransport(std::string scheme_host_port, std::string prefix, std::string api_key,
                     std::chrono::milliseconds timeout)
        : origin_(std::move(scheme_host_port)), prefix_(std::move(prefix)), api_key_(std::move(api_key)),
          timeout_(timeout) {}

    HttpResponse post_json(const std::string& path, const std::string& body) override {
        // A fresh client per call: httplib serializes requests on one client.
        auto cli = client(timeout_);
        auto res = cli->Post(prefix_ + path, body, "application/json");
        if (!res) throw TimeoutError("POST " + origin_ + prefix_ + path + ": " + httplib::to_string(res.error()));
        return HttpResponse{res->status, res->body};
    }

    void probe() override {
        auto cli = client(std::min(timeout_, std::chrono::milliseconds(5000)));
        auto res = cli->Get(prefix_.empty() ? "/" : prefix_);
        if (!res) throw TimeoutError(origin_ + " unreachable: " + httplib::to_string(res.error()));
    }

private:
    std::unique_ptr<httplib::Client> client(std::chrono::milliseconds timeout) const {
        auto cli = std::make_unique<httplib::Client>(origin_);
        const auto secs = timeout.count() / 1000;
        const auto usecs = (timeout.count() % 1000) * 1000;
        cli->set_connection_timeout(secs, usecs);
        cli->set_read_timeout(secs, usecs);
        cli->set_write_timeout(secs, usecs);
        if (!api_key_.empty()) cli->set_bearer_token_auth(api_key_);
        return cli;
    }

    std::string origin_;
    std::string prefix_;
    std::string api_key_;
    std::chrono::milliseconds timeout_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, const std::string& api_key,
                                                   std::chrono::milliseconds timeout) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw GatewayError("endpoint URL without scheme: " + base_url);
    const auto scheme = base_url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw GatewayError("unsupported URL scheme: " + base_url);
    auto path_begin = base_url.find('/', scheme_end + 3);
    std::string origin = base_url.substr(0, path_begin);
    std::string prefix = path_begin == std::string::npos ? "" : base_url.substr(path_begin);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return std::make_unique<HttplibTransport>(std::move(origin), std::move(prefix), api_key, timeout);
}

}  // namespace groundgen::gateway
