#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace groundgen::gateway {

class GatewayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Transient errors. Connection failures are reported as timeouts.
class TimeoutError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class RateLimited : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class EndpointError : public GatewayError {
public:
    EndpointError(int status, std::string body);
    int status() const { return status_; }
    const std::string& body() const { return body_; }
    bool transient() const { return status_ >= 500; }

private:
    int status_;
    std::string body_;
};

// Invalid request, raised before any network call.
class PreconditionError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

struct CompletionRequest {
    std::string prompt;
    int max_new_tokens = 1024;
    double temperature = 0.0;
    std::vector<std::string> stop_sequences;

    void validate() const;
};

struct CompletionText {
    std::string text;
    std::string model_id;
    std::int64_t latency_ms = 0;
    int attempts = 1;
};

struct NliRequest {
    std::string premise;
    std::string hypothesis;

    void validate() const;
};

struct RewardRequest {
    std::string instruction;
    std::string response;

    void validate() const;
};

struct ScoreResult {
    double value = 0.0;
    std::string model_id;
    std::int64_t latency_ms = 0;
    int attempts = 1;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base{1000};
    double factor = 2.0;

    std::chrono::milliseconds delay_before(int attempt) const;  // attempt >= 2
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

// Runs `call` until it succeeds, a permanent error is thrown, or the budget is spent.
// Retries on TimeoutError, RateLimited and 5xx EndpointError.
template <class F>
auto with_retry(const RetryPolicy& policy, const Sleeper& sleep, F&& call, int& attempts) -> decltype(call()) {
    for (attempts = 1;; ++attempts) {
        try {
            return call();
        } catch (const EndpointError& e) {
            if (!e.transient() || attempts >= policy.max_attempts) throw;
        } catch (const TimeoutError&) {
            if (attempts >= policy.max_attempts) throw;
        } catch (const RateLimited&) {
            if (attempts >= policy.max_attempts) throw;
        }
        if (sleep) sleep(policy.delay_before(attempts + 1));
    }
}

// Tracks outstanding calls; shared by the mocks so tests can observe peak concurrency.
class ConcurrencyGauge {
public:
    class Scope {
    public:
        explicit Scope(ConcurrencyGauge& g);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        ConcurrencyGauge& g_;
    };

    int peak() const { return peak_.load(); }
    int current() const { return current_.load(); }
    void reset() { peak_ = 0; }

private:
    std::atomic<int> current_{0};
    std::atomic<int> peak_{0};
};

class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    CompletionText complete(const CompletionRequest& req);  // validates, then calls do_complete
    virtual std::string model_id() const = 0;
    // Single cheap reachability check; throws GatewayError when the service is down.
    virtual void probe() {}

protected:
    virtual CompletionText do_complete(const CompletionRequest& req) = 0;
};

class NliClient {
public:
    virtual ~NliClient() = default;
    ScoreResult score_nli(const NliRequest& req);
    virtual std::string model_id() const = 0;
    virtual void probe() {}

protected:
    virtual ScoreResult do_score(const NliRequest& req) = 0;
};

class RewardClient {
public:
    virtual ~RewardClient() = default;
    ScoreResult score_reward(const RewardRequest& req);
    virtual std::string model_id() const = 0;
    virtual void probe() {}

protected:
    virtual ScoreResult do_score(const RewardRequest& req) = 0;
};

// ---- HTTP ----

struct HttpResponse {
    int status = 0;
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    // Throws TimeoutError on connection failure or read timeout.
    virtual HttpResponse post_json(const std::string& path, const std::string& body) = 0;
    virtual void probe() = 0;
};

// base_url: "http://host:port[/prefix]" or "https://...".
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, const std::string& api_key,
                                                   std::chrono::milliseconds timeout);

enum class RewardTransform { logistic, identity };

struct EndpointConfig {
    std::string url;  // http(s)://... or mock:...
    std::string model_id;
    std::string api_key;
    std::chrono::milliseconds timeout{60000};
    RetryPolicy retry;
    RewardTransform reward_transform = RewardTransform::logistic;
};

class HttpCompletionClient : public CompletionClient {
public:
    HttpCompletionClient(EndpointConfig cfg, std::unique_ptr<HttpTransport> transport, Sleeper sleep = real_sleeper());
    std::string model_id() const override { return cfg_.model_id; }
    void probe() override { transport_->probe(); }

protected:
    CompletionText do_complete(const CompletionRequest& req) override;

private:
    EndpointConfig cfg_;
    std::unique_ptr<HttpTransport> transport_;
    Sleeper sleep_;
};

class HttpNliClient : public NliClient {
public:
    HttpNliClient(EndpointConfig cfg, std::unique_ptr<HttpTransport> transport, Sleeper sleep = real_sleeper());
    std::string model_id() const override { return cfg_.model_id; }
    void probe() override { transport_->probe(); }

protected:
    ScoreResult do_score(const NliRequest& req) override;

private:
    EndpointConfig cfg_;
    std::unique_ptr<HttpTransport> transport_;
    Sleeper sleep_;
};

class HttpRewardClient : public RewardClient {
public:
    HttpRewardClient(EndpointConfig cfg, std::unique_ptr<HttpTransport> transport, Sleeper sleep = real_sleeper());
    std::string model_id() const override { return cfg_.model_id; }
    void probe() override { transport_->probe(); }

protected:
    ScoreResult do_score(const RewardRequest& req) override;

private:
    EndpointConfig cfg_;
    std::unique_ptr<HttpTransport> transport_;
    Sleeper sleep_;
};

// Response decoding, exposed for tests.
std::string decode_completion_response(const std::string& body);
double decode_nli_response(const std::string& body);
double decode_reward_response(const std::string& body, RewardTransform transform);

// ---- Mocks ----

// Optional uniform random latency in [0, max_latency] per call.
class MockLatency {
public:
    MockLatency() = default;
    MockLatency(std::chrono::milliseconds max_latency, std::uint64_t seed);
    void wait();

private:
    std::chrono::milliseconds max_{0};
    std::mutex mu_;
    std::mt19937_64 rng_;
};

// Shared mock bookkeeping.
struct MockStats {
    std::atomic<std::int64_t> calls{0};
    ConcurrencyGauge gauge;
};

// "mock:extractive": builds an example from the target passage in the prompt.
// "mock:table:<path>": JSON object {sha256(prompt) hex: completion}; unknown prompts raise EndpointError(404).
class MockCompletionClient : public CompletionClient {
public:
    enum class Mode { extractive, table };

    static std::shared_ptr<MockCompletionClient> extractive();
    static std::shared_ptr<MockCompletionClient> from_table(std::map<std::string, std::string> table);
    static std::shared_ptr<MockCompletionClient> from_table_file(const std::string& path);

    std::string model_id() const override { return model_id_; }
    void set_model_id(std::string id) { model_id_ = std::move(id); }
    void set_latency(std::chrono::milliseconds max_latency, std::uint64_t seed);
    // Prompts whose hash is listed here fail permanently with EndpointError(500).
    void fail_prompts(std::vector<std::string> prompt_hashes);

    MockStats& stats() { return stats_; }

protected:
    CompletionText do_complete(const CompletionRequest& req) override;

private:
    explicit MockCompletionClient(Mode mode) : mode_(mode) {}

    Mode mode_;
    std::map<std::string, std::string> table_;
    std::vector<std::string> failing_;
    std::string model_id_ = "mock-completion";
    std::unique_ptr<MockLatency> latency_;
    MockStats stats_;
};

// The deterministic continuation used by mock:extractive, exposed for tests.
std::string extractive_completion(const std::string& prompt);

// Entailment = fraction of hypothesis tokens found in the premise (normalized),
// 1.0 for identical strings; explicit (premise, hypothesis) overrides win.
class MockNliClient : public NliClient {
public:
    MockNliClient() = default;
    void set_override(const std::string& premise, const std::string& hypothesis, double value);
    void set_latency(std::chrono::milliseconds max_latency, std::uint64_t seed);
    std::string model_id() const override { return "mock-nli-lexical"; }
    MockStats& stats() { return stats_; }

protected:
    ScoreResult do_score(const NliRequest& req) override;

private:
    std::mutex mu_;
    std::map<std::pair<std::string, std::string>, double> overrides_;
    std::unique_ptr<MockLatency> latency_;
    MockStats stats_;
};

// score = min(1, words(response) / target_words).
class MockRewardClient : public RewardClient {
public:
    explicit MockRewardClient(std::size_t target_words = 20);
    void set_latency(std::chrono::milliseconds max_latency, std::uint64_t seed);
    std::string model_id() const override { return "mock-reward-length-" + std::to_string(target_); }
    MockStats& stats() { return stats_; }

protected:
    ScoreResult do_score(const RewardRequest& req) override;

private:
    std::size_t target_;
    std::unique_ptr<MockLatency> latency_;
    MockStats stats_;
};

// Factories dispatch on the URL scheme: http(s)://, mock:extractive, mock:table:<path>,
// mock:lexical, mock:length:<N>. Throw GatewayError on an unknown scheme.
std::shared_ptr<CompletionClient> make_completion_client(const EndpointConfig& cfg);
std::shared_ptr<NliClient> make_nli_client(const EndpointConfig& cfg);
std::shared_ptr<RewardClient> make_reward_client(const EndpointConfig& cfg);

// ---- Batching ----

template <class T>
struct Outcome {
    std::optional<T> value;
    std::exception_ptr error;

    bool ok() const { return value.has_value(); }
    std::string error_message() const;
};

template <class T>
std::string Outcome<T>::error_message() const {
    if (!error) return {};
    try {
        std::rethrow_exception(error);
    } catch (const std::exception& e) {
        return e.what();
    } catch (...) {
        return "unknown error";
    }
}

// Applies fn to every request with at most max_in_flight calls outstanding.
// Results are aligned with the input; a failing call only affects its own slot.
template <class Req, class Fn>
auto map_batched(const std::vector<Req>& requests, std::size_t max_in_flight, Fn fn)
    -> std::vector<Outcome<decltype(fn(requests.front()))>> {
    using T = decltype(fn(requests.front()));
    if (max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
    std::vector<Outcome<T>> out(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) {
            try {
                out[i].value.emplace(fn(requests[i]));
            } catch (...) {
                out[i].error = std::current_exception();
            }
        }
    };
    const auto n_workers = std::min(max_in_flight, requests.size());
    if (n_workers <= 1) {
        worker();
        return out;
    }
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return out;
}

}  // namespace groundgen::gateway
