#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsseg::llm {

struct ChatMessage {
    std::string role;  // "system" | "user"
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.2;
    int max_tokens = 512;
    std::string request_tag;  // query id / stage, for the audit log
};

enum class BackendKind { Http, Mock };

struct BackendConfig {
    BackendKind kind = BackendKind::Mock;
    std::string base_url;
    std::string api_key_env = "RSSEG_API_KEY";
    int requests_per_minute = 60;
    int max_retries = 3;
    double timeout_s = 30.0;
};

struct ChatResponse {
    std::string content;
    std::int64_t latency_ms = 0;
    int attempt_count = 1;
    std::string backend;
};

enum class ErrorCode { RetriesExhausted, AuthMissing, Timeout, MalformedTransportResponse };

std::string to_string(ErrorCode code);

struct GatewayError : std::runtime_error {
    ErrorCode code;
    int last_status = 0;
    int attempts = 0;
    GatewayError(ErrorCode c, const std::string& msg, int status = 0, int attempt_count = 0)
        : std::runtime_error(msg), code(c), last_status(status), attempts(attempt_count) {}
};

// Injectable time source so retry/rate-limit behavior is testable without
// real waiting.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_ms() = 0;
    virtual void sleep_ms(std::int64_t ms) = 0;
};

class SystemClock final : public Clock {
public:
    std::int64_t now_ms() override;
    void sleep_ms(std::int64_t ms) override;
};

class FakeClock final : public Clock {
public:
    explicit FakeClock(std::int64_t start_ms = 0) : now_(start_ms) {}
    std::int64_t now_ms() override { return now_; }
    void sleep_ms(std::int64_t ms) override {
        if (ms > 0) {
            now_ += ms;
            total_slept_ += ms;
        }
    }
    std::int64_t total_slept_ms() const { return total_slept_; }

private:
    std::int64_t now_ = 0;
    std::int64_t total_slept_ = 0;
};

struct HttpResult {
    int status = 0;          // 0 = no response (transport failure)
    std::string body;
    bool timed_out = false;
    std::string error;       // transport-level error text
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResult post(const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            const std::string& body,
                            double timeout_s) = 0;
};

std::unique_ptr<HttpTransport> make_httplib_transport(const std::string& base_url);

// Sliding-window limiter: at most rpm dispatches inside any 60 s window.
class RateLimiter {
public:
    RateLimiter(int requests_per_minute, Clock& clock);
    void acquire();

private:
    int rpm_;
    Clock& clock_;
    std::mutex mu_;
    std::deque<std::int64_t> dispatches_;
};

// Deterministic offline stand-in for the chat backend: a pure function of the
// prompt text that answers each pipeline stage with schema-valid content.
std::string mock_complete(const std::string& prompt);

using AuditSink = std::function<void(const std::string& jsonl_line)>;

class Client {
public:
    explicit Client(BackendConfig cfg,
                    std::shared_ptr<Clock> clock = nullptr,
                    std::shared_ptr<HttpTransport> transport = nullptr);

    void set_audit_sink(AuditSink sink) { audit_ = std::move(sink); }

    // Throws GatewayError on permanent failure.
    ChatResponse complete(const ChatRequest& req);

    struct Failure {
        std::size_t index = 0;
        std::string request_tag;
        ErrorCode code = ErrorCode::RetriesExhausted;
        std::string message;
        int last_status = 0;
    };

    struct BatchResult {
        std::vector<std::optional<ChatResponse>> responses;  // index-aligned with requests
        std::vector<Failure> failures;
    };

    // Never throws for per-request failures; they land in the ledger instead.
    BatchResult run_batch(const std::vector<ChatRequest>& requests);

    const BackendConfig& config() const { return cfg_; }

private:
    ChatResponse complete_http(const ChatRequest& req);
    ChatResponse complete_mock(const ChatRequest& req);
    void audit(const std::string& tag, int attempt, int status, std::int64_t latency_ms);

    BackendConfig cfg_;
    std::shared_ptr<Clock> clock_;
    std::shared_ptr<HttpTransport> transport_;
    std::unique_ptr<RateLimiter> limiter_;
    AuditSink audit_;
    std::mutex jitter_mu_;
    std::uint64_t jitter_state_;
};

}  // namespace rsseg::llm
