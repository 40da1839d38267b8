#include "rsseg/gateway.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rsseg/rng.hpp"

namespace rsseg::llm {

using Json = nlohmann::json;

std::string to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::RetriesExhausted: return "retries_exhausted";
        case ErrorCode::AuthMissing: return "auth_missing";
        case ErrorCode::Timeout: return "timeout";
        case ErrorCode::MalformedTransportResponse: return "malformed_transport_response";
    }
    return "retries_exhausted";
}

std::int64_t SystemClock::now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void SystemClock::sleep_ms(std::int64_t ms) {
    if (ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    }
}

namespace {

class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(const std::string& base_url) {
        const std::size_t scheme = base_url.find("://");
        const std::size_t path_start =
            base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        if (path_start == std::string::npos) {
            host_ = base_url;
        } else {
            host_ = base_url.substr(0, path_start);
            prefix_ = base_url.substr(path_start);
            while (!prefix_.empty() && prefix_.back() == '/') {
                prefix_.pop_back();
            }
        }
    }

    HttpResult post(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body,
                    double timeout_s) override {
        httplib::Client client(host_);
        client.set_connection_timeout(static_cast<time_t>(timeout_s),
                                      static_cast<time_t>((timeout_s - static_cast<time_t>(timeout_s)) * 1e6));
        client.set_read_timeout(static_cast<time_t>(timeout_s), 0);
        httplib::Headers hl;
        for (const auto& [k, v] : headers) {
            hl.emplace(k, v);
        }
        auto res = client.Post((prefix_ + path).c_str(), hl, body, "application/json");
        HttpResult out;
        if (!res) {
            out.timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                            res.error() == httplib::Error::Read ||
                            res.error() == httplib::Error::Write;
            out.error = httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        return out;
    }

private:
    std::string host_;
    std::string prefix_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_httplib_transport(const std::string& base_url) {
    return std::make_unique<HttplibTransport>(base_url);
}

RateLimiter::RateLimiter(int requests_per_minute, Clock& clock)
    : rpm_(requests_per_minute), clock_(clock) {}

void RateLimiter::acquire() {
    constexpr std::int64_t kWindowMs = 60000;
    std::lock_guard<std::mutex> lock(mu_);
    std::int64_t now = clock_.now_ms();
    auto prune = [&] {
        while (!dispatches_.empty() && dispatches_.front() < now - kWindowMs) {
            dispatches_.pop_front();
        }
    };
    prune();
    while (static_cast<int>(dispatches_.size()) >= rpm_) {
        // wait until the oldest dispatch falls out of every closed 60 s window
        const std::int64_t wake = dispatches_.front() + kWindowMs + 1;
        clock_.sleep_ms(wake - now);
        now = clock_.now_ms();
        prune();
    }
    dispatches_.push_back(now);
}

namespace {

const char* kVerbs[] = {"Segment", "Locate", "Identify", "Find", "Show"};
const char* kAdjectives[] = {"compact", "elongated", "bright", "dark-toned",
                             "angular", "weathered", "boxy",  "pale"};
const char* kFeatures[] = {"a flat roof",        "visible shadows", "high-contrast edges",
                           "a uniform texture",  "distinct markings", "a squared outline"};

std::string between(const std::string& text, const std::string& before,
                    const std::string& after) {
    const std::size_t start = text.find(before);
    if (start == std::string::npos) {
        return "";
    }
    const std::size_t from = start + before.size();
    const std::size_t end = text.find(after, from);
    if (end == std::string::npos) {
        return "";
    }
    return text.substr(from, end - from);
}

// "... coordinates [x, y, w, h]" -> quadrant word for a (512,512) frame, or
// the frame parsed from the prompt header when present.
std::string quadrant_word(const std::string& prompt) {
    double frame_w = 512.0;
    double frame_h = 512.0;
    const std::string dims = between(prompt, "The size of the original image is (", ")");
    if (!dims.empty()) {
        const std::size_t comma = dims.find(',');
        if (comma != std::string::npos) {
            try {
                frame_w = std::stod(dims.substr(0, comma));
                frame_h = std::stod(dims.substr(comma + 1));
            } catch (const std::exception&) {
            }
        }
    }
    const std::string box = between(prompt, "located at bounding box coordinates [", "]");
    if (box.empty()) {
        return "center";
    }
    double v[4] = {0, 0, 0, 0};
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i) {
        std::size_t comma = box.find(',', pos);
        std::string piece =
            box.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            v[i] = std::stod(piece);
        } catch (const std::exception&) {
            return "center";
        }
        if (comma == std::string::npos) {
            break;
        }
        pos = comma + 1;
    }
    const double cx = v[0] + v[2] / 2.0;
    const double cy = v[1] + v[3] / 2.0;
    const bool left = cx < frame_w / 2.0;
    const bool top = cy < frame_h / 2.0;
    if (top) {
        return left ? "top-left" : "top-right";
    }
    return left ? "bottom-left" : "bottom-right";
}

std::string mock_stage1(const std::string& prompt, std::uint64_t h) {
    std::string cls = between(prompt, "Only focus on ", " in the image.");
    if (cls.empty()) {
        cls = "object";
    }
    const char* adj = kAdjectives[h % 8];
    const char* feature = kFeatures[(h >> 8) % 6];
    return "Look for a " + std::string(adj) + " " + cls + " with " + feature + ".";
}

std::string mock_stage2(const std::string& prompt, std::uint64_t h) {
    std::string cls = between(prompt, "Only focus on ", " in the image.");
    if (cls.empty()) {
        cls = "object";
    }
    const char* verb = kVerbs[h % 5];
    const char* adj = kAdjectives[(h >> 8) % 8];
    const bool spatial =
        prompt.find("Do not mention or use any location-related info") == std::string::npos;
    std::string query;
    if (spatial) {
        query = std::string(verb) + " the " + adj + " " + cls + " in the " +
                quadrant_word(prompt) + " of the image.";
    } else {
        query = std::string(verb) + " the " + adj + " " + cls + " with " +
                kFeatures[(h >> 16) % 6] + ".";
    }
    Json out = {{"query", query}};
    return out.dump();
}

std::string mock_rephrase(const std::string& prompt, std::uint64_t h) {
    (void)h;
    std::string principal = between(prompt, "Original query: \"", "\"");
    if (principal.empty()) {
        principal = "Locate the object.";
    }
    int variant = 1;
    const std::string tag = between(prompt, "(variant ", ")");
    if (!tag.empty()) {
        try {
            variant = std::stoi(tag);
        } catch (const std::exception&) {
        }
    }
    // swap the leading verb; keyed on (principal, variant) so the two
    // variants of one query never coincide
    const std::size_t space = principal.find(' ');
    const std::string head = space == std::string::npos ? principal : principal.substr(0, space);
    const std::string tail = space == std::string::npos ? "" : principal.substr(space);
    std::vector<std::string> candidates;
    for (const char* v : kVerbs) {
        if (head != v) {
            candidates.push_back(v);
        }
    }
    const std::string verb =
        candidates[(fnv1a64(principal) + static_cast<std::uint64_t>(variant)) %
                   candidates.size()];
    Json out = {{"query", verb + tail}};
    return out.dump();
}

}  // namespace

std::string mock_complete(const std::string& prompt) {
    const std::uint64_t h = fnv1a64(prompt);
    if (prompt.find("Find visual features") != std::string::npos) {
        return mock_stage1(prompt, h);
    }
    if (prompt.find("Please generate a query") != std::string::npos) {
        return mock_stage2(prompt, h);
    }
    if (prompt.find("Original query:") != std::string::npos) {
        return mock_rephrase(prompt, h);
    }
    Json out = {{"query", "Identify the " + std::string(kAdjectives[h % 8]) + " object."}};
    return out.dump();
}

Client::Client(BackendConfig cfg,
               std::shared_ptr<Clock> clock,
               std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)),
      clock_(clock ? std::move(clock) : std::make_shared<SystemClock>()),
      transport_(std::move(transport)),
      jitter_state_(0x9e3779b97f4a7c15ull) {
    if (cfg_.requests_per_minute < 1) {
        throw std::invalid_argument("requests_per_minute must be >= 1");
    }
    limiter_ = std::make_unique<RateLimiter>(cfg_.requests_per_minute, *clock_);
    if (cfg_.kind == BackendKind::Http && !transport_) {
        if (cfg_.base_url.empty()) {
            throw std::invalid_argument("http backend requires base_url");
        }
        transport_ = std::shared_ptr<HttpTransport>(make_httplib_transport(cfg_.base_url));
    }
}

void Client::audit(const std::string& tag, int attempt, int status, std::int64_t latency_ms) {
    if (!audit_) {
        return;
    }
    Json line = {
        {"request_tag", tag},
        {"attempt", attempt},
        {"status", status},
        {"latency_ms", latency_ms},
        {"backend", cfg_.kind == BackendKind::Http ? "http" : "mock"},
    };
    audit_(line.dump());
}

ChatResponse Client::complete(const ChatRequest& req) {
    if (req.messages.empty()) {
        throw std::invalid_argument("chat request without messages");
    }
    for (const ChatMessage& m : req.messages) {
        if (m.content.empty()) {
            throw std::invalid_argument("chat message with empty content");
        }
    }
    return cfg_.kind == BackendKind::Http ? complete_http(req) : complete_mock(req);
}

ChatResponse Client::complete_mock(const ChatRequest& req) {
    // the rendered prompt is the last user message
    std::string prompt = req.messages.back().content;
    for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it) {
        if (it->role == "user") {
            prompt = it->content;
            break;
        }
    }
    ChatResponse resp;
    resp.content = mock_complete(prompt);
    resp.latency_ms = 0;
    resp.attempt_count = 1;
    resp.backend = "mock";
    audit(req.request_tag, 1, 200, 0);
    return resp;
}

ChatResponse Client::complete_http(const ChatRequest& req) {
    const char* key = cfg_.api_key_env.empty() ? nullptr : std::getenv(cfg_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw GatewayError(ErrorCode::AuthMissing,
                           "environment variable " + cfg_.api_key_env + " is not set");
    }

    Json body = {
        {"model", req.model},
        {"temperature", req.temperature},
        {"max_tokens", req.max_tokens},
    };
    body["messages"] = Json::array();
    for (const ChatMessage& m : req.messages) {
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    }
    const std::string payload = body.dump();
    const std::vector<std::pair<std::string, std::string>> headers = {
        {"Authorization", std::string("Bearer ") + key},
    };

    const int max_attempts = cfg_.max_retries + 1;
    int last_status = 0;
    bool last_timed_out = false;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        limiter_->acquire();
        const std::int64_t t0 = clock_->now_ms();
        HttpResult result = transport_->post("/chat/completions", headers, payload, cfg_.timeout_s);
        const std::int64_t latency = clock_->now_ms() - t0;
        audit(req.request_tag, attempt, result.status, latency);

        const bool transport_failure = result.status == 0;
        if (!transport_failure && result.status >= 200 && result.status < 300) {
            Json parsed = Json::parse(result.body, nullptr, false);
            if (parsed.is_discarded() || !parsed.contains("choices") ||
                !parsed["choices"].is_array() || parsed["choices"].empty() ||
                !parsed["choices"][0].contains("message") ||
                !parsed["choices"][0]["message"].contains("content") ||
                !parsed["choices"][0]["message"]["content"].is_string()) {
                throw GatewayError(ErrorCode::MalformedTransportResponse,
                                   "response body lacks choices[0].message.content",
                                   result.status, attempt);
            }
            ChatResponse resp;
            resp.content = parsed["choices"][0]["message"]["content"].get<std::string>();
            resp.latency_ms = latency;
            resp.attempt_count = attempt;
            resp.backend = "http";
            return resp;
        }

        const bool retryable =
            transport_failure || result.status == 429 || result.status >= 500;
        last_status = result.status;
        last_timed_out = transport_failure && result.timed_out;
        if (!retryable) {
            throw GatewayError(ErrorCode::RetriesExhausted,
                               "non-retryable status " + std::to_string(result.status),
                               result.status, attempt);
        }
        if (attempt == max_attempts) {
            break;
        }
        // exponential backoff, base 1 s, factor 2, jitter +/-20%
        double jitter;
        {
            std::lock_guard<std::mutex> lock(jitter_mu_);
            jitter_state_ = jitter_state_ * 6364136223846793005ull + 1442695040888963407ull;
            jitter = 0.8 + 0.4 * static_cast<double>(jitter_state_ >> 11) * 0x1.0p-53;
        }
        const double backoff_ms = 1000.0 * std::pow(2.0, attempt - 1) * jitter;
        clock_->sleep_ms(static_cast<std::int64_t>(backoff_ms));
    }

    if (last_timed_out) {
        throw GatewayError(ErrorCode::Timeout, "request timed out after " +
                                                   std::to_string(max_attempts) + " attempts",
                           last_status, max_attempts);
    }
    throw GatewayError(ErrorCode::RetriesExhausted,
                       "exhausted " + std::to_string(max_attempts) + " attempts, last status " +
                           std::to_string(last_status),
                       last_status, max_attempts);
}

Client::BatchResult Client::run_batch(const std::vector<ChatRequest>& requests) {
    BatchResult result;
    result.responses.resize(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
        try {
            result.responses[i] = complete(requests[i]);
        } catch (const GatewayError& e) {
            result.failures.push_back(
                {i, requests[i].request_tag, e.code, e.what(), e.last_status});
        }
    }
    return result;
}

}  // namespace rsseg::llm
