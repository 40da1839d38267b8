#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <set>

#include <json.hpp>

#include "rsseg/gateway.hpp"
#include "rsseg/prompting.hpp"

using namespace rsseg;
using namespace rsseg::llm;

namespace {

// Returns canned results in order; one entry per post() call.
class ScriptedTransport final : public HttpTransport {
public:
    ScriptedTransport(std::vector<HttpResult> script, std::shared_ptr<Clock> clock = nullptr)
        : script_(std::move(script)), clock_(std::move(clock)) {}

    HttpResult post(const std::string&,
                    const std::vector<std::pair<std::string, std::string>>&,
                    const std::string& body,
                    double) override {
        if (clock_) {
            dispatch_times.push_back(clock_->now_ms());
        }
        bodies.push_back(body);
        const std::size_t index = std::min(calls, script_.size() - 1);
        ++calls;
        return script_[index];
    }

    std::vector<std::int64_t> dispatch_times;
    std::vector<std::string> bodies;
    std::size_t calls = 0;

private:
    std::vector<HttpResult> script_;
    std::shared_ptr<Clock> clock_;
};

HttpResult status_result(int status, const std::string& body = "") {
    HttpResult r;
    r.status = status;
    r.body = body;
    return r;
}

HttpResult ok_result(const std::string& content) {
    nlohmann::json body = {{"choices", {{{"message", {{"content", content}}}}}}};
    return status_result(200, body.dump());
}

ChatRequest request(const std::string& prompt, const std::string& tag = "t") {
    ChatRequest req;
    req.model = "test-model";
    req.messages = {{"user", prompt}};
    req.request_tag = tag;
    return req;
}

BackendConfig http_config(int max_retries = 3, int rpm = 1000) {
    BackendConfig cfg;
    cfg.kind = BackendKind::Http;
    cfg.base_url = "http://localhost:9";
    cfg.api_key_env = "RSSEG_TEST_KEY";
    cfg.max_retries = max_retries;
    cfg.requests_per_minute = rpm;
    return cfg;
}

struct KeyGuard {
    KeyGuard() { setenv("RSSEG_TEST_KEY", "secret", 1); }
    ~KeyGuard() { unsetenv("RSSEG_TEST_KEY"); }
};

}  // namespace

TEST_CASE("mock responses are deterministic") {
    Client client{BackendConfig{}};
    const auto a = client.complete(request("Find visual features ... Only focus on Bus in the image."));
    const auto b = client.complete(request("Find visual features ... Only focus on Bus in the image."));
    CHECK(a.content == b.content);
    CHECK(a.backend == "mock");
    CHECK(a.attempt_count == 1);
    CHECK(a.content.find("Bus") != std::string::npos);
}

TEST_CASE("mock stage-2 content carries a quadrant word only with the location clause") {
    const std::string base =
        "The size of the original image is (512,512).\n"
        "Only focus on Barge in the image.\n"
        "In the original image, where the image's origin is at the top left corner, the object "
        "is a Barge located at bounding box coordinates [300, 20, 40, 40].\n"
        "Please generate a query that would help locate this Barge in the original image.\n";
    const std::string spatial = mock_complete(base);
    CHECK(spatial.find("top-right") != std::string::npos);

    const std::string no_spatial = mock_complete(
        base + "Do not mention or use any location-related info such as: top, near the center "
               "in your query.\n");
    CHECK(no_spatial.find("top-right") == std::string::npos);
    CHECK(no_spatial.find("Barge") != std::string::npos);
    // still a parsable {"query": ...} object
    CHECK_NOTHROW(prompting::parse_query_response(no_spatial));
}

TEST_CASE("mock rephrasings differ per variant and from the principal") {
    const std::string principal = "Segment the pale Shed in the top-left of the image.";
    const auto v1 = prompting::parse_query_response(
        mock_complete(prompting::render_rephrase(principal, 1)));
    const auto v2 = prompting::parse_query_response(
        mock_complete(prompting::render_rephrase(principal, 2)));
    CHECK(v1 != v2);
    CHECK(v1 != principal);
    CHECK(v2 != principal);
    // spatial qualifier preserved by the verb swap
    CHECK(v1.find("top-left") != std::string::npos);
    CHECK(v2.find("top-left") != std::string::npos);
}

TEST_CASE("mock batch over distinct prompts yields distinct responses") {
    Client client{BackendConfig{}};
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 12; ++i) {
        reqs.push_back(request("Only focus on Class" + std::to_string(i) +
                               " in the image. Find visual features now."));
    }
    const auto result = client.run_batch(reqs);
    CHECK(result.failures.empty());
    std::set<std::string> contents;
    for (const auto& r : result.responses) {
        REQUIRE(r.has_value());
        contents.insert(r->content);
    }
    CHECK(contents.size() == reqs.size());
}

TEST_CASE("http retries through 429s and reports the attempt count") {
    KeyGuard key;
    auto clock = std::make_shared<FakeClock>();
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResult>{status_result(429), status_result(429), ok_result("hello")},
        clock);
    Client client(http_config(), clock, transport);
    const auto resp = client.complete(request("hi"));
    CHECK(resp.content == "hello");
    CHECK(resp.attempt_count == 3);
    CHECK(transport->calls == 3);
    CHECK(clock->total_slept_ms() > 0);  // backoff between attempts
}

TEST_CASE("http gives up after max_retries+1 server errors") {
    KeyGuard key;
    auto clock = std::make_shared<FakeClock>();
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResult>{status_result(500)}, clock);
    Client client(http_config(2), clock, transport);
    try {
        client.complete(request("hi"));
        FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
        CHECK(e.code == ErrorCode::RetriesExhausted);
        CHECK(e.last_status == 500);
        CHECK(transport->calls == 3);  // max_retries 2 -> 3 attempts
    }
}

TEST_CASE("timeouts surface as Timeout after exhausting attempts") {
    KeyGuard key;
    auto clock = std::make_shared<FakeClock>();
    HttpResult timeout;
    timeout.timed_out = true;
    timeout.error = "read timeout";
    auto transport =
        std::make_shared<ScriptedTransport>(std::vector<HttpResult>{timeout}, clock);
    Client client(http_config(1), clock, transport);
    CHECK_THROWS_AS(client.complete(request("hi")), GatewayError);
    try {
        client.complete(request("hi"));
    } catch (const GatewayError& e) {
        CHECK(e.code == ErrorCode::Timeout);
    }
}

TEST_CASE("config validation happens at construction") {
    BackendConfig no_url;
    no_url.kind = BackendKind::Http;
    CHECK_THROWS_AS(Client{no_url}, std::invalid_argument);

    BackendConfig bad_rpm;
    bad_rpm.requests_per_minute = 0;
    CHECK_THROWS_AS(Client{bad_rpm}, std::invalid_argument);
}

TEST_CASE("missing api key is AuthMissing before any dispatch") {
    unsetenv("RSSEG_TEST_KEY");
    auto transport = std::make_shared<ScriptedTransport>(std::vector<HttpResult>{ok_result("x")});
    Client client(http_config(), nullptr, transport);
    try {
        client.complete(request("hi"));
        FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
        CHECK(e.code == ErrorCode::AuthMissing);
        CHECK(transport->calls == 0);
    }
}

TEST_CASE("a 200 with an unexpected body is MalformedTransportResponse") {
    KeyGuard key;
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResult>{status_result(200, "{\"nope\": true}")});
    Client client(http_config(), nullptr, transport);
    try {
        client.complete(request("hi"));
        FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
        CHECK(e.code == ErrorCode::MalformedTransportResponse);
    }
}

TEST_CASE("non-retryable statuses fail immediately") {
    KeyGuard key;
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResult>{status_result(404)});
    Client client(http_config(5), nullptr, transport);
    CHECK_THROWS_AS(client.complete(request("hi")), GatewayError);
    CHECK(transport->calls == 1);
}

TEST_CASE("run_batch aligns responses with requests and ledgers failures") {
    KeyGuard key;
    auto clock = std::make_shared<FakeClock>();
    // first request: 200; second: four 500s (permanent); third: 200
    std::vector<HttpResult> script{ok_result("one")};
    for (int i = 0; i < 4; ++i) {
        script.push_back(status_result(500));
    }
    script.push_back(ok_result("three"));
    auto transport = std::make_shared<ScriptedTransport>(script, clock);
    Client client(http_config(3), clock, transport);

    const auto result =
        client.run_batch({request("a", "ra"), request("b", "rb"), request("c", "rc")});
    REQUIRE(result.responses.size() == 3);
    CHECK(result.responses[0].has_value());
    CHECK_FALSE(result.responses[1].has_value());
    CHECK(result.responses[2].has_value());
    CHECK(result.responses[0]->content == "one");
    CHECK(result.responses[2]->content == "three");
    REQUIRE(result.failures.size() == 1);
    CHECK(result.failures[0].index == 1);
    CHECK(result.failures[0].request_tag == "rb");

    const auto empty = client.run_batch({});
    CHECK(empty.responses.empty());
    CHECK(empty.failures.empty());
}

TEST_CASE("audit log gets one line per attempt") {
    KeyGuard key;
    auto clock = std::make_shared<FakeClock>();
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResult>{status_result(429), ok_result("done")}, clock);
    Client client(http_config(), clock, transport);
    std::vector<std::string> lines;
    client.set_audit_sink([&](const std::string& line) { lines.push_back(line); });
    client.complete(request("hi", "tag9"));
    REQUIRE(lines.size() == 2);
    const auto first = nlohmann::json::parse(lines[0]);
    CHECK(first.at("request_tag") == "tag9");
    CHECK(first.at("attempt") == 1);
    CHECK(first.at("status") == 429);
    const auto second = nlohmann::json::parse(lines[1]);
    CHECK(second.at("attempt") == 2);
    CHECK(second.at("status") == 200);
}

TEST_CASE("no sliding 60s window ever exceeds requests_per_minute") {
    KeyGuard key;
    auto clock = std::make_shared<FakeClock>();
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResult>{ok_result("ok")}, clock);
    BackendConfig cfg = http_config(0, 7);
    Client client(cfg, clock, transport);
    for (int i = 0; i < 40; ++i) {
        client.complete(request("r" + std::to_string(i)));
    }
    const auto& times = transport->dispatch_times;
    REQUIRE(times.size() == 40);
    for (std::size_t i = 0; i < times.size(); ++i) {
        std::size_t in_window = 0;
        for (std::size_t j = 0; j < times.size(); ++j) {
            if (times[j] >= times[i] && times[j] <= times[i] + 60000) {
                ++in_window;
            }
        }
        CHECK(in_window <= 7);
    }
}
