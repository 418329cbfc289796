#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "codeicl/digest.hpp"
#include "codeicl/errors.hpp"
#include "codeicl/model_backend.hpp"
#include "support.hpp"

using namespace codeicl;
using namespace std::chrono_literals;

namespace {

DecodeParams params(const std::string& model = "m") {
    DecodeParams p;
    p.model_name = model;
    return p;
}

/// Minimal chat-completions endpoint. The reply depends on the prompt text:
/// "overflow" -> 400 context length, "flaky" -> 500 on the first try,
/// anything else echoes "positive".
class FakeProvider {
public:
    explicit FakeProvider(std::string prefix = "") : prefix_(std::move(prefix)) {
        server_.Post(prefix_ + "/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            last_auth = req.get_header_value("Authorization");
            last_body = json::parse(req.body);
            const auto prompt = last_body["messages"][0]["content"].get<std::string>();
            if (prompt.find("overflow") != std::string::npos) {
                res.status = 400;
                res.set_content(R"({"error":{"code":"context_length_exceeded","message":"maximum context length is 4097 tokens"}})",
                                "application/json");
                return;
            }
            if (prompt.find("flaky") != std::string::npos && flaky_failures > 0) {
                --flaky_failures;
                res.status = 500;
                res.set_content(R"({"error":"overloaded"})", "application/json");
                return;
            }
            if (last_auth != "Bearer sk-test") {
                res.status = 401;
                res.set_content(R"({"error":"bad key"})", "application/json");
                return;
            }
            json reply = {{"choices",
                           {{{"index", 0},
                             {"message", {{"role", "assistant"}, {"content", "positive"}}},
                             {"logprobs", {{"content", {{{"token", "positive"}, {"logprob", -0.25}}}}}}}}}};
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeProvider() {
        server_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + prefix_; }

    std::atomic<int> requests{0};
    std::atomic<int> flaky_failures{0};
    std::string last_auth;
    json last_body;

private:
    std::string prefix_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

BackendDescriptor openai_descriptor(const std::string& base_url, const std::string& env = "CODEICL_TEST_KEY") {
    BackendDescriptor d;
    d.kind = BackendKind::OpenAICompatible;
    d.base_url = base_url;
    d.credentials_env = env;
    d.retry = {3, 5ms};
    d.timeout_seconds = 5;
    return d;
}

} // namespace

TEST_SUITE("model_backend") {

TEST_CASE("scripted mock answers by prompt digest") {
    ScriptedMockBackend mock;
    mock.script_digest(sha256_hex("prompt one"), "positive");
    auto c = mock.complete("prompt one", params());
    CHECK(c.text == "positive");
    CHECK_FALSE(c.from_cache);
    CHECK(mock.dispatch_count() == 1);
    CHECK_THROWS_AS(mock.complete("unscripted", params()), ProviderError);
}

TEST_CASE("scripted mock resolution order") {
    ScriptedMockBackend::Options options;
    options.default_response = "fallback";
    ScriptedMockBackend mock(options);
    mock.script("exact", "from table");
    mock.add_rule("needle", "from rule");
    mock.set_responder([](std::string_view p) -> std::optional<std::string> {
        if (p.find("ask") != std::string_view::npos) {
            return "from responder";
        }
        return std::nullopt;
    });
    CHECK(mock.complete("exact", params()).text == "from table");
    CHECK(mock.complete("ask needle", params()).text == "from responder");
    CHECK(mock.complete("a needle", params()).text == "from rule");
    CHECK(mock.complete("other", params()).text == "fallback");
}

TEST_CASE("preconditions on complete") {
    ScriptedMockBackend mock;
    CHECK_THROWS_WITH_AS(mock.complete("", params()), doctest::Contains("Usage"), Error);
    auto bad = params();
    bad.max_tokens = 0;
    CHECK_THROWS_AS(mock.complete("x", bad), Error);
    CHECK(mock.dispatch_count() == 0);
}

TEST_CASE("uniform scorer") {
    UniformScorer scorer(4);
    auto lp = scorer.score_sequence("context", "a b c");
    REQUIRE(lp.size() == 3);
    for (double v : lp) {
        CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-12));
    }
    CHECK_THROWS_WITH_AS(scorer.complete("x", params()), doctest::Contains("scoring-only backend"), ProviderError);
    CHECK_THROWS_WITH_AS(scorer.score_sequence("c", "  "), doctest::Contains("EmptyTarget"), Error);
}

TEST_CASE("scripted scores are natural logs") {
    ScriptedMockBackend mock;
    mock.script_scores("yes", {0.5, 0.5});
    auto lp = mock.score_sequence("ctx", "yes");
    REQUIRE(lp.size() == 2);
    CHECK(lp[0] == std::log(0.5));
    CHECK(lp[1] == std::log(0.5));
}

TEST_CASE("openai backend cannot score") {
    OpenAICompatibleBackend backend(openai_descriptor("http://127.0.0.1:9"));
    CHECK_FALSE(backend.can_score());
    CHECK_THROWS_WITH_AS(backend.score_sequence("c", "t"), doctest::Contains("CapabilityError"), Error);
}

TEST_CASE("rate limit holds in every one-second window") {
    ScriptedMockBackend::Options options;
    options.rate_limit = 20;
    options.max_in_flight = 8;
    options.default_response = "ok";
    ScriptedMockBackend mock(options);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 6; ++i) {
                mock.complete("p", params());
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    auto log = mock.dispatch_log();
    REQUIRE(log.size() == 48);
    std::sort(log.begin(), log.end());
    for (std::size_t i = 0; i < log.size(); ++i) {
        std::size_t in_window = 0;
        for (std::size_t j = i; j < log.size() && log[j] - log[i] < 1s; ++j) {
            ++in_window;
        }
        CHECK(in_window <= 20);
    }
}

TEST_CASE("fractional rates space requests") {
    RateLimiter limiter(4.5);
    std::vector<std::chrono::steady_clock::time_point> times;
    for (int i = 0; i < 10; ++i) {
        limiter.acquire();
        times.push_back(std::chrono::steady_clock::now());
    }
    for (std::size_t i = 0; i < times.size(); ++i) {
        std::size_t in_window = 0;
        for (std::size_t j = i; j < times.size() && times[j] - times[i] < 1s; ++j) {
            ++in_window;
        }
        CHECK(in_window <= 4);
    }
}

TEST_CASE("in-flight bound is never exceeded") {
    ScriptedMockBackend::Options options;
    options.max_in_flight = 3;
    options.latency = 10ms;
    options.default_response = "ok";
    ScriptedMockBackend mock(options);
    std::vector<std::thread> threads;
    for (int t = 0; t < 12; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 4; ++i) {
                mock.complete("p", params());
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    CHECK(mock.peak_in_flight() <= 3);
    CHECK(mock.peak_in_flight() >= 2);
}

TEST_CASE("retry policy") {
    CHECK(RetryPolicy{}.max_retries == 3);
    CHECK(RetryPolicy{}.base_delay == 1000ms);

    ScriptedMockBackend::Options options;
    options.default_response = "ok";
    options.retry = {3, 1ms};

    SUBCASE("transient 5xx is retried") {
        ScriptedMockBackend mock(options);
        mock.fail_next(2, 503);
        CHECK(mock.complete("p", params()).text == "ok");
        CHECK(mock.dispatch_count() == 3);
    }
    SUBCASE("429 is retried") {
        ScriptedMockBackend mock(options);
        mock.fail_next(1, 429);
        CHECK(mock.complete("p", params()).text == "ok");
        CHECK(mock.dispatch_count() == 2);
    }
    SUBCASE("transport failures give up after the retries") {
        ScriptedMockBackend mock(options);
        mock.fail_next(10, 0);
        CHECK_THROWS_WITH_AS(mock.complete("p", params()), doctest::Contains("TransportError"), Error);
        CHECK(mock.dispatch_count() == 4);
    }
    SUBCASE("client errors are not retried") {
        ScriptedMockBackend mock(options);
        mock.fail_next(1, 400);
        CHECK_THROWS_AS(mock.complete("p", params()), ProviderError);
        CHECK(mock.dispatch_count() == 1);
    }
    SUBCASE("auth errors are not retried") {
        ScriptedMockBackend mock(options);
        mock.fail_next(1, 401);
        CHECK_THROWS_WITH_AS(mock.complete("p", params()), doctest::Contains("AuthError"), Error);
        CHECK(mock.dispatch_count() == 1);
    }
    SUBCASE("backoff doubles") {
        options.retry = {2, 20ms};
        ScriptedMockBackend mock(options);
        mock.fail_next(2, 502);
        auto start = std::chrono::steady_clock::now();
        mock.complete("p", params());
        CHECK(std::chrono::steady_clock::now() - start >= 60ms);
    }
}

TEST_CASE("chat completions wire format") {
    auto payload = OpenAICompatibleBackend::build_payload("hello", params("gpt-3.5-turbo"));
    CHECK(payload == json{{"model", "gpt-3.5-turbo"},
                          {"messages", {{{"role", "user"}, {"content", "hello"}}}},
                          {"temperature", 0.0},
                          {"max_tokens", 128}});
    auto c = OpenAICompatibleBackend::parse_response(
        R"({"choices":[{"message":{"content":"neutral"},"logprobs":{"content":[{"token":"neutral","logprob":-0.5}]}}]})");
    CHECK(c.text == "neutral");
    REQUIRE(c.token_logprobs);
    CHECK(c.token_logprobs->front() == TokenLogprob{"neutral", -0.5});
    CHECK_THROWS_AS(OpenAICompatibleBackend::parse_response("{}"), ProviderError);
    CHECK_THROWS_AS(OpenAICompatibleBackend::parse_response("not json"), ProviderError);
}

TEST_CASE("openai backend against a local server") {
    ::setenv("CODEICL_TEST_KEY", "sk-test", 1);
    FakeProvider server("/proxy");
    OpenAICompatibleBackend backend(openai_descriptor(server.base_url()));

    SUBCASE("success") {
        auto c = backend.complete("classify this", params("gpt-3.5-turbo"));
        CHECK(c.text == "positive");
        REQUIRE(c.token_logprobs);
        CHECK(c.token_logprobs->front().logprob == -0.25);
        CHECK(server.last_auth == "Bearer sk-test");
        CHECK(server.last_body["model"] == "gpt-3.5-turbo");
        CHECK(server.last_body["messages"].size() == 1);
        CHECK(server.last_body["messages"][0]["role"] == "user");
        CHECK(server.last_body["temperature"] == 0.0);
        CHECK(server.last_body["max_tokens"] == 128);
    }
    SUBCASE("context overflow") {
        CHECK_THROWS_WITH_AS(backend.complete("overflow", params()), doctest::Contains("PromptTooLong"), Error);
        CHECK(server.requests == 1);
    }
    SUBCASE("server errors are retried") {
        server.flaky_failures = 2;
        CHECK(backend.complete("flaky", params()).text == "positive");
        CHECK(server.requests == 3);
    }
    SUBCASE("wrong key") {
        ::setenv("CODEICL_TEST_KEY", "sk-wrong", 1);
        CHECK_THROWS_WITH_AS(backend.complete("hi", params()), doctest::Contains("AuthError"), Error);
        CHECK(server.requests == 1);
        ::setenv("CODEICL_TEST_KEY", "sk-test", 1);
    }
    SUBCASE("missing key") {
        OpenAICompatibleBackend unset(openai_descriptor(server.base_url(), "CODEICL_TEST_KEY_UNSET"));
        CHECK_THROWS_WITH_AS(unset.complete("hi", params()), doctest::Contains("AuthError"), Error);
        CHECK(server.requests == 0);
    }
}

TEST_CASE("unreachable provider is a transport error") {
    auto d = openai_descriptor("http://127.0.0.1:1");
    d.retry = {1, 1ms};
    d.timeout_seconds = 1;
    ::setenv("CODEICL_TEST_KEY", "sk-test", 1);
    OpenAICompatibleBackend backend(d);
    CHECK_THROWS_WITH_AS(backend.complete("hi", params()), doctest::Contains("TransportError"), Error);
    CHECK(backend.dispatch_count() == 2);
}

TEST_CASE("descriptor validation and factory") {
    BackendDescriptor d;
    d.kind = BackendKind::OpenAICompatible;
    CHECK_THROWS_WITH_AS(validate_descriptor(d), doctest::Contains("base_url"), Error);
    d.base_url = "https://api.openai.com";
    CHECK_NOTHROW(validate_descriptor(d));
    d.max_in_flight = 0;
    CHECK_THROWS_AS(validate_descriptor(d), Error);

    BackendDescriptor uniform;
    uniform.kind = BackendKind::UniformScorer;
    CHECK_THROWS_AS(make_backend(uniform), Error);
    uniform.vocab_size = 10;
    CHECK(make_backend(uniform)->kind() == BackendKind::UniformScorer);

    CHECK(parse_backend_kind("openai_compatible") == BackendKind::OpenAICompatible);
    CHECK_FALSE(parse_backend_kind("openai"));

    BackendDescriptor full = openai_descriptor("http://x");
    full.rate_limit = 2.5;
    CHECK(json::parse(json(full).dump()).get<BackendDescriptor>() == full);
}

TEST_CASE("mock script files") {
    testing::TempDir dir;
    const auto path = dir / "script.json";
    testing::write_file(path, json{{"responses", {{sha256_hex("exact"), "one"}}},
                                   {"rules", {{{"contains", "pos"}, {"response", "positive"}}}},
                                   {"default", "negative"},
                                   {"scores", {{"t", {0.25}}}}}
                                  .dump());
    auto mock = ScriptedMockBackend::from_script_file(path, {});
    CHECK(mock->complete("exact", params()).text == "one");
    CHECK(mock->complete("a pos b", params()).text == "positive");
    CHECK(mock->complete("zzz", params()).text == "negative");
    CHECK(mock->score_sequence("c", "t") == std::vector<double>{std::log(0.25)});

    testing::write_file(path, "{ nope");
    CHECK_THROWS_WITH_AS(ScriptedMockBackend::from_script_file(path, {}), doctest::Contains("SchemaError"), Error);
}

}
