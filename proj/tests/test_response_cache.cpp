#include <doctest.h>

#include <thread>

#include "codeicl/errors.hpp"
#include "codeicl/model_backend.hpp"
#include "support.hpp"

using namespace codeicl;
using namespace std::chrono_literals;

namespace {

DecodeParams params() {
    DecodeParams p;
    p.model_name = "gpt-3.5-turbo";
    return p;
}

std::unique_ptr<ScriptedMockBackend> echo_mock(std::chrono::milliseconds latency = 0ms) {
    ScriptedMockBackend::Options options;
    options.latency = latency;
    options.max_in_flight = 64;
    auto mock = std::make_unique<ScriptedMockBackend>(options);
    mock->set_responder([](std::string_view p) { return std::optional<std::string>("echo:" + std::string(p)); });
    return mock;
}

} // namespace

TEST_SUITE("response_cache") {

TEST_CASE("second identical call is served from the cache") {
    testing::TempDir dir;
    ResponseCache cache(dir.path());
    auto mock = echo_mock();
    auto first = cached_complete(&cache, *mock, "p", params());
    auto second = cached_complete(&cache, *mock, "p", params());
    CHECK_FALSE(first.from_cache);
    CHECK(second.from_cache);
    CHECK(first.text == second.text);
    CHECK(mock->dispatch_count() == 1);
}

TEST_CASE("every key component changes the digest") {
    const auto base = request_digest("scripted_mock", params(), "p");
    CHECK(base.size() == 64);
    CHECK(request_digest("scripted_mock", params(), "p") == base);
    auto p = params();
    p.max_tokens = 64;
    CHECK(request_digest("scripted_mock", p, "p") != base);
    p = params();
    p.temperature = 0.5;
    CHECK(request_digest("scripted_mock", p, "p") != base);
    p = params();
    p.model_name = "gpt-4";
    CHECK(request_digest("scripted_mock", p, "p") != base);
    CHECK(request_digest("openai_compatible", params(), "p") != base);
    CHECK(request_digest("scripted_mock", params(), "q") != base);
    // Field boundaries are unambiguous.
    auto a = params();
    a.model_name = "ab";
    auto b = params();
    b.model_name = "a";
    CHECK(request_digest("x", a, "c") != request_digest("x", b, "bc"));

    testing::TempDir dir;
    ResponseCache cache(dir.path());
    auto mock = echo_mock();
    cached_complete(&cache, *mock, "p", params());
    auto changed = params();
    changed.max_tokens = 64;
    CHECK_FALSE(cached_complete(&cache, *mock, "p", changed).from_cache);
    CHECK(mock->dispatch_count() == 2);
}

TEST_CASE("entries are one json file per digest with the request echo") {
    testing::TempDir dir;
    ResponseCache cache(dir.path());
    auto mock = echo_mock();
    cached_complete(&cache, *mock, "hello", params());
    const auto digest = request_digest(mock->id(), params(), "hello");
    const auto path = dir / (digest + ".json");
    REQUIRE(std::filesystem::exists(path));
    auto doc = json::parse(testing::read_file(path));
    CHECK(doc["digest"] == digest);
    CHECK(doc["request"]["prompt"] == "hello");
    CHECK(doc["request"]["model"] == "gpt-3.5-turbo");
    CHECK(doc["request"]["max_tokens"] == 128);
    CHECK(doc["response"]["text"] == "echo:hello");
    CHECK(doc.contains("timestamp"));
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
        (void)entry;
        ++files;
    }
    CHECK(files == 1);
}

TEST_CASE("corrupt entries read as misses") {
    testing::TempDir dir;
    ResponseCache cache(dir.path());
    auto mock = echo_mock();
    cached_complete(&cache, *mock, "p", params());
    const auto digest = request_digest(mock->id(), params(), "p");
    const auto path = dir / (digest + ".json");

    SUBCASE("garbage") {
        testing::write_file(path, "{ truncated");
    }
    SUBCASE("request echo does not match the key") {
        auto doc = json::parse(testing::read_file(path));
        doc["request"]["prompt"] = "other";
        testing::write_file(path, doc.dump());
    }
    CHECK_FALSE(cache.lookup(digest));
    auto again = cached_complete(&cache, *mock, "p", params());
    CHECK_FALSE(again.from_cache);
    CHECK(mock->dispatch_count() == 2);
    CHECK(cache.lookup(digest));
}

TEST_CASE("logprobs survive the cache") {
    testing::TempDir dir;
    ResponseCache cache(dir.path());
    Completion c{"positive", std::vector<TokenLogprob>{{"pos", -0.1}, {"itive", -1e-9}}, false, 3};
    cache.store("d", "scripted_mock", params(), "p", c);
    // "d" is not the real digest of the request, so the entry is rejected.
    CHECK_FALSE(cache.lookup("d"));
    const auto digest = request_digest("scripted_mock", params(), "p");
    cache.store(digest, "scripted_mock", params(), "p", c);
    auto hit = cache.lookup(digest);
    REQUIRE(hit);
    CHECK(hit->text == c.text);
    CHECK(hit->token_logprobs == c.token_logprobs);
    CHECK(hit->from_cache);
}

TEST_CASE("1000 cached calls replay with the backend failing") {
    testing::TempDir dir;
    std::vector<std::string> originals;
    {
        ResponseCache cache(dir.path());
        auto mock = echo_mock();
        for (int i = 0; i < 1000; ++i) {
            originals.push_back(cached_complete(&cache, *mock, "prompt " + std::to_string(i), params()).text);
        }
        CHECK(mock->dispatch_count() == 1000);
    }
    ResponseCache cache(dir.path());
    ScriptedMockBackend offline;
    offline.fail_next(1 << 30, 0);
    std::size_t errors = 0;
    for (int i = 0; i < 1000; ++i) {
        try {
            auto c = cached_complete(&cache, offline, "prompt " + std::to_string(i), params());
            errors += c.text != originals[static_cast<std::size_t>(i)] || !c.from_cache;
        } catch (const Error&) {
            ++errors;
        }
    }
    CHECK(errors == 0);
    CHECK(offline.dispatch_count() == 0);
}

TEST_CASE("concurrent identical requests share one backend call") {
    testing::TempDir dir;
    ResponseCache cache(dir.path());
    auto mock = echo_mock(50ms);
    std::vector<std::thread> threads;
    std::vector<Completion> results(16);
    for (std::size_t t = 0; t < results.size(); ++t) {
        threads.emplace_back([&, t] { results[t] = cache.complete(*mock, "same", params()); });
    }
    for (auto& t : threads) {
        t.join();
    }
    CHECK(mock->dispatch_count() == 1);
    std::size_t fresh = 0;
    for (const auto& r : results) {
        CHECK(r.text == "echo:same");
        fresh += !r.from_cache;
    }
    CHECK(fresh == 1);
}

TEST_CASE("errors are not cached") {
    testing::TempDir dir;
    ResponseCache cache(dir.path());
    ScriptedMockBackend::Options options;
    options.retry = {0, 0ms};
    options.default_response = "ok";
    ScriptedMockBackend mock(options);
    mock.fail_next(1, 500);
    CHECK_THROWS_AS(cached_complete(&cache, mock, "p", params()), ProviderError);
    CHECK(cached_complete(&cache, mock, "p", params()).text == "ok");
}

TEST_CASE("no cache goes straight to the backend") {
    auto mock = echo_mock();
    cached_complete(nullptr, *mock, "p", params());
    cached_complete(nullptr, *mock, "p", params());
    CHECK(mock->dispatch_count() == 2);
}

}
