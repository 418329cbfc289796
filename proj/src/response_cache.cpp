#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "codeicl/digest.hpp"
#include "codeicl/errors.hpp"
#include "codeicl/model_backend.hpp"

namespace codeicl {

std::string request_digest(std::string_view backend_id, const DecodeParams& params, std::string_view prompt) {
    return DigestBuilder("codeicl-request-v1")
        .add(backend_id)
        .add(params.model_name)
        .add(prompt)
        .add(params.temperature)
        .add(static_cast<long long>(params.max_tokens))
        .hex();
}

namespace {

std::string utc_timestamp() {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

json completion_to_json(const Completion& c) {
    json j{{"text", c.text}};
    if (c.token_logprobs) {
        json tokens = json::array();
        for (const auto& t : *c.token_logprobs) {
            tokens.push_back(json::array({t.token, t.logprob}));
        }
        j["token_logprobs"] = std::move(tokens);
    }
    return j;
}

Completion completion_from_json(const json& j) {
    Completion c;
    c.text = j.at("text").get<std::string>();
    if (auto it = j.find("token_logprobs"); it != j.end()) {
        std::vector<TokenLogprob> tokens;
        for (const auto& t : *it) {
            tokens.push_back({t.at(0).get<std::string>(), t.at(1).get<double>()});
        }
        c.token_logprobs = std::move(tokens);
    }
    return c;
}

} // namespace

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) {
        fail(ErrorCode::Io, "cannot create cache directory " + dir_.string() + ": " + ec.message());
    }
}

std::optional<Completion> ResponseCache::lookup(const std::string& digest) const {
    const auto path = dir_ / (digest + ".json");
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    try {
        auto doc = json::parse(in);
        const auto& request = doc.at("request");
        DecodeParams params;
        params.model_name = request.at("model").get<std::string>();
        params.temperature = request.at("temperature").get<double>();
        params.max_tokens = request.at("max_tokens").get<int>();
        auto recomputed = request_digest(request.at("backend").get<std::string>(), params,
                                         request.at("prompt").get<std::string>());
        if (recomputed != digest || doc.at("digest").get<std::string>() != digest) {
            spdlog::warn("cache entry {} does not match its request; ignoring", path.string());
            return std::nullopt;
        }
        auto completion = completion_from_json(doc.at("response"));
        completion.from_cache = true;
        return completion;
    } catch (const json::exception& e) {
        spdlog::warn("cache entry {} is unreadable ({}); ignoring", path.string(), e.what());
        return std::nullopt;
    }
}

void ResponseCache::store(const std::string& digest, std::string_view backend_id, const DecodeParams& params,
                          std::string_view prompt, const Completion& completion) const {
    json doc{{"digest", digest},
             {"request",
              {{"backend", std::string(backend_id)},
               {"model", params.model_name},
               {"prompt", std::string(prompt)},
               {"temperature", params.temperature},
               {"max_tokens", params.max_tokens}}},
             {"response", completion_to_json(completion)},
             {"timestamp", utc_timestamp()}};

    // Write-then-rename so readers never observe a partial file.
    thread_local std::mt19937_64 suffix_rng{std::random_device{}()};
    const auto final_path = dir_ / (digest + ".json");
    const auto tmp_path = dir_ / (digest + ".json.tmp" + std::to_string(suffix_rng()));
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorCode::Io, "cannot write cache entry " + tmp_path.string());
        }
        out << doc.dump(2) << '\n';
        if (!out) {
            fail(ErrorCode::Io, "short write to " + tmp_path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp_path, final_path, ec);
    if (ec) {
        std::filesystem::remove(tmp_path, ec);
        fail(ErrorCode::Io, "cannot publish cache entry " + final_path.string());
    }
}

Completion ResponseCache::complete(Backend& backend, std::string_view prompt, const DecodeParams& params) {
    const auto backend_id = backend.id();
    const auto digest = request_digest(backend_id, params, prompt);

    std::promise<Completion> promise;
    {
        std::unique_lock lock(mutex_);
        if (auto it = in_flight_.find(digest); it != in_flight_.end()) {
            auto shared = it->second;
            lock.unlock();
            auto completion = shared.get();
            completion.from_cache = true;
            completion.latency_ms = 0;
            return completion;
        }
        in_flight_.emplace(digest, promise.get_future().share());
    }

    auto finish = [&] {
        std::lock_guard lock(mutex_);
        in_flight_.erase(digest);
    };

    try {
        Completion completion;
        if (auto hit = lookup(digest)) {
            completion = std::move(*hit);
        } else {
            completion = backend.complete(prompt, params);
            store(digest, backend_id, params, prompt, completion);
        }
        promise.set_value(completion);
        finish();
        return completion;
    } catch (...) {
        promise.set_exception(std::current_exception());
        finish();
        throw;
    }
}

Completion cached_complete(ResponseCache* cache, Backend& backend, std::string_view prompt,
                           const DecodeParams& params) {
    if (cache == nullptr) {
        return backend.complete(prompt, params);
    }
    return cache->complete(backend, prompt, params);
}

} // namespace codeicl
