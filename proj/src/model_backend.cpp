#include "codeicl/model_backend.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "codeicl/digest.hpp"
#include "codeicl/errors.hpp"

namespace codeicl {

std::string_view to_string(BackendKind kind) noexcept {
    switch (kind) {
    case BackendKind::OpenAICompatible: return "openai_compatible";
    case BackendKind::ScriptedMock: return "scripted_mock";
    case BackendKind::UniformScorer: return "uniform_scorer";
    }
    return "scripted_mock";
}

std::optional<BackendKind> parse_backend_kind(std::string_view text) {
    for (auto kind : {BackendKind::OpenAICompatible, BackendKind::ScriptedMock, BackendKind::UniformScorer}) {
        if (to_string(kind) == text) {
            return kind;
        }
    }
    return std::nullopt;
}

void validate_descriptor(const BackendDescriptor& d) {
    if (d.max_in_flight < 1) {
        fail(ErrorCode::Usage, "max_in_flight must be >= 1");
    }
    if (d.rate_limit < 0) {
        fail(ErrorCode::Usage, "rate_limit must be >= 0");
    }
    if (d.retry.max_retries < 0) {
        fail(ErrorCode::Usage, "max_retries must be >= 0");
    }
    switch (d.kind) {
    case BackendKind::OpenAICompatible:
        if (!d.base_url || d.base_url->empty()) {
            fail(ErrorCode::Usage, "openai_compatible backend requires base_url");
        }
        if (d.credentials_env.empty()) {
            fail(ErrorCode::Usage, "openai_compatible backend requires credentials_env");
        }
        break;
    case BackendKind::UniformScorer:
        if (d.vocab_size < 1) {
            fail(ErrorCode::Usage, "uniform_scorer requires vocab_size >= 1");
        }
        break;
    case BackendKind::ScriptedMock:
        break;
    }
}

void to_json(json& j, const BackendDescriptor& v) {
    j = json{{"kind", std::string(to_string(v.kind))},
             {"credentials_env", v.credentials_env},
             {"rate_limit", v.rate_limit},
             {"max_in_flight", v.max_in_flight},
             {"max_retries", v.retry.max_retries},
             {"retry_base_delay_ms", v.retry.base_delay.count()},
             {"timeout_seconds", v.timeout_seconds},
             {"vocab_size", v.vocab_size}};
    if (v.base_url) {
        j["base_url"] = *v.base_url;
    }
    if (v.script_path) {
        j["script"] = *v.script_path;
    }
}

void from_json(const json& j, BackendDescriptor& v) {
    auto kind_text = j.at("kind").get<std::string>();
    auto kind = parse_backend_kind(kind_text);
    if (!kind) {
        fail(ErrorCode::Usage, "unknown backend kind '" + kind_text + "'");
    }
    v.kind = *kind;
    v.credentials_env = j.value("credentials_env", std::string("OPENAI_API_KEY"));
    v.rate_limit = j.value("rate_limit", 0.0);
    v.max_in_flight = j.value("max_in_flight", 4);
    v.retry.max_retries = j.value("max_retries", 3);
    v.retry.base_delay = std::chrono::milliseconds(j.value("retry_base_delay_ms", 1000));
    v.timeout_seconds = j.value("timeout_seconds", 120);
    v.vocab_size = j.value("vocab_size", 0);
    v.base_url.reset();
    v.script_path.reset();
    if (j.contains("base_url")) {
        v.base_url = j["base_url"].get<std::string>();
    }
    if (j.contains("script")) {
        v.script_path = j["script"].get<std::string>();
    }
}

// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(double rate_per_second) {
    if (rate_per_second <= 0) {
        return;
    }
    // Sliding window of at least one second, so no one-second span ever
    // holds more than floor(rate) requests (one for rates below 1).
    capacity_ = static_cast<std::size_t>(std::max(1.0, std::floor(rate_per_second)));
    window_ = std::chrono::nanoseconds(
        static_cast<long long>(std::ceil(std::max(1.0, 1.0 / rate_per_second) * 1e9)));
}

void RateLimiter::acquire() {
    if (!enabled()) {
        return;
    }
    std::unique_lock lock(mutex_);
    while (true) {
        auto now = std::chrono::steady_clock::now();
        while (!recent_.empty() && now - recent_.front() >= window_) {
            recent_.pop_front();
        }
        if (recent_.size() < capacity_) {
            recent_.push_back(now);
            return;
        }
        auto wake = recent_.front() + window_;
        lock.unlock();
        std::this_thread::sleep_until(wake);
        lock.lock();
    }
}

InFlightGate::InFlightGate(int limit) : limit_(std::max(1, limit)) {}

InFlightGate::Ticket InFlightGate::enter() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return active_ < limit_; });
    ++active_;
    return Ticket(*this);
}

void InFlightGate::release() {
    {
        std::lock_guard lock(mutex_);
        --active_;
    }
    cv_.notify_one();
}

// ---------------------------------------------------------------------------

Backend::Backend(double rate_limit, int max_in_flight, RetryPolicy retry)
    : limiter_(rate_limit), gate_(max_in_flight), retry_(retry) {}

namespace {

bool is_transient(const Error& e) {
    if (e.code() == ErrorCode::Transport) {
        return true;
    }
    if (const auto* provider = dynamic_cast<const ProviderError*>(&e);
        provider && provider->code() == ErrorCode::Provider) {
        return provider->status() == 429 || provider->status() >= 500;
    }
    return false;
}

} // namespace

template <typename Fn>
auto Backend::dispatch(Fn&& fn) -> decltype(fn()) {
    for (int attempt = 0;; ++attempt) {
        try {
            auto ticket = gate_.enter();
            limiter_.acquire();
            ++dispatched_;
            return fn();
        } catch (const Error& e) {
            if (!is_transient(e) || attempt >= retry_.max_retries) {
                throw;
            }
            auto delay = retry_.base_delay * (1LL << attempt);
            spdlog::warn("{} request failed ({}), retry {} of {} in {} ms", id(), e.what(), attempt + 1,
                         retry_.max_retries, delay.count());
            std::this_thread::sleep_for(delay);
        }
    }
}

Completion Backend::complete(std::string_view prompt, const DecodeParams& params) {
    if (prompt.empty()) {
        fail(ErrorCode::Usage, "empty prompt");
    }
    if (params.temperature < 0) {
        fail(ErrorCode::Usage, "temperature must be >= 0");
    }
    if (params.max_tokens < 1) {
        fail(ErrorCode::Usage, "max_tokens must be >= 1");
    }
    auto start = std::chrono::steady_clock::now();
    auto completion = dispatch([&] { return do_complete(prompt, params); });
    completion.from_cache = false;
    completion.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - start)
                                .count();
    return completion;
}

std::vector<double> Backend::score_sequence(std::string_view context, std::string_view target) {
    if (!can_score()) {
        fail(ErrorCode::Capability, id() + " backend cannot score sequences");
    }
    if (target.find_first_not_of(" \t\r\n") == std::string_view::npos) {
        fail(ErrorCode::EmptyTarget, "scoring target is empty");
    }
    return dispatch([&] { return do_score(context, target); });
}

std::vector<double> Backend::do_score(std::string_view, std::string_view) {
    fail(ErrorCode::Capability, id() + " backend cannot score sequences");
}

namespace {

std::vector<std::string> whitespace_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::istringstream in{std::string(text)};
    std::string token;
    while (in >> token) {
        tokens.push_back(token);
    }
    return tokens;
}

} // namespace

// ---------------------------------------------------------------------------

ScriptedMockBackend::ScriptedMockBackend() : ScriptedMockBackend(Options{}) {}

ScriptedMockBackend::ScriptedMockBackend(Options options)
    : Backend(options.rate_limit, options.max_in_flight, options.retry), options_(std::move(options)) {}

std::unique_ptr<ScriptedMockBackend> ScriptedMockBackend::from_script_file(const std::string& path,
                                                                           Options options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "cannot read mock script " + path);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::Schema, path + ": " + e.what());
    }
    if (doc.contains("default") && !options.default_response) {
        options.default_response = doc["default"].get<std::string>();
    }
    auto backend = std::make_unique<ScriptedMockBackend>(std::move(options));
    try {
        const auto responses = doc.value("responses", json::object());
        const auto rules = doc.value("rules", json::array());
        const auto scores = doc.value("scores", json::object());
        for (const auto& [digest, response] : responses.items()) {
            backend->script_digest(digest, response.get<std::string>());
        }
        for (const auto& rule : rules) {
            backend->add_rule(rule.at("contains").get<std::string>(), rule.at("response").get<std::string>());
        }
        for (const auto& [target, probs] : scores.items()) {
            backend->script_scores(target, probs.get<std::vector<double>>());
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::Schema, path + ": " + e.what());
    }
    return backend;
}

void ScriptedMockBackend::script(std::string_view prompt, std::string response) {
    script_digest(sha256_hex(prompt), std::move(response));
}

void ScriptedMockBackend::script_digest(std::string digest_hex, std::string response) {
    std::lock_guard lock(mutex_);
    by_digest_[std::move(digest_hex)] = std::move(response);
}

void ScriptedMockBackend::add_rule(std::string needle, std::string response) {
    std::lock_guard lock(mutex_);
    rules_.emplace_back(std::move(needle), std::move(response));
}

void ScriptedMockBackend::set_responder(Responder responder) {
    std::lock_guard lock(mutex_);
    responder_ = std::move(responder);
}

void ScriptedMockBackend::script_scores(std::string target, std::vector<double> probabilities) {
    for (double p : probabilities) {
        if (!(p >= 0.0 && p <= 1.0)) {
            fail(ErrorCode::Usage, "scripted probability outside [0, 1]");
        }
    }
    std::lock_guard lock(mutex_);
    scores_[std::move(target)] = std::move(probabilities);
}

void ScriptedMockBackend::fail_next(int count, int status) {
    std::lock_guard lock(mutex_);
    pending_failures_ = count;
    failure_status_ = status;
}

std::vector<std::chrono::steady_clock::time_point> ScriptedMockBackend::dispatch_log() const {
    std::lock_guard lock(mutex_);
    return log_;
}

void ScriptedMockBackend::enter() {
    int now = ++in_flight_;
    int peak = peak_in_flight_.load();
    while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
    }
    std::lock_guard lock(mutex_);
    log_.push_back(std::chrono::steady_clock::now());
}

void ScriptedMockBackend::leave() {
    --in_flight_;
}

void ScriptedMockBackend::maybe_inject_failure() {
    int status = 0;
    {
        std::lock_guard lock(mutex_);
        if (pending_failures_ <= 0) {
            return;
        }
        --pending_failures_;
        status = failure_status_;
    }
    if (status == 0) {
        fail(ErrorCode::Transport, "injected transport failure");
    }
    throw ProviderError(status, "injected failure",
                        status == 401 || status == 403 ? ErrorCode::Auth : ErrorCode::Provider);
}

Completion ScriptedMockBackend::do_complete(std::string_view prompt, const DecodeParams&) {
    enter();
    struct Leave {
        ScriptedMockBackend* self;
        ~Leave() { self->leave(); }
    } guard{this};

    if (options_.latency.count() > 0) {
        std::this_thread::sleep_for(options_.latency);
    }
    maybe_inject_failure();

    Responder responder;
    {
        std::lock_guard lock(mutex_);
        if (auto it = by_digest_.find(sha256_hex(prompt)); it != by_digest_.end()) {
            return Completion{it->second, std::nullopt, false, 0};
        }
        responder = responder_;
    }
    if (responder) {
        if (auto text = responder(prompt)) {
            return Completion{*text, std::nullopt, false, 0};
        }
    }
    std::lock_guard lock(mutex_);
    for (const auto& [needle, response] : rules_) {
        if (prompt.find(needle) != std::string_view::npos) {
            return Completion{response, std::nullopt, false, 0};
        }
    }
    if (options_.default_response) {
        return Completion{*options_.default_response, std::nullopt, false, 0};
    }
    throw ProviderError(404, "no scripted response for prompt " + sha256_hex(prompt));
}

std::vector<double> ScriptedMockBackend::do_score(std::string_view, std::string_view target) {
    enter();
    struct Leave {
        ScriptedMockBackend* self;
        ~Leave() { self->leave(); }
    } guard{this};
    maybe_inject_failure();

    std::lock_guard lock(mutex_);
    auto it = scores_.find(std::string(target));
    if (it == scores_.end()) {
        throw ProviderError(404, "no scripted scores for target '" + std::string(target) + "'");
    }
    std::vector<double> logprobs;
    logprobs.reserve(it->second.size());
    for (double p : it->second) {
        logprobs.push_back(std::log(p));
    }
    return logprobs;
}

// ---------------------------------------------------------------------------

UniformScorer::UniformScorer(int vocab_size) : Backend(0.0, 1 << 20, RetryPolicy{0, {}}), vocab_size_(vocab_size) {
    if (vocab_size < 1) {
        fail(ErrorCode::Usage, "vocabulary size must be >= 1");
    }
}

Completion UniformScorer::do_complete(std::string_view, const DecodeParams&) {
    throw ProviderError(0, "scoring-only backend");
}

std::vector<double> UniformScorer::do_score(std::string_view, std::string_view target) {
    auto tokens = whitespace_tokens(target);
    return std::vector<double>(tokens.size(), -std::log(static_cast<double>(vocab_size_)));
}

// ---------------------------------------------------------------------------

std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor) {
    validate_descriptor(descriptor);
    switch (descriptor.kind) {
    case BackendKind::OpenAICompatible:
        return std::make_unique<OpenAICompatibleBackend>(descriptor);
    case BackendKind::UniformScorer:
        return std::make_unique<UniformScorer>(descriptor.vocab_size);
    case BackendKind::ScriptedMock: {
        ScriptedMockBackend::Options options;
        options.rate_limit = descriptor.rate_limit;
        options.max_in_flight = descriptor.max_in_flight;
        options.retry = descriptor.retry;
        if (descriptor.script_path) {
            return ScriptedMockBackend::from_script_file(*descriptor.script_path, options);
        }
        return std::make_unique<ScriptedMockBackend>(options);
    }
    }
    fail(ErrorCode::Usage, "unknown backend kind");
}

} // namespace codeicl
