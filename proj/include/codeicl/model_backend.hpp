#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "codeicl/task_model.hpp"

namespace codeicl {

enum class BackendKind { OpenAICompatible, ScriptedMock, UniformScorer };

std::string_view to_string(BackendKind kind) noexcept;
std::optional<BackendKind> parse_backend_kind(std::string_view text);

/// Retries on transport failures, 429 and 5xx. Delay before retry i (0-based)
/// is base_delay * 2^i, so the defaults wait 1s, 2s, 4s.
struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{1000};

    bool operator==(const RetryPolicy&) const = default;
};

struct BackendDescriptor {
    BackendKind kind = BackendKind::ScriptedMock;
    std::optional<std::string> base_url;
    std::string credentials_env = "OPENAI_API_KEY";
    double rate_limit = 0.0; // requests per second; 0 disables the limiter
    int max_in_flight = 4;
    RetryPolicy retry;
    int timeout_seconds = 120;
    std::optional<std::string> script_path; // scripted_mock: response table
    int vocab_size = 0;                     // uniform_scorer

    bool operator==(const BackendDescriptor&) const = default;
};

/// Throws Usage when required fields for the kind are missing.
void validate_descriptor(const BackendDescriptor& descriptor);

void to_json(json& j, const BackendDescriptor& v);
void from_json(const json& j, BackendDescriptor& v);

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;

    bool operator==(const TokenLogprob&) const = default;
};

struct Completion {
    std::string text;
    std::optional<std::vector<TokenLogprob>> token_logprobs;
    bool from_cache = false;
    long long latency_ms = 0;
};

/// Sliding-window limiter: at most `capacity` acquisitions in any window of
/// capacity / rate seconds, which keeps every 1-second window at or below
/// `rate` for rate >= 1 and spaces requests 1/rate apart below that.
class RateLimiter {
public:
    explicit RateLimiter(double rate_per_second);

    void acquire();
    bool enabled() const noexcept { return capacity_ > 0; }

private:
    std::mutex mutex_;
    std::size_t capacity_ = 0;
    std::chrono::nanoseconds window_{0};
    std::deque<std::chrono::steady_clock::time_point> recent_;
};

/// Counting gate bounding concurrent requests.
class InFlightGate {
public:
    explicit InFlightGate(int limit);

    class Ticket {
    public:
        explicit Ticket(InFlightGate& gate) : gate_(&gate) {}
        Ticket(const Ticket&) = delete;
        Ticket& operator=(const Ticket&) = delete;
        ~Ticket() { gate_->release(); }

    private:
        InFlightGate* gate_;
    };

    [[nodiscard]] Ticket enter();

private:
    void release();

    std::mutex mutex_;
    std::condition_variable cv_;
    int limit_;
    int active_ = 0;
};

/// Completion / scoring contract shared by every provider.
///
/// complete() and score_sequence() are the public entry points: they check
/// preconditions, apply the rate limit and in-flight bound, and retry
/// transient failures; subclasses implement the raw request. Instances are
/// safe to share between threads.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendKind kind() const noexcept = 0;
    std::string id() const { return std::string(to_string(kind())); }

    virtual bool can_complete() const noexcept { return true; }
    virtual bool can_score() const noexcept { return false; }

    /// Errors: Usage (empty prompt), Transport, Auth, Provider, PromptTooLong.
    Completion complete(std::string_view prompt, const DecodeParams& params);

    /// One natural-log probability per target token. Errors: Capability,
    /// EmptyTarget, and the transport errors of complete().
    std::vector<double> score_sequence(std::string_view context, std::string_view target);

    /// Requests that reached do_complete / do_score (retries included).
    std::size_t dispatch_count() const noexcept { return dispatched_.load(); }

protected:
    Backend(double rate_limit, int max_in_flight, RetryPolicy retry);

    virtual Completion do_complete(std::string_view prompt, const DecodeParams& params) = 0;
    virtual std::vector<double> do_score(std::string_view context, std::string_view target);

private:
    template <typename Fn>
    auto dispatch(Fn&& fn) -> decltype(fn());

    RateLimiter limiter_;
    InFlightGate gate_;
    RetryPolicy retry_;
    std::atomic<std::size_t> dispatched_{0};
};

/// Deterministic test double. Responses resolve in order: exact prompt table
/// (by SHA-256 of the prompt), responder callback, substring rules, default.
/// Records every dispatch time and the peak number of concurrent requests.
class ScriptedMockBackend : public Backend {
public:
    struct Options {
        double rate_limit = 0.0;
        int max_in_flight = 4;
        RetryPolicy retry{3, std::chrono::milliseconds(0)};
        std::chrono::milliseconds latency{0};
        std::optional<std::string> default_response;
    };
    using Responder = std::function<std::optional<std::string>(std::string_view prompt)>;

    ScriptedMockBackend();
    explicit ScriptedMockBackend(Options options);

    /// Loads a JSON script: {"responses": {"<sha256 of prompt>": text},
    /// "rules": [{"contains": s, "response": text}], "default": text,
    /// "scores": {"<target>": [p1, p2, ...]}}.
    static std::unique_ptr<ScriptedMockBackend> from_script_file(const std::string& path, Options options);

    BackendKind kind() const noexcept override { return BackendKind::ScriptedMock; }
    bool can_score() const noexcept override { return true; }

    void script(std::string_view prompt, std::string response);
    void script_digest(std::string digest_hex, std::string response);
    void add_rule(std::string needle, std::string response);
    void set_responder(Responder responder);
    /// Token probabilities returned when `target` is scored (one per token).
    void script_scores(std::string target, std::vector<double> probabilities);
    /// The next `count` dispatches fail: status 0 raises TransportError,
    /// anything else a ProviderError with that status.
    void fail_next(int count, int status = 0);

    std::vector<std::chrono::steady_clock::time_point> dispatch_log() const;
    int peak_in_flight() const noexcept { return peak_in_flight_.load(); }

protected:
    Completion do_complete(std::string_view prompt, const DecodeParams& params) override;
    std::vector<double> do_score(std::string_view context, std::string_view target) override;

private:
    void enter();
    void leave();
    void maybe_inject_failure();

    Options options_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> by_digest_;
    std::vector<std::pair<std::string, std::string>> rules_;
    Responder responder_;
    std::map<std::string, std::vector<double>> scores_;
    int pending_failures_ = 0;
    int failure_status_ = 0;
    std::vector<std::chrono::steady_clock::time_point> log_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> peak_in_flight_{0};
};

/// Scores every whitespace-delimited token with probability 1/V. Cannot
/// complete.
class UniformScorer : public Backend {
public:
    explicit UniformScorer(int vocab_size);

    BackendKind kind() const noexcept override { return BackendKind::UniformScorer; }
    bool can_complete() const noexcept override { return false; }
    bool can_score() const noexcept override { return true; }

protected:
    Completion do_complete(std::string_view prompt, const DecodeParams& params) override;
    std::vector<double> do_score(std::string_view context, std::string_view target) override;

private:
    int vocab_size_;
};

/// Chat-completions client: POST {base_url}/v1/chat/completions with the
/// whole prompt as one user message and a bearer token from the environment.
class OpenAICompatibleBackend : public Backend {
public:
    explicit OpenAICompatibleBackend(const BackendDescriptor& descriptor);

    BackendKind kind() const noexcept override { return BackendKind::OpenAICompatible; }

    /// Request body for a prompt; exposed for wire-format tests.
    static json build_payload(std::string_view prompt, const DecodeParams& params);
    /// Extracts the first choice; throws Provider on a malformed body.
    static Completion parse_response(const std::string& body);

protected:
    Completion do_complete(std::string_view prompt, const DecodeParams& params) override;

private:
    std::string base_url_;
    std::string credentials_env_;
    int timeout_seconds_;
};

std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor);

/// Digest identifying a request: backend kind, model, prompt, temperature,
/// max_tokens. Used both as cache key and as a record's prompt_hash.
std::string request_digest(std::string_view backend_id, const DecodeParams& params, std::string_view prompt);

/// One JSON file per request digest under `dir`, written atomically.
/// Concurrent identical requests share a single backend call.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    const std::filesystem::path& dir() const noexcept { return dir_; }

    /// Stored completion for the digest; corrupt entries log a warning and
    /// read as a miss.
    std::optional<Completion> lookup(const std::string& digest) const;
    void store(const std::string& digest, std::string_view backend_id, const DecodeParams& params,
               std::string_view prompt, const Completion& completion) const;

    Completion complete(Backend& backend, std::string_view prompt, const DecodeParams& params);

private:
    std::filesystem::path dir_;
    std::mutex mutex_;
    std::map<std::string, std::shared_future<Completion>> in_flight_;
};

/// Cache-through completion; a null cache calls the backend directly.
Completion cached_complete(ResponseCache* cache, Backend& backend, std::string_view prompt,
                           const DecodeParams& params);

} // namespace codeicl
