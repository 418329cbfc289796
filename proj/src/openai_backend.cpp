#include <cstdlib>

#include <httplib.h>

#include "codeicl/errors.hpp"
#include "codeicl/model_backend.hpp"

namespace codeicl {

namespace {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path;   // prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        fail(ErrorCode::Usage, "base_url must include a scheme: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.origin = url;
    } else {
        out.origin = url.substr(0, path_start);
        out.path = url.substr(path_start);
    }
    while (!out.path.empty() && out.path.back() == '/') {
        out.path.pop_back();
    }
    return out;
}

bool is_context_overflow(const std::string& body) {
    if (body.find("context_length_exceeded") != std::string::npos) {
        return true;
    }
    return body.find("maximum context length") != std::string::npos;
}

} // namespace

OpenAICompatibleBackend::OpenAICompatibleBackend(const BackendDescriptor& descriptor)
    : Backend(descriptor.rate_limit, descriptor.max_in_flight, descriptor.retry),
      base_url_(descriptor.base_url.value_or("")),
      credentials_env_(descriptor.credentials_env),
      timeout_seconds_(descriptor.timeout_seconds) {
    validate_descriptor(descriptor);
}

json OpenAICompatibleBackend::build_payload(std::string_view prompt, const DecodeParams& params) {
    return json{{"model", params.model_name},
                {"messages", json::array({json{{"role", "user"}, {"content", std::string(prompt)}}})},
                {"temperature", params.temperature},
                {"max_tokens", params.max_tokens}};
}

Completion OpenAICompatibleBackend::parse_response(const std::string& body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::exception&) {
        throw ProviderError(200, "response is not JSON: " + body.substr(0, 200));
    }
    const auto choices = doc.find("choices");
    if (choices == doc.end() || !choices->is_array() || choices->empty()) {
        throw ProviderError(200, "response has no choices");
    }
    const auto& first = (*choices)[0];
    Completion out;
    try {
        const auto& content = first.at("message").at("content");
        out.text = content.is_null() ? std::string{} : content.get<std::string>();
    } catch (const json::exception&) {
        throw ProviderError(200, "first choice has no message content");
    }
    if (auto lp = first.find("logprobs"); lp != first.end() && lp->is_object() && lp->contains("content") &&
                                          (*lp)["content"].is_array()) {
        std::vector<TokenLogprob> tokens;
        for (const auto& entry : (*lp)["content"]) {
            tokens.push_back({entry.value("token", ""), entry.value("logprob", 0.0)});
        }
        out.token_logprobs = std::move(tokens);
    }
    return out;
}

Completion OpenAICompatibleBackend::do_complete(std::string_view prompt, const DecodeParams& params) {
    const char* key = std::getenv(credentials_env_.c_str());
    if (key == nullptr || *key == '\0') {
        throw ProviderError(0, "environment variable " + credentials_env_ + " is not set", ErrorCode::Auth);
    }

    auto url = split_url(base_url_);
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    client.set_write_timeout(timeout_seconds_, 0);
    client.set_bearer_token_auth(key);

    auto body = build_payload(prompt, params).dump();
    auto result = client.Post(url.path + "/v1/chat/completions", body, "application/json");
    if (!result) {
        fail(ErrorCode::Transport, base_url_ + ": " + httplib::to_string(result.error()));
    }
    const auto status = result->status;
    if (status == 401 || status == 403) {
        throw ProviderError(status, result->body, ErrorCode::Auth);
    }
    if (status == 400 && is_context_overflow(result->body)) {
        throw ProviderError(status, result->body, ErrorCode::PromptTooLong);
    }
    if (status < 200 || status >= 300) {
        throw ProviderError(status, result->body);
    }
    return parse_response(result->body);
}

} // namespace codeicl
