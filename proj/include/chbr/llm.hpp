#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chbr/http.hpp"

namespace chbr {

struct ChatMessage {
    std::string role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::size_t n = 1;  // number of sampled completions
    // Logical address of the request, e.g. "disc/<class>/<sample>/<trial>".
    // Never sent over the wire; scripted clients may match on it.
    std::string tag;
};

/// Content hash of a request: content_id of the compact JSON dump of
/// [{"content":..., "role":...}, ...]. Temperature, n and tag are excluded.
std::string request_hash(const ChatRequest& request);

class ChatClient {
   public:
    virtual ~ChatClient() = default;
    /// Returns request.n completions (providers may return fewer). Throws
    /// TransientError for retryable failures, Error(provider) otherwise.
    virtual std::vector<std::string> complete(const ChatRequest& request) = 0;
};

struct LlmEndpointConfig {
    std::string base_url;
    std::string model_name = "gpt-4o-mini";
    double request_timeout = 60.0;  // seconds
    std::size_t max_in_flight = 4;
    int max_retries = 3;
    double decode_temperature = 1.0;  // concept generation
    double verify_temperature = 0.0;  // discriminative tests
    double backoff_base_ms = 200.0;
    double backoff_max_ms = 5000.0;

    RetryPolicy retry_policy() const { return {max_retries, backoff_base_ms, backoff_max_ms}; }
};

void validate(const LlmEndpointConfig& config);
nlohmann::json to_json(const LlmEndpointConfig& config);
LlmEndpointConfig llm_endpoint_config_from_json(const nlohmann::json& j);

/// OpenAI-compatible POST {base_url}/v1/chat/completions. The bearer token is
/// read from CHBR_LLM_API_KEY unless given explicitly.
class HttpChatClient : public ChatClient {
   public:
    explicit HttpChatClient(LlmEndpointConfig config, std::optional<std::string> api_key = std::nullopt);
    std::vector<std::string> complete(const ChatRequest& request) override;

   private:
    LlmEndpointConfig config_;
    std::optional<std::string> api_key_;
};

/// Deterministic stand-in for an LLM driven by a JSON script:
///
///   {"by_hash": {"<request_hash>": "reply", ...},
///    "rules": [{"tag": "disc/cls/*", "system_contains": "...", "user_contains": "...",
///               "reply": "..." | "replies": [...] | "choices": [...],
///               "fail": {"status": 500, "times": 2}}],
///    "default_reply": "..."}
///
/// by_hash entries win, then the first matching rule. `tag` accepts a single
/// trailing '*' wildcard. "replies" are consumed in call order (the last one
/// repeats); "choices" answers an n-completion request. A rule with "fail"
/// raises the given HTTP status for its first `times` matches (times < 0:
/// always). Unmatched requests raise a provider error. Thread-safe.
class ScriptedChatClient : public ChatClient {
   public:
    explicit ScriptedChatClient(nlohmann::json script);
    static ScriptedChatClient from_file(const std::string& path);

    std::vector<std::string> complete(const ChatRequest& request) override;

    std::size_t calls() const { return calls_.load(); }
    std::vector<ChatRequest> history() const;

   private:
    struct Rule {
        std::optional<std::string> tag;
        std::optional<std::string> system_contains;
        std::optional<std::string> user_contains;
        std::vector<std::string> replies;
        std::vector<std::string> choices;
        int fail_status = 0;
        long fail_times = 0;
        std::size_t hits = 0;
    };

    bool matches(const Rule& rule, const ChatRequest& request) const;

    nlohmann::json by_hash_;
    std::vector<Rule> rules_;
    std::optional<std::string> default_reply_;
    mutable std::mutex mutex_;
    std::vector<ChatRequest> history_;
    std::atomic<std::size_t> calls_{0};
};

/// Adapts a callable; calls are serialized so the callable may keep state.
class CallbackChatClient : public ChatClient {
   public:
    using Fn = std::function<std::vector<std::string>(const ChatRequest&)>;
    explicit CallbackChatClient(Fn fn) : fn_(std::move(fn)) {}
    std::vector<std::string> complete(const ChatRequest& request) override;

   private:
    Fn fn_;
    std::mutex mutex_;
};

}  // namespace chbr
