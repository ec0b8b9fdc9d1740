#include "chbr/llm.hpp"

#include "chbr/core.hpp"
#include "chbr/error.hpp"
#include "chbr/util.hpp"

namespace chbr {

using nlohmann::json;

std::string request_hash(const ChatRequest& request) {
    json msgs = json::array();
    for (const auto& m : request.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return content_id(msgs.dump());
}

void validate(const LlmEndpointConfig& config) {
    require(config.max_in_flight >= 1, "llm.max_in_flight must be >= 1");
    require(config.max_retries >= 0, "llm.max_retries must be >= 0");
    require(config.decode_temperature >= 0.0 && config.verify_temperature >= 0.0,
            "llm temperatures must be >= 0");
    require(config.request_timeout > 0.0, "llm.request_timeout must be positive");
}

json to_json(const LlmEndpointConfig& c) {
    return {{"base_url", c.base_url},
            {"model_name", c.model_name},
            {"request_timeout", c.request_timeout},
            {"max_in_flight", c.max_in_flight},
            {"max_retries", c.max_retries},
            {"decode_temperature", c.decode_temperature},
            {"verify_temperature", c.verify_temperature},
            {"backoff_base_ms", c.backoff_base_ms},
            {"backoff_max_ms", c.backoff_max_ms}};
}

LlmEndpointConfig llm_endpoint_config_from_json(const json& j) {
    LlmEndpointConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model_name = j.value("model_name", c.model_name);
    c.request_timeout = j.value("request_timeout", c.request_timeout);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.decode_temperature = j.value("decode_temperature", c.decode_temperature);
    c.verify_temperature = j.value("verify_temperature", c.verify_temperature);
    c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
    c.backoff_max_ms = j.value("backoff_max_ms", c.backoff_max_ms);
    validate(c);
    return c;
}

HttpChatClient::HttpChatClient(LlmEndpointConfig config, std::optional<std::string> api_key)
    : config_(std::move(config)), api_key_(std::move(api_key)) {
    validate(config_);
    require(!config_.base_url.empty(), "llm.base_url is required for the HTTP client");
    if (!api_key_) api_key_ = env_secret("CHBR_LLM_API_KEY");
}

std::vector<std::string> HttpChatClient::complete(const ChatRequest& request) {
    json msgs = json::array();
    for (const auto& m : request.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    HttpPost post;
    post.base_url = config_.base_url;
    post.path = "/v1/chat/completions";
    post.body = {{"model", config_.model_name}, {"temperature", request.temperature}, {"messages", msgs}};
    if (request.n > 1) post.body["n"] = request.n;
    post.bearer_token = api_key_;
    post.timeout_seconds = config_.request_timeout;
    const json reply = post_json_once(post);
    try {
        std::vector<std::string> out;
        for (const auto& choice : reply.at("choices"))
            out.push_back(choice.at("message").at("content").get<std::string>());
        if (out.empty()) throw Error(ErrorKind::provider, "chat completion returned no choices");
        return out;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::provider, std::string("malformed chat completion response: ") + e.what());
    }
}

ScriptedChatClient::ScriptedChatClient(json script) {
    by_hash_ = script.value("by_hash", json::object());
    if (script.contains("default_reply")) default_reply_ = script.at("default_reply").get<std::string>();
    for (const auto& r : script.value("rules", json::array())) {
        Rule rule;
        if (r.contains("tag")) rule.tag = r.at("tag").get<std::string>();
        if (r.contains("system_contains")) rule.system_contains = r.at("system_contains").get<std::string>();
        if (r.contains("user_contains")) rule.user_contains = r.at("user_contains").get<std::string>();
        if (r.contains("reply")) rule.replies.push_back(r.at("reply").get<std::string>());
        if (r.contains("replies")) rule.replies = r.at("replies").get<std::vector<std::string>>();
        if (r.contains("choices")) rule.choices = r.at("choices").get<std::vector<std::string>>();
        if (r.contains("fail")) {
            rule.fail_status = r.at("fail").value("status", 500);
            rule.fail_times = r.at("fail").value("times", -1L);
        }
        rules_.push_back(std::move(rule));
    }
}

ScriptedChatClient ScriptedChatClient::from_file(const std::string& path) {
    return ScriptedChatClient(read_json_file(path));
}

bool ScriptedChatClient::matches(const Rule& rule, const ChatRequest& request) const {
    if (rule.tag) {
        const auto& t = *rule.tag;
        if (!t.empty() && t.back() == '*') {
            if (request.tag.compare(0, t.size() - 1, t, 0, t.size() - 1) != 0) return false;
        } else if (request.tag != t) {
            return false;
        }
    }
    auto contains = [&](const std::optional<std::string>& needle, const char* role) {
        if (!needle) return true;
        for (const auto& m : request.messages)
            if (m.role == role && m.content.find(*needle) != std::string::npos) return true;
        return false;
    };
    return contains(rule.system_contains, "system") && contains(rule.user_contains, "user");
}

std::vector<std::string> ScriptedChatClient::complete(const ChatRequest& request) {
    ++calls_;
    std::lock_guard lock(mutex_);
    history_.push_back(request);
    const auto hash = request_hash(request);
    if (by_hash_.contains(hash)) {
        const auto& v = by_hash_.at(hash);
        if (v.is_array()) return v.get<std::vector<std::string>>();
        return {v.get<std::string>()};
    }
    for (auto& rule : rules_) {
        if (!matches(rule, request)) continue;
        const std::size_t hit = rule.hits++;
        if (rule.fail_status != 0 && (rule.fail_times < 0 || hit < static_cast<std::size_t>(rule.fail_times))) {
            const std::string what = "scripted failure " + std::to_string(rule.fail_status) + " for tag '" +
                                     request.tag + "'";
            if (rule.fail_status == 408 || rule.fail_status == 429 || rule.fail_status >= 500)
                throw TransientError(rule.fail_status, what);
            throw Error(ErrorKind::provider, what);
        }
        if (request.n > 1 && !rule.choices.empty()) return rule.choices;
        if (!rule.replies.empty()) {
            const std::size_t served = rule.fail_status != 0 && rule.fail_times > 0
                                           ? hit - static_cast<std::size_t>(rule.fail_times)
                                           : hit;
            return {rule.replies[std::min(served, rule.replies.size() - 1)]};
        }
        if (!rule.choices.empty()) return rule.choices;
    }
    if (default_reply_) return {*default_reply_};
    throw Error(ErrorKind::provider, "no scripted reply for request " + hash + " (tag '" + request.tag + "')");
}

std::vector<ChatRequest> ScriptedChatClient::history() const {
    std::lock_guard lock(mutex_);
    return history_;
}

std::vector<std::string> CallbackChatClient::complete(const ChatRequest& request) {
    std::lock_guard lock(mutex_);
    return fn_(request);
}

}  // namespace chbr
