#include "chbr/http.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#ifdef CHBR_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace chbr {

using nlohmann::json;

double RetryPolicy::delay_ms(int attempt) const {
    return std::min(max_delay_ms, base_delay_ms * std::pow(2.0, attempt));
}

json with_retries(const RetryPolicy& policy, const std::function<json()>& attempt, std::size_t* retries) {
    for (int i = 0;; ++i) {
        try {
            json out = attempt();
            if (retries) *retries = static_cast<std::size_t>(i);
            return out;
        } catch (const TransientError& e) {
            if (i >= policy.max_retries) {
                if (retries) *retries = static_cast<std::size_t>(i);
                throw Error(ErrorKind::provider, std::string(e.what()) + " (gave up after " +
                                                     std::to_string(i) + " retries)");
            }
            const auto ms = policy.delay_ms(i);
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
        }
    }
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& base_url) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
        throw Error(ErrorKind::precondition, "base URL must include a scheme: '" + base_url + "'");
    const auto path_start = base_url.find('/', scheme_end + 3);
    SplitUrl out;
    out.origin = base_url.substr(0, path_start);
    if (path_start != std::string::npos) out.prefix = base_url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

std::string excerpt(const std::string& body) {
    constexpr std::size_t limit = 200;
    return body.size() <= limit ? body : body.substr(0, limit) + "...";
}

}  // namespace

json post_json_once(const HttpPost& request) {
    const auto url = split_url(request.base_url);
    httplib::Client client(url.origin);
    const auto secs = static_cast<time_t>(request.timeout_seconds);
    const auto usecs = static_cast<time_t>((request.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (request.bearer_token) headers.emplace("Authorization", "Bearer " + *request.bearer_token);

    auto res = client.Post(url.prefix + request.path, headers, request.body.dump(), "application/json");
    if (!res)
        throw TransientError(0, "transport failure contacting " + request.base_url + request.path + ": " +
                                    httplib::to_string(res.error()));
    const int status = res->status;
    if (status == 408 || status == 429 || status >= 500)
        throw TransientError(status, "HTTP " + std::to_string(status) + " from " + request.path + ": " +
                                         excerpt(res->body));
    if (status < 200 || status >= 300)
        throw Error(ErrorKind::provider,
                    "HTTP " + std::to_string(status) + " from " + request.path + ": " + excerpt(res->body));
    try {
        return json::parse(res->body);
    } catch (const json::parse_error&) {
        throw Error(ErrorKind::provider, "non-JSON response from " + request.path + ": " + excerpt(res->body));
    }
}

std::optional<std::string> env_secret(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

}  // namespace chbr
