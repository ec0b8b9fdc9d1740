#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "chbr/error.hpp"

namespace chbr {

struct RetryPolicy {
    int max_retries = 3;
    double base_delay_ms = 200.0;
    double max_delay_ms = 5000.0;

    /// Capped exponential backoff: base * 2^attempt, at most max_delay_ms.
    double delay_ms(int attempt) const;
};

/// A failure worth retrying: transport errors, 408, 429 and 5xx responses.
class TransientError : public Error {
   public:
    TransientError(int status, const std::string& what)
        : Error(ErrorKind::provider, what), status_(status) {}
    int status() const noexcept { return status_; }

   private:
    int status_;
};

/// Runs `attempt` until it succeeds, retrying TransientError with backoff.
/// Exhausted retries surface as a provider error. `retries` receives the
/// number of retries performed.
nlohmann::json with_retries(const RetryPolicy& policy, const std::function<nlohmann::json()>& attempt,
                            std::size_t* retries = nullptr);

struct HttpPost {
    std::string base_url;
    std::string path;
    nlohmann::json body;
    std::optional<std::string> bearer_token;
    double timeout_seconds = 60.0;
};

/// One POST with a JSON body, no retries. Throws TransientError or a provider
/// error carrying the status and an excerpt of the response body.
nlohmann::json post_json_once(const HttpPost& request);

std::optional<std::string> env_secret(const char* name);

}  // namespace chbr
