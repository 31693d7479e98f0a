#pragma once

// Thin synchronous HTTP helpers over cpp-httplib shared by the completion
// provider and the block-explorer client.

#include <chrono>
#include <functional>
#include <map>
#include <string>

namespace auditcwe::http {

using Headers = std::multimap<std::string, std::string>;
using Params = std::multimap<std::string, std::string>;

struct Response {
    int status{0};
    std::string body;
};

struct Url {
    std::string origin; // scheme://host[:port]
    std::string path;   // starts with '/'
};

/// Throws ConfigError for anything that is not http(s)://host[:port][/path].
Url parse_url(const std::string& url);

/// Transport failures throw TransportError, timeouts TimeoutError.  Any HTTP
/// status is returned to the caller.
Response post_json(const std::string& url, const std::string& body, const Headers& headers,
                   std::chrono::milliseconds timeout);
Response get(const std::string& url, const Params& params, const Headers& headers,
             std::chrono::milliseconds timeout);

struct RetryPolicy {
    int retry_limit{3};
    std::chrono::milliseconds backoff_base{500};
    std::chrono::milliseconds timeout{120'000};
};

/// Calls `attempt` up to 1 + retry_limit times, sleeping backoff_base * 2^n
/// between tries.  Retries TransportError, TimeoutError, HTTP 429 and 5xx.
/// The last failure is rethrown (ProviderError-family errors keep their type;
/// a persistent retryable status is returned as the final response).
Response with_retries(const RetryPolicy& policy, const std::string& what,
                      const std::function<Response()>& attempt);

} // namespace auditcwe::http
