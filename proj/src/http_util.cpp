#include "http_util.hpp"

#include "auditcwe/errors.hpp"

#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace auditcwe::http {

Url parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("not an absolute URL: " + url);
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported URL scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    Url out;
    out.origin = url.substr(0, path_start);
    out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (out.origin.size() == scheme_end + 3) throw ConfigError("URL has no host: " + url);
    return out;
}

namespace {

httplib::Client make_client(const Url& u, std::chrono::milliseconds timeout) {
    httplib::Client cli(u.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    cli.set_follow_location(true);
    return cli;
}

using Clock = std::chrono::steady_clock;

Response unwrap(httplib::Result res, const std::string& url, Clock::time_point started,
                std::chrono::milliseconds timeout) {
    if (!res) {
        const auto err = res.error();
        const auto msg = httplib::to_string(err) + " (" + url + ")";
        // httplib reports an expired read timeout as a plain Read error.
        const bool expired = Clock::now() - started >= timeout * 9 / 10;
        if (err == httplib::Error::ConnectionTimeout || (err == httplib::Error::Read && expired)) {
            throw TimeoutError("request timed out: " + msg);
        }
        throw TransportError("request failed: " + msg);
    }
    return {res->status, res->body};
}

bool retryable_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

} // namespace

Response post_json(const std::string& url, const std::string& body, const Headers& headers,
                   std::chrono::milliseconds timeout) {
    const auto u = parse_url(url);
    auto cli = make_client(u, timeout);
    httplib::Headers h(headers.begin(), headers.end());
    const auto started = Clock::now();
    return unwrap(cli.Post(u.path, h, body, "application/json"), url, started, timeout);
}

Response get(const std::string& url, const Params& params, const Headers& headers,
             std::chrono::milliseconds timeout) {
    const auto u = parse_url(url);
    auto cli = make_client(u, timeout);
    httplib::Params p(params.begin(), params.end());
    httplib::Headers h(headers.begin(), headers.end());
    const auto started = Clock::now();
    return unwrap(cli.Get(u.path, p, h), url, started, timeout);
}

Response with_retries(const RetryPolicy& policy, const std::string& what,
                      const std::function<Response()>& attempt) {
    for (int n = 0;; ++n) {
        const bool last = n >= policy.retry_limit;
        try {
            auto r = attempt();
            if (!retryable_status(r.status) || last) return r;
            spdlog::warn("{}: HTTP {} (attempt {}), retrying", what, r.status, n + 1);
        } catch (const TimeoutError& e) {
            if (last) throw;
            spdlog::warn("{}: {} (attempt {}), retrying", what, e.what(), n + 1);
        } catch (const TransportError& e) {
            if (last) throw;
            spdlog::warn("{}: {} (attempt {}), retrying", what, e.what(), n + 1);
        }
        std::this_thread::sleep_for(policy.backoff_base * (1LL << std::min(n, 16)));
    }
}

} // namespace auditcwe::http
