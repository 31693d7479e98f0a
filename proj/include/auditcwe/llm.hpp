#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

inline constexpr double kDefaultTemperature = 0.8;

struct CompletionRequest {
    std::string system_prompt;
    std::string user_prompt;
    double temperature{kDefaultTemperature};
    int max_output_tokens{2048};
    std::string model_name;

    /// Throws ConfigError unless temperature is in [0, 2] and
    /// max_output_tokens >= 1.
    void validate() const;
};

struct RateLimit {
    int requests{0}; // 0 = unlimited
    std::chrono::milliseconds interval{1000};
};

struct ProviderConfig {
    std::string endpoint; // full chat-completions URL
    std::string api_key;
    int retry_limit{3};
    std::chrono::milliseconds request_timeout{120'000};
    RateLimit rate_limit;
    std::chrono::milliseconds backoff_base{500};

    void validate() const;
};

/// Sliding-window limiter: at most `requests` acquisitions per `interval`.
/// Thread-safe; callers block until a slot frees up.
class RateLimiter {
public:
    explicit RateLimiter(RateLimit limit) : limit_(limit) {}
    void acquire();

private:
    RateLimit limit_;
    std::mutex mu_;
    std::deque<std::chrono::steady_clock::time_point> recent_;
};

/// Text-in, text-out completion backend.
class CompletionProvider {
public:
    virtual ~CompletionProvider() = default;
    virtual std::string complete(const CompletionRequest& request) = 0;

    /// True when responses depend on call order (scripted providers), which
    /// forces callers to issue requests sequentially in document order.
    virtual bool requires_ordered_calls() const { return false; }
};

/// Validates the request, then delegates to the provider.
std::string complete(const CompletionRequest& request, CompletionProvider& provider);

/// Replays canned responses first-in first-out.  Every request is recorded so
/// tests can assert on prompts and call counts.
class ScriptedProvider final : public CompletionProvider {
public:
    explicit ScriptedProvider(std::vector<std::string> responses);

    /// Script file: a JSON array of strings.  Non-string entries are
    /// serialized, so a script can hold JSON objects verbatim.
    static std::unique_ptr<ScriptedProvider> from_file(const std::filesystem::path& path);

    std::string complete(const CompletionRequest& request) override;
    bool requires_ordered_calls() const override { return true; }

    std::size_t calls() const;
    std::size_t remaining() const;
    std::vector<CompletionRequest> requests() const;

private:
    mutable std::mutex mu_;
    std::deque<std::string> queue_;
    std::vector<CompletionRequest> log_;
};

/// Chat-completions JSON over HTTP(S): POST {model, messages, temperature,
/// max_tokens}; reads choices[0].message.content.  Transport failures are
/// retried with exponential backoff; HTTP error statuses are not.
class HttpProvider final : public CompletionProvider {
public:
    explicit HttpProvider(ProviderConfig config);
    std::string complete(const CompletionRequest& request) override;

    const ProviderConfig& config() const noexcept { return config_; }

private:
    ProviderConfig config_;
    RateLimiter limiter_;
};

nlohmann::json chat_request_body(const CompletionRequest& request);

/// Finds and parses the first JSON value in model output.  Accepts bare JSON,
/// fenced ```json blocks, and objects/arrays embedded in prose.  Throws
/// ParseError carrying the raw text.
nlohmann::json extract_json(std::string_view text);

/// Prompt templates with `{{name}}` placeholders.  Defaults are compiled in
/// from data/prompts; a directory can override individual templates.
class PromptLibrary {
public:
    static const PromptLibrary& builtin();
    static PromptLibrary from_directory(const std::filesystem::path& dir);

    const std::string& get(std::string_view name) const;
    std::string render(std::string_view name, const std::map<std::string, std::string>& vars) const;
    const std::string& version() const { return get("VERSION"); }

private:
    std::map<std::string, std::string, std::less<>> templates_;
};

/// Substitutes `{{key}}` placeholders; throws ConfigError for unknown keys.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

} // namespace auditcwe
