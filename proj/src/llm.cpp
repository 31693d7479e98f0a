#include "auditcwe/llm.hpp"

#include "auditcwe/errors.hpp"
#include "auditcwe/json_io.hpp"
#include "http_util.hpp"

#include <thread>

#include <spdlog/spdlog.h>

namespace fs = std::filesystem;

namespace auditcwe {

// Generated from data/prompts at configure time.
const std::map<std::string, std::string, std::less<>>& embedded_prompts();

void CompletionRequest::validate() const {
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
        throw ConfigError("temperature must be within [0, 2], got " + std::to_string(temperature));
    }
    if (max_output_tokens < 1) throw ConfigError("max_output_tokens must be >= 1");
}

void ProviderConfig::validate() const {
    if (retry_limit < 0) throw ConfigError("retry_limit must be >= 0");
    if (request_timeout.count() <= 0) throw ConfigError("request_timeout must be positive");
    if (rate_limit.requests < 0 || rate_limit.interval.count() <= 0) {
        throw ConfigError("rate limit must be non-negative requests per positive interval");
    }
    if (endpoint.empty()) throw ConfigError("provider endpoint is not configured");
}

void RateLimiter::acquire() {
    if (limit_.requests <= 0) return;
    std::unique_lock lock(mu_);
    for (;;) {
        const auto now = std::chrono::steady_clock::now();
        while (!recent_.empty() && now - recent_.front() >= limit_.interval) recent_.pop_front();
        if (static_cast<int>(recent_.size()) < limit_.requests) {
            recent_.push_back(now);
            return;
        }
        const auto wait = recent_.front() + limit_.interval - now;
        lock.unlock();
        std::this_thread::sleep_for(wait);
        lock.lock();
    }
}

std::string complete(const CompletionRequest& request, CompletionProvider& provider) {
    request.validate();
    return provider.complete(request);
}

ScriptedProvider::ScriptedProvider(std::vector<std::string> responses)
    : queue_(std::make_move_iterator(responses.begin()), std::make_move_iterator(responses.end())) {}

std::unique_ptr<ScriptedProvider> ScriptedProvider::from_file(const fs::path& path) {
    const auto j = read_json_file(path);
    if (!j.is_array()) throw SchemaError(path.string() + ": mock script must be a JSON array");
    std::vector<std::string> responses;
    responses.reserve(j.size());
    for (const auto& v : j) responses.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    return std::make_unique<ScriptedProvider>(std::move(responses));
}

std::string ScriptedProvider::complete(const CompletionRequest& request) {
    std::lock_guard lock(mu_);
    log_.push_back(request);
    if (queue_.empty()) {
        throw ProviderError("scripted provider exhausted after " + std::to_string(log_.size() - 1) +
                            " response(s)");
    }
    auto out = std::move(queue_.front());
    queue_.pop_front();
    return out;
}

std::size_t ScriptedProvider::calls() const {
    std::lock_guard lock(mu_);
    return log_.size();
}

std::size_t ScriptedProvider::remaining() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

std::vector<CompletionRequest> ScriptedProvider::requests() const {
    std::lock_guard lock(mu_);
    return log_;
}

nlohmann::json chat_request_body(const CompletionRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    if (!request.system_prompt.empty()) {
        messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
    }
    messages.push_back({{"role", "user"}, {"content", request.user_prompt}});
    return {{"model", request.model_name},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens}};
}

HttpProvider::HttpProvider(ProviderConfig config)
    : config_(std::move(config)), limiter_(config_.rate_limit) {
    config_.validate();
}

std::string HttpProvider::complete(const CompletionRequest& request) {
    request.validate();
    const auto body = chat_request_body(request).dump();
    http::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    http::RetryPolicy policy{config_.retry_limit, config_.backoff_base, config_.request_timeout};
    http::Response response;
    try {
        response = http::with_retries(policy, "completion request", [&] {
            limiter_.acquire();
            return http::post_json(config_.endpoint, body, headers, config_.request_timeout);
        });
    } catch (const TransportError& e) {
        throw ProviderError(std::string("completion request failed after retries: ") + e.what());
    }
    if (response.status < 200 || response.status >= 300) {
        throw ApiError(response.status, response.body.substr(0, 500));
    }
    try {
        const auto j = nlohmann::json::parse(response.body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw ProviderError("completion content is not a string");
        return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("unexpected completion response: ") + e.what() + ": " +
                            response.body.substr(0, 200));
    }
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::optional<nlohmann::json> try_parse(std::string_view s) {
    auto j = nlohmann::json::parse(s.begin(), s.end(), nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
}

// End (exclusive) of the balanced {...} or [...] starting at `open`, honoring
// string literals; npos if unbalanced.
std::size_t balanced_end(std::string_view text, std::size_t open) {
    std::vector<char> stack;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        switch (c) {
        case '"': in_string = true; break;
        case '{': stack.push_back('}'); break;
        case '[': stack.push_back(']'); break;
        case '}':
        case ']':
            if (stack.empty() || stack.back() != c) return std::string_view::npos;
            stack.pop_back();
            if (stack.empty()) return i + 1;
            break;
        default: break;
        }
    }
    return std::string_view::npos;
}

} // namespace

nlohmann::json extract_json(std::string_view text) {
    const auto whole = trim(text);
    if (auto j = try_parse(whole)) return *j;

    // Fenced block: ```json ... ``` (language tag optional).
    for (auto fence = whole.find("```"); fence != std::string_view::npos;
         fence = whole.find("```", fence + 3)) {
        const auto body_start = whole.find('\n', fence);
        if (body_start == std::string_view::npos) break;
        const auto close = whole.find("```", body_start);
        if (close == std::string_view::npos) break;
        if (auto j = try_parse(trim(whole.substr(body_start + 1, close - body_start - 1)))) return *j;
        fence = close;
    }

    for (std::size_t i = 0; i < whole.size(); ++i) {
        if (whole[i] != '{' && whole[i] != '[') continue;
        const auto end = balanced_end(whole, i);
        if (end == std::string_view::npos) continue;
        if (auto j = try_parse(whole.substr(i, end - i))) return *j;
    }
    throw ParseError("no parseable JSON in model output", std::string(text));
}

const PromptLibrary& PromptLibrary::builtin() {
    static const PromptLibrary lib = [] {
        PromptLibrary l;
        for (const auto& [k, v] : embedded_prompts()) l.templates_.emplace(k, v);
        return l;
    }();
    return lib;
}

PromptLibrary PromptLibrary::from_directory(const fs::path& dir) {
    PromptLibrary lib = builtin();
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw ConfigError("prompt directory not found: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto name = entry.path().filename().string();
        if (name.size() > 4 && name.ends_with(".txt")) name.resize(name.size() - 4);
        lib.templates_[name] = read_text_file(entry.path());
    }
    return lib;
}

const std::string& PromptLibrary::get(std::string_view name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw ConfigError("unknown prompt template " + std::string(name));
    return it->second;
}

std::string PromptLibrary::render(std::string_view name,
                                  const std::map<std::string, std::string>& vars) const {
    return render_template(get(name), vars);
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, open - pos));
        const std::string key(tmpl.substr(open + 2, close - open - 2));
        auto it = vars.find(key);
        if (it == vars.end()) throw ConfigError("prompt placeholder {{" + key + "}} has no value");
        out += it->second;
        pos = close + 2;
    }
    return out;
}

} // namespace auditcwe
