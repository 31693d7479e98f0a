#include <doctest.h>

#include "../support/local_server.hpp"
#include "auditcwe/errors.hpp"
#include "auditcwe/llm.hpp"

#include <atomic>
#include <random>

using namespace auditcwe;
using nlohmann::json;

namespace {

CompletionRequest request(std::string user = "u") {
    CompletionRequest r;
    r.system_prompt = "s";
    r.user_prompt = std::move(user);
    r.model_name = "test-model";
    return r;
}

json random_json(std::mt19937& rng, int depth) {
    const int kind = static_cast<int>(rng() % (depth > 2 ? 5 : 7));
    switch (kind) {
    case 0: return nullptr;
    case 1: return rng() % 2 == 0;
    case 2: return static_cast<int>(rng() % 2001) - 1000;
    case 3: return static_cast<double>(rng() % 10000) / 64.0;
    case 4: {
        static const char* const kStrings[] = {"", "a", "x\"}y", "{[", "```", "CWE-362", "\xE6\xBC\xA2"};
        return kStrings[rng() % std::size(kStrings)];
    }
    case 5: {
        json a = json::array();
        for (int i = 0, n = static_cast<int>(rng() % 4); i < n; ++i) a.push_back(random_json(rng, depth + 1));
        return a;
    }
    default: {
        json o = json::object();
        for (int i = 0, n = static_cast<int>(rng() % 4); i < n; ++i) {
            o["k" + std::to_string(rng() % 10)] = random_json(rng, depth + 1);
        }
        return o;
    }
    }
}

} // namespace

TEST_CASE("scripted provider") {
    SUBCASE("single response") {
        ScriptedProvider p({"A"});
        CHECK(complete(request(), p) == "A");
        CHECK(p.calls() == 1);
        CHECK(p.remaining() == 0);
    }
    SUBCASE("empty queue") {
        ScriptedProvider p({});
        CHECK_THROWS_AS(complete(request(), p), ProviderError);
    }
    SUBCASE("fifo") {
        ScriptedProvider p({"A", "B"});
        CHECK(complete(request(), p) == "A");
        CHECK(complete(request(), p) == "B");
        CHECK(p.requests().size() == 2);
    }
    SUBCASE("request validation happens before the provider") {
        ScriptedProvider p({"A"});
        auto r = request();
        r.temperature = 2.5;
        CHECK_THROWS_AS(complete(r, p), ConfigError);
        r.temperature = 0.8;
        r.max_output_tokens = 0;
        CHECK_THROWS_AS(complete(r, p), ConfigError);
        CHECK(p.calls() == 0);
    }
}

TEST_CASE("extract_json") {
    CHECK(extract_json("```json\n{\"a\":1}\n```") == json{{"a", 1}});
    CHECK(extract_json("{\"a\":1}") == json{{"a", 1}});
    CHECK_THROWS_AS(extract_json("no json here"), ParseError);
    CHECK(extract_json("Sure! Here it is:\n[\"CWE-362\"] hope that helps") == json{"CWE-362"});
    CHECK(extract_json("prefix {\"s\": \"} not the end\"} suffix") == json{{"s", "} not the end"}});
    CHECK(extract_json("{broken [1, 2]") == json{1, 2});
    try {
        extract_json("nothing");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.raw() == "nothing");
    }
}

TEST_CASE("property: extract_json inverts serialization") {
    std::mt19937 rng(7);
    for (int i = 0; i < 500; ++i) {
        const auto v = random_json(rng, 0);
        CAPTURE(v.dump());
        CHECK(extract_json(v.dump()) == v);
        CHECK(extract_json(v.dump(2)) == v);
        if (v.is_object() || v.is_array()) {
            CHECK(extract_json("Result:\n```json\n" + v.dump(2) + "\n```\n") == v);
        }
    }
}

TEST_CASE("prompt library") {
    const auto& lib = PromptLibrary::builtin();
    CHECK(lib.version() == "1");
    const auto text = lib.render("classify_stop", {{"fallback_id", "CWE-362"}, {"fallback_name", "Race"}});
    CHECK(text.find("CWE-362 (Race)") != std::string::npos);
    CHECK_THROWS_AS(lib.render("classify_stop", {}), ConfigError);
    CHECK_THROWS_AS(lib.get("nope"), ConfigError);
    CHECK(render_template("{{a}}-{{b}}", {{"a", "1"}, {"b", "{{a}}"}}) == "1-{{a}}");
}

TEST_CASE("chat request body") {
    const auto body = chat_request_body(request("hello"));
    CHECK(body["model"] == "test-model");
    CHECK(body["messages"].size() == 2);
    CHECK(body["messages"][1]["content"] == "hello");
    CHECK(body["temperature"] == doctest::Approx(0.8));
}

TEST_CASE("http provider") {
    testing::LocalServer srv;
    std::atomic<int> hits{0};
    std::string seen_auth;
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        seen_auth = req.get_header_value("Authorization");
        const auto body = json::parse(req.body);
        const auto user = body["messages"].back()["content"].get<std::string>();
        json out{{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo:" + user}}}}}}};
        res.set_content(out.dump(), "application/json");
    });
    srv.server().Post("/forbidden", [](const httplib::Request&, httplib::Response& res) {
        res.status = 403;
        res.set_content("{\"error\":\"bad key\"}", "application/json");
    });
    std::atomic<int> flaky_hits{0};
    srv.server().Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
        if (++flaky_hits < 3) {
            res.status = 503;
            return;
        }
        res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
    });
    srv.start();

    ProviderConfig cfg;
    cfg.api_key = "secret";
    cfg.backoff_base = std::chrono::milliseconds(1);
    cfg.request_timeout = std::chrono::milliseconds(5000);

    SUBCASE("success") {
        cfg.endpoint = srv.url("/v1/chat/completions");
        HttpProvider p(cfg);
        CHECK(p.complete(request("hi")) == "echo:hi");
        CHECK(seen_auth == "Bearer secret");
        CHECK(hits == 1);
    }
    SUBCASE("non-2xx status is an API error, not retried") {
        cfg.endpoint = srv.url("/forbidden");
        HttpProvider p(cfg);
        try {
            p.complete(request());
            FAIL("expected ApiError");
        } catch (const ApiError& e) {
            CHECK(e.status() == 403);
            CHECK(e.body().find("bad key") != std::string::npos);
        }
    }
    SUBCASE("transient 5xx is retried") {
        cfg.endpoint = srv.url("/flaky");
        HttpProvider p(cfg);
        CHECK(p.complete(request()) == "ok");
        CHECK(flaky_hits == 3);
    }
    SUBCASE("exhausted retries on a dead endpoint") {
        srv.stop();
        cfg.endpoint = srv.url("/v1/chat/completions");
        cfg.retry_limit = 1;
        HttpProvider p(cfg);
        CHECK_THROWS_AS(p.complete(request()), ProviderError);
    }
    SUBCASE("config validation") {
        cfg.endpoint = "";
        CHECK_THROWS_AS(HttpProvider{cfg}, ConfigError);
        cfg.endpoint = srv.url("/x");
        cfg.retry_limit = -1;
        CHECK_THROWS_AS(HttpProvider{cfg}, ConfigError);
    }
}

TEST_CASE("rate limiter") {
    RateLimiter limiter({2, std::chrono::milliseconds(100)});
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 5; ++i) limiter.acquire();
    // five acquisitions at two per 100 ms need at least two full windows
    CHECK(std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(200));
}
