#include <doctest.h>

#include "../support/report_gen.hpp"
#include "auditcwe/errors.hpp"
#include "auditcwe/extractor.hpp"
#include "auditcwe/json_io.hpp"

#include <filesystem>

using namespace auditcwe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kAddr = "0x" + std::string(40, 'b');

Finding finding(const std::string& title, Severity sev = Severity::High) {
    Finding f;
    f.title = title;
    f.description = "d";
    f.severity = sev;
    return f;
}

StructuredReport with_url(const std::string& url) {
    StructuredReport r;
    r.project_info.url = url;
    return r;
}

std::string model_report(const json& project, const json& findings) {
    return json{{"project_info", project}, {"findings", findings}}.dump();
}

const json kNoProject = {{"url", ""}, {"commit_id", ""}, {"address", ""}, {"chain", ""}};

Chunk make_chunk(int index, std::string text) {
    return {index, text, count_tokens(text), {}};
}

// Map answers come from a script; reduce answers are the mechanical merge of
// the partials quoted in the prompt, i.e. an identity reduce.
class IdentityReduceProvider : public CompletionProvider {
public:
    explicit IdentityReduceProvider(std::vector<std::string> map_answers) : maps_(std::move(map_answers)) {}

    std::string complete(const CompletionRequest& req) override {
        if (req.user_prompt.find("Partial result 1:") == std::string::npos) return maps_.at(next_map_++);
        ++reduces;
        std::vector<StructuredReport> parts;
        const std::string& prompt = req.user_prompt;
        const std::string marker = "Partial result ";
        for (auto pos = prompt.find(marker); pos != std::string::npos; pos = prompt.find(marker, pos + 1)) {
            const auto colon = prompt.find(':', pos);
            parts.push_back(report_from_json(extract_json(prompt.substr(colon + 1, prompt.find(marker, colon) - colon - 1))));
        }
        return to_json(merge_all(parts)).dump();
    }
    bool requires_ordered_calls() const override { return true; }

    int reduces{0};

private:
    std::vector<std::string> maps_;
    std::size_t next_map_{0};
};

} // namespace

TEST_CASE("severity coercion") {
    CHECK(coerce_severity("Informational") == Severity::Info);
    CHECK(coerce_severity(" HIGH ") == Severity::High);
    CHECK(coerce_severity("Major") == Severity::High);
    CHECK(coerce_severity("gas optimization") == std::nullopt);
    CHECK(coerce_severity("Gas") == Severity::Info);
    CHECK(coerce_severity("urgent") == std::nullopt);
    CHECK(parse_severity("High") == std::nullopt);
}

TEST_CASE("address and commit validation") {
    CHECK(validate_address("0x" + std::string(40, 'f')));
    CHECK(validate_address("0xAbCdEf0123456789aBcDeF0123456789AbCdEf01"));
    CHECK_FALSE(validate_address("0x" + std::string(39, 'f')));
    CHECK_FALSE(validate_address("0x" + std::string(41, 'f')));
    CHECK_FALSE(validate_address("0x" + std::string(39, 'f') + "g"));
    CHECK_FALSE(validate_address(std::string(42, 'f')));
    CHECK(plausible_commit_id("a1b2c3d"));
    CHECK(plausible_commit_id(std::string(40, 'a')));
    CHECK_FALSE(plausible_commit_id("abc"));
    CHECK_FALSE(plausible_commit_id(std::string(41, 'a')));
    CHECK(plausible_commit_id("main"));
}

TEST_CASE("report_from_model repairs drift") {
    std::vector<std::string> diags;
    const auto r = report_from_model(json::parse(R"({
        "project_info": {"url": " https://github.com/a/b ", "commit_id": 1234, "address": "0x12", "chain": null},
        "findings": [
            {"id": 9, "title": "Reentrancy", "severity": "Informational"},
            {"title": "", "severity": "high"},
            {"title": "Odd", "severity": "urgent", "location": "A.sol"}
        ]})"), &diags);
    CHECK(r.project_info.url == "https://github.com/a/b");
    CHECK(r.project_info.commit_id.empty()); // "1234" is hex and too short
    CHECK(r.project_info.address.empty());
    REQUIRE(r.findings.size() == 2);
    CHECK(r.findings[0].id == 1);
    CHECK(r.findings[0].severity == Severity::Info);
    CHECK_FALSE(r.findings[1].severity.has_value());
    CHECK(diags.size() == 4);
    CHECK_THROWS_AS(report_from_model(json::array(), nullptr), SchemaError);
}

TEST_CASE("report json round trip") {
    testing::ReportGenerator gen(3);
    for (int i = 0; i < 50; ++i) {
        auto r = merge({}, gen.report());
        if (!r.findings.empty()) r.findings[0].category = ClassificationPath{{{0, {"CWE-691"}}}, Terminal::Fallback};
        CHECK(report_from_json(json::parse(to_json(r).dump())) == r);
    }
    CHECK_THROWS_AS(report_from_json(json::parse(R"({"project_info": {}})")), SchemaError);
}

TEST_CASE("dedup_findings") {
    const auto out = dedup_findings({finding("Reentrancy in withdraw", Severity::High),
                                     finding("reentrancy  in withdraw.", Severity::Low)});
    REQUIRE(out.size() == 1);
    CHECK(out[0].severity == Severity::High); // earlier entry kept unchanged
    CHECK(dedup_findings({}).empty());
    CHECK(dedup_findings({finding("A"), finding("B")}).size() == 2);
    CHECK(normalize_title("  \xC3\x9C" "BER,  pr\xC3\xBC" "fung! ") == "\xC3\xBC" "ber pr\xC3\xBC" "fung");
}

TEST_CASE("merge") {
    testing::ReportGenerator gen(11);
    const auto x = merge({}, gen.report());
    CHECK(merge({}, x) == x);
    CHECK(merge(x, {}) == x);
    CHECK(merge(with_url("U1"), with_url("U2")).project_info.url == "U1");
    CHECK(merge(with_url(""), with_url("U2")).project_info.url == "U2");

    StructuredReport a, b;
    a.findings = {finding("Oracle manipulation")};
    b.findings = {finding("oracle manipulation!"), finding("Other")};
    const auto m = merge(a, b);
    REQUIRE(m.findings.size() == 2);
    CHECK(m.findings[0].id == 1);
    CHECK(m.findings[1].id == 2);
    CHECK(m.findings[1].title == "Other");
}

TEST_CASE("property: merge algebra") {
    testing::ReportGenerator gen(99);
    for (int trial = 0; trial < 300; ++trial) {
        const auto a = gen.report(), b = gen.report(), c = gen.report();
        const auto na = merge({}, a);
        CHECK(merge(a, {}) == na);
        CHECK(merge({}, na) == na);
        CHECK(merge(merge(a, b), c) == merge(a, merge(b, c)));
        const auto m = merge(merge(a, b), c);
        for (std::size_t i = 0; i < m.findings.size(); ++i) {
            CHECK(m.findings[i].id == static_cast<int>(i) + 1);
            for (std::size_t j = 0; j < i; ++j) {
                CHECK(normalize_title(m.findings[i].title) != normalize_title(m.findings[j].title));
            }
        }
    }
}

TEST_CASE("map_chunk") {
    ExtractConfig cfg;
    const auto c = make_chunk(0, "Some text");
    SUBCASE("boilerplate gives an empty partial") {
        ScriptedProvider p({model_report(kNoProject, json::array())});
        CHECK(map_chunk(c, p, cfg).empty());
    }
    SUBCASE("one finding") {
        ScriptedProvider p({model_report(kNoProject, {{{"title", "Reentrancy"}, {"severity", "high"}}})});
        const auto r = map_chunk(c, p, cfg);
        CHECK(r.findings.size() == 1);
        CHECK(r.project_info == ProjectInfo{});
    }
    SUBCASE("url and commit") {
        ScriptedProvider p({model_report({{"url", "https://github.com/a/b"}, {"commit_id", "a1b2c3d4"}},
                                         json::array())});
        const auto r = map_chunk(c, p, cfg);
        CHECK(r.project_info.url == "https://github.com/a/b");
        CHECK(r.project_info.commit_id == "a1b2c3d4");
        CHECK(r.findings.empty());
    }
    SUBCASE("one re-ask recovers") {
        ScriptedProvider p({"I cannot do that", "```json\n" + model_report(kNoProject, json::array()) + "\n```"});
        CHECK(map_chunk(c, p, cfg).empty());
        CHECK(p.calls() == 2);
        CHECK(p.requests()[1].user_prompt.find("could not be used") != std::string::npos);
    }
    SUBCASE("two bad answers is a map error") {
        ScriptedProvider p({"nope", "[1, 2]"});
        CHECK_THROWS_AS(map_chunk(c, p, cfg), MapError);
    }
    SUBCASE("prompt carries the chunk and heading path") {
        ScriptedProvider p({model_report(kNoProject, json::array())});
        Chunk hc{3, "body text", 3, {"Findings", "H-01"}};
        map_chunk(hc, p, cfg);
        const auto prompt = p.requests()[0].user_prompt;
        CHECK(prompt.find("body text") != std::string::npos);
        CHECK(prompt.find("Findings > H-01") != std::string::npos);
    }
}

TEST_CASE("reduce_group") {
    ExtractConfig cfg;
    StructuredReport p1 = with_url("https://github.com/a/b");
    StructuredReport p2;
    p2.project_info.chain = "ethereum";
    p2.findings = {finding("Reentrancy")};
    p2 = merge({}, p2);

    SUBCASE("singleton") {
        ScriptedProvider p({to_json(p2).dump()});
        CHECK(reduce_group({p2}, p, cfg) == p2);
    }
    SUBCASE("disjoint fields give the union") {
        ScriptedProvider p({to_json(merge(p1, p2)).dump()});
        const auto r = reduce_group({p1, p2}, p, cfg);
        CHECK(r.project_info.url == "https://github.com/a/b");
        CHECK(r.project_info.chain == "ethereum");
        CHECK(r.findings.size() == 1);
    }
    SUBCASE("model drops fields, mechanical merge restores them") {
        ScriptedProvider p({model_report(kNoProject, json::array())});
        CHECK(reduce_group({p1, p2}, p, cfg) == merge(p1, p2));
    }
    SUBCASE("garbage falls back to the mechanical merge") {
        ScriptedProvider p({"garbage", "more garbage"});
        CHECK(reduce_group({p1, p2}, p, cfg) == merge(p1, p2));
        CHECK(p.calls() == 2);
    }
}

TEST_CASE("extract_report") {
    const std::vector<Chunk> chunks{make_chunk(0, "a"), make_chunk(1, "b"), make_chunk(2, "c")};
    const std::string f1 = model_report(kNoProject, {{{"title", "First issue"}, {"severity", "low"}}});
    const std::string f2 = model_report({{"url", "https://github.com/a/b"}}, json::array());
    const std::string f3 = model_report(kNoProject, {{{"title", "Second issue"}, {"severity", "medium"}}});

    SUBCASE("one group, one reduce") {
        ExtractConfig cfg;
        ScriptedProvider p({f1, f2, f3, "garbage", "garbage"});
        ExtractStats stats;
        const auto r = extract_report(chunks, p, cfg, &stats);
        CHECK(stats.groups == 1);
        CHECK(p.calls() == 5);
        CHECK(r.findings.size() == 2);
        CHECK(r.project_info.url == "https://github.com/a/b");
    }
    SUBCASE("small budget forces two reduce calls") {
        ExtractConfig cfg;
        cfg.chunk_length = 80;
        IdentityReduceProvider p({f1, f2, f3});
        ExtractStats stats;
        const auto r = extract_report(chunks, p, cfg, &stats);
        CHECK(stats.groups >= 2);
        CHECK(p.reduces == stats.groups);
        CHECK(r.findings.size() == 2);
    }
    SUBCASE("partition placement does not change an identity reduce") {
        std::optional<StructuredReport> first;
        for (std::size_t budget : {40, 80, 120, 200, 4096}) {
            ExtractConfig cfg;
            cfg.chunk_length = budget;
            IdentityReduceProvider p({f1, f2, f3});
            const auto r = extract_report(chunks, p, cfg);
            if (!first) first = r;
            CHECK(r == *first);
        }
    }
    SUBCASE("a failed chunk contributes nothing") {
        ExtractConfig cfg;
        ScriptedProvider p({f1, "x", "y", f3, to_json(report_from_model(json::parse(f1), nullptr)).dump()});
        ExtractStats stats;
        // f1 mapped, chunk 1 fails twice, f3 mapped, reduce answer lacks f3
        // which the mechanical merge restores.
        const auto r = extract_report(chunks, p, cfg, &stats);
        CHECK(stats.failed_chunks == 1);
        CHECK(r.findings.size() == 2);
    }
    SUBCASE("all chunks failing is an extraction error") {
        ExtractConfig cfg;
        ScriptedProvider p({"a", "b", "c", "d", "e", "f"});
        CHECK_THROWS_AS(extract_report(chunks, p, cfg), ExtractionError);
    }
    SUBCASE("intermediates are persisted") {
        const auto dir = fs::temp_directory_path() / "auditcwe_extract_test";
        fs::remove_all(dir);
        ExtractConfig cfg;
        cfg.work_dir = dir;
        ScriptedProvider p({f1, f2, f3, "garbage", "garbage"});
        extract_report(chunks, p, cfg);
        CHECK(fs::exists(dir / "partials" / "chunk-0000.json"));
        CHECK(fs::exists(dir / "partials" / "chunk-0002.json"));
        CHECK(fs::exists(dir / "groups" / "group-000.json"));
        fs::remove_all(dir);
    }
}
