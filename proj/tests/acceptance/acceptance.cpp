// Acceptance gate: one PASS/FAIL line per criterion, each with its time limit.
// Exit status is non-zero when any criterion fails.

#include "../support/alpha_oracle.hpp"
#include "../support/chunk_checks.hpp"
#include "../support/e2e.hpp"
#include "../support/reference_tables.hpp"
#include "../support/report_gen.hpp"
#include "auditcwe/analysis.hpp"
#include "auditcwe/classifier.hpp"
#include "auditcwe/extractor.hpp"
#include "auditcwe/fetcher.hpp"
#include "auditcwe/json_io.hpp"
#include "auditcwe/pipeline.hpp"
#include "auditcwe/taxonomy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

using namespace auditcwe;
using namespace auditcwe::testing;
namespace fs = std::filesystem;

namespace {

const std::string kSource = AUDITCWE_SOURCE_DIR;
const std::string kFixtures = AUDITCWE_FIXTURES;

struct Outcome {
    bool ok{true};
    std::string detail;

    void expect(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

struct Criterion {
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
};

Outcome metrics_reproduction() {
    Outcome o;
    double worst = 0.0;
    for (const auto& row : kToolRows) {
        const auto s = prf1({row.tp, row.fp, row.fn});
        for (const auto& [got, want, col] : {std::tuple{s.precision, row.precision, "P"},
                                             std::tuple{s.recall, row.recall, "R"}, std::tuple{s.f1, row.f1, "F1"}}) {
            const double err = std::abs(got - want);
            worst = std::max(worst, err);
            o.expect(err <= 0.01 + 1e-9, fmt::format("{} {} = {:.4f}, table {:.2f}", row.tool, col, got, want));
        }
    }
    if (o.ok) o.detail = fmt::format("{} tools, max deviation {:.4f} points", std::size(kToolRows), worst);
    return o;
}

Outcome macro_average_reproduction() {
    Outcome o;
    std::vector<Scores> rows;
    for (const auto& r : kEntityRows) rows.push_back({r.precision, r.recall, r.f1});
    const auto avg = macro_average(rows);
    o.expect(std::abs(avg.precision - kEntityAverage.precision) <= 0.05, fmt::format("precision {:.3f}", avg.precision));
    o.expect(std::abs(avg.recall - kEntityAverage.recall) <= 0.05, fmt::format("recall {:.3f}", avg.recall));
    o.expect(std::abs(avg.f1 - kEntityAverage.f1) <= 0.05, fmt::format("f1 {:.3f}", avg.f1));
    if (o.ok) o.detail = fmt::format("P {:.3f} R {:.3f} F1 {:.3f}", avg.precision, avg.recall, avg.f1);
    return o;
}

Outcome tot_worked_example() {
    Outcome o;
    const auto tree = load_taxonomy_file(kFixtures + "/taxonomy_cwe691.json", {{"CWE-362", true}});
    Finding f;
    f.id = 1;
    f.title = "Front-running in Router.swap";
    f.description = "Two transactions race for the same pool state; the later one observes a stale price.";
    ScriptedProvider p({R"(["CWE-691"])", R"(["CWE-362"])", R"(["CWE-362"])"});
    const auto path = classify(f, tree, p);
    o.expect(path.flattened() == std::vector<std::string>{"CWE-691", "CWE-362"}, "path differs");
    o.expect(path.terminal == Terminal::Fallback, "terminal is not fallback");
    o.expect(p.calls() == 3, fmt::format("{} provider calls", p.calls()));
    if (o.ok) o.detail = "CWE-691 -> CWE-362, fallback, 3 calls";
    return o;
}

Outcome taxonomy_integrity() {
    Outcome o;
    const auto tree = load_taxonomy_file(kSource + "/data/cwe/cwe1000.json");
    const auto hw = load_id_list(kSource + "/data/cwe/hardware.json");
    o.expect(tree.pillar_ids().size() == 10, fmt::format("{} pillars", tree.pillar_ids().size()));
    o.expect(hw.size() == 108, fmt::format("hardware list has {} entries", hw.size()));
    const auto pruned = prune_hardware(tree, hw);
    o.expect(tree.size() - pruned.size() == 108, fmt::format("node count fell by {}", tree.size() - pruned.size()));
    for (const auto& n : pruned.nodes()) {
        for (const auto& c : n.child_ids) {
            const auto* child = pruned.find(c);
            o.expect(child && std::count(child->parent_ids.begin(), child->parent_ids.end(), n.id) == 1,
                     n.id + " -> " + c + " has no back edge");
        }
        for (const auto& par : n.parent_ids) {
            const auto* parent = pruned.find(par);
            o.expect(parent && std::count(parent->child_ids.begin(), parent->child_ids.end(), n.id) == 1,
                     n.id + " <- " + par + " has no forward edge");
        }
    }
    if (o.ok) o.detail = fmt::format("10 pillars, {} -> {} nodes, edges consistent", tree.size(), pruned.size());
    return o;
}

Outcome chunker_properties() {
    Outcome o;
    DocumentGenerator gen(777);
    std::size_t total_chunks = 0;
    for (int trial = 0; trial < 1000 && o.ok; ++trial) {
        const auto doc = gen.document();
        const auto budget = gen.chunk_length();
        const auto chunks = chunk(segment(doc), budget);
        std::string joined;
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            const auto where = fmt::format("doc {} chunk {}", trial, i);
            o.expect(chunks[i].index == static_cast<int>(i), where + ": index out of order");
            o.expect(count_tokens(chunks[i].text) <= budget, where + ": over budget");
            o.expect(is_valid_utf8(chunks[i].text), where + ": invalid UTF-8");
            if (i > 0) o.expect(boundary_between(chunks[i - 1].text, chunks[i].text), where + ": splits a cluster");
            joined += chunks[i].text;
        }
        o.expect(without_whitespace(joined) == without_whitespace(doc), fmt::format("doc {}: content lost", trial));
        total_chunks += chunks.size();
    }
    if (o.ok) o.detail = fmt::format("1000 documents, {} chunks", total_chunks);
    return o;
}

Outcome merge_algebra() {
    Outcome o;
    ReportGenerator gen(4242);
    const auto severity_ok = [](const StructuredReport& r) {
        return std::all_of(r.findings.begin(), r.findings.end(), [](const Finding& f) {
            return !f.severity ||
                   std::find(std::begin(kAllSeverities), std::end(kAllSeverities), *f.severity) != std::end(kAllSeverities);
        });
    };
    for (int trial = 0; trial < 1000 && o.ok; ++trial) {
        const auto a = gen.report(), b = gen.report(), c = gen.report();
        const auto where = fmt::format("triple {}", trial);
        const auto na = merge({}, a);
        o.expect(merge(a, {}) == na && merge({}, na) == na, where + ": identity");
        const auto left = merge(merge(a, b), c);
        o.expect(left == merge(a, merge(b, c)), where + ": associativity");
        o.expect(severity_ok(left), where + ": severity outside the enum");
        std::set<std::string> titles;
        for (std::size_t i = 0; i < left.findings.size(); ++i) {
            o.expect(left.findings[i].id == static_cast<int>(i) + 1, where + ": id gap");
            o.expect(titles.insert(normalize_title(left.findings[i].title)).second, where + ": duplicate title");
        }
    }
    if (o.ok) o.detail = "1000 triples";
    return o;
}

Outcome alpha_oracle_equivalence() {
    Outcome o;
    std::mt19937 rng(99);
    int sets = 0;
    double worst = 0.0;
    while (sets < 200) {
        const int n = 2 + static_cast<int>(rng() % 60);
        const int k = 2 + static_cast<int>(rng() % 6);
        std::vector<std::string> a, b;
        for (int i = 0; i < n; ++i) {
            a.push_back("CWE-" + std::to_string(rng() % k));
            b.push_back(rng() % 2 ? a.back() : "CWE-" + std::to_string(rng() % k));
        }
        std::set<std::string> distinct(a.begin(), a.end());
        distinct.insert(b.begin(), b.end());
        if (distinct.size() < 2) continue; // alpha is undefined without variation
        const double err = std::abs(krippendorff_alpha(a, b) - alpha_oracle(a, b));
        worst = std::max(worst, err);
        o.expect(err < 1e-9, fmt::format("set {}: deviation {}", sets, err));
        ++sets;
    }
    const std::vector<std::string> same{"CWE-362", "CWE-190", "CWE-284", "CWE-362"};
    o.expect(krippendorff_alpha(same, same) == 1.0, "perfect agreement is not exactly 1.0");
    if (o.ok) o.detail = fmt::format("200 sets, max deviation {:.2e}, perfect agreement 1.0", worst);
    return o;
}

Outcome e2e_determinism() {
    Outcome o;
    const auto golden = e2e_golden(kFixtures);
    std::vector<std::string> answers;
    for (const auto& v : read_json_file(kFixtures + "/e2e/mock_script.json")) answers.push_back(v.get<std::string>());
    for (int run = 0; run < 3; ++run) {
        const auto root = fresh_dir("auditcwe_acceptance_e2e_" + std::to_string(run));
        const auto ctx = PipelineContext::load(e2e_config(kFixtures, root));
        GitCliClient repos(ctx.config.git_config);
        EtherscanClient explorer(ExplorerConfig{});
        ScriptedProvider provider(answers);
        const auto summary = run_build(ctx, {e2e_report(kFixtures)}, provider, repos, explorer);
        o.expect(summary.ok() == 1, fmt::format("run {}: {}", run,
                                                summary.reports[0].error.empty() ? "no record" : summary.reports[0].error));
        if (!o.ok) break;
        o.expect(read_text_file(*summary.reports[0].record) == golden, fmt::format("run {} differs from golden", run));
        fs::remove_all(root);
    }
    if (o.ok) o.detail = "3 runs byte-identical to golden record.json";
    return o;
}

Outcome fetcher_safety() {
    Outcome o;
    std::mt19937 rng(8080);
    static const char* const kParts[] = {"..", ".", "", "a", "x.sol", "~", "C:", "%2e%2e", "...", "/", "\\", "..\\.."};
    const auto base = fresh_dir("auditcwe_acceptance_escape");
    const auto out = base / "out";
    int files = 0;
    for (int trial = 0; trial < 200; ++trial) {
        SourceBundle bundle;
        for (int i = 0; i < 8; ++i) {
            std::string p = rng() % 3 == 0 ? "/" : "";
            for (int k = 0, n = 1 + static_cast<int>(rng() % 7); k < n; ++k) {
                p += kParts[rng() % std::size(kParts)];
                p += rng() % 2 ? "/" : "\\";
            }
            p += "f" + std::to_string(i) + ".sol";
            bundle.files.push_back({p, "contract C {}"});
            ++files;
        }
        DatasetRecord rec;
        rec.path = "r" + std::to_string(trial) + ".md";
        write_record(rec, bundle, out, true);
    }
    for (const auto& e : fs::recursive_directory_iterator(base)) {
        o.expect(is_within(out, e.path()), e.path().string() + " escaped");
    }
    fs::remove_all(base);
    if (o.ok) o.detail = fmt::format("{} adversarial paths, none outside the output directory", files);
    return o;
}

} // namespace

int main() {
    spdlog::set_level(spdlog::level::off);
    const std::vector<Criterion> criteria{
        {"metrics reproduction (tool table P/R/F1 within 0.01)", 1.0, metrics_reproduction},
        {"macro-average reproduction (entity table within 0.05)", 1.0, macro_average_reproduction},
        {"tree-of-thoughts worked example", 1.0, tot_worked_example},
        {"taxonomy integrity (10 pillars, -108 nodes, consistent)", 5.0, taxonomy_integrity},
        {"chunker property suite (1000 documents)", 30.0, chunker_properties},
        {"merge algebra property suite (1000 triples)", 10.0, merge_algebra},
        {"krippendorff alpha oracle equivalence (200 sets, 1e-9)", 10.0, alpha_oracle_equivalence},
        {"end-to-end determinism (3 runs equal golden)", 10.0, e2e_determinism},
        {"fetcher path safety", 5.0, fetcher_safety},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.ok && secs >= c.limit_s) {
            o.ok = false;
            o.detail = fmt::format("took {:.3f} s, limit {:.0f} s", secs, c.limit_s);
        }
        if (!o.ok) ++failed;
        std::cout << fmt::format("{} {} [{:.3f} s < {:.0f} s] {}\n", o.ok ? "PASS" : "FAIL", c.name, secs, c.limit_s,
                                 o.detail);
    }
    std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
