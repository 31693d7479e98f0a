// Command-line front end: `auditcwe build reports/*.md` and single stages.

#include "auditcwe/errors.hpp"
#include "auditcwe/json_io.hpp"
#include "auditcwe/pipeline.hpp"

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace fs = std::filesystem;
using namespace auditcwe;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Flags left unset keep whatever the environment or config file chose.
struct Flags {
    std::optional<fs::path> config_file;
    std::optional<std::size_t> chunk_length;
    std::optional<int> k;
    std::optional<double> temperature;
    std::optional<std::string> provider;
    std::optional<fs::path> mock_script;
    std::optional<std::string> model;
    std::optional<std::string> endpoint;
    std::optional<fs::path> taxonomy;
    std::optional<fs::path> out;
    std::optional<fs::path> work;
    std::optional<int> parallel;
    std::vector<std::string> extensions;
    std::vector<std::string> git_config;
    bool force{false};
};

PipelineConfig resolve_config(const Flags& f) {
    auto c = default_config();
    if (f.config_file) apply_config_file(c, *f.config_file);
    apply_environment(c, process_environment());

    if (f.chunk_length) c.chunk_length = *f.chunk_length;
    if (f.k) c.k = *f.k;
    if (f.temperature) c.temperature = *f.temperature;
    if (f.provider) {
        if (*f.provider == "mock") {
            c.provider = ProviderKind::Mock;
        } else if (*f.provider == "http") {
            c.provider = ProviderKind::Http;
        } else {
            throw ConfigError("--provider must be http or mock");
        }
    }
    if (f.mock_script) {
        c.mock_script = *f.mock_script;
        if (!f.provider) c.provider = ProviderKind::Mock;
    }
    if (f.model) c.model_name = *f.model;
    if (f.endpoint) c.http.endpoint = *f.endpoint;
    if (f.taxonomy) c.taxonomy = *f.taxonomy;
    if (f.out) c.out_dir = *f.out;
    if (f.work) c.work_dir = *f.work;
    if (f.parallel) c.parallel = *f.parallel;
    if (!f.extensions.empty()) c.fetch.extensions = f.extensions;
    c.git_config.insert(c.git_config.end(), f.git_config.begin(), f.git_config.end());
    if (f.force) c.force = true;
    return c;
}

// Runs `stage` over each report; failures are logged and counted.
template <class Fn>
int for_each_report(const std::vector<fs::path>& reports, const char* stage, Fn&& fn) {
    int failed = 0;
    for (const auto& r : reports) {
        try {
            std::cout << fn(r).string() << "\n";
        } catch (const std::exception& e) {
            spdlog::error("{}: {} failed: {}", r.string(), stage, e.what());
            ++failed;
        }
    }
    return failed == 0 ? 0 : kExitFailure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Turn smart-contract audit reports into a CWE-labeled dataset."};
    app.require_subcommand(1);
    app.fallthrough();

    Flags flags;
    std::string log_level = "info";
    app.add_option("--config", flags.config_file, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();
    app.add_option("--chunk-length", flags.chunk_length, "Token budget per chunk (default 4096)");
    app.add_option("--k", flags.k, "Children selected per taxonomy level (default 1)");
    app.add_option("--temperature", flags.temperature, "Sampling temperature (default 0.8)");
    app.add_option("--provider", flags.provider, "http or mock");
    app.add_option("--mock-script", flags.mock_script, "JSON array of canned model answers")->check(CLI::ExistingFile);
    app.add_option("--model", flags.model, "Model name sent to the provider");
    app.add_option("--endpoint", flags.endpoint, "Chat-completions URL");
    app.add_option("--taxonomy", flags.taxonomy, "CWE-1000 JSON");
    app.add_option("--out", flags.out, "Dataset output directory (default out)");
    app.add_option("--work", flags.work, "Intermediate artifact directory (default work)");
    app.add_option("--parallel", flags.parallel, "Reports processed concurrently (default 1)");
    app.add_option("--extension", flags.extensions, "Source file extension to keep (repeatable, default .sol)");
    app.add_option("--git-config", flags.git_config, "Extra git -c key=value (repeatable)");
    app.add_flag("--force", flags.force, "Replace existing records");

    std::vector<fs::path> inputs;
    auto* build = app.add_subcommand("build", "Run every stage for each report");
    build->add_option("reports", inputs, "Report files")->check(CLI::ExistingFile);
    auto* chunk_cmd = app.add_subcommand("chunk", "Split reports into token-bounded chunks");
    chunk_cmd->add_option("reports", inputs)->required()->check(CLI::ExistingFile);
    auto* extract_cmd = app.add_subcommand("extract", "Map-reduce chunks into a structured report");
    extract_cmd->add_option("reports", inputs)->required();
    auto* classify_cmd = app.add_subcommand("classify", "Classify each finding against the CWE tree");
    classify_cmd->add_option("reports", inputs)->required();
    auto* fetch_cmd = app.add_subcommand("fetch", "Retrieve audited sources and write the record");
    fetch_cmd->add_option("reports", inputs)->required();

    fs::path analysis_dir;
    auto* analyze_cmd = app.add_subcommand("analyze", "Category frequencies, mean CVSS and a treemap");
    analyze_cmd->add_option("records", inputs, "record.json files or directories (default: --out)");
    analyze_cmd->add_option("--output-dir", analysis_dir, "Where to write the JSON (default <work>/analysis)");

    fs::path csv;
    bool no_header = false;
    auto* alpha_cmd = app.add_subcommand("alpha", "Krippendorff's alpha of two label columns");
    alpha_cmd->add_option("csv", csv)->required()->check(CLI::ExistingFile);
    alpha_cmd->add_flag("--no-header", no_header, "The first row is data");

    bool as_json = false;
    auto* metrics_cmd = app.add_subcommand("metrics", "Precision, recall and F1 from a CSV");
    metrics_cmd->add_option("csv", csv)->required()->check(CLI::ExistingFile);
    metrics_cmd->add_flag("--json", as_json, "Print JSON instead of a table");

    CLI11_PARSE(app, argc, argv);

    auto logger = spdlog::stderr_color_mt("auditcwe");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (alpha_cmd->parsed()) {
            std::cout << fmt::format("{:.6f}", run_alpha(csv, !no_header)) << "\n";
            return 0;
        }
        if (metrics_cmd->parsed()) {
            const auto rows = run_metrics(csv);
            if (as_json) {
                nlohmann::ordered_json j = nlohmann::ordered_json::array();
                for (const auto& r : rows) {
                    j.push_back({{"name", r.name},
                                 {"precision", r.scores.precision},
                                 {"recall", r.scores.recall},
                                 {"f1", r.scores.f1}});
                }
                std::cout << dump_json(j);
            } else {
                std::cout << format_metrics(rows);
            }
            return 0;
        }

        auto config = resolve_config(flags);
        const bool need_tree = build->parsed() || classify_cmd->parsed() || analyze_cmd->parsed();
        const auto ctx = PipelineContext::load(std::move(config), need_tree);
        const auto& c = ctx.config;

        if (analyze_cmd->parsed()) {
            if (inputs.empty()) inputs.push_back(c.out_dir);
            const auto result = run_analyze(ctx, inputs);
            const auto dir = analysis_dir.empty() ? c.work_dir / "analysis" : analysis_dir;
            nlohmann::ordered_json stats = nlohmann::ordered_json::array();
            for (const auto& s : result.stats) {
                stats.push_back({{"cwe_id", s.cwe_id}, {"frequency", s.frequency}, {"mean_cvss", s.mean_cvss}});
            }
            write_file_atomic(dir / "category_stats.json", dump_json(stats));
            write_file_atomic(dir / "treemap.json", dump_json(result.treemap));
            std::cout << fmt::format("{} record(s), {} finding(s) without severity\n", result.records,
                                     result.unscored);
            for (const auto& s : result.stats) {
                std::cout << fmt::format("{:<14} {:>6}  {:>5.2f}\n", s.cwe_id, s.frequency, s.mean_cvss);
            }
            return 0;
        }

        GitCliClient repos(c.git_config);
        EtherscanClient explorer(c.explorers);
        if (chunk_cmd->parsed()) return for_each_report(inputs, "chunk", [&](const fs::path& r) { return stage_chunk(ctx, r); });
        if (fetch_cmd->parsed()) {
            return for_each_report(inputs, "fetch", [&](const fs::path& r) {
                return stage_fetch(ctx, r, repos, explorer);
            });
        }

        auto provider = make_provider(c);
        if (extract_cmd->parsed()) {
            return for_each_report(inputs, "extract", [&](const fs::path& r) { return stage_extract(ctx, r, *provider); });
        }
        if (classify_cmd->parsed()) {
            return for_each_report(inputs, "classify", [&](const fs::path& r) { return stage_classify(ctx, r, *provider); });
        }

        const auto summary = run_build(ctx, inputs, *provider, repos, explorer);
        std::cout << dump_json(summary.to_json());
        return summary.ok() >= 1 ? 0 : kExitFailure;
    } catch (const UsageError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const ConfigError& e) {
        spdlog::error("configuration: {}", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitFailure;
    }
}
