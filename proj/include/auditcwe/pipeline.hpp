#pragma once

// Batch orchestration: configuration, per-report stages over a work
// directory, and the monolithic build that chains them.

#include "auditcwe/analysis.hpp"
#include "auditcwe/classifier.hpp"
#include "auditcwe/extractor.hpp"
#include "auditcwe/fetcher.hpp"
#include "auditcwe/ingest.hpp"
#include "auditcwe/llm.hpp"
#include "auditcwe/taxonomy.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

enum class ProviderKind { Http, Mock };

/// A llama.cpp-style OpenAI-compatible server on localhost.
inline ProviderConfig default_provider() {
    ProviderConfig p;
    p.endpoint = "http://127.0.0.1:8080/v1/chat/completions";
    return p;
}

struct PipelineConfig {
    std::size_t chunk_length{kDefaultChunkLength};
    std::string tokenizer{"chars/4"};
    int k{1};
    int max_depth{6};
    int selection_retries{3};
    double temperature{kDefaultTemperature};
    std::string model_name{"llama3:70b-instruct-q8_0"};

    ProviderKind provider{ProviderKind::Http};
    ProviderConfig http{default_provider()};
    std::optional<std::filesystem::path> mock_script;
    std::optional<std::filesystem::path> prompts_dir;
    std::optional<ConverterConfig> converter;

    std::filesystem::path taxonomy;
    std::filesystem::path hardware_list;
    std::filesystem::path mapping_notes;

    std::filesystem::path work_dir{"work"};
    std::filesystem::path out_dir{"out"};
    bool force{false};
    int parallel{1};     // reports in flight
    int map_parallel{1}; // chunk map calls in flight within a report

    FetchOptions fetch;
    std::vector<std::string> git_config; // extra `git -c key=value` pairs
    ExplorerConfig explorers{ExplorerConfig::defaults()};
    SeverityMapping severity{SeverityMapping::defaults()};

    /// Throws ConfigError naming the first bad field.  Provider settings are
    /// checked by make_provider, so model-free stages run without them.
    void validate() const;
};

/// Directory holding cwe/ and prompts/ when no path is configured:
/// $AUDITCWE_DATA_DIR, else the source tree's data/.
std::filesystem::path default_data_dir();

/// Defaults with taxonomy paths under default_data_dir().
PipelineConfig default_config();

/// Overlays a JSON config object.  Relative paths resolve against `base_dir`.
void apply_config_json(PipelineConfig& config, const nlohmann::json& j, const std::filesystem::path& base_dir);
void apply_config_file(PipelineConfig& config, const std::filesystem::path& path);

/// Overlays AUDITCWE_* variables and <CHAIN>SCAN_API_KEY explorer keys.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
void apply_environment(PipelineConfig& config, const EnvLookup& lookup);
EnvLookup process_environment();

std::unique_ptr<CompletionProvider> make_provider(const PipelineConfig& config);

/// Taxonomy loaded, annotated with mapping notes and hardware-pruned.
CweTree load_pruned_taxonomy(const PipelineConfig& config);

/// Shared, read-only state for one invocation.
struct PipelineContext {
    PipelineConfig config;
    CweTree tree;
    PromptLibrary prompts;

    static PipelineContext load(PipelineConfig config, bool need_taxonomy = true);
};

/// work/<stem>/ for a report path.
std::filesystem::path report_work_dir(const PipelineConfig& config, const std::filesystem::path& report);

// Single stages.  Each reads the previous stage's files from the report's
// work directory and throws StageDependencyError naming any that are missing.
std::filesystem::path stage_chunk(const PipelineContext& ctx, const std::filesystem::path& report);
std::filesystem::path stage_extract(const PipelineContext& ctx, const std::filesystem::path& report,
                                    CompletionProvider& provider);
std::filesystem::path stage_classify(const PipelineContext& ctx, const std::filesystem::path& report,
                                     CompletionProvider& provider);
/// Returns the written record.json path.
std::filesystem::path stage_fetch(const PipelineContext& ctx, const std::filesystem::path& report,
                                  RepoHostClient& repos, ExplorerClient& explorer);

struct ReportOutcome {
    std::filesystem::path report;
    std::optional<std::filesystem::path> record; // set on success
    std::string failed_stage;                    // set on failure
    std::string error;
};

struct BuildSummary {
    std::vector<ReportOutcome> reports;
    std::map<std::string, int> stage_failures;

    int ok() const;
    int failed() const;
    nlohmann::ordered_json to_json() const;
};

/// Runs every stage for every report.  Failures stay with their report.
/// Throws UsageError for an empty list.  A provider that needs ordered calls
/// forces one report at a time.
BuildSummary run_build(const PipelineContext& ctx, const std::vector<std::filesystem::path>& reports,
                       CompletionProvider& provider, RepoHostClient& repos, ExplorerClient& explorer);

/// record.json files under the given files or directories, sorted.
std::vector<std::filesystem::path> find_records(const std::vector<std::filesystem::path>& inputs);

struct AnalysisOutput {
    std::vector<CategoryStats> stats;
    nlohmann::ordered_json treemap;
    int records{0};
    int unscored{0};
};

AnalysisOutput run_analyze(const PipelineContext& ctx, const std::vector<std::filesystem::path>& inputs);

/// Comma-separated rows, blank lines skipped.  Quoted fields may contain commas.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

/// Two label columns, one row per item.  The first row is a header unless
/// `header` is false.
double run_alpha(const std::filesystem::path& csv, bool header = true);

struct MetricsRow {
    std::string name;
    Scores scores;
};

/// Header-driven: tp/fp/fn columns give per-row scores; precision/recall/f1
/// columns are taken as given.  Either way a macro-average row is appended.
std::vector<MetricsRow> run_metrics(const std::filesystem::path& csv);
std::string format_metrics(const std::vector<MetricsRow>& rows);

} // namespace auditcwe
