#include "auditcwe/pipeline.hpp"

#include "auditcwe/errors.hpp"
#include "auditcwe/json_io.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <boost/tokenizer.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace auditcwe {

namespace {

constexpr const char* kChunksFile = "chunks.json";
constexpr const char* kReportFile = "report.json";
constexpr const char* kClassificationsFile = "classifications.json";
constexpr const char* kTraceFile = "trace.jsonl";

void write_json(const fs::path& path, const ordered_json& j) { write_file_atomic(path, dump_json(j)); }

json require_json(const fs::path& path, std::string_view stage) {
    if (!fs::exists(path)) {
        throw StageDependencyError(std::string(stage) + " needs " + path.string() +
                                   ", which does not exist; run the earlier stage first");
    }
    return read_json_file(path);
}

template <class T>
T get_field(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_relative() ? base / p : p; }

} // namespace

void PipelineConfig::validate() const {
    if (chunk_length < 1) throw ConfigError("chunk_length must be >= 1");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (selection_retries < 0) throw ConfigError("selection_retries must be >= 0");
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw ConfigError("temperature must be within [0, 2]");
    if (parallel < 1) throw ConfigError("parallel must be >= 1");
    if (map_parallel < 1) throw ConfigError("map_parallel must be >= 1");
    if (fetch.extensions.empty()) throw ConfigError("extensions must not be empty");
    if (fetch.retry_limit < 0) throw ConfigError("fetch retry_limit must be >= 0");
    Tokenizer::from_name(tokenizer);
    severity.validate();
    for (const auto& kv : git_config) {
        if (kv.find('=') == std::string::npos || kv.front() == '-') {
            throw ConfigError("git_config entries must look like key=value, got '" + kv + "'");
        }
    }
}

fs::path default_data_dir() {
    if (const char* dir = std::getenv("AUDITCWE_DATA_DIR"); dir && *dir) return dir;
    return AUDITCWE_DEFAULT_DATA_DIR;
}

PipelineConfig default_config() {
    PipelineConfig c;
    const auto data = default_data_dir();
    c.taxonomy = data / "cwe" / "cwe1000.json";
    c.hardware_list = data / "cwe" / "hardware.json";
    c.mapping_notes = data / "cwe" / "mapping_notes.json";
    return c;
}

void apply_config_json(PipelineConfig& c, const json& j, const fs::path& base) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "chunk_length") {
            const auto n = get_field<long long>(j, "chunk_length");
            if (n < 1) throw ConfigError("chunk_length must be >= 1");
            c.chunk_length = static_cast<std::size_t>(n);
        } else if (key == "tokenizer") {
            c.tokenizer = get_field<std::string>(j, "tokenizer");
        } else if (key == "k") {
            c.k = get_field<int>(j, "k");
        } else if (key == "max_depth") {
            c.max_depth = get_field<int>(j, "max_depth");
        } else if (key == "selection_retries") {
            c.selection_retries = get_field<int>(j, "selection_retries");
        } else if (key == "temperature") {
            c.temperature = get_field<double>(j, "temperature");
        } else if (key == "model") {
            c.model_name = get_field<std::string>(j, "model");
        } else if (key == "provider") {
            const auto kind = get_field<std::string>(j, "provider");
            if (kind == "http") {
                c.provider = ProviderKind::Http;
            } else if (kind == "mock") {
                c.provider = ProviderKind::Mock;
            } else {
                throw ConfigError("provider must be http or mock, got '" + kind + "'");
            }
        } else if (key == "endpoint") {
            c.http.endpoint = get_field<std::string>(j, "endpoint");
        } else if (key == "api_key") {
            c.http.api_key = get_field<std::string>(j, "api_key");
        } else if (key == "retry_limit") {
            c.http.retry_limit = get_field<int>(j, "retry_limit");
        } else if (key == "request_timeout_ms") {
            c.http.request_timeout = std::chrono::milliseconds(get_field<long long>(j, "request_timeout_ms"));
        } else if (key == "rate_limit") {
            c.http.rate_limit.requests = get_field<int>(value, "requests");
            c.http.rate_limit.interval = std::chrono::milliseconds(get_field<long long>(value, "interval_ms"));
        } else if (key == "mock_script") {
            c.mock_script = resolve(base, get_field<std::string>(j, "mock_script"));
        } else if (key == "prompts_dir") {
            c.prompts_dir = resolve(base, get_field<std::string>(j, "prompts_dir"));
        } else if (key == "converter") {
            c.converter = ConverterConfig{get_field<std::string>(j, "converter")};
        } else if (key == "taxonomy") {
            c.taxonomy = resolve(base, get_field<std::string>(j, "taxonomy"));
        } else if (key == "hardware_list") {
            c.hardware_list = resolve(base, get_field<std::string>(j, "hardware_list"));
        } else if (key == "mapping_notes") {
            c.mapping_notes = resolve(base, get_field<std::string>(j, "mapping_notes"));
        } else if (key == "work") {
            c.work_dir = resolve(base, get_field<std::string>(j, "work"));
        } else if (key == "out") {
            c.out_dir = resolve(base, get_field<std::string>(j, "out"));
        } else if (key == "force") {
            c.force = get_field<bool>(j, "force");
        } else if (key == "parallel") {
            c.parallel = get_field<int>(j, "parallel");
        } else if (key == "map_parallel") {
            c.map_parallel = get_field<int>(j, "map_parallel");
        } else if (key == "extensions") {
            c.fetch.extensions = get_field<std::vector<std::string>>(j, "extensions");
        } else if (key == "git_config") {
            c.git_config = get_field<std::vector<std::string>>(j, "git_config");
        } else if (key == "explorers") {
            if (!value.is_object()) throw ConfigError("explorers must map chain names to {base_url, api_key}");
            for (const auto& [chain, e] : value.items()) {
                auto& endpoint = c.explorers.chains[canonical_chain(chain)];
                if (e.contains("base_url")) endpoint.base_url = get_field<std::string>(e, "base_url");
                if (e.contains("api_key")) endpoint.api_key = get_field<std::string>(e, "api_key");
                if (endpoint.base_url.empty()) throw ConfigError("explorer for " + chain + " has no base_url");
            }
        } else if (key == "severity_scores") {
            c.severity = SeverityMapping::from_json(value);
        } else {
            throw ConfigError("unknown config field '" + key + "'");
        }
    }
}

void apply_config_file(PipelineConfig& config, const fs::path& path) {
    json j;
    try {
        j = read_json_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    } catch (const SchemaError& e) {
        throw ConfigError(e.what());
    }
    apply_config_json(config, j, fs::absolute(path).parent_path());
}

void apply_environment(PipelineConfig& c, const EnvLookup& lookup) {
    if (auto v = lookup("AUDITCWE_API_KEY")) c.http.api_key = *v;
    if (auto v = lookup("AUDITCWE_ENDPOINT")) c.http.endpoint = *v;
    if (auto v = lookup("AUDITCWE_MODEL")) c.model_name = *v;
    if (auto v = lookup("AUDITCWE_TAXONOMY")) c.taxonomy = *v;
    if (auto v = lookup("AUDITCWE_WORK")) c.work_dir = *v;
    if (auto v = lookup("AUDITCWE_OUT")) c.out_dir = *v;
    for (auto& [chain, endpoint] : c.explorers.chains) {
        if (auto v = lookup(explorer_key_env(chain))) endpoint.api_key = *v;
    }
}

EnvLookup process_environment() {
    return [](const std::string& name) -> std::optional<std::string> {
        const char* v = std::getenv(name.c_str());
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    };
}

std::unique_ptr<CompletionProvider> make_provider(const PipelineConfig& config) {
    if (config.provider == ProviderKind::Mock) {
        if (!config.mock_script) throw ConfigError("the mock provider needs a mock script");
        return ScriptedProvider::from_file(*config.mock_script);
    }
    return std::make_unique<HttpProvider>(config.http); // validates the endpoint settings
}

CweTree load_pruned_taxonomy(const PipelineConfig& config) {
    MappingNotes notes;
    if (!config.mapping_notes.empty()) notes = load_mapping_notes(config.mapping_notes);
    auto tree = load_taxonomy_file(config.taxonomy, notes);
    if (config.hardware_list.empty()) return tree;
    const auto hardware = load_id_list(config.hardware_list);
    return prune_hardware(tree, hardware);
}

PipelineContext PipelineContext::load(PipelineConfig config, bool need_taxonomy) {
    config.validate();
    PipelineContext ctx{std::move(config), {}, PromptLibrary::builtin()};
    if (ctx.config.prompts_dir) ctx.prompts = PromptLibrary::from_directory(*ctx.config.prompts_dir);
    if (need_taxonomy) ctx.tree = load_pruned_taxonomy(ctx.config);
    return ctx;
}

fs::path report_work_dir(const PipelineConfig& config, const fs::path& report) {
    return config.work_dir / report.stem();
}

fs::path stage_chunk(const PipelineContext& ctx, const fs::path& report) {
    const auto& c = ctx.config;
    const auto text = load_document(report, c.converter);
    const auto segments = segment(text);
    const auto chunks = chunk(segments, c.chunk_length, Tokenizer::from_name(c.tokenizer));

    ordered_json out{{"document", report.filename().string()},
                     {"chunk_length", c.chunk_length},
                     {"tokenizer", c.tokenizer},
                     {"chunks", json::array()}};
    for (const auto& ch : chunks) out["chunks"].push_back(ordered_json(to_json(ch)));
    const auto path = report_work_dir(c, report) / kChunksFile;
    write_json(path, out);
    spdlog::info("{}: {} chunk(s)", report.filename().string(), chunks.size());
    return path;
}

fs::path stage_extract(const PipelineContext& ctx, const fs::path& report, CompletionProvider& provider) {
    const auto& c = ctx.config;
    const auto dir = report_work_dir(c, report);
    const auto doc = require_json(dir / kChunksFile, "extract");

    std::vector<Chunk> chunks;
    try {
        for (const auto& j : doc.at("chunks")) chunks.push_back(chunk_from_json(j));
    } catch (const json::exception& e) {
        throw SchemaError((dir / kChunksFile).string() + ": " + e.what());
    }

    StructuredReport result;
    if (!chunks.empty()) {
        ExtractConfig ec;
        ec.chunk_length = c.chunk_length;
        ec.tokenizer = Tokenizer::from_name(c.tokenizer);
        ec.temperature = c.temperature;
        ec.model_name = c.model_name;
        ec.parallelism = c.map_parallel;
        ec.prompts = &ctx.prompts;
        ec.work_dir = dir;
        ExtractStats stats;
        result = extract_report(chunks, provider, ec, &stats);
        spdlog::info("{}: {} finding(s) from {} chunk(s), {} failed, {} group(s)", report.filename().string(),
                     result.findings.size(), stats.chunks, stats.failed_chunks, stats.groups);
    }
    const auto path = dir / kReportFile;
    write_json(path, to_json(result));
    return path;
}

fs::path stage_classify(const PipelineContext& ctx, const fs::path& report, CompletionProvider& provider) {
    const auto& c = ctx.config;
    const auto dir = report_work_dir(c, report);
    const auto structured = report_from_json(require_json(dir / kReportFile, "classify"));

    ClassifierConfig cc;
    cc.k = c.k;
    cc.max_depth = c.max_depth;
    cc.selection_retries = c.selection_retries;
    cc.temperature = c.temperature;
    cc.model_name = c.model_name;
    cc.prompts = &ctx.prompts;

    std::string trace;
    ordered_json out{{"findings", json::array()}};
    for (const auto& f : structured.findings) {
        const auto sink = [&](const ordered_json& step) {
            ordered_json line{{"finding", f.id}};
            for (const auto& [k, v] : step.items()) line[k] = v;
            trace += line.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
        };
        const auto path = classify(f, ctx.tree, provider, cc, sink);
        out["findings"].push_back({{"id", f.id}, {"path", to_json(path)}});
    }
    write_file_atomic(dir / kTraceFile, trace);
    const auto path = dir / kClassificationsFile;
    write_json(path, out);
    return path;
}

namespace {

SourceBundle fetch_sources(const PipelineConfig& c, const ProjectInfo& info, RepoHostClient& repos,
                           ExplorerClient& explorer) {
    if (!info.url.empty() && !info.commit_id.empty()) return fetch_repo(info.url, info.commit_id, repos, c.fetch);
    if (!info.address.empty() && !info.chain.empty()) return fetch_onchain(info.address, info.chain, explorer);
    throw NoSourceError("the report names neither a repository commit nor an on-chain address");
}

} // namespace

fs::path stage_fetch(const PipelineContext& ctx, const fs::path& report, RepoHostClient& repos,
                     ExplorerClient& explorer) {
    const auto& c = ctx.config;
    const auto dir = report_work_dir(c, report);
    const auto report_json = require_json(dir / kReportFile, "fetch");
    const auto cls_json = require_json(dir / kClassificationsFile, "fetch");
    const auto structured = report_from_json(report_json);

    std::map<int, ClassificationPath> paths;
    try {
        for (const auto& e : cls_json.at("findings")) {
            paths[e.at("id").get<int>()] = path_from_json(e.at("path"));
        }
    } catch (const json::exception& e) {
        throw SchemaError((dir / kClassificationsFile).string() + ": " + e.what());
    }

    const auto bundle = fetch_sources(c, structured.project_info, repos, explorer);
    const auto record = assemble_record(report.filename().string(), structured, paths, bundle);
    return write_record(record, bundle, c.out_dir, c.force);
}

int BuildSummary::ok() const {
    return static_cast<int>(std::count_if(reports.begin(), reports.end(), [](const auto& r) { return r.record.has_value(); }));
}

int BuildSummary::failed() const { return static_cast<int>(reports.size()) - ok(); }

ordered_json BuildSummary::to_json() const {
    ordered_json j{{"ok", ok()}, {"failed", failed()}, {"stage_failures", ordered_json::object()}};
    for (const auto& [stage, n] : stage_failures) j["stage_failures"][stage] = n;
    j["reports"] = ordered_json::array();
    for (const auto& r : reports) {
        ordered_json e{{"report", r.report.string()}};
        if (r.record) {
            e["status"] = "ok";
            e["record"] = r.record->string();
        } else {
            e["status"] = "failed";
            e["stage"] = r.failed_stage;
            e["error"] = r.error;
        }
        j["reports"].push_back(std::move(e));
    }
    return j;
}

namespace {

ReportOutcome build_one(const PipelineContext& ctx, const fs::path& report, CompletionProvider& provider,
                        RepoHostClient& repos, ExplorerClient& explorer) {
    ReportOutcome outcome{report, std::nullopt, {}, {}};
    const char* stage = "chunk";
    try {
        const auto existing = ctx.config.out_dir / report.stem() / "record.json";
        if (!ctx.config.force && fs::exists(existing)) {
            stage = "write";
            throw ConflictError(existing.string() + " exists; use --force to replace it");
        }
        stage = "chunk";
        stage_chunk(ctx, report);
        stage = "extract";
        stage_extract(ctx, report, provider);
        stage = "classify";
        stage_classify(ctx, report, provider);
        stage = "fetch";
        outcome.record = stage_fetch(ctx, report, repos, explorer);
        spdlog::info("{}: wrote {}", report.string(), outcome.record->string());
    } catch (const std::exception& e) {
        outcome.failed_stage = stage;
        outcome.error = e.what();
        spdlog::error("{}: {} failed: {}", report.string(), stage, e.what());
    }
    return outcome;
}

} // namespace

BuildSummary run_build(const PipelineContext& ctx, const std::vector<fs::path>& reports, CompletionProvider& provider,
                       RepoHostClient& repos, ExplorerClient& explorer) {
    if (reports.empty()) throw UsageError("no input reports given");

    BuildSummary summary;
    summary.reports.resize(reports.size());

    // Work and output directories are keyed by file stem, so a repeated stem
    // would overwrite another report's artifacts.
    std::vector<std::size_t> runnable;
    std::set<fs::path> stems;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        if (!stems.insert(reports[i].stem()).second) {
            summary.reports[i] = {reports[i], std::nullopt, "input",
                                  "another input already uses the name " + reports[i].stem().string()};
            continue;
        }
        runnable.push_back(i);
    }

    const bool sequential = provider.requires_ordered_calls() || ctx.config.parallel <= 1 || runnable.size() < 2;
    if (sequential) {
        for (auto i : runnable) summary.reports[i] = build_one(ctx, reports[i], provider, repos, explorer);
    } else {
        std::atomic<std::size_t> next{0};
        const auto workers = std::min<std::size_t>(static_cast<std::size_t>(ctx.config.parallel), runnable.size());
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (auto n = next++; n < runnable.size(); n = next++) {
                    const auto i = runnable[n];
                    summary.reports[i] = build_one(ctx, reports[i], provider, repos, explorer);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    for (const auto& r : summary.reports) {
        if (!r.record) ++summary.stage_failures[r.failed_stage];
    }
    return summary;
}

std::vector<fs::path> find_records(const std::vector<fs::path>& inputs) {
    std::set<fs::path> found;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& e : fs::recursive_directory_iterator(in)) {
                if (e.is_regular_file() && e.path().filename() == "record.json") found.insert(e.path());
            }
        } else if (fs::is_regular_file(in)) {
            found.insert(in);
        } else {
            throw IoError("no such file or directory: " + in.string());
        }
    }
    return {found.begin(), found.end()};
}

AnalysisOutput run_analyze(const PipelineContext& ctx, const std::vector<fs::path>& inputs) {
    const auto files = find_records(inputs);
    if (files.empty()) throw UsageError("no record.json files found");
    std::vector<DatasetRecord> records;
    records.reserve(files.size());
    for (const auto& f : files) {
        try {
            records.push_back(record_from_json(read_json_file(f)));
        } catch (const SchemaError& e) {
            throw SchemaError(f.string() + ": " + e.what());
        }
    }
    AnalysisOutput out;
    out.records = static_cast<int>(records.size());
    out.stats = avg_cvss_by_category(records, ctx.config.severity, &out.unscored);
    out.treemap = treemap_export(out.stats, ctx.tree);
    return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    using Tok = boost::tokenizer<boost::escaped_list_separator<char>>;
    std::vector<std::vector<std::string>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<std::string> row;
        try {
            for (auto field : Tok(line)) {
                const auto a = field.find_first_not_of(" \t");
                const auto b = field.find_last_not_of(" \t");
                row.push_back(a == std::string::npos ? std::string() : field.substr(a, b - a + 1));
            }
        } catch (const boost::escaped_list_error& e) {
            throw SchemaError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

double run_alpha(const fs::path& csv, bool header) {
    const auto rows = read_csv(csv);
    std::vector<std::string> a, b;
    for (std::size_t i = header ? 1 : 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != 2) {
            throw SchemaError(fmt::format("{}: row {} has {} column(s), expected 2", csv.string(), i + 1, r.size()));
        }
        // An item one rater left blank has no pairable values.
        if (r[0].empty() || r[1].empty()) continue;
        a.push_back(r[0]);
        b.push_back(r[1]);
    }
    return krippendorff_alpha(a, b);
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return s;
}

template <class T>
T parse_number(const std::string& s, const fs::path& csv, std::size_t row) {
    try {
        std::size_t used = 0;
        T v;
        if constexpr (std::is_same_v<T, double>) {
            v = std::stod(s, &used);
        } else {
            v = std::stoll(s, &used);
        }
        if (used == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw SchemaError(fmt::format("{}: row {}: '{}' is not a number", csv.string(), row + 1, s));
}

} // namespace

std::vector<MetricsRow> run_metrics(const fs::path& csv) {
    const auto rows = read_csv(csv);
    if (rows.size() < 2) throw SchemaError(csv.string() + ": expected a header row and at least one data row");

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) col.emplace(lower(rows[0][i]), i);
    const auto has = [&](std::initializer_list<const char*> names) {
        return std::all_of(names.begin(), names.end(), [&](const char* n) { return col.count(n) > 0; });
    };
    const bool counts = has({"tp", "fp", "fn"});
    if (!counts && !has({"precision", "recall", "f1"})) {
        throw SchemaError(csv.string() + ": header needs tp,fp,fn or precision,recall,f1 columns");
    }
    static const std::set<std::string> kNumeric{"tp", "fp", "fn", "precision", "recall", "f1"};
    std::optional<std::size_t> name_col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) {
        if (!kNumeric.count(lower(rows[0][i]))) {
            name_col = i;
            break;
        }
    }

    std::vector<MetricsRow> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != rows[0].size()) {
            throw SchemaError(fmt::format("{}: row {} has {} column(s), expected {}", csv.string(), r + 1, row.size(),
                                          rows[0].size()));
        }
        MetricsRow m{name_col ? row[*name_col] : fmt::format("row {}", r), {}};
        if (counts) {
            m.scores = prf1({parse_number<long long>(row[col["tp"]], csv, r),
                             parse_number<long long>(row[col["fp"]], csv, r),
                             parse_number<long long>(row[col["fn"]], csv, r)});
        } else {
            m.scores.precision = parse_number<double>(row[col["precision"]], csv, r);
            m.scores.recall = parse_number<double>(row[col["recall"]], csv, r);
            m.scores.f1 = parse_number<double>(row[col["f1"]], csv, r);
        }
        out.push_back(std::move(m));
    }
    std::vector<Scores> scores;
    for (const auto& m : out) scores.push_back(m.scores);
    out.push_back({"macro average", macro_average(scores)});
    return out;
}

std::string format_metrics(const std::vector<MetricsRow>& rows) {
    std::size_t width = 4;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    std::string out = fmt::format("{:<{}}  {:>9}  {:>9}  {:>9}\n", "name", width, "precision", "recall", "f1");
    for (const auto& r : rows) {
        out += fmt::format("{:<{}}  {:>9.2f}  {:>9.2f}  {:>9.2f}\n", r.name, width, r.scores.precision,
                           r.scores.recall, r.scores.f1);
    }
    return out;
}

} // namespace auditcwe
