#include "auditcwe/fetcher.hpp"

#include "auditcwe/errors.hpp"
#include "auditcwe/json_io.hpp"
#include "auditcwe/process.hpp"
#include "http_util.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <regex>
#include <set>
#include <stdexcept>
#include <thread>

#include <spdlog/spdlog.h>

namespace fs = std::filesystem;

namespace auditcwe {

std::string_view to_string(Origin o) { return o == Origin::Repository ? "repository" : "onchain"; }

std::optional<std::string> sanitize_relative_path(std::string_view raw) {
    std::string out;
    std::string part;
    auto flush = [&] {
        if (!part.empty() && part != "." && part != "..") {
            if (!out.empty()) out += '/';
            out += part;
        }
        part.clear();
    };
    for (const char c : raw) {
        if (c == '/' || c == '\\') {
            flush();
        } else if (c != '\0') {
            part += c;
        }
    }
    flush();
    if (out.empty()) return std::nullopt;
    return out;
}

bool is_within(const fs::path& root, const fs::path& p) {
    const auto r = fs::absolute(root).lexically_normal();
    const auto q = fs::absolute(p).lexically_normal();
    auto ri = r.begin();
    auto qi = q.begin();
    for (; ri != r.end(); ++ri, ++qi) {
        if (ri->empty()) continue; // trailing separator
        if (qi == q.end() || *ri != *qi) return false;
    }
    return true;
}

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class TempDir {
public:
    TempDir() {
        auto tmpl = (fs::temp_directory_path() / "auditcwe-fetch-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw IoError("cannot create temporary directory");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

bool has_extension(const fs::path& p, const std::vector<std::string>& exts) {
    const auto ext = p.extension().string();
    return std::find(exts.begin(), exts.end(), ext) != exts.end();
}

void add_file(std::vector<SourceFile>& files, std::set<std::string>& seen, std::string_view raw, std::string content) {
    const auto rel = sanitize_relative_path(raw);
    if (!rel) {
        spdlog::warn("skipping source file with unusable path '{}'", raw);
        return;
    }
    if (!seen.insert(*rel).second) {
        spdlog::warn("skipping duplicate source path '{}' (from '{}')", *rel, raw);
        return;
    }
    files.push_back({*rel, std::move(content)});
}

std::string git_error(const ProcessResult& r) {
    auto e = r.err;
    while (!e.empty() && (e.back() == '\n' || e.back() == '\r')) e.pop_back();
    return e.empty() ? "exit status " + std::to_string(r.exit_code) : e;
}

} // namespace

void GitCliClient::checkout(const std::string& url, const std::string& commit, const fs::path& dest,
                            const FetchOptions& options) {
    std::vector<std::string> base{"git", "-c", "protocol.ext.allow=never"};
    for (const auto& kv : git_config_) {
        base.push_back("-c");
        base.push_back(kv);
    }
    const std::map<std::string, std::string> env{{"GIT_TERMINAL_PROMPT", "0"}, {"GIT_ASKPASS", "true"}};
    auto git = [&](std::vector<std::string> args, const fs::path& cwd) {
        auto argv = base;
        argv.insert(argv.end(), args.begin(), args.end());
        return run_process(argv, cwd, env);
    };

    for (int attempt = 0;; ++attempt) {
        const auto r = git({"clone", "--quiet", "--no-checkout", "--", url, dest.string()}, dest.parent_path());
        if (r.exit_code == 0) break;
        if (attempt >= options.retry_limit) {
            throw TransportError("cannot clone " + url + ": " + git_error(r));
        }
        spdlog::warn("clone of {} failed (attempt {}): {}; retrying", url, attempt + 1, git_error(r));
        std::error_code ec;
        fs::remove_all(dest, ec);
        fs::create_directories(dest);
        std::this_thread::sleep_for(options.backoff_base * (1LL << std::min(attempt, 16)));
    }

    std::string sha;
    for (const auto& candidate : {commit, "origin/" + commit}) {
        const auto r = git({"rev-parse", "--verify", "--quiet", "--end-of-options", candidate + "^{commit}"}, dest);
        if (r.exit_code == 0) {
            sha = r.out.substr(0, r.out.find_first_of("\r\n"));
            break;
        }
    }
    if (sha.empty()) throw NotFoundError("commit " + commit + " not found in " + url);
    const auto r = git({"-c", "advice.detachedHead=false", "checkout", "--quiet", "--detach", sha}, dest);
    if (r.exit_code != 0) throw TransportError("cannot check out " + sha + ": " + git_error(r));
}

SourceBundle fetch_repo(const std::string& url, const std::string& commit_id, RepoHostClient& client,
                        const FetchOptions& options) {
    if (url.empty()) throw std::invalid_argument("fetch_repo: empty repository URL");
    if (commit_id.empty()) throw std::invalid_argument("fetch_repo: empty commit id");
    if (url.front() == '-' || commit_id.front() == '-') {
        throw std::invalid_argument("fetch_repo: URL and commit must not start with '-'");
    }
    TempDir tmp;
    const auto dest = tmp.path() / "repo";
    fs::create_directories(dest);
    client.checkout(url, commit_id, dest, options);

    std::vector<std::pair<std::string, fs::path>> found;
    for (auto it = fs::recursive_directory_iterator(dest); it != fs::recursive_directory_iterator(); ++it) {
        if (it->path().filename() == ".git") {
            it.disable_recursion_pending();
            continue;
        }
        if (!it->is_regular_file() || it->is_symlink() || !has_extension(it->path(), options.extensions)) continue;
        found.emplace_back(fs::relative(it->path(), dest).generic_string(), it->path());
    }
    std::sort(found.begin(), found.end());

    SourceBundle b;
    b.origin = Origin::Repository;
    b.identifier = url + "@" + commit_id;
    b.retrieved_at = utc_now();
    std::set<std::string> seen;
    for (const auto& [rel, abs] : found) add_file(b.files, seen, rel, read_text_file(abs));
    if (b.files.empty()) throw EmptyBundleError("no source files in " + url + " at " + commit_id);
    return b;
}

std::string canonical_chain(std::string_view chain) {
    std::string c;
    for (const char ch : chain) {
        if (ch == ' ' || ch == '_' || ch == '-') continue;
        c += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    static const std::map<std::string, std::string, std::less<>> kAliases{
        {"eth", "ethereum"},        {"mainnet", "ethereum"},  {"ethereummainnet", "ethereum"},
        {"bnb", "bsc"},             {"bnbchain", "bsc"},      {"binancesmartchain", "bsc"},
        {"binance", "bsc"},         {"bnbsmartchain", "bsc"}, {"matic", "polygon"},
        {"arbitrumone", "arbitrum"}, {"avax", "avalanche"},   {"ftm", "fantom"},
    };
    if (auto it = kAliases.find(c); it != kAliases.end()) return it->second;
    return c;
}

namespace {

struct KnownExplorer {
    const char* chain;
    const char* url;
    const char* key_env;
};

constexpr KnownExplorer kKnownExplorers[] = {
    {"ethereum", "https://api.etherscan.io/api", "ETHERSCAN_API_KEY"},
    {"bsc", "https://api.bscscan.com/api", "BSCSCAN_API_KEY"},
    {"polygon", "https://api.polygonscan.com/api", "POLYGONSCAN_API_KEY"},
    {"arbitrum", "https://api.arbiscan.io/api", "ARBISCAN_API_KEY"},
    {"optimism", "https://api-optimistic.etherscan.io/api", "OPTIMISM_API_KEY"},
    {"base", "https://api.basescan.org/api", "BASESCAN_API_KEY"},
    {"avalanche", "https://api.snowtrace.io/api", "SNOWTRACE_API_KEY"},
    {"fantom", "https://api.ftmscan.com/api", "FTMSCAN_API_KEY"},
};

} // namespace

std::string explorer_key_env(std::string_view chain) {
    const auto name = canonical_chain(chain);
    for (const auto& k : kKnownExplorers) {
        if (name == k.chain) return k.key_env;
    }
    std::string upper;
    for (char c : name) upper += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : '_';
    return upper + "_EXPLORER_API_KEY";
}

ExplorerConfig ExplorerConfig::defaults() {
    ExplorerConfig cfg;
    for (const auto& k : kKnownExplorers) {
        const char* key = std::getenv(k.key_env);
        cfg.chains[k.chain] = {k.url, key ? key : ""};
    }
    return cfg;
}

nlohmann::json EtherscanClient::get_source_code(const std::string& chain, const std::string& address) {
    const auto name = canonical_chain(chain);
    const auto it = config_.chains.find(name);
    if (it == config_.chains.end()) throw ConfigError("unsupported chain '" + chain + "'");
    http::Params params{{"module", "contract"}, {"action", "getsourcecode"}, {"address", address}};
    if (!it->second.api_key.empty()) params.emplace("apikey", it->second.api_key);

    nlohmann::json result;
    const http::RetryPolicy policy{config_.retry_limit, config_.backoff_base, config_.timeout};
    const auto response = http::with_retries(policy, "explorer " + name, [&] {
        auto r = http::get(it->second.base_url, params, {}, config_.timeout);
        if (r.status != 200) return r;
        auto j = nlohmann::json::parse(r.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw TransportError("explorer returned non-JSON body");
        const auto& res = j.contains("result") ? j["result"] : nlohmann::json();
        if (res.is_string() && res.get<std::string>().find("rate limit") != std::string::npos) {
            throw TransportError("explorer rate limit: " + res.get<std::string>());
        }
        if (!res.is_array() || res.empty()) {
            const auto msg = res.is_string() ? res.get<std::string>() : j.value("message", std::string("?"));
            throw TransportError("explorer error: " + msg);
        }
        result = res.at(0);
        return r;
    });
    if (response.status != 200) {
        throw TransportError("explorer HTTP " + std::to_string(response.status) + " for " + address);
    }
    return result;
}

SourceBundle fetch_onchain(const std::string& address, const std::string& chain, ExplorerClient& client) {
    if (!validate_address(address)) throw std::invalid_argument("fetch_onchain: invalid address '" + address + "'");
    const auto entry = client.get_source_code(chain, address);
    const auto source = entry.value("SourceCode", std::string());
    if (source.empty()) throw NoSourceError("no verified source for " + address + " on " + chain);

    SourceBundle b;
    b.origin = Origin::Onchain;
    b.identifier = canonical_chain(chain) + ":" + address;
    b.retrieved_at = utc_now();
    std::set<std::string> seen;

    nlohmann::json multi;
    if (source.size() > 4 && source.starts_with("{{") && source.ends_with("}}")) {
        multi = nlohmann::json::parse(source.substr(1, source.size() - 2), nullptr, false);
    } else if (source.front() == '{') {
        multi = nlohmann::json::parse(source, nullptr, false);
    }
    if (multi.is_object()) {
        const auto& sources = multi.contains("sources") ? multi["sources"] : multi;
        std::vector<std::pair<std::string, std::string>> entries;
        for (const auto& [path, v] : sources.items()) {
            if (v.is_object() && v.contains("content") && v["content"].is_string()) {
                entries.emplace_back(path, v["content"].get<std::string>());
            }
        }
        std::sort(entries.begin(), entries.end());
        for (auto& [path, content] : entries) add_file(b.files, seen, path, std::move(content));
    } else {
        auto name = entry.value("ContractName", std::string());
        if (name.empty()) name = "Contract";
        add_file(b.files, seen, name + ".sol", source);
    }
    if (b.files.empty()) throw NoSourceError("verified source for " + address + " contains no files");
    return b;
}

namespace {

std::string strip_comments(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.compare(i, 2, "//") == 0) {
            i = s.find('\n', i);
            if (i == std::string::npos) break;
            out += '\n';
        } else if (s.compare(i, 2, "/*") == 0) {
            const auto end = s.find("*/", i + 2);
            if (end == std::string::npos) break;
            out += ' ';
            i = end + 1;
        } else {
            out += s[i];
        }
    }
    return out;
}

} // namespace

std::optional<std::string> detect_compiler_version(const std::vector<SourceFile>& files) {
    static const std::regex kPragma(R"(pragma\s+solidity\s+([^;]+);)");
    std::map<std::string, int> counts;
    for (const auto& f : files) {
        const auto text = strip_comments(f.content);
        for (auto it = std::sregex_iterator(text.begin(), text.end(), kPragma); it != std::sregex_iterator(); ++it) {
            std::string v;
            bool space = false;
            for (const char c : (*it)[1].str()) {
                if (std::isspace(static_cast<unsigned char>(c))) {
                    space = !v.empty();
                } else {
                    if (space) v += ' ';
                    space = false;
                    v += c;
                }
            }
            if (!v.empty()) ++counts[v];
        }
    }
    std::optional<std::string> best;
    int best_count = 0;
    for (const auto& [v, n] : counts) { // ascending, so ">=" lets the greatest win ties
        if (n >= best_count) {
            best = v;
            best_count = n;
        }
    }
    return best;
}

DatasetRecord assemble_record(const std::string& report_path, const StructuredReport& report,
                              const std::map<int, ClassificationPath>& paths, const SourceBundle& bundle) {
    DatasetRecord rec;
    rec.path = fs::path(report_path).filename().string();
    if (rec.path.empty()) throw AssemblyError("report path has no file name: " + report_path);
    rec.project_info = report.project_info;
    rec.project_info.file_paths.clear();
    for (const auto& f : bundle.files) rec.project_info.file_paths.push_back(f.path);
    rec.project_info.compiler_version = detect_compiler_version(bundle.files);

    std::set<int> ids;
    for (const auto& f : report.findings) {
        if (f.title.empty()) throw AssemblyError("finding " + std::to_string(f.id) + " has an empty title");
        if (!ids.insert(f.id).second) throw AssemblyError("duplicate finding id " + std::to_string(f.id));
        const auto it = paths.find(f.id);
        if (it == paths.end()) throw AssemblyError("no classification for finding " + std::to_string(f.id));
        RecordFinding rf;
        rf.id = f.id;
        rf.title = f.title;
        rf.description = f.description;
        rf.severity = f.severity;
        rf.location = f.location;
        rf.terminal = it->second.terminal;
        if (rf.terminal != Terminal::Unresolved) {
            rf.category = it->second.flattened();
            if (rf.category->empty()) {
                throw AssemblyError("finding " + std::to_string(f.id) + " is resolved but has an empty path");
            }
        }
        rec.findings.push_back(std::move(rf));
    }
    return rec;
}

nlohmann::ordered_json to_json(const DatasetRecord& r) {
    nlohmann::ordered_json j;
    j["path"] = r.path;
    j["project_info"] = to_json(r.project_info);
    j["findings"] = nlohmann::ordered_json::array();
    for (const auto& f : r.findings) {
        nlohmann::ordered_json fj;
        fj["id"] = f.id;
        fj["category"] = f.category ? nlohmann::ordered_json(*f.category) : nullptr;
        fj["terminal"] = to_string(f.terminal);
        fj["title"] = f.title;
        fj["description"] = f.description;
        fj["severity"] = f.severity ? nlohmann::ordered_json(std::string(to_string(*f.severity))) : nullptr;
        fj["location"] = f.location;
        j["findings"].push_back(std::move(fj));
    }
    return j;
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    try {
        DatasetRecord r;
        r.path = j.at("path").get<std::string>();
        // Reuse the report reader for project_info; findings differ in shape.
        const auto info = report_from_json({{"project_info", j.at("project_info")}, {"findings", nlohmann::json::array()}});
        r.project_info = info.project_info;
        for (const auto& fj : j.at("findings")) {
            RecordFinding f;
            f.id = fj.at("id").get<int>();
            if (!fj.at("category").is_null()) f.category = fj.at("category").get<std::vector<std::string>>();
            const auto terminal = parse_terminal(fj.at("terminal").get<std::string>());
            if (!terminal) throw SchemaError("invalid terminal in record");
            f.terminal = *terminal;
            f.title = fj.at("title").get<std::string>();
            f.description = fj.at("description").get<std::string>();
            if (!fj.at("severity").is_null()) {
                f.severity = parse_severity(fj.at("severity").get<std::string>());
                if (!f.severity) throw SchemaError("invalid severity in record");
            }
            f.location = fj.at("location").get<std::string>();
            r.findings.push_back(std::move(f));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed record: ") + e.what());
    }
}

fs::path write_record(const DatasetRecord& record, const SourceBundle& bundle, const fs::path& out_dir, bool force) {
    const auto stem = fs::path(record.path).stem().string();
    if (stem.empty() || stem == "." || stem == ".." || !sanitize_relative_path(stem) ||
        *sanitize_relative_path(stem) != stem) {
        throw WriteError("cannot derive an output directory from '" + record.path + "'");
    }
    const auto dir = out_dir / stem;
    const auto record_file = dir / "record.json";
    const auto sources = dir / "sources";
    try {
        if (fs::exists(record_file) && !force) {
            throw ConflictError(record_file.string() + " already exists (use --force to overwrite)");
        }
        if (fs::is_symlink(dir) || fs::is_symlink(sources)) {
            throw WriteError("refusing to write through a symbolic link at " + dir.string());
        }
        fs::remove_all(sources);
        for (const auto& f : bundle.files) {
            const auto rel = sanitize_relative_path(f.path);
            if (!rel) continue;
            const auto target = sources / *rel;
            if (!is_within(sources, target)) throw WriteError("source path escapes output: " + f.path);
            write_file_atomic(target, f.content);
        }
        write_file_atomic(record_file, dump_json(to_json(record)));
    } catch (const fs::filesystem_error& e) {
        throw WriteError(std::string("cannot write record: ") + e.what());
    }
    return record_file;
}

} // namespace auditcwe
