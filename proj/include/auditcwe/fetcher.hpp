#pragma once

#include "auditcwe/report.hpp"
#include "auditcwe/taxonomy.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

enum class Origin { Repository, Onchain };
std::string_view to_string(Origin o);

struct SourceFile {
    std::string path; // relative, '/'-separated, no "." or ".." components
    std::string content;

    friend bool operator==(const SourceFile&, const SourceFile&) = default;
};

struct SourceBundle {
    Origin origin{Origin::Repository};
    std::string identifier; // "<url>@<commit>" or "<chain>:<address>"
    std::vector<SourceFile> files;
    std::string retrieved_at; // ISO-8601 UTC; not part of the record
};

/// Turns an untrusted path into a safe relative one: backslashes become
/// slashes, empty, "." and ".." components and NUL bytes are dropped.
/// Empty when nothing is left.
std::optional<std::string> sanitize_relative_path(std::string_view raw);

/// Lexical containment check on normalized absolute paths.
bool is_within(const std::filesystem::path& root, const std::filesystem::path& p);

struct FetchOptions {
    std::vector<std::string> extensions{".sol"};
    int retry_limit{2};
    std::chrono::milliseconds backoff_base{500};
};

/// Puts the tree of `url` at `commit` into `dest` (an empty directory).
class RepoHostClient {
public:
    virtual ~RepoHostClient() = default;
    virtual void checkout(const std::string& url, const std::string& commit, const std::filesystem::path& dest,
                          const FetchOptions& options) = 0;
};

/// Uses the git command line: clone, resolve the commit, check it out.
/// `git_config` entries are passed as `-c key=value` (for example url
/// rewrites to a mirror).
class GitCliClient final : public RepoHostClient {
public:
    explicit GitCliClient(std::vector<std::string> git_config = {}) : git_config_(std::move(git_config)) {}
    void checkout(const std::string& url, const std::string& commit, const std::filesystem::path& dest,
                  const FetchOptions& options) override;

private:
    std::vector<std::string> git_config_;
};

/// Throws NotFoundError for an unknown commit, TransportError when the
/// repository cannot be reached, EmptyBundleError when no file matches.
SourceBundle fetch_repo(const std::string& url, const std::string& commit_id, RepoHostClient& client,
                        const FetchOptions& options = {});

struct ExplorerEndpoint {
    std::string base_url; // e.g. https://api.etherscan.io/api
    std::string api_key;
};

struct ExplorerConfig {
    std::map<std::string, ExplorerEndpoint> chains; // keyed by canonical chain name
    int retry_limit{3};
    std::chrono::milliseconds backoff_base{1000};
    std::chrono::milliseconds timeout{30'000};

    /// Public explorer URLs for the common EVM chains, with API keys taken
    /// from <CHAIN>SCAN_API_KEY style environment variables.
    static ExplorerConfig defaults();
};

/// Lower-cases and maps common aliases ("eth", "mainnet", "bnb", "matic")
/// onto canonical chain names.
std::string canonical_chain(std::string_view chain);

/// Source of verified contracts.  Returns the first element of the
/// getsourcecode "result" array.
class ExplorerClient {
public:
    virtual ~ExplorerClient() = default;
    virtual nlohmann::json get_source_code(const std::string& chain, const std::string& address) = 0;
};

/// Etherscan-compatible HTTP client (module=contract&action=getsourcecode).
/// Unsupported chain: ConfigError.  Rate limits and transport failures are
/// retried, then TransportError.
class EtherscanClient final : public ExplorerClient {
public:
    explicit EtherscanClient(ExplorerConfig config) : config_(std::move(config)) {}
    nlohmann::json get_source_code(const std::string& chain, const std::string& address) override;

private:
    ExplorerConfig config_;
};

/// Environment variable holding the API key for `chain`: the explorer's own
/// name for known chains (ETHERSCAN_API_KEY), <CHAIN>_EXPLORER_API_KEY otherwise.
std::string explorer_key_env(std::string_view chain);

/// Throws std::invalid_argument for a malformed address and NoSourceError
/// for unverified contracts.
SourceBundle fetch_onchain(const std::string& address, const std::string& chain, ExplorerClient& client);

/// Most frequent `pragma solidity` constraint; ties go to the
/// lexicographically greatest.  Comments are ignored.
std::optional<std::string> detect_compiler_version(const std::vector<SourceFile>& files);

struct RecordFinding {
    int id{0};
    std::optional<std::vector<std::string>> category; // null when unresolved
    Terminal terminal{Terminal::Unresolved};
    std::string title;
    std::string description;
    std::optional<Severity> severity;
    std::string location;

    friend bool operator==(const RecordFinding&, const RecordFinding&) = default;
};

struct DatasetRecord {
    std::string path; // report file name
    ProjectInfo project_info;
    std::vector<RecordFinding> findings;

    friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

/// Every finding id must have an entry in `paths`; AssemblyError otherwise
/// or when the result breaks the record schema.
DatasetRecord assemble_record(const std::string& report_path, const StructuredReport& report,
                              const std::map<int, ClassificationPath>& paths, const SourceBundle& bundle);

nlohmann::ordered_json to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const nlohmann::json& j);

/// Writes <out_dir>/<report stem>/record.json and sources/.  Existing output
/// is a ConflictError unless `force`, which replaces it.
std::filesystem::path write_record(const DatasetRecord& record, const SourceBundle& bundle,
                                   const std::filesystem::path& out_dir, bool force);

} // namespace auditcwe
