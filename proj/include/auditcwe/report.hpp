#pragma once

#include "auditcwe/taxonomy.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

enum class Severity { Critical, High, Medium, Low, Info };

inline constexpr Severity kAllSeverities[] = {Severity::Info, Severity::Low, Severity::Medium,
                                              Severity::High, Severity::Critical};

std::string_view to_string(Severity s);

/// Exact enum spelling only ("critical", ..., "info").
std::optional<Severity> parse_severity(std::string_view s);

/// Lenient parse for model output: trims, case-folds and maps synonyms such
/// as "informational" or "major" onto the enum.  Empty when unrecognized.
std::optional<Severity> coerce_severity(std::string_view s);

struct ProjectInfo {
    std::string url;
    std::string commit_id;
    std::string address;
    std::string chain;
    std::optional<std::string> compiler_version;
    std::vector<std::string> file_paths;

    friend bool operator==(const ProjectInfo&, const ProjectInfo&) = default;
};

struct Finding {
    int id{0};
    std::string title;
    std::string description;
    std::optional<Severity> severity; // empty when the model gave no usable value
    std::string location;
    std::optional<ClassificationPath> category;

    friend bool operator==(const Finding&, const Finding&) = default;
};

struct StructuredReport {
    ProjectInfo project_info;
    std::vector<Finding> findings;

    bool empty() const;
    friend bool operator==(const StructuredReport&, const StructuredReport&) = default;
};

/// True iff s is "0x" followed by exactly 40 hex digits (either case).
bool validate_address(std::string_view s);

/// Commit ids that consist only of hex digits must be 7 to 40 long; other
/// names (tags, branches) are accepted as they are.
bool plausible_commit_id(std::string_view s);

nlohmann::ordered_json to_json(const ProjectInfo& info);
nlohmann::ordered_json to_json(const Finding& finding);
nlohmann::ordered_json to_json(const StructuredReport& report);

/// Strict readers for artifacts this program wrote; throw SchemaError.
StructuredReport report_from_json(const nlohmann::json& j);

/// Lenient reader for model output.  Coerces severities, drops findings with
/// no title, clears invalid addresses and implausible commit ids, ignores
/// model-assigned ids.  Each repair is appended to `diagnostics`.  Throws
/// SchemaError only when the value is not an object.
StructuredReport report_from_model(const nlohmann::json& j, std::vector<std::string>* diagnostics);

} // namespace auditcwe
