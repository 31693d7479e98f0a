#include "auditcwe/report.hpp"

#include "auditcwe/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <utility>

namespace auditcwe {

std::string_view to_string(Severity s) {
    switch (s) {
    case Severity::Critical: return "critical";
    case Severity::High: return "high";
    case Severity::Medium: return "medium";
    case Severity::Low: return "low";
    case Severity::Info: return "info";
    }
    return "info";
}

std::optional<Severity> parse_severity(std::string_view s) {
    for (const auto sev : kAllSeverities) {
        if (to_string(sev) == s) return sev;
    }
    return std::nullopt;
}

std::optional<Severity> coerce_severity(std::string_view s) {
    std::string key;
    for (const char c : s) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    if (auto exact = parse_severity(key)) return exact;
    static const std::array<std::pair<std::string_view, Severity>, 13> kSynonyms{{
        {"crit", Severity::Critical},
        {"major", Severity::High},
        {"severe", Severity::High},
        {"med", Severity::Medium},
        {"moderate", Severity::Medium},
        {"minor", Severity::Low},
        {"informational", Severity::Info},
        {"information", Severity::Info},
        {"note", Severity::Info},
        {"notice", Severity::Info},
        {"gas", Severity::Info},
        {"optimization", Severity::Info},
        {"optimisation", Severity::Info},
    }};
    for (const auto& [word, sev] : kSynonyms) {
        if (word == key) return sev;
    }
    return std::nullopt;
}

bool StructuredReport::empty() const {
    return findings.empty() && project_info == ProjectInfo{};
}

namespace {

bool all_hex(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw SchemaError(where + "." + key + " is missing");
    return j.at(key);
}

std::string require_string(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = require(j, key, where);
    if (!v.is_string()) throw SchemaError(where + "." + key + " must be a string");
    return v.get<std::string>();
}

// Model output sometimes has numbers or nulls where strings belong.
std::string loose_string(const nlohmann::json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) return {};
    const auto& v = j.at(key);
    if (v.is_string()) return trim(v.get<std::string>());
    if (v.is_null()) return {};
    if (v.is_number()) return v.dump();
    return {};
}

} // namespace

bool validate_address(std::string_view s) {
    return s.size() == 42 && s.substr(0, 2) == "0x" && all_hex(s.substr(2));
}

bool plausible_commit_id(std::string_view s) {
    if (s.empty() || !all_hex(s)) return true;
    return s.size() >= 7 && s.size() <= 40;
}

nlohmann::ordered_json to_json(const ProjectInfo& info) {
    nlohmann::ordered_json j;
    j["url"] = info.url;
    j["commit_id"] = info.commit_id;
    j["address"] = info.address;
    j["chain"] = info.chain;
    j["compiler_version"] = info.compiler_version ? nlohmann::ordered_json(*info.compiler_version) : nullptr;
    j["file_paths"] = info.file_paths;
    return j;
}

nlohmann::ordered_json to_json(const Finding& f) {
    nlohmann::ordered_json j;
    j["id"] = f.id;
    j["title"] = f.title;
    j["description"] = f.description;
    j["severity"] = f.severity ? nlohmann::ordered_json(std::string(to_string(*f.severity))) : nullptr;
    j["location"] = f.location;
    j["category"] = f.category ? nlohmann::ordered_json(to_json(*f.category)) : nullptr;
    return j;
}

nlohmann::ordered_json to_json(const StructuredReport& report) {
    nlohmann::ordered_json j;
    j["project_info"] = to_json(report.project_info);
    j["findings"] = nlohmann::ordered_json::array();
    for (const auto& f : report.findings) j["findings"].push_back(to_json(f));
    return j;
}

StructuredReport report_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("report must be an object");
    StructuredReport r;
    const auto& pi = require(j, "project_info", "report");
    if (!pi.is_object()) throw SchemaError("report.project_info must be an object");
    r.project_info.url = require_string(pi, "url", "project_info");
    r.project_info.commit_id = require_string(pi, "commit_id", "project_info");
    r.project_info.address = require_string(pi, "address", "project_info");
    r.project_info.chain = require_string(pi, "chain", "project_info");
    if (pi.contains("compiler_version") && !pi["compiler_version"].is_null()) {
        r.project_info.compiler_version = require_string(pi, "compiler_version", "project_info");
    }
    if (pi.contains("file_paths")) {
        if (!pi["file_paths"].is_array()) throw SchemaError("project_info.file_paths must be an array");
        for (const auto& p : pi["file_paths"]) {
            if (!p.is_string()) throw SchemaError("project_info.file_paths entries must be strings");
            r.project_info.file_paths.push_back(p.get<std::string>());
        }
    }
    const auto& fs = require(j, "findings", "report");
    if (!fs.is_array()) throw SchemaError("report.findings must be an array");
    for (std::size_t i = 0; i < fs.size(); ++i) {
        const auto where = "findings[" + std::to_string(i) + "]";
        const auto& fj = fs[i];
        if (!fj.is_object()) throw SchemaError(where + " must be an object");
        Finding f;
        const auto& id = require(fj, "id", where);
        if (!id.is_number_integer()) throw SchemaError(where + ".id must be an integer");
        f.id = id.get<int>();
        f.title = require_string(fj, "title", where);
        if (f.title.empty()) throw SchemaError(where + ".title must be non-empty");
        f.description = require_string(fj, "description", where);
        f.location = require_string(fj, "location", where);
        const auto& sev = require(fj, "severity", where);
        if (!sev.is_null()) {
            if (!sev.is_string() || !parse_severity(sev.get<std::string>())) {
                throw SchemaError(where + ".severity must be one of critical, high, medium, low, info or null");
            }
            f.severity = parse_severity(sev.get<std::string>());
        }
        if (fj.contains("category") && !fj["category"].is_null()) f.category = path_from_json(fj["category"]);
        r.findings.push_back(std::move(f));
    }
    return r;
}

StructuredReport report_from_model(const nlohmann::json& j, std::vector<std::string>* diagnostics) {
    auto note = [&](std::string msg) {
        if (diagnostics) diagnostics->push_back(std::move(msg));
    };
    if (!j.is_object()) throw SchemaError("model output must be a JSON object");
    StructuredReport r;
    const nlohmann::json empty = nlohmann::json::object();
    const auto& pi = j.contains("project_info") && j["project_info"].is_object() ? j["project_info"] : empty;
    r.project_info.url = loose_string(pi, "url");
    r.project_info.commit_id = loose_string(pi, "commit_id");
    r.project_info.address = loose_string(pi, "address");
    r.project_info.chain = loose_string(pi, "chain");
    if (!r.project_info.address.empty()) {
        // Checksummed addresses keep their case; only the prefix is normalized.
        auto& a = r.project_info.address;
        if (a.size() == 42 && a[0] == '0' && a[1] == 'X') a[1] = 'x';
        if (!validate_address(a)) {
            note("dropped invalid address '" + a + "'");
            a.clear();
        }
    }
    if (!plausible_commit_id(r.project_info.commit_id)) {
        note("dropped implausible commit id '" + r.project_info.commit_id + "'");
        r.project_info.commit_id.clear();
    }

    if (j.contains("findings") && j["findings"].is_array()) {
        for (const auto& fj : j["findings"]) {
            Finding f;
            f.title = loose_string(fj, "title");
            if (f.title.empty()) {
                note("dropped finding without a title");
                continue;
            }
            f.description = loose_string(fj, "description");
            f.location = loose_string(fj, "location");
            const auto raw = loose_string(fj, "severity");
            f.severity = coerce_severity(raw);
            if (!f.severity) note("finding '" + f.title + "': unrecognized severity '" + raw + "' dropped");
            f.id = static_cast<int>(r.findings.size()) + 1;
            r.findings.push_back(std::move(f));
        }
    } else if (j.contains("findings") && !j["findings"].is_null()) {
        note("ignored non-array findings value");
    }
    return r;
}

} // namespace auditcwe
