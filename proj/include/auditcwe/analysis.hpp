#pragma once

#include "auditcwe/fetcher.hpp"
#include "auditcwe/report.hpp"
#include "auditcwe/taxonomy.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

/// Severity label to CVSS base score.
struct SeverityMapping {
    // indexed by Severity: critical, high, medium, low, info
    std::array<double, 5> scores{9.5, 7.95, 5.45, 2.0, 0.0};

    /// Midpoints of the CVSS qualitative ranges, info = 0.
    static SeverityMapping defaults() { return {}; }

    /// Reads {"info": x, "low": y, ...}; missing keys keep their default.
    static SeverityMapping from_json(const nlohmann::json& j);

    /// Throws ConfigError unless every score is in [0, 10] and the order
    /// info <= low <= medium <= high <= critical holds.
    void validate() const;
};

double severity_to_cvss(Severity sev, const SeverityMapping& mapping = {});

inline constexpr const char* kUnclassified = "unclassified";

struct CategoryStats {
    std::string cwe_id; // terminal id of the category path, or kUnclassified
    int frequency{0};
    double mean_cvss{0.0};

    friend bool operator==(const CategoryStats&, const CategoryStats&) = default;
};

/// Groups scored findings by their terminal CWE id.  Findings without a
/// severity cannot be scored and are skipped (counted in `unscored`).
/// Sorted by frequency, then id.
std::vector<CategoryStats> avg_cvss_by_category(std::span<const DatasetRecord> records,
                                                const SeverityMapping& mapping = {}, int* unscored = nullptr);

/// Nested {id, name, frequency, severity, children} nodes from the view root
/// through the pillars down to each category, following first parents.
/// A node with its own findings and children gets a "self" child so that
/// every parent's frequency is the sum of its children's.
nlohmann::ordered_json treemap_export(std::span<const CategoryStats> stats, const CweTree& tree);

/// Two raters, nominal distance, coincidence-matrix form.  Throws DomainError
/// for mismatched or too short inputs and when expected disagreement is zero.
double krippendorff_alpha(std::span<const std::string> labels_a, std::span<const std::string> labels_b);

struct ConfusionCounts {
    long long tp{0};
    long long fp{0};
    long long fn{0};
};

struct Scores {
    double precision{0.0}; // percentages
    double recall{0.0};
    double f1{0.0};
    bool precision_defined{true}; // false when tp + fp = 0 (reported as 0)
    bool recall_defined{true};    // false when tp + fn = 0 (reported as 0)
};

Scores prf1(const ConfusionCounts& c);

/// Unweighted column means.  Throws DomainError for an empty list.
Scores macro_average(std::span<const Scores> rows);

} // namespace auditcwe
