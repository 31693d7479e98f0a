#include "auditcwe/analysis.hpp"

#include "auditcwe/errors.hpp"

#include <algorithm>
#include <map>

namespace auditcwe {

namespace {

std::size_t slot(Severity s) { return static_cast<std::size_t>(s); }

} // namespace

SeverityMapping SeverityMapping::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("severity mapping must be an object");
    SeverityMapping m;
    for (const auto& [key, value] : j.items()) {
        const auto sev = parse_severity(key);
        if (!sev) throw ConfigError("unknown severity '" + key + "' in mapping");
        if (!value.is_number()) throw ConfigError("severity score for '" + key + "' must be a number");
        m.scores[slot(*sev)] = value.get<double>();
    }
    m.validate();
    return m;
}

void SeverityMapping::validate() const {
    for (const auto s : scores) {
        if (!(s >= 0.0 && s <= 10.0)) throw ConfigError("CVSS scores must lie in [0, 10]");
    }
    for (std::size_t i = 1; i < std::size(kAllSeverities); ++i) {
        if (scores[slot(kAllSeverities[i - 1])] > scores[slot(kAllSeverities[i])]) {
            throw ConfigError("severity scores must not decrease from info to critical");
        }
    }
}

double severity_to_cvss(Severity sev, const SeverityMapping& mapping) { return mapping.scores[slot(sev)]; }

std::vector<CategoryStats> avg_cvss_by_category(std::span<const DatasetRecord> records, const SeverityMapping& mapping,
                                                int* unscored) {
    // Per-severity counts keep the mean independent of record order.
    std::map<std::string, std::array<int, 5>> counts;
    int skipped = 0;
    for (const auto& r : records) {
        for (const auto& f : r.findings) {
            if (!f.severity) {
                ++skipped;
                continue;
            }
            const auto id = f.category && !f.category->empty() ? f.category->back() : std::string(kUnclassified);
            ++counts[id][slot(*f.severity)];
        }
    }
    if (unscored) *unscored = skipped;
    std::vector<CategoryStats> out;
    for (const auto& [id, c] : counts) {
        int n = 0;
        double sum = 0.0;
        for (const auto sev : kAllSeverities) {
            n += c[slot(sev)];
            sum += c[slot(sev)] * severity_to_cvss(sev, mapping);
        }
        out.push_back({id, n, sum / n});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const CategoryStats& a, const CategoryStats& b) { return a.frequency > b.frequency; });
    return out;
}

namespace {

struct TreemapNode {
    std::string id;
    std::string name;
    int own_frequency{0};
    double own_severity{0.0};
    std::map<std::string, TreemapNode> children; // sorted by id for stable output
};

TreemapNode& child(TreemapNode& parent, const std::string& id, const std::string& name) {
    auto [it, inserted] = parent.children.try_emplace(id);
    if (inserted) {
        it->second.id = id;
        it->second.name = name;
    }
    return it->second;
}

// Returns (frequency, weighted severity sum).
std::pair<int, double> emit(const TreemapNode& n, nlohmann::ordered_json& out) {
    out["id"] = n.id;
    out["name"] = n.name;
    auto kids = nlohmann::ordered_json::array();
    int freq = 0;
    double weighted = 0.0;
    if (n.own_frequency > 0 && !n.children.empty()) {
        kids.push_back({{"id", n.id},
                        {"name", n.name},
                        {"self", true},
                        {"frequency", n.own_frequency},
                        {"severity", n.own_severity},
                        {"children", nlohmann::ordered_json::array()}});
    }
    freq += n.own_frequency;
    weighted += n.own_frequency * n.own_severity;
    for (const auto& [id, c] : n.children) {
        nlohmann::ordered_json cj;
        const auto [f, w] = emit(c, cj);
        freq += f;
        weighted += w;
        kids.push_back(std::move(cj));
    }
    out["frequency"] = freq;
    out["severity"] = freq > 0 ? nlohmann::ordered_json(weighted / freq) : nullptr;
    out["children"] = std::move(kids);
    return {freq, weighted};
}

} // namespace

nlohmann::ordered_json treemap_export(std::span<const CategoryStats> stats, const CweTree& tree) {
    TreemapNode root;
    // "CWE-1000: Research Concepts" -> id and name
    const auto& view = tree.view();
    const auto colon = view.find(": ");
    root.id = colon == std::string::npos ? view : view.substr(0, colon);
    root.name = colon == std::string::npos ? view : view.substr(colon + 2);
    for (const auto& s : stats) {
        const auto* node = tree.find(s.cwe_id);
        if (!node) {
            auto& u = child(root, kUnclassified, kUnclassified);
            const int total = u.own_frequency + s.frequency;
            u.own_severity = (u.own_severity * u.own_frequency + s.mean_cvss * s.frequency) / total;
            u.own_frequency = total;
            continue;
        }
        std::vector<const CweNode*> chain{node};
        while (!chain.back()->parent_ids.empty()) chain.push_back(&tree.at(chain.back()->parent_ids.front()));
        TreemapNode* cur = &root;
        for (auto it = chain.rbegin(); it != chain.rend(); ++it) cur = &child(*cur, (*it)->id, (*it)->name);
        const int total = cur->own_frequency + s.frequency;
        cur->own_severity = (cur->own_severity * cur->own_frequency + s.mean_cvss * s.frequency) / total;
        cur->own_frequency = total;
    }
    nlohmann::ordered_json out;
    emit(root, out);
    return out;
}

double krippendorff_alpha(std::span<const std::string> labels_a, std::span<const std::string> labels_b) {
    if (labels_a.size() != labels_b.size()) throw DomainError("rater label lists differ in length");
    if (labels_a.size() < 2) throw DomainError("need at least two rated items");

    // Coincidence counts: each unit adds (a, b) and (b, a).
    std::map<std::string, long long> marginal;
    long long disagreeing_pairs = 0; // sum over c != k of o_ck
    for (std::size_t i = 0; i < labels_a.size(); ++i) {
        ++marginal[labels_a[i]];
        ++marginal[labels_b[i]];
        if (labels_a[i] != labels_b[i]) disagreeing_pairs += 2;
    }
    const long long n = static_cast<long long>(2 * labels_a.size());
    // sum over c != k of n_c * n_k = n^2 - sum n_c^2
    long long sq = 0;
    for (const auto& [label, count] : marginal) sq += count * count;
    const long long expected = n * n - sq;
    if (expected == 0) throw DomainError("alpha is undefined: every label is the same");
    return 1.0 - static_cast<double>(n - 1) * static_cast<double>(disagreeing_pairs) / static_cast<double>(expected);
}

Scores prf1(const ConfusionCounts& c) {
    if (c.tp < 0 || c.fp < 0 || c.fn < 0) throw DomainError("confusion counts must be non-negative");
    Scores s;
    s.precision_defined = c.tp + c.fp > 0;
    s.recall_defined = c.tp + c.fn > 0;
    s.precision = s.precision_defined ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    s.recall = s.recall_defined ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

Scores macro_average(std::span<const Scores> rows) {
    if (rows.empty()) throw DomainError("macro average of an empty list");
    Scores m;
    for (const auto& r : rows) {
        m.precision += r.precision;
        m.recall += r.recall;
        m.f1 += r.f1;
    }
    const auto n = static_cast<double>(rows.size());
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    return m;
}

} // namespace auditcwe
