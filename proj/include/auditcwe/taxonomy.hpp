#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

enum class Abstraction { Pillar, Class, Base, Variant };

std::string_view to_string(Abstraction a);
std::optional<Abstraction> parse_abstraction(std::string_view s);

/// True for "CWE-" followed by 1 to 4 digits.
bool is_cwe_id(std::string_view s);

struct CweNode {
    std::string id;
    std::string name;
    std::string description;
    Abstraction abstraction{Abstraction::Base};
    std::vector<std::string> parent_ids;
    std::vector<std::string> child_ids;
    bool mapping_allowed{false};
    bool hardware{false};
};

/// Mapping-notes overrides: CWE id -> mapping allowed.
using MappingNotes = std::map<std::string, bool, std::less<>>;

/// Immutable view over the CWE research hierarchy.  CWE-1000 is a DAG, so a
/// node may list several parents; traversal only ever moves downward.
class CweTree {
public:
    CweTree() = default;

    const CweNode& at(std::string_view id) const;
    const CweNode* find(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id) != nullptr; }

    const std::vector<std::string>& pillar_ids() const noexcept { return pillars_; }
    const std::vector<CweNode>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string& view() const noexcept { return view_; }

    /// Builds and checks a tree from nodes in document order.  Throws
    /// IntegrityError on dangling references, cycles, or pillar mismatches.
    static CweTree build(std::string view, std::vector<CweNode> nodes);

private:
    std::string view_;
    std::vector<CweNode> nodes_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> pillars_;
};

/// One level of a tree-of-thoughts walk: the ids picked at that depth.
struct PathStep {
    int level{0};
    std::vector<std::string> selected;

    friend bool operator==(const PathStep&, const PathStep&) = default;
};

enum class Terminal { Leaf, Fallback, Unresolved };

std::string_view to_string(Terminal t);
std::optional<Terminal> parse_terminal(std::string_view s);

struct ClassificationPath {
    std::vector<PathStep> steps;
    Terminal terminal{Terminal::Unresolved};

    /// Every selected id in walk order; for k = 1 this is the chain
    /// pillar -> ... -> terminal.
    std::vector<std::string> flattened() const;

    friend bool operator==(const ClassificationPath&, const ClassificationPath&) = default;
};

nlohmann::json to_json(const ClassificationPath& path);
ClassificationPath path_from_json(const nlohmann::json& j);

struct PruneReport {
    std::vector<std::string> missing;    // listed ids absent from the tree
    std::vector<std::string> reattached; // survivors whose parents were all pruned
};

CweTree load_taxonomy(const nlohmann::json& doc, const MappingNotes& notes = {});
CweTree load_taxonomy_file(const std::filesystem::path& path, const MappingNotes& notes = {});

std::vector<std::string> load_id_list(const std::filesystem::path& path);
MappingNotes load_mapping_notes(const std::filesystem::path& path);

/// Removes the listed nodes.  A surviving node whose every parent is pruned is
/// re-parented onto its nearest surviving ancestors, so the node count drops by
/// exactly the number of listed ids that exist.  Unknown ids are logged, not
/// fatal.
CweTree prune_hardware(const CweTree& tree, std::span<const std::string> hardware_ids,
                       PruneReport* report = nullptr);

/// Child nodes in document order.  Throws LookupError for unknown ids.
std::vector<const CweNode*> children(const CweTree& tree, std::string_view id);

/// True iff the first step selects pillars and every later step at level l
/// selects children of the most recent step at level l - 1.
bool validate_path(const CweTree& tree, const ClassificationPath& path);

} // namespace auditcwe
