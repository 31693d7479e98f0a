#include "auditcwe/taxonomy.hpp"

#include "auditcwe/errors.hpp"
#include "auditcwe/json_io.hpp"

#include <algorithm>
#include <deque>
#include <cctype>
#include <unordered_set>

#include <spdlog/spdlog.h>

namespace auditcwe {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string join(const std::vector<std::string>& items, std::size_t limit = 20) {
    std::string out;
    for (std::size_t i = 0; i < items.size() && i < limit; ++i) {
        if (i) out += ", ";
        out += items[i];
    }
    if (items.size() > limit) out += ", ... (" + std::to_string(items.size()) + " total)";
    return out;
}

bool default_mapping_allowed(Abstraction a) {
    return a == Abstraction::Base || a == Abstraction::Variant;
}

std::vector<std::string> id_list(const nlohmann::json& node, const char* field, std::size_t pos) {
    std::vector<std::string> out;
    if (!node.contains(field) || node[field].is_null()) return out;
    const auto& arr = node[field];
    if (!arr.is_array()) {
        throw SchemaError("nodes[" + std::to_string(pos) + "]." + field + ": expected array");
    }
    for (const auto& v : arr) {
        if (!v.is_string() || !is_cwe_id(v.get<std::string>())) {
            throw SchemaError("nodes[" + std::to_string(pos) + "]." + field +
                              ": expected CWE id strings, got " + v.dump());
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

std::string string_field(const nlohmann::json& node, const char* field, std::size_t pos,
                         bool required) {
    if (!node.contains(field) || node[field].is_null()) {
        if (required) {
            throw SchemaError("nodes[" + std::to_string(pos) + "]." + field + ": missing");
        }
        return {};
    }
    if (!node[field].is_string()) {
        throw SchemaError("nodes[" + std::to_string(pos) + "]." + field + ": expected string");
    }
    return node[field].get<std::string>();
}

void append_unique(std::vector<std::string>& v, const std::string& id) {
    if (std::find(v.begin(), v.end(), id) == v.end()) v.push_back(id);
}

} // namespace

std::string_view to_string(Abstraction a) {
    switch (a) {
    case Abstraction::Pillar: return "Pillar";
    case Abstraction::Class: return "Class";
    case Abstraction::Base: return "Base";
    case Abstraction::Variant: return "Variant";
    }
    return "Base";
}

std::optional<Abstraction> parse_abstraction(std::string_view s) {
    const auto l = lower(s);
    if (l == "pillar") return Abstraction::Pillar;
    if (l == "class") return Abstraction::Class;
    if (l == "base") return Abstraction::Base;
    if (l == "variant") return Abstraction::Variant;
    return std::nullopt;
}

std::string_view to_string(Terminal t) {
    switch (t) {
    case Terminal::Leaf: return "leaf";
    case Terminal::Fallback: return "fallback";
    case Terminal::Unresolved: return "unresolved";
    }
    return "unresolved";
}

std::optional<Terminal> parse_terminal(std::string_view s) {
    if (s == "leaf") return Terminal::Leaf;
    if (s == "fallback") return Terminal::Fallback;
    if (s == "unresolved") return Terminal::Unresolved;
    return std::nullopt;
}

bool is_cwe_id(std::string_view s) {
    if (s.size() < 5 || s.size() > 8 || s.substr(0, 4) != "CWE-") return false;
    return std::all_of(s.begin() + 4, s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::vector<std::string> ClassificationPath::flattened() const {
    std::vector<std::string> out;
    for (const auto& step : steps) {
        out.insert(out.end(), step.selected.begin(), step.selected.end());
    }
    return out;
}

nlohmann::json to_json(const ClassificationPath& path) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : path.steps) {
        steps.push_back({{"level", s.level}, {"selected", s.selected}});
    }
    return {{"steps", std::move(steps)}, {"terminal", std::string(to_string(path.terminal))}};
}

ClassificationPath path_from_json(const nlohmann::json& j) {
    ClassificationPath path;
    try {
        for (const auto& s : j.at("steps")) {
            path.steps.push_back(
                {s.at("level").get<int>(), s.at("selected").get<std::vector<std::string>>()});
        }
        const auto t = parse_terminal(j.at("terminal").get<std::string>());
        if (!t) throw SchemaError("unknown terminal " + j.at("terminal").dump());
        path.terminal = *t;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("classification path: ") + e.what());
    }
    return path;
}

const CweNode* CweTree::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &nodes_[it->second];
}

const CweNode& CweTree::at(std::string_view id) const {
    if (const auto* n = find(id)) return *n;
    throw LookupError("unknown CWE id " + std::string(id));
}

CweTree CweTree::build(std::string view, std::vector<CweNode> nodes) {
    CweTree tree;
    tree.view_ = std::move(view);
    tree.nodes_ = std::move(nodes);
    for (std::size_t i = 0; i < tree.nodes_.size(); ++i) {
        const auto& id = tree.nodes_[i].id;
        if (!tree.index_.emplace(id, i).second) {
            throw SchemaError("duplicate node id " + id);
        }
    }

    std::vector<std::string> dangling;
    std::vector<std::string> inconsistent;
    for (const auto& n : tree.nodes_) {
        for (const auto& c : n.child_ids) {
            const auto* child = tree.find(c);
            if (!child) {
                dangling.push_back(n.id + " -> child " + c);
            } else if (std::find(child->parent_ids.begin(), child->parent_ids.end(), n.id) ==
                       child->parent_ids.end()) {
                inconsistent.push_back(n.id + " -> " + c);
            }
        }
        for (const auto& p : n.parent_ids) {
            const auto* parent = tree.find(p);
            if (!parent) {
                dangling.push_back(n.id + " -> parent " + p);
            } else if (std::find(parent->child_ids.begin(), parent->child_ids.end(), n.id) ==
                       parent->child_ids.end()) {
                inconsistent.push_back(p + " -> " + n.id);
            }
        }
    }
    if (!dangling.empty()) {
        throw IntegrityError("unresolved references: " + join(dangling));
    }
    if (!inconsistent.empty()) {
        throw IntegrityError("parent/child lists disagree: " + join(inconsistent));
    }

    std::vector<std::string> bad_roots;
    for (const auto& n : tree.nodes_) {
        const bool root = n.parent_ids.empty();
        if (root != (n.abstraction == Abstraction::Pillar)) bad_roots.push_back(n.id);
        if (root) tree.pillars_.push_back(n.id);
    }
    if (!bad_roots.empty()) {
        throw IntegrityError("nodes must be Pillar iff they have no parents: " + join(bad_roots));
    }

    // Kahn's algorithm over the whole graph; leftovers sit on a cycle.
    std::vector<std::size_t> indegree(tree.nodes_.size());
    for (std::size_t i = 0; i < tree.nodes_.size(); ++i) {
        indegree[i] = tree.nodes_[i].parent_ids.size();
    }
    std::deque<std::size_t> ready;
    for (std::size_t i = 0; i < indegree.size(); ++i) {
        if (indegree[i] == 0) ready.push_back(i);
    }
    std::size_t visited = 0;
    while (!ready.empty()) {
        const auto i = ready.front();
        ready.pop_front();
        ++visited;
        for (const auto& c : tree.nodes_[i].child_ids) {
            const auto ci = tree.index_.at(c);
            if (--indegree[ci] == 0) ready.push_back(ci);
        }
    }
    if (visited != tree.nodes_.size()) {
        std::vector<std::string> cyclic;
        for (std::size_t i = 0; i < indegree.size(); ++i) {
            if (indegree[i] > 0) cyclic.push_back(tree.nodes_[i].id);
        }
        throw IntegrityError("hierarchy contains a cycle through: " + join(cyclic));
    }
    return tree;
}

CweTree load_taxonomy(const nlohmann::json& doc, const MappingNotes& notes) {
    if (!doc.is_object()) throw SchemaError("taxonomy document: expected object");
    if (!doc.contains("nodes") || !doc["nodes"].is_array()) {
        throw SchemaError("nodes: missing or not an array");
    }
    std::string view;
    if (doc.contains("view")) {
        if (!doc["view"].is_string()) throw SchemaError("view: expected string");
        view = doc["view"].get<std::string>();
    }

    std::vector<CweNode> nodes;
    nodes.reserve(doc["nodes"].size());
    std::size_t pos = 0;
    for (const auto& raw : doc["nodes"]) {
        if (!raw.is_object()) {
            throw SchemaError("nodes[" + std::to_string(pos) + "]: expected object");
        }
        CweNode n;
        n.id = string_field(raw, "id", pos, true);
        if (!is_cwe_id(n.id)) {
            throw SchemaError("nodes[" + std::to_string(pos) + "].id: malformed CWE id '" + n.id +
                              "'");
        }
        n.name = string_field(raw, "name", pos, true);
        n.description = string_field(raw, "description", pos, false);
        const auto abs = string_field(raw, "abstraction", pos, true);
        const auto parsed = parse_abstraction(abs);
        if (!parsed) {
            throw SchemaError("nodes[" + std::to_string(pos) + "].abstraction: unknown level '" +
                              abs + "'");
        }
        n.abstraction = *parsed;
        n.parent_ids = id_list(raw, "parents", pos);
        n.child_ids = id_list(raw, "children", pos);
        for (const char* flag : {"mapping_allowed", "hardware"}) {
            if (raw.contains(flag) && !raw[flag].is_null() && !raw[flag].is_boolean()) {
                throw SchemaError("nodes[" + std::to_string(pos) + "]." + flag +
                                  ": expected boolean");
            }
        }
        n.mapping_allowed = raw.contains("mapping_allowed") && raw["mapping_allowed"].is_boolean()
                                ? raw["mapping_allowed"].get<bool>()
                                : default_mapping_allowed(n.abstraction);
        n.hardware = raw.value("hardware", false);
        if (auto it = notes.find(n.id); it != notes.end()) n.mapping_allowed = it->second;
        nodes.push_back(std::move(n));
        ++pos;
    }

    // Documents may declare an edge from either side; make both sides agree
    // before the integrity check.  Only resolvable ids are mirrored so that
    // dangling references still surface as errors.
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < nodes.size(); ++i) idx.emplace(nodes[i].id, i);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (const auto& c : std::vector<std::string>(nodes[i].child_ids)) {
            if (auto it = idx.find(c); it != idx.end()) {
                append_unique(nodes[it->second].parent_ids, nodes[i].id);
            }
        }
        for (const auto& p : std::vector<std::string>(nodes[i].parent_ids)) {
            if (auto it = idx.find(p); it != idx.end()) {
                append_unique(nodes[it->second].child_ids, nodes[i].id);
            }
        }
    }

    return CweTree::build(std::move(view), std::move(nodes));
}

CweTree load_taxonomy_file(const std::filesystem::path& path, const MappingNotes& notes) {
    return load_taxonomy(read_json_file(path), notes);
}

std::vector<std::string> load_id_list(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    if (!j.is_array()) throw SchemaError(path.string() + ": expected a JSON array of CWE ids");
    std::vector<std::string> out;
    for (const auto& v : j) {
        if (!v.is_string() || !is_cwe_id(v.get<std::string>())) {
            throw SchemaError(path.string() + ": not a CWE id: " + v.dump());
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

MappingNotes load_mapping_notes(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    if (!j.is_object()) throw SchemaError(path.string() + ": expected a JSON object id -> bool");
    MappingNotes notes;
    for (const auto& [k, v] : j.items()) {
        if (!is_cwe_id(k) || !v.is_boolean()) {
            throw SchemaError(path.string() + ": bad entry " + k + ": " + v.dump());
        }
        notes.emplace(k, v.get<bool>());
    }
    return notes;
}

CweTree prune_hardware(const CweTree& tree, std::span<const std::string> hardware_ids,
                       PruneReport* report) {
    std::unordered_set<std::string> pruned;
    PruneReport local;
    for (const auto& id : hardware_ids) {
        if (tree.contains(id)) {
            pruned.insert(id);
        } else {
            local.missing.push_back(id);
        }
    }
    for (const auto& n : tree.nodes()) {
        if (n.hardware) pruned.insert(n.id);
    }
    if (!local.missing.empty()) {
        spdlog::warn("prune_hardware: {} listed id(s) not in the taxonomy: {}",
                     local.missing.size(), join(local.missing));
    }

    // Nearest surviving ancestors of a pruned node, in breadth-first order.
    auto surviving_ancestors = [&](const std::string& start) {
        std::vector<std::string> out;
        std::deque<std::string> queue{start};
        std::unordered_set<std::string> seen{start};
        while (!queue.empty()) {
            const auto cur = queue.front();
            queue.pop_front();
            for (const auto& p : tree.at(cur).parent_ids) {
                if (!seen.insert(p).second) continue;
                if (pruned.count(p)) {
                    queue.push_back(p);
                } else {
                    append_unique(out, p);
                }
            }
        }
        return out;
    };

    std::vector<CweNode> kept;
    kept.reserve(tree.size());
    std::map<std::string, std::vector<std::string>> adopted; // new parent -> orphans
    for (const auto& n : tree.nodes()) {
        if (pruned.count(n.id)) continue;
        CweNode copy = n;
        copy.parent_ids.clear();
        for (const auto& p : n.parent_ids) {
            if (!pruned.count(p)) copy.parent_ids.push_back(p);
        }
        if (copy.parent_ids.empty() && !n.parent_ids.empty()) {
            for (const auto& p : n.parent_ids) {
                for (const auto& a : surviving_ancestors(p)) append_unique(copy.parent_ids, a);
            }
            for (const auto& a : copy.parent_ids) adopted[a].push_back(n.id);
            local.reattached.push_back(n.id);
        }
        copy.child_ids.clear();
        for (const auto& c : n.child_ids) {
            if (!pruned.count(c)) copy.child_ids.push_back(c);
        }
        kept.push_back(std::move(copy));
    }
    for (auto& n : kept) {
        if (auto it = adopted.find(n.id); it != adopted.end()) {
            for (const auto& c : it->second) append_unique(n.child_ids, c);
        }
    }
    if (!local.reattached.empty()) {
        spdlog::info("prune_hardware: re-parented {} node(s) whose parents were all pruned: {}",
                     local.reattached.size(), join(local.reattached));
    }
    if (report) *report = std::move(local);
    return CweTree::build(tree.view(), std::move(kept));
}

std::vector<const CweNode*> children(const CweTree& tree, std::string_view id) {
    const auto& node = tree.at(id);
    std::vector<const CweNode*> out;
    out.reserve(node.child_ids.size());
    for (const auto& c : node.child_ids) out.push_back(&tree.at(c));
    return out;
}

bool validate_path(const CweTree& tree, const ClassificationPath& path) {
    const auto& steps = path.steps;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& step = steps[i];
        if (step.selected.empty()) return false;
        if (i == 0) {
            if (step.level != 0) return false;
            for (const auto& id : step.selected) {
                const auto* n = tree.find(id);
                if (!n || !n->parent_ids.empty()) return false;
            }
            continue;
        }
        if (step.level < 1 || step.level > steps[i - 1].level + 1) return false;
        const PathStep* parent = nullptr;
        for (std::size_t j = i; j-- > 0;) {
            if (steps[j].level == step.level - 1) {
                parent = &steps[j];
                break;
            }
        }
        if (!parent) return false;
        for (const auto& id : step.selected) {
            const auto* n = tree.find(id);
            if (!n) return false;
            const bool linked = std::any_of(
                parent->selected.begin(), parent->selected.end(), [&](const std::string& p) {
                    return std::find(n->parent_ids.begin(), n->parent_ids.end(), p) !=
                           n->parent_ids.end();
                });
            if (!linked) return false;
        }
    }
    return true;
}

} // namespace auditcwe
