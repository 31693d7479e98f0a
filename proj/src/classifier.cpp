#include "auditcwe/classifier.hpp"

#include "auditcwe/errors.hpp"

#include <algorithm>
#include <regex>

#include <spdlog/spdlog.h>

namespace auditcwe {

void ClassifierConfig::validate() const {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (selection_retries < 0) throw ConfigError("selection_retries must be >= 0");
}

namespace {

const PromptLibrary& prompts_of(const ClassifierConfig& config) {
    return config.prompts ? *config.prompts : PromptLibrary::builtin();
}

std::string one_line(std::string_view s, std::size_t limit = 240) {
    std::string out;
    for (const char c : s) {
        if (c == '\n' || c == '\r' || c == '\t') {
            if (!out.empty() && out.back() != ' ') out += ' ';
        } else {
            out += c;
        }
    }
    if (out.size() > limit) {
        out.resize(limit);
        // do not leave a truncated UTF-8 sequence behind
        while (!out.empty() && (static_cast<unsigned char>(out.back()) & 0xC0) == 0x80) out.pop_back();
        if (!out.empty() && static_cast<unsigned char>(out.back()) >= 0xC0) out.pop_back();
        out += "...";
    }
    return out;
}

std::string option_line(const CweNode& n) {
    std::string line = "- " + n.id + ": " + n.name;
    if (!n.description.empty()) line += ". " + one_line(n.description);
    return line;
}

std::string normalize_id(const nlohmann::json& v) {
    if (v.is_number_integer()) return "CWE-" + std::to_string(v.get<long long>());
    if (!v.is_string()) return {};
    auto s = v.get<std::string>();
    s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == ' '; }), s.end());
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        return "CWE-" + s;
    }
    std::transform(s.begin(), s.begin() + std::min<std::size_t>(3, s.size()), s.begin(),
                   [](char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); });
    return s;
}

struct Walker {
    const Finding& finding;
    const CweTree& tree;
    CompletionProvider& provider;
    const ClassifierConfig& config;
    const TraceSink& trace;
    ClassificationPath path;

    // Explores below `node` (nullptr = virtual root over the pillars) and
    // returns how the first branch ended.
    Terminal explore(const CweNode* node, int level) {
        std::vector<const CweNode*> candidates;
        if (node) {
            candidates = children(tree, node->id);
        } else {
            for (const auto& id : tree.pillar_ids()) candidates.push_back(&tree.at(id));
        }
        if (candidates.empty()) return node ? Terminal::Leaf : Terminal::Unresolved;
        if (level >= config.max_depth) {
            spdlog::warn("finding '{}': max depth {} reached below {}", finding.title, config.max_depth,
                         node ? node->id : "root");
            return Terminal::Unresolved;
        }
        const CweNode* fallback = node && node->mapping_allowed ? node : nullptr;

        std::vector<std::string> allowed;
        for (const auto* c : candidates) allowed.push_back(c->id);
        if (fallback) allowed.push_back(fallback->id);

        const auto request = build_level_prompt(finding, fallback, candidates, config.k, config);
        nlohmann::ordered_json record{{"level", level},
                                      {"node", node ? nlohmann::ordered_json(node->id) : nullptr},
                                      {"candidates", allowed},
                                      {"responses", nlohmann::ordered_json::array()}};
        std::vector<std::string> selected;
        for (int attempt = 0; attempt <= config.selection_retries && selected.empty(); ++attempt) {
            std::string text;
            try {
                text = complete(request, provider);
            } catch (const ProviderError& e) {
                throw ClassificationError("finding '" + finding.title + "': " + e.what());
            } catch (const TimeoutError& e) {
                throw ClassificationError("finding '" + finding.title + "': " + e.what());
            }
            record["responses"].push_back(text);
            selected = parse_selection(text, allowed);
        }
        if (selected.size() > static_cast<std::size_t>(config.k)) selected.resize(static_cast<std::size_t>(config.k));
        record["selected"] = selected;
        if (trace) trace(record);

        if (selected.empty()) {
            spdlog::warn("finding '{}': no valid selection at level {} after {} attempt(s)", finding.title, level,
                         config.selection_retries + 1);
            return Terminal::Unresolved;
        }
        if (fallback && std::find(selected.begin(), selected.end(), fallback->id) != selected.end()) {
            return Terminal::Fallback;
        }
        path.steps.push_back({level, selected});
        std::optional<Terminal> first;
        for (const auto& id : selected) {
            const auto t = explore(&tree.at(id), level + 1);
            if (!first) first = t;
        }
        return *first;
    }
};

} // namespace

CompletionRequest build_level_prompt(const Finding& finding, const CweNode* fallback,
                                     std::span<const CweNode* const> candidates, int k,
                                     const ClassifierConfig& config) {
    const auto& prompts = prompts_of(config);
    std::string options;
    for (const auto* c : candidates) options += option_line(*c) + "\n";
    std::string stop;
    if (fallback) {
        stop = prompts.render("classify_stop", {{"fallback_id", fallback->id}, {"fallback_name", fallback->name}});
        if (!stop.empty() && stop.back() != '\n') stop += '\n';
    }
    const std::string example = !candidates.empty() ? candidates.front()->id : fallback ? fallback->id : "CWE-1";
    CompletionRequest req;
    req.system_prompt = prompts.get("classify.system");
    req.user_prompt = prompts.render("classify.user",
                                     {{"title", finding.title},
                                      {"description", finding.description.empty() ? "(none given)" : finding.description},
                                      {"options", options},
                                      {"stop_option", stop},
                                      {"k", std::to_string(k)},
                                      {"example_id", example}});
    req.temperature = config.temperature;
    req.model_name = config.model_name;
    return req;
}

std::vector<std::string> parse_selection(std::string_view text, std::span<const std::string> candidates) {
    std::vector<std::string> raw;
    bool have_array = false;
    try {
        const auto j = extract_json(text);
        if (j.is_array()) {
            have_array = true;
            for (const auto& v : j) raw.push_back(normalize_id(v));
        } else if (j.is_object()) {
            for (const auto& [key, v] : j.items()) {
                if (v.is_array()) {
                    have_array = true;
                    for (const auto& e : v) raw.push_back(normalize_id(e));
                    break;
                }
            }
        }
    } catch (const ParseError&) {
    }
    if (!have_array) {
        static const std::regex kToken(R"(CWE-\d+)", std::regex::icase);
        const std::string s(text);
        for (auto it = std::sregex_iterator(s.begin(), s.end(), kToken); it != std::sregex_iterator(); ++it) {
            raw.push_back(normalize_id(it->str()));
        }
    }
    std::vector<std::string> out;
    for (const auto& id : raw) {
        if (std::find(candidates.begin(), candidates.end(), id) == candidates.end()) continue;
        if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    }
    return out;
}

ClassificationPath classify(const Finding& finding, const CweTree& tree, CompletionProvider& provider,
                            const ClassifierConfig& config, const TraceSink& trace) {
    config.validate();
    if (finding.title.empty()) throw ClassificationError("finding has no title");
    Walker w{finding, tree, provider, config, trace, {}};
    w.path.terminal = w.explore(nullptr, 0);
    return w.path;
}

} // namespace auditcwe
