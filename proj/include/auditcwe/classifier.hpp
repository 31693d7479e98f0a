#pragma once

#include "auditcwe/llm.hpp"
#include "auditcwe/report.hpp"
#include "auditcwe/taxonomy.hpp"

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

struct ClassifierConfig {
    int k{1};                 // children selected per level
    int max_depth{6};         // levels before a branch is declared unresolved
    int selection_retries{3}; // extra attempts when no candidate id is recoverable
    double temperature{kDefaultTemperature};
    std::string model_name;
    const PromptLibrary* prompts{nullptr}; // builtin when null

    void validate() const;
};

/// Prompt for one level: the finding, one line per candidate, and a stop-here
/// option for `fallback` when it is given.
CompletionRequest build_level_prompt(const Finding& finding, const CweNode* fallback,
                                     std::span<const CweNode* const> candidates, int k,
                                     const ClassifierConfig& config = {});

/// Ids from a JSON array when the text contains one, otherwise every
/// "CWE-<digits>" token; filtered to `candidates`, first occurrence order.
std::vector<std::string> parse_selection(std::string_view text, std::span<const std::string> candidates);

/// One JSON object per level: candidates, raw responses, parsed selection.
using TraceSink = std::function<void(const nlohmann::ordered_json&)>;

/// Walks the tree from the pillars down.  Throws ClassificationError when the
/// provider fails; running out of selection retries ends the branch as
/// unresolved instead.
ClassificationPath classify(const Finding& finding, const CweTree& tree, CompletionProvider& provider,
                            const ClassifierConfig& config = {}, const TraceSink& trace = {});

} // namespace auditcwe
