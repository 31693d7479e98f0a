#pragma once

#include "auditcwe/ingest.hpp"
#include "auditcwe/llm.hpp"
#include "auditcwe/report.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace auditcwe {

/// Dedup key: Unicode case-folded, punctuation removed, whitespace collapsed.
std::string normalize_title(std::string_view title);

/// Keeps the first finding for each normalized title, in order.
std::vector<Finding> dedup_findings(std::vector<Finding> findings);

/// The merge operator: earlier-wins for every project field, concatenated and
/// de-duplicated findings renumbered 1..n.
StructuredReport merge(const StructuredReport& a, const StructuredReport& b);

/// Left fold of merge() over `parts`; the empty report for no parts.
StructuredReport merge_all(const std::vector<StructuredReport>& parts);

struct ExtractConfig {
    std::size_t chunk_length{kDefaultChunkLength};
    Tokenizer tokenizer{Tokenizer::chars_per_token(4)};
    double temperature{kDefaultTemperature};
    std::string model_name;
    int parallelism{1};
    const PromptLibrary* prompts{nullptr}; // builtin when null
    std::optional<std::filesystem::path> work_dir; // partials/ and groups/ written here

    void validate() const;
};

/// One chunk to a partial report.  One re-ask on unusable output, then MapError.
StructuredReport map_chunk(const Chunk& chunk, CompletionProvider& provider, const ExtractConfig& config);

/// Asks the model to consolidate `partials`, then merges its answer with the
/// mechanical fold so nothing the model dropped is lost.  Falls back to the
/// mechanical fold when the answer is unusable after one re-ask.
StructuredReport reduce_group(const std::vector<StructuredReport>& partials, CompletionProvider& provider,
                              const ExtractConfig& config);

/// Splits partials, in order, into groups whose serialized size fits
/// chunk_length.  A partial larger than the budget gets a group of its own.
std::vector<std::vector<StructuredReport>> group_partials(const std::vector<StructuredReport>& partials,
                                                          const ExtractConfig& config);

struct ExtractStats {
    int chunks{0};
    int failed_chunks{0};
    int groups{0};
};

/// Map every chunk, reduce each group, fold the group results in order.
/// Throws ExtractionError when every chunk failed to map.
StructuredReport extract_report(const std::vector<Chunk>& chunks, CompletionProvider& provider,
                                const ExtractConfig& config, ExtractStats* stats = nullptr);

} // namespace auditcwe
