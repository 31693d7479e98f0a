#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditcwe {

inline constexpr std::size_t kDefaultChunkLength = 4096;

struct Segment {
    std::vector<std::string> heading_path;
    std::string text;
    int order{0};

    friend bool operator==(const Segment&, const Segment&) = default;
};

struct Chunk {
    int index{0};
    std::string text;
    std::size_t token_count{0};
    std::vector<std::string> heading_path;

    friend bool operator==(const Chunk&, const Chunk&) = default;
};

/// External document converter, e.g. `pdf2md {input}`.  The command's stdout
/// becomes the document text.
struct ConverterConfig {
    std::string command;
};

/// Pluggable token counter.  The default is ceil(code points / 4), which is
/// deterministic and needs no vocabulary files.
class Tokenizer {
public:
    using CountFn = std::function<std::size_t(std::string_view)>;

    Tokenizer() : Tokenizer(chars_per_token(4)) {}
    Tokenizer(std::string name, CountFn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

    static Tokenizer chars_per_token(std::size_t n);
    static Tokenizer whitespace_words();
    /// "chars/<n>" or "words".
    static Tokenizer from_name(std::string_view name);

    std::size_t count(std::string_view text) const { return fn_(text); }
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
    CountFn fn_;
};

std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer = {});

std::size_t utf8_code_points(std::string_view text);
bool is_valid_utf8(std::string_view text);

/// Reads a report as UTF-8 markdown.  Non-markdown or non-UTF-8 inputs go
/// through the converter when one is configured.
std::string load_document(const std::filesystem::path& path,
                          const std::optional<ConverterConfig>& converter = std::nullopt);

/// Splits at ATX headings, then at blank lines.  A heading line opens the
/// segment that follows it, so the heading text stays with its content.
std::vector<Segment> segment(std::string_view doc);

/// Greedy in-order packing of segments into chunks of at most chunk_length
/// tokens.  Oversized segments are split at paragraphs, then sentences, then
/// grapheme clusters.  Throws ConfigError when chunk_length is 0 or smaller
/// than a single grapheme cluster.
std::vector<Chunk> chunk(std::span<const Segment> segments, std::size_t chunk_length,
                         const Tokenizer& tokenizer = {});

nlohmann::json to_json(const Chunk& c);
Chunk chunk_from_json(const nlohmann::json& j);

} // namespace auditcwe
