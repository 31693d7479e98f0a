#include "auditcwe/ingest.hpp"

#include "auditcwe/errors.hpp"
#include "auditcwe/json_io.hpp"
#include "auditcwe/process.hpp"

#include <algorithm>
#include <cctype>
#include <memory>

#include <spdlog/spdlog.h>
#include <unicode/brkiter.h>
#include <unicode/utext.h>

namespace fs = std::filesystem;

namespace auditcwe {

namespace {

bool is_blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string_view rstrip_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

std::size_t leading_spaces(std::string_view line) {
    std::size_t n = 0;
    while (n < line.size() && line[n] == ' ') ++n;
    return n;
}

// Opening or closing code fence: ``` or ~~~ indented at most three spaces.
std::optional<std::string> fence_marker(std::string_view line) {
    const auto indent = leading_spaces(line);
    if (indent > 3) return std::nullopt;
    line.remove_prefix(indent);
    for (const char c : {'`', '~'}) {
        std::size_t n = 0;
        while (n < line.size() && line[n] == c) ++n;
        if (n >= 3) return std::string(n, c);
    }
    return std::nullopt;
}

struct Heading {
    int level;
    std::string title;
};

std::optional<Heading> parse_heading(std::string_view line) {
    line = rstrip_cr(line);
    const auto indent = leading_spaces(line);
    if (indent > 3) return std::nullopt;
    line.remove_prefix(indent);
    int level = 0;
    while (level < static_cast<int>(line.size()) && line[level] == '#') ++level;
    if (level == 0 || level > 6) return std::nullopt;
    if (static_cast<std::size_t>(level) < line.size() && line[level] != ' ' && line[level] != '\t') {
        return std::nullopt;
    }
    std::string_view title = line.substr(level);
    auto trim = [](std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    };
    title = trim(title);
    // Optional closing sequence: "## Title ##".
    auto hashes = title.find_last_not_of('#');
    if (hashes != std::string_view::npos && hashes + 1 < title.size() &&
        (title[hashes] == ' ' || title[hashes] == '\t')) {
        title = trim(title.substr(0, hashes));
    } else if (hashes == std::string_view::npos) {
        title = {};
    }
    return Heading{level, std::string(title)};
}

enum class BreakKind { Sentence, Grapheme };

// ICU iterators are expensive to construct; keep one of each per thread.
icu::BreakIterator& break_iterator(BreakKind kind) {
    thread_local std::unique_ptr<icu::BreakIterator> sentence;
    thread_local std::unique_ptr<icu::BreakIterator> grapheme;
    auto& slot = kind == BreakKind::Sentence ? sentence : grapheme;
    if (!slot) {
        UErrorCode status = U_ZERO_ERROR;
        slot.reset(kind == BreakKind::Sentence
                       ? icu::BreakIterator::createSentenceInstance(icu::Locale::getRoot(), status)
                       : icu::BreakIterator::createCharacterInstance(icu::Locale::getRoot(),
                                                                     status));
        if (U_FAILURE(status) || !slot) {
            throw ConfigError(std::string("ICU break iterator unavailable: ") +
                              u_errorName(status));
        }
    }
    return *slot;
}

// Boundary byte offsets (including 0 and text.size()) for UTF-8 text.
std::vector<std::size_t> icu_boundaries(std::string_view text, BreakKind kind) {
    UErrorCode status = U_ZERO_ERROR;
    UText* ut = utext_openUTF8(nullptr, text.data(), static_cast<int64_t>(text.size()), &status);
    if (U_FAILURE(status)) throw ConfigError("utext_openUTF8 failed");
    auto& it = break_iterator(kind);
    it.setText(ut, status);
    std::vector<std::size_t> out;
    for (int32_t pos = it.first(); pos != icu::BreakIterator::DONE; pos = it.next()) {
        out.push_back(static_cast<std::size_t>(pos));
    }
    // Detach before closing so the cached iterator never sees a dangling UText.
    it.setText(icu::UnicodeString());
    utext_close(ut);
    if (out.empty() || out.front() != 0) out.insert(out.begin(), 0);
    if (out.back() != text.size()) out.push_back(text.size());
    return out;
}

// Paragraph boundaries: just after each run of blank lines.
std::vector<std::size_t> paragraph_boundaries(std::string_view text) {
    std::vector<std::size_t> out{0};
    std::size_t pos = 0;
    bool prev_blank = false;
    bool seen_content = false;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        const auto end = nl == std::string_view::npos ? text.size() : nl + 1;
        const bool blank = is_blank(text.substr(pos, end - pos));
        if (!blank && prev_blank && seen_content && pos != out.back()) out.push_back(pos);
        if (!blank) seen_content = true;
        prev_blank = blank;
        pos = end;
    }
    if (out.back() != text.size()) out.push_back(text.size());
    return out;
}

class Splitter {
public:
    Splitter(std::size_t limit, const Tokenizer& tok) : limit_(limit), tok_(tok) {}

    void split(std::string_view text, int level, std::vector<std::string_view>& out) const {
        if (text.empty()) return;
        if (tok_.count(text) <= limit_) {
            out.push_back(text);
            return;
        }
        if (level == 2) {
            pack_graphemes(text, out);
            return;
        }
        const auto bounds = level == 0 ? paragraph_boundaries(text)
                                       : icu_boundaries(text, BreakKind::Sentence);
        if (bounds.size() <= 2) {
            split(text, level + 1, out);
            return;
        }
        for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
            split(text.substr(bounds[i], bounds[i + 1] - bounds[i]), level + 1, out);
        }
    }

private:
    // Largest grapheme-aligned prefixes that fit, found by binary search so a
    // long unbroken run costs O(n log n) token counts instead of O(n^2).
    void pack_graphemes(std::string_view text, std::vector<std::string_view>& out) const {
        const auto bounds = icu_boundaries(text, BreakKind::Grapheme);
        std::size_t start = 0; // index into bounds
        while (start + 1 < bounds.size()) {
            std::size_t lo = start + 1;
            std::size_t hi = bounds.size() - 1;
            if (tok_.count(text.substr(bounds[start], bounds[lo] - bounds[start])) > limit_) {
                throw ConfigError("chunk_length " + std::to_string(limit_) +
                                  " is smaller than a single grapheme cluster");
            }
            while (lo < hi) {
                const auto mid = lo + (hi - lo + 1) / 2;
                if (tok_.count(text.substr(bounds[start], bounds[mid] - bounds[start])) <= limit_) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            out.push_back(text.substr(bounds[start], bounds[lo] - bounds[start]));
            start = lo;
        }
    }

    std::size_t limit_;
    const Tokenizer& tok_;
};

} // namespace

Tokenizer Tokenizer::chars_per_token(std::size_t n) {
    if (n == 0) throw ConfigError("chars per token must be >= 1");
    return Tokenizer("chars/" + std::to_string(n), [n](std::string_view text) {
        return (utf8_code_points(text) + n - 1) / n;
    });
}

Tokenizer Tokenizer::whitespace_words() {
    return Tokenizer("words", [](std::string_view text) {
        std::size_t words = 0;
        bool in_word = false;
        for (const unsigned char c : text) {
            const bool space = std::isspace(c) != 0;
            if (!space && !in_word) ++words;
            in_word = !space;
        }
        return words;
    });
}

Tokenizer Tokenizer::from_name(std::string_view name) {
    if (name == "words") return whitespace_words();
    if (name.rfind("chars/", 0) == 0) {
        try {
            return chars_per_token(std::stoul(std::string(name.substr(6))));
        } catch (const std::logic_error&) {
        }
    }
    throw ConfigError("unknown tokenizer '" + std::string(name) + "' (expected chars/<n> or words)");
}

std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer) {
    return tokenizer.count(text);
}

std::size_t utf8_code_points(std::string_view text) {
    return static_cast<std::size_t>(std::count_if(text.begin(), text.end(), [](char c) {
        return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
    }));
}

bool is_valid_utf8(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > text.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr char32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += len;
    }
    return true;
}

std::string load_document(const fs::path& path, const std::optional<ConverterConfig>& converter) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        throw IoError("report not found or not a regular file: " + path.string());
    }
    auto text = read_text_file(path);

    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const bool textual = ext == ".md" || ext == ".markdown" || ext == ".txt" || ext.empty();
    if (textual && is_valid_utf8(text)) return text;

    if (!converter || converter->command.empty()) {
        if (is_valid_utf8(text)) return text;
        throw ConversionError(path.string() + " is not UTF-8 text and no converter is configured");
    }
    const auto argv = expand_command(converter->command, {{"input", path.string()}});
    spdlog::debug("converting {} with {}", path.string(), converter->command);
    auto result = run_process(argv);
    if (result.exit_code != 0) {
        throw ConversionError("converter exited with status " + std::to_string(result.exit_code) +
                              " for " + path.string() + ": " + result.err);
    }
    if (!is_valid_utf8(result.out)) {
        throw ConversionError("converter produced invalid UTF-8 for " + path.string());
    }
    return std::move(result.out);
}

std::vector<Segment> segment(std::string_view doc) {
    std::vector<Segment> out;
    std::vector<Heading> stack;
    std::vector<std::string_view> block;
    bool heading_only = false;
    std::optional<std::string> fence;

    auto headings = [&] {
        std::vector<std::string> path;
        path.reserve(stack.size());
        for (const auto& h : stack) path.push_back(h.title);
        return path;
    };
    auto flush = [&] {
        while (!block.empty() && is_blank(block.back())) block.pop_back();
        if (block.empty()) return;
        std::string text;
        for (std::size_t i = 0; i < block.size(); ++i) {
            if (i) text += '\n';
            text += block[i];
        }
        out.push_back({headings(), std::move(text), static_cast<int>(out.size())});
        block.clear();
        heading_only = false;
    };

    std::size_t pos = 0;
    while (pos < doc.size()) {
        auto nl = doc.find('\n', pos);
        const auto line = doc.substr(pos, nl == std::string_view::npos ? doc.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? doc.size() : nl + 1;

        if (fence) {
            block.push_back(line);
            const auto marker = fence_marker(rstrip_cr(line));
            if (marker && marker->front() == fence->front() && marker->size() >= fence->size()) {
                fence.reset();
            }
            continue;
        }
        if (auto marker = fence_marker(rstrip_cr(line))) {
            if (heading_only) heading_only = false;
            fence = std::move(marker);
            block.push_back(line);
            continue;
        }
        if (auto h = parse_heading(line)) {
            flush();
            while (!stack.empty() && stack.back().level >= h->level) stack.pop_back();
            stack.push_back(std::move(*h));
            block.push_back(line);
            heading_only = true;
            continue;
        }
        if (is_blank(line)) {
            if (heading_only) {
                block.push_back(line);
            } else {
                flush();
            }
            continue;
        }
        heading_only = false;
        block.push_back(line);
    }
    flush();
    return out;
}

std::vector<Chunk> chunk(std::span<const Segment> segments, std::size_t chunk_length,
                         const Tokenizer& tokenizer) {
    if (chunk_length < 1) throw ConfigError("chunk_length must be >= 1");

    struct Unit {
        std::string_view text;
        const Segment* origin;
        bool continues; // same segment as the previous unit
    };
    std::vector<Unit> units;
    const Splitter splitter(chunk_length, tokenizer);
    for (const auto& seg : segments) {
        std::vector<std::string_view> pieces;
        splitter.split(seg.text, 0, pieces);
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            units.push_back({pieces[i], &seg, i > 0});
        }
    }

    std::vector<Chunk> out;
    std::string current;
    const Segment* head = nullptr;
    auto emit = [&] {
        if (current.empty()) return;
        Chunk c;
        c.index = static_cast<int>(out.size());
        c.token_count = tokenizer.count(current);
        c.heading_path = head->heading_path;
        c.text = std::move(current);
        out.push_back(std::move(c));
        current.clear();
    };
    for (const auto& u : units) {
        if (current.empty()) {
            current.assign(u.text);
            head = u.origin;
            continue;
        }
        std::string candidate = current;
        if (!u.continues) candidate += "\n\n";
        candidate += u.text;
        if (tokenizer.count(candidate) <= chunk_length) {
            current = std::move(candidate);
        } else {
            emit();
            current.assign(u.text);
            head = u.origin;
        }
    }
    emit();
    return out;
}

nlohmann::json to_json(const Chunk& c) {
    return {{"index", c.index},
            {"token_count", c.token_count},
            {"heading_path", c.heading_path},
            {"text", c.text}};
}

Chunk chunk_from_json(const nlohmann::json& j) {
    try {
        Chunk c;
        c.index = j.at("index").get<int>();
        c.token_count = j.at("token_count").get<std::size_t>();
        c.heading_path = j.value("heading_path", std::vector<std::string>{});
        c.text = j.at("text").get<std::string>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("chunk: ") + e.what());
    }
}

} // namespace auditcwe
