#pragma once

// Independent checks and generators for chunker properties.  Shared by the
// unit and acceptance suites.

#include "auditcwe/ingest.hpp"

#include <random>
#include <string>
#include <vector>

#include <unicode/brkiter.h>
#include <unicode/unistr.h>

namespace auditcwe::testing {

inline std::string without_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        if (c != ' ' && c != '\n' && c != '\t' && c != '\r' && c != '\f' && c != '\v') out += c;
    }
    return out;
}

/// True iff `left + right` has a grapheme-cluster boundary exactly between the
/// two parts, i.e. the split did not cut a cluster in half.
inline bool boundary_between(const std::string& left, const std::string& right) {
    if (left.empty() || right.empty()) return true;
    const auto joined = icu::UnicodeString::fromUTF8(left + right);
    const auto split_at = icu::UnicodeString::fromUTF8(left).length();
    UErrorCode status = U_ZERO_ERROR;
    std::unique_ptr<icu::BreakIterator> it(
        icu::BreakIterator::createCharacterInstance(icu::Locale::getRoot(), status));
    it->setText(joined);
    return it->isBoundary(split_at);
}

/// Random markdown-ish audit report: headings, paragraphs, long run-on
/// paragraphs, code fences, and multi-code-point grapheme clusters.
class DocumentGenerator {
public:
    explicit DocumentGenerator(std::uint64_t seed) : rng_(seed) {}

    std::string document() {
        std::string doc;
        const int blocks = pick(0, 14);
        for (int b = 0; b < blocks; ++b) {
            const int kind = pick(0, 9);
            if (kind <= 1) {
                doc += std::string(pick(1, 4), '#') + " " + sentence(pick(1, 5)) + "\n";
                if (pick(0, 1)) doc += "\n";
            } else if (kind == 2) {
                doc += "```solidity\nfunction f() external {\n\n  " + word() + "();\n}\n```\n\n";
            } else if (kind == 3) {
                // one long paragraph without terminal punctuation or spaces
                std::string run;
                const int n = pick(50, 400);
                for (int i = 0; i < n; ++i) run += cluster();
                doc += run + "\n\n";
            } else {
                const int sentences = pick(1, 12);
                for (int s = 0; s < sentences; ++s) {
                    doc += sentence(pick(1, 25));
                    doc += pick(0, 6) == 0 ? "\n" : " ";
                }
                doc += "\n\n";
            }
        }
        return doc;
    }

    std::size_t chunk_length() { return static_cast<std::size_t>(pick(2, 300)); }

private:
    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

    std::string cluster() {
        static const char* const kClusters[] = {
            "a", "b", "Z", "0", "_",
            "e\xCC\x81",                                  // e + combining acute
            "n\xCC\x83\xCC\x81",                          // n + two marks
            "\xE6\xBC\xA2",                               // CJK
            "\xF0\x9F\x87\xBA\xF0\x9F\x87\xB8",          // regional-indicator flag
            "\xF0\x9F\x91\xA8\xE2\x80\x8D\xF0\x9F\x91\xA9\xE2\x80\x8D\xF0\x9F\x91\xA7", // ZWJ family
            "\xF0\x9F\x91\x8D\xF0\x9F\x8F\xBD",          // thumbs up + skin tone
            "\xED\x95\x9C",                               // Hangul syllable
        };
        return kClusters[pick(0, static_cast<int>(std::size(kClusters)) - 1)];
    }

    std::string word() {
        std::string w;
        const int n = pick(1, 10);
        for (int i = 0; i < n; ++i) w += cluster();
        return w;
    }

    std::string sentence(int words) {
        std::string s;
        for (int i = 0; i < words; ++i) {
            if (i) s += ' ';
            s += word();
        }
        static const char* const kEnds[] = {".", "!", "?", "", "\xE3\x80\x82"};
        return s + kEnds[pick(0, 4)];
    }

    std::mt19937_64 rng_;
};

} // namespace auditcwe::testing
