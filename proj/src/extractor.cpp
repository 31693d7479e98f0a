#include "auditcwe/extractor.hpp"

#include "auditcwe/errors.hpp"
#include "auditcwe/json_io.hpp"

#include <atomic>
#include <cstdio>
#include <thread>
#include <unordered_set>

#include <spdlog/spdlog.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

namespace fs = std::filesystem;

namespace auditcwe {

std::string normalize_title(std::string_view title) {
    auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(title.data(), static_cast<int32_t>(title.size())));
    u.foldCase();
    icu::UnicodeString out;
    bool pending_space = false;
    for (int32_t i = 0; i < u.length(); i = u.moveIndex32(i, 1)) {
        const UChar32 c = u.char32At(i);
        if (u_isUWhiteSpace(c)) {
            pending_space = !out.isEmpty();
            continue;
        }
        if (u_ispunct(c)) continue;
        if (pending_space) out.append(static_cast<UChar>(u' '));
        pending_space = false;
        out.append(c);
    }
    std::string s;
    out.toUTF8String(s);
    return s;
}

std::vector<Finding> dedup_findings(std::vector<Finding> findings) {
    std::unordered_set<std::string> seen;
    std::vector<Finding> out;
    out.reserve(findings.size());
    for (auto& f : findings) {
        if (seen.insert(normalize_title(f.title)).second) out.push_back(std::move(f));
    }
    return out;
}

StructuredReport merge(const StructuredReport& a, const StructuredReport& b) {
    StructuredReport r;
    const auto& pa = a.project_info;
    const auto& pb = b.project_info;
    auto pick = [](const std::string& x, const std::string& y) { return x.empty() ? y : x; };
    r.project_info.url = pick(pa.url, pb.url);
    r.project_info.commit_id = pick(pa.commit_id, pb.commit_id);
    r.project_info.address = pick(pa.address, pb.address);
    r.project_info.chain = pick(pa.chain, pb.chain);
    r.project_info.compiler_version = pa.compiler_version ? pa.compiler_version : pb.compiler_version;
    r.project_info.file_paths = pa.file_paths.empty() ? pb.file_paths : pa.file_paths;

    std::vector<Finding> all = a.findings;
    all.insert(all.end(), b.findings.begin(), b.findings.end());
    r.findings = dedup_findings(std::move(all));
    for (std::size_t i = 0; i < r.findings.size(); ++i) r.findings[i].id = static_cast<int>(i) + 1;
    return r;
}

StructuredReport merge_all(const std::vector<StructuredReport>& parts) {
    StructuredReport acc;
    for (const auto& p : parts) acc = merge(acc, p);
    return acc;
}

void ExtractConfig::validate() const {
    if (chunk_length < 1) throw ConfigError("chunk_length must be >= 1");
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
}

namespace {

const PromptLibrary& prompts_of(const ExtractConfig& config) {
    return config.prompts ? *config.prompts : PromptLibrary::builtin();
}

std::string join_headings(const std::vector<std::string>& path) {
    if (path.empty()) return "(document start)";
    std::string out;
    for (const auto& h : path) {
        if (!out.empty()) out += " > ";
        out += h;
    }
    return out;
}

// One request plus at most one re-ask.  Empty when both answers are unusable.
std::optional<StructuredReport> ask_for_report(CompletionRequest request, CompletionProvider& provider,
                                               const PromptLibrary& prompts, const std::string& what) {
    const std::string original = request.user_prompt;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto text = complete(request, provider);
        std::string problem;
        try {
            std::vector<std::string> diags;
            auto report = report_from_model(extract_json(text), &diags);
            for (const auto& d : diags) spdlog::warn("{}: {}", what, d);
            return report;
        } catch (const ParseError& e) {
            problem = "it did not contain a JSON object";
        } catch (const SchemaError& e) {
            problem = e.what();
        }
        spdlog::warn("{}: unusable model output ({}), attempt {}", what, problem, attempt + 1);
        request.user_prompt = original + prompts.render("reask", {{"problem", problem}});
    }
    return std::nullopt;
}

std::string dump_partials(const std::vector<StructuredReport>& partials) {
    std::string out;
    for (std::size_t i = 0; i < partials.size(); ++i) {
        out += "Partial result " + std::to_string(i + 1) + ":\n" + to_json(partials[i]).dump(2) + "\n\n";
    }
    return out;
}

std::string numbered(const char* prefix, std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%0*zu.json", prefix, width, i);
    return buf;
}

} // namespace

StructuredReport map_chunk(const Chunk& chunk, CompletionProvider& provider, const ExtractConfig& config) {
    const auto& prompts = prompts_of(config);
    CompletionRequest req;
    req.system_prompt = prompts.get("extract_map.system");
    req.user_prompt = prompts.render("extract_map.user", {{"schema", prompts.get("schema")},
                                                          {"heading_path", join_headings(chunk.heading_path)},
                                                          {"chunk", chunk.text}});
    req.temperature = config.temperature;
    req.model_name = config.model_name;
    const auto what = "chunk " + std::to_string(chunk.index);
    std::optional<StructuredReport> out;
    try {
        out = ask_for_report(std::move(req), provider, prompts, what);
    } catch (const ProviderError& e) {
        throw MapError(what + ": provider failed: " + e.what());
    } catch (const TimeoutError& e) {
        throw MapError(what + ": provider timed out: " + e.what());
    }
    if (!out) throw MapError(what + ": no usable extraction after re-ask");
    // The model's ids are not trusted; normalize like any merge result.
    return merge(StructuredReport{}, *out);
}

StructuredReport reduce_group(const std::vector<StructuredReport>& partials, CompletionProvider& provider,
                              const ExtractConfig& config) {
    const auto mechanical = merge_all(partials);
    const auto& prompts = prompts_of(config);
    CompletionRequest req;
    req.system_prompt = prompts.get("extract_reduce.system");
    req.user_prompt = prompts.render("extract_reduce.user",
                                     {{"schema", prompts.get("schema")}, {"partials", dump_partials(partials)}});
    req.temperature = config.temperature;
    req.model_name = config.model_name;
    std::optional<StructuredReport> model;
    try {
        model = ask_for_report(std::move(req), provider, prompts, "reduce");
    } catch (const ProviderError& e) {
        spdlog::warn("reduce: provider failed ({}); using mechanical merge", e.what());
    } catch (const TimeoutError& e) {
        spdlog::warn("reduce: provider timed out ({}); using mechanical merge", e.what());
    }
    if (!model) {
        spdlog::warn("reduce: falling back to mechanical merge of {} partial(s)", partials.size());
        return mechanical;
    }
    return merge(*model, mechanical);
}

std::vector<std::vector<StructuredReport>> group_partials(const std::vector<StructuredReport>& partials,
                                                          const ExtractConfig& config) {
    std::vector<std::vector<StructuredReport>> groups;
    std::size_t used = 0;
    for (const auto& p : partials) {
        const auto size = config.tokenizer.count(to_json(p).dump(2));
        if (size > config.chunk_length) {
            spdlog::warn("partial of {} tokens exceeds chunk_length {}; reducing it alone", size,
                         config.chunk_length);
        }
        if (groups.empty() || used + size > config.chunk_length) {
            groups.emplace_back();
            used = 0;
        }
        groups.back().push_back(p);
        used += size;
    }
    return groups;
}

StructuredReport extract_report(const std::vector<Chunk>& chunks, CompletionProvider& provider,
                                const ExtractConfig& config, ExtractStats* stats) {
    config.validate();
    std::vector<std::optional<StructuredReport>> mapped(chunks.size());

    auto map_one = [&](std::size_t i) {
        try {
            mapped[i] = map_chunk(chunks[i], provider, config);
        } catch (const MapError& e) {
            spdlog::warn("{}", e.what());
        }
    };
    const bool sequential = provider.requires_ordered_calls() || config.parallelism <= 1 || chunks.size() < 2;
    if (sequential) {
        for (std::size_t i = 0; i < chunks.size(); ++i) map_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(config.parallelism), chunks.size());
        for (std::size_t w = 0; w < n; ++w) {
            workers.emplace_back([&] {
                for (auto i = next++; i < chunks.size(); i = next++) map_one(i);
            });
        }
        for (auto& t : workers) t.join();
    }

    std::vector<StructuredReport> partials;
    int failed = 0;
    for (std::size_t i = 0; i < mapped.size(); ++i) {
        if (!mapped[i]) {
            ++failed;
            continue;
        }
        if (config.work_dir) {
            write_file_atomic(*config.work_dir / "partials" / numbered("chunk", i, 4), dump_json(to_json(*mapped[i])));
        }
        if (!mapped[i]->empty()) partials.push_back(*mapped[i]);
    }
    if (!chunks.empty() && failed == static_cast<int>(chunks.size())) {
        throw ExtractionError("all " + std::to_string(chunks.size()) + " chunk(s) failed to map");
    }

    const auto groups = group_partials(partials, config);
    StructuredReport result;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto reduced = reduce_group(groups[g], provider, config);
        if (config.work_dir) {
            write_file_atomic(*config.work_dir / "groups" / numbered("group", g, 3), dump_json(to_json(reduced)));
        }
        result = merge(result, reduced);
    }
    if (stats) *stats = {static_cast<int>(chunks.size()), failed, static_cast<int>(groups.size())};
    return result;
}

} // namespace auditcwe
