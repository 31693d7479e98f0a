#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace auditcwe {

std::string read_text_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename(2); parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Stable, human-readable serialization used for every artifact on disk.
std::string dump_json(const nlohmann::ordered_json& j);
std::string dump_json(const nlohmann::json& j);

} // namespace auditcwe
