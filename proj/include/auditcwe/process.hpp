#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace auditcwe {

struct ProcessResult {
    int exit_code{0};
    std::string out;
    std::string err;
};

/// Runs argv[0] (resolved on PATH when not a path) with stdin closed and both
/// output streams captured.  `env` entries are added to (or override) the
/// inherited environment.  Throws IoError if the program cannot be started.
ProcessResult run_process(const std::vector<std::string>& argv,
                          const std::filesystem::path& cwd = {},
                          const std::map<std::string, std::string>& env = {});

/// Splits a command template with shell-style quoting and substitutes
/// `{name}` placeholders inside each argument.  No shell is involved, so a
/// substituted value always stays a single argument.
std::vector<std::string> expand_command(std::string_view command_template,
                                        const std::map<std::string, std::string>& values);

} // namespace auditcwe
