#include "auditcwe/process.hpp"

#include "auditcwe/errors.hpp"

#include <future>

#include <boost/asio/io_context.hpp>
#include <boost/process.hpp>
#include <boost/program_options/parsers.hpp>

namespace bp = boost::process;

namespace auditcwe {

ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          const std::map<std::string, std::string>& env) {
    if (argv.empty()) throw ConfigError("empty command");

    boost::filesystem::path exe = argv.front();
    if (argv.front().find('/') == std::string::npos) {
        exe = bp::search_path(argv.front());
        if (exe.empty()) throw IoError("command not found: " + argv.front());
    }
    const std::vector<std::string> args(argv.begin() + 1, argv.end());
    const auto dir = cwd.empty() ? std::filesystem::current_path() : cwd;

    auto environment = boost::this_process::environment();
    bp::environment child_env = environment;
    for (const auto& [k, v] : env) child_env[k] = v;

    boost::asio::io_context ios;
    std::future<std::string> out;
    std::future<std::string> err;
    ProcessResult result;
    try {
        bp::child child(exe, bp::args(args), bp::std_in.close(), bp::std_out > out,
                        bp::std_err > err, bp::start_dir(dir.string()), child_env, ios);
        ios.run();
        child.wait();
        result.exit_code = child.exit_code();
    } catch (const bp::process_error& e) {
        throw IoError("cannot run " + argv.front() + ": " + e.what());
    }
    result.out = out.get();
    result.err = err.get();
    return result;
}

std::vector<std::string> expand_command(std::string_view command_template,
                                        const std::map<std::string, std::string>& values) {
    auto argv = boost::program_options::split_unix(std::string(command_template));
    for (auto& arg : argv) {
        for (const auto& [name, value] : values) {
            const auto key = "{" + name + "}";
            for (auto pos = arg.find(key); pos != std::string::npos;
                 pos = arg.find(key, pos + value.size())) {
                arg.replace(pos, key.size(), value);
            }
        }
    }
    return argv;
}

} // namespace auditcwe
