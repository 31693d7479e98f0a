#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>

#include <spdlog/spdlog.h>

int main(int argc, char** argv) {
    // Diagnostics are noise here; AUDITCWE_TEST_LOG=1 turns them back on.
    if (!std::getenv("AUDITCWE_TEST_LOG")) spdlog::set_level(spdlog::level::off);
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
