#pragma once

#include "envtrack/report.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace envtrack::cli {

namespace fs = std::filesystem;
using report::Json;

/// Usage and configuration problems; mapped to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"envelope", "preprocess", "tmif",     "null",
                                                "cluster",  "classify",   "duration", "reliability",
                                                "bandcorr", "synth",      "report"};
    return names;
}

struct Invocation {
    std::string stage;
    fs::path config_path;
    std::vector<std::string> overrides;   // key.path=value
    std::optional<std::uint64_t> seed;
    std::optional<std::string> run_id;
    std::optional<fs::path> out;
    int jobs = 0;                         // 0: all cores
};

/// Loads the config, applies flag overrides and runs the stage. Throws ConfigError for
/// usage problems and envtrack::Error (or std::exception) for runtime failures.
void run(const Invocation& inv);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

}  // namespace envtrack::cli
