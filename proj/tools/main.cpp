#include "pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace envtrack::cli;
    CLI::App app{"envtrack: speech envelope tracking analyses"};
    app.require_subcommand(1);
    app.set_version_flag("--version", ENVTRACK_VERSION);

    Invocation inv;
    std::string config;
    std::string out;
    std::string run_id;
    std::uint64_t seed = 0;
    for (const auto& name : stage_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("-c,--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("-o,--out", out, "output root (default: run.out or ./out beside the config)");
        sub->add_option("--run-id", run_id, "overrides run.id");
        sub->add_option("--seed", seed, "overrides run.seed");
        sub->add_option("-j,--jobs", inv.jobs, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
        sub->add_option("--set", inv.overrides, "config override key.path=value (repeatable)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    inv.stage = app.get_subcommands().front()->get_name();
    inv.config_path = config;
    const auto* sub = app.get_subcommands().front();
    if (sub->count("--out")) inv.out = out;
    if (sub->count("--run-id")) inv.run_id = run_id;
    if (sub->count("--seed")) inv.seed = seed;
    try {
        run(inv);
    } catch (const ConfigError& e) {
        std::cerr << "envtrack: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "envtrack " << inv.stage << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
