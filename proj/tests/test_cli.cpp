#include "envtrack/report.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using envtrack::report::Json;

namespace {

std::string cli() { return ENVTRACK_CLI; }

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = "'" + cli() + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Json make_config(const fs::path& out) {
    Json j = Json::parse(R"({
      "run": {"id": "t", "seed": 5},
      "synth": {"n_controls": 4, "n_patients": 4, "duration_min": 0.6, "n_channels": 3, "snr_db": -5,
                "group_effect": {"delta": 0.3, "theta": 0.3}},
      "tmif": {"durations_min": [0.3, 0.6], "halves": true},
      "null": {"n_perm": 20, "bands": ["delta"]},
      "cluster": {"n_perm": 50, "bands": ["delta"]},
      "classify": {"c_grid": [1], "prune_grid_ms": [400], "inner_folds": 3},
      "duration": {"c_grid": [1], "prune_grid_ms": [400], "inner_folds": 3},
      "reliability": {},
      "bandcorr": {"bands": ["delta", "theta"]},
      "report": {}
    })");
    j["run"]["out"] = out.string();
    return j;
}

fs::path write_config(const fs::path& dir, const Json& j, const std::string& name = "config.json") {
    envtrack::report::write_json(dir / name, j);
    return dir / name;
}

bool has_partial(const fs::path& run_dir) {
    if (!fs::exists(run_dir)) return false;
    for (const auto& e : fs::directory_iterator(run_dir))
        if (e.path().filename().string().find(".partial") != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_CASE("pipeline runs end to end and is reproducible") {
    testutil::TempDir dir("cli");
    const auto cfg = write_config(dir.path(), make_config(dir.path() / "out"));
    const auto log = dir.path() / "log.txt";
    for (const char* stage : {"synth", "tmif", "null", "cluster", "classify", "duration", "reliability", "bandcorr",
                              "report"}) {
        const std::string name = stage;
        CAPTURE(name);
        const int code = run(std::string(stage) + " -c '" + cfg.string() + "' -j 1", log);
        CHECK_MESSAGE(code == 0, slurp(log));
        const auto stage_dir = dir.path() / "out" / "t" / stage;
        CHECK(fs::exists(stage_dir / "run.json"));
        const Json runlog = envtrack::report::read_json(stage_dir / "run.json");
        CHECK(runlog["stage"] == stage);
        CHECK(runlog["seed"] == 5);
        CHECK(!runlog["outputs"].empty());
    }
    CHECK_FALSE(has_partial(dir.path() / "out" / "t"));
    const auto report = dir.path() / "out" / "t" / "report" / "report.json";
    const Json rep = envtrack::report::read_json(report);
    CHECK(rep.contains("classification"));
    CHECK(rep.contains("artifacts"));

    // a second run id with more workers reproduces the report bytes
    for (const char* stage : {"synth", "tmif", "null", "cluster", "classify", "duration", "reliability", "bandcorr",
                              "report"})
        REQUIRE(run(std::string(stage) + " -c '" + cfg.string() + "' --run-id u -j 3", log) == 0);
    CHECK(slurp(report) == slurp(dir.path() / "out" / "u" / "report" / "report.json"));
}

TEST_CASE("usage and configuration errors exit with 2") {
    testutil::TempDir dir("cli-err");
    const auto log = dir.path() / "log.txt";
    auto base = make_config(dir.path() / "out");

    CHECK(run("", log) == 2);
    CHECK(run("nosuchstage -c x", log) == 2);
    CHECK(run("synth -c '" + (dir.path() / "missing.json").string() + "'", log) == 2);

    auto j = base;
    j.erase("synth");
    CHECK(run("synth -c '" + write_config(dir.path(), j).string() + "'", log) == 2);
    CHECK(slurp(log).find("synth") != std::string::npos);

    j = base;
    j["synth"]["n_subjects"] = 3;
    CHECK(run("synth -c '" + write_config(dir.path(), j).string() + "'", log) == 2);
    CHECK(slurp(log).find("n_subjects") != std::string::npos);

    j = base;
    j["synth"]["snr_db"] = "loud";
    CHECK(run("synth -c '" + write_config(dir.path(), j).string() + "'", log) == 2);

    j = base;
    j["run"].erase("seed");
    CHECK(run("synth -c '" + write_config(dir.path(), j).string() + "'", log) == 2);
    CHECK(run("synth -c '" + write_config(dir.path(), j).string() + "' --seed 4 --set synth.n_bogus=1", log) == 2);
    CHECK_FALSE(has_partial(dir.path() / "out" / "t"));

    std::ofstream(dir.path() / "broken.json") << "{";
    CHECK(run("synth -c '" + (dir.path() / "broken.json").string() + "'", log) == 2);
    CHECK_FALSE(fs::exists(dir.path() / "out" / "t" / "synth"));
}

TEST_CASE("runtime failures exit with 1 and leave no partial output") {
    testutil::TempDir dir("cli-fail");
    const auto log = dir.path() / "log.txt";
    auto j = make_config(dir.path() / "out");
    const auto cfg = write_config(dir.path(), j);
    // nothing upstream yet: no manifest is a configuration problem, an unreadable one is not
    CHECK(run("tmif -c '" + cfg.string() + "'", log) == 2);
    std::ofstream(dir.path() / "manifest.json") << "[]";
    CHECK(run("tmif -c '" + cfg.string() + "' --set tmif.manifest=manifest.json", log) == 1);
    CHECK(run("report -c '" + cfg.string() + "'", log) == 1);
    CHECK_FALSE(has_partial(dir.path() / "out" / "t"));
    CHECK_FALSE(fs::exists(dir.path() / "out" / "t" / "tmif"));

    // invalid synthetic spec values are runtime errors of the stage
    j["synth"]["n_channels"] = 99;
    CHECK(run("synth -c '" + write_config(dir.path(), j).string() + "'", log) == 1);
    CHECK_FALSE(has_partial(dir.path() / "out" / "t"));

    // overrides reach the stage
    j = make_config(dir.path() / "out");
    CHECK(run("synth -c '" + write_config(dir.path(), j).string() + "' --set synth.n_controls=3", log) == 0);
    const Json runlog = envtrack::report::read_json(dir.path() / "out" / "t" / "synth" / "run.json");
    CHECK(runlog["config"]["synth"]["n_controls"] == 3);
}
