#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "hyperwave/lab.hpp"

using namespace hyperwave;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("hyperwave_test_lab_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

nlohmann::json read(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::string config_error(const nlohmann::json& j) {
    try {
        ExperimentConfig::from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

ExperimentConfig small_config() {
    return ExperimentConfig::from_json({{"sampling", {{"points_per_sheet", 150}, {"seed", 3}}},
                                        {"window", {{"a", 1}, {"b", 8}}},
                                        {"potential", {{"kind", "induced_bump"}, {"amplitude", 1.0}}},
                                        {"flow", {{"samples", 2000}, {"t_max", 4}}}});
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(HYPERWAVE_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing and field paths") {
    const auto d = ExperimentConfig::from_json(nlohmann::json::object());
    CHECK(d.points_per_sheet == 500);
    CHECK(d.qvar.window.a == 1);
    CHECK(d.qvar.window.b == 30);
    CHECK(d.degrees == std::vector<int>{1, 2, 4});
    CHECK(d.make_cover().degree() == 1);
    CHECK(d.cover_of_degree(4).degree() == 4);

    CHECK(config_error({{"window", {{"a", 3}, {"b", 2}}}}).find("window.a") != std::string::npos);
    CHECK(config_error({{"window", {{"a", 0.1}, {"b", 2}}}}).find("window.a") != std::string::npos);
    CHECK(config_error({{"window", {{"a", "one"}}}}).find("window.a") != std::string::npos);
    CHECK(config_error({{"windw", nlohmann::json::object()}}).find("windw: unknown field") != std::string::npos);
    CHECK(config_error({{"sampling", {{"points", 3}}}}).find("sampling.points") != std::string::npos);
    CHECK(config_error({{"sampling", {{"points_per_sheet", "many"}}}}).find("sampling.points_per_sheet") !=
          std::string::npos);
    CHECK(config_error({{"qvar", {{"T", -1}}}}).find("T") != std::string::npos);
    CHECK(config_error({{"flow", {{"t_max", 40}}}}).find("flow.t_max") != std::string::npos);
    CHECK(config_error({{"trend", {{"degrees", {1, 4, 2}}}}}).find("trend.degrees") != std::string::npos);
    CHECK(config_error({{"verify", {"counting", "nope"}}}).find("verify") != std::string::npos);
    CHECK(config_error({{"cover", {{"kind", "cyclic"}}}}).find("cover.degree") != std::string::npos);
    CHECK(config_error({{"surface", {{"file", "absent.json"}}}}).find("surface.file") != std::string::npos);
    CHECK(config_error({{"threads", 0}}).find("threads") != std::string::npos);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), ConfigError);

    const auto c = small_config();
    const auto again = ExperimentConfig::from_json(c.to_json());
    CHECK(again.to_json() == c.to_json());
    CHECK(again.potential.amplitude == 1.0);
    CHECK(again.flow.samples == 2000);
}

TEST_CASE("surface file and cover kinds") {
    const auto dir = scratch("surface");
    auto cfg = ExperimentConfig::from_json({{"cover", {{"kind", "cyclic"}, {"degree", 3}}}});
    CHECK(stage_build_cover(cfg, dir));
    const auto j = read(dir / "surface.json");
    CHECK(j.at("genus") == 4);
    const auto from_file = ExperimentConfig::from_json(
        {{"surface", {{"file", "surface.json"}}}, {"cover", {{"kind", "file"}}}}, dir);
    CHECK(from_file.make_cover().degree() == 3);
    const auto regular = ExperimentConfig::from_json(
        {{"cover", {{"kind", "regular"}, {"g", {1, 0, 2}}, {"h", {0, 2, 1}}}}});
    CHECK(regular.make_cover().degree() == 6);   // deck group S3
}

TEST_CASE("stages need their artifacts") {
    const auto dir = scratch("missing");
    const auto cfg = small_config();
    try {
        stage_qvar(cfg, dir);
        FAIL("expected MissingArtifact");
    } catch (const MissingArtifact& e) {
        CHECK(std::string(e.what()).find((dir / "spectra.json").string()) != std::string::npos);
    }
    CHECK_THROWS_AS(stage_sample(cfg, dir), MissingArtifact);
    CHECK_THROWS_AS(stage_eigensolve(cfg, dir), MissingArtifact);
    CHECK_THROWS_AS(stage_mixing(cfg, dir), MissingArtifact);
    CHECK_THROWS_AS(stage_report(dir), MissingArtifact);
}

TEST_CASE("pipeline is deterministic") {
    const auto dir = scratch("pipeline");
    const auto cfg = small_config();
    REQUIRE(stage_build_cover(cfg, dir));
    REQUIRE(stage_sample(cfg, dir));
    REQUIRE(stage_eigensolve(cfg, dir));
    CHECK(stage_qvar(cfg, dir));
    CHECK(stage_mixing(cfg, dir));
    CHECK(stage_report(dir));
    write_manifest(dir, cfg, "test");

    const auto spectra = read(dir / "spectra.json");
    CHECK(spectra.at("metadata").at("lambda1_free").get<double>() > 1);
    const auto qv = read(dir / "qvar.json");
    CHECK(qv.at("normalization") == "sup=1, mean=0");
    CHECK(qv.at("parseval").at("pass") == true);

    std::istringstream mix(slurp(dir / "mixing.csv"));
    std::string line;
    std::getline(mix, line);
    CHECK(line == "t,estimate,stderr,bound,resolved");
    int rows = 0;
    while (std::getline(mix, line)) ++rows;
    CHECK(rows == 4);

    std::map<std::string, std::string> first;
    for (const auto& e : fs::directory_iterator(dir)) first[e.path().filename()] = slurp(e.path());

    CHECK(stage_sample(cfg, dir));
    CHECK(stage_eigensolve(cfg, dir));
    CHECK(stage_qvar(cfg, dir));
    CHECK(stage_mixing(cfg, dir));
    CHECK(stage_report(dir));
    write_manifest(dir, cfg, "test");
    for (const auto& [name, content] : first) {
        INFO(name);
        CHECK(slurp(dir / name) == content);
    }

    // A sample.json that no longer matches its seed is rejected.
    auto sample = read(dir / "sample.json");
    sample["points"][0] = sample["points"][0].get<double>() + 1e-3;
    std::ofstream(dir / "sample.json") << sample.dump();
    CHECK_THROWS_AS(stage_eigensolve(cfg, dir), MissingArtifact);
}

TEST_CASE("manifest and hashing") {
    const auto dir = scratch("manifest");
    std::ofstream(dir / "abc.txt") << "abc";
    std::ofstream(dir / "empty.txt");
    fs::create_directories(dir / "sub");
    std::ofstream(dir / "sub" / "x.csv") << "a,b\n";
    CHECK(sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_file(dir / "empty.txt") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK_THROWS_AS(sha256_file(dir / "absent"), MissingArtifact);

    {
        OutputLock lock(dir);
        write_manifest(dir, ExperimentConfig{}, "hyperwave test");
    }
    const auto m = read(dir / "manifest.json");
    CHECK(m.at("command") == "hyperwave test");
    CHECK(m.at("version") == kVersion);
    CHECK(m.at("config").at("window").at("b") == 30.0);
    std::set<std::string> listed;
    for (const auto& f : m.at("files")) {
        listed.insert(f.at("path"));
        CHECK(f.at("sha256") == sha256_file(dir / f.at("path").get<std::string>()));
        CHECK(f.at("bytes") == fs::file_size(dir / f.at("path").get<std::string>()));
    }
    CHECK(listed == std::set<std::string>{"abc.txt", "empty.txt", "sub/x.csv"});
}

TEST_CASE("output lock") {
    const auto dir = scratch("lock");
    {
        OutputLock a(dir);
        CHECK(fs::exists(dir / ".hyperwave.lock"));
        CHECK_THROWS_AS(OutputLock{dir}, Error);
    }
    CHECK_FALSE(fs::exists(dir / ".hyperwave.lock"));
    // An owner that no longer exists leaves a stale lock.
    const pid_t child = ::fork();
    if (child == 0) ::_exit(0);
    ::waitpid(child, nullptr, 0);
    std::ofstream(dir / ".hyperwave.lock") << child << "\n";
    CHECK_NOTHROW(OutputLock{dir});
}

TEST_CASE("report merges runs by degree") {
    const auto dir = scratch("report");
    const std::string header = "degree,genus,N,sum1,sum2,sum3,tau,delta,T,potential_kind,seed\n";
    fs::create_directories(dir / "a");
    fs::create_directories(dir / "b");
    fs::create_directories(dir / "c");
    std::ofstream(dir / "a" / "qvar.csv") << header << "1,2,10,0.1,0.2,0.3,0,0.4,100,induced_bump,1\n";
    std::ofstream(dir / "b" / "qvar.csv") << header << "1,2,14,0.3,0.4,0.5,0,0.4,100,induced_bump,2\n";
    std::ofstream(dir / "c" / "qvar.csv") << header << "2,3,30,0.05,0.06,0.07,0,0.4,100,induced_bump,1\n";
    CHECK(stage_report(dir));
    CHECK(slurp(dir / "summary.csv") ==
          "degree,tau,delta,runs,N,sum1,sum2,sum3\n"
          "1,0,0.4,2,12,0.20000000000000001,0.30000000000000004,0.40000000000000002\n"
          "2,0,0.4,1,30,0.050000000000000003,0.059999999999999998,0.070000000000000007\n");

    std::ofstream(dir / "c" / "qvar.csv") << "wrong,header\n";
    CHECK_THROWS_AS(stage_report(dir), MissingArtifact);
}

TEST_CASE("identity and trend summaries") {
    QVarReport r;
    r.parseval = {1.0, 1.0, 0.0, true};
    r.bands = {{0.5, 0.5, 1e-15, true}};
    CHECK(verify_qvar_identities({r, r}).pass);
    r.bands[0] = {0.5, 0.4, 0.1, false};
    CHECK_FALSE(verify_qvar_identities({r}).pass);
    CHECK_FALSE(verify_qvar_identities({}).pass);

    TrendResult t;
    t.degrees = {1, 2, 4};
    t.mean_sum1 = {3e-3, 1e-3, 4e-4};
    t.spread_sum1 = {1e-4, 1e-4, 1e-4};
    t.spearman = -1;
    t.pass = true;
    const auto v = verify_trend(t);
    CHECK(v.pass);
    CHECK(v.summary.find("Spearman -1") != std::string::npos);
}

TEST_CASE("default verification suites") {
    const auto dir = scratch("verify");
    const auto cfg = ExperimentConfig::from_json(nlohmann::json::object());
    CHECK(stage_verify(cfg, dir, {}));
    const auto j = read(dir / "verification.json");
    std::vector<std::string> names;
    for (const auto& r : j) {
        names.push_back(r.at("name"));
        INFO(r.dump());
        CHECK(r.at("pass") == true);
    }
    CHECK(names == std::vector<std::string>{"counting", "integrals", "time-average", "duhamel", "reconstruction",
                                            "sandwich"});
    const auto log = slurp(dir / "verification.log");
    CHECK(log.find("PASS counting") != std::string::npos);
    CHECK_THROWS_AS(stage_verify(cfg, dir, {"bogus"}), ConfigError);
}

TEST_CASE("command line") {
    const auto dir = scratch("cli");
    CHECK(run_cli("verify-lemmas --only time-average --out " + (dir / "v").string()) == 0);
    const auto j = read(dir / "v" / "verification.json");
    REQUIRE(j.size() == 1);
    CHECK(j[0].at("name") == "time-average");
    CHECK(read(dir / "v" / "manifest.json").at("files").size() == 2);

    std::ofstream(dir / "bad.json") << R"({"window": {"a": 3, "b": 2}})";
    CHECK(run_cli("sample --config " + (dir / "bad.json").string() + " --out " + (dir / "b").string()) == 2);
    CHECK(run_cli("qvar --out " + (dir / "empty").string()) == 2);
    CHECK(run_cli("run --degrees 2,1 --out " + (dir / "r").string()) == 2);
    CHECK(run_cli("no-such-command") != 0);
}
