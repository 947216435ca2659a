#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hyperwave/lab.hpp"

namespace fs = std::filesystem;
using namespace hyperwave;

namespace {

struct Flags {
    std::string config;
    std::string out = "hyperwave-out";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> only;
    std::string degrees;
    std::optional<int> threads;
};

std::vector<int> parse_degrees(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    for (std::string x; std::getline(ss, x, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(x, &used));
            if (used != x.size()) throw std::invalid_argument(x);
        } catch (const std::exception&) {
            throw ConfigError("degrees: cannot parse \"" + x + "\"");
        }
    }
    return out;
}

ExperimentConfig build_config(const Flags& f) {
    auto cfg = f.config.empty() ? ExperimentConfig::from_json(nlohmann::json::object(), fs::current_path())
                                : ExperimentConfig::load(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    if (cfg.threads < 1) throw ConfigError("threads: need >= 1");
    if (!f.degrees.empty()) {
        cfg.degrees = parse_degrees(f.degrees);
        for (std::size_t k = 0; k < cfg.degrees.size(); ++k)
            if (cfg.degrees[k] < 1 || (k > 0 && cfg.degrees[k] <= cfg.degrees[k - 1]))
                throw ConfigError("degrees: need strictly increasing positive degrees");
    }
    return cfg;
}

int run_stage(const Flags& f, const std::string& command,
              const std::function<bool(const ExperimentConfig&, const fs::path&)>& stage) {
    try {
        const auto cfg = build_config(f);
        const fs::path dir = f.out;
        OutputLock lock(dir);
        const bool ok = stage(cfg, dir);
        write_manifest(dir, cfg, command);
        std::printf("%s: %s\n", command.c_str(), ok ? "ok" : "assertion failed");
        return ok ? 0 : 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const MissingArtifact& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", e.module().c_str(), e.what());
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral and dynamical experiments on hyperbolic surfaces and their covers"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    Flags f;

    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--out", f.out, "output directory")->capture_default_str();
        sub->add_option("--seed", f.seed, "sampling seed");
        sub->add_option("--threads", f.threads, "worker threads");
        return sub;
    };

    auto* verify = add("verify-lemmas", "run the verification suites");
    verify->add_option("--only", f.only, "restrict to the named suites")->delimiter(',');
    add("build-cover", "write surface.json");
    add("sample", "sample the surface (needs surface.json)");
    add("eigensolve", "assemble the operator and solve the window (needs sample.json)");
    add("qvar", "quantum variance sums (needs spectra.json)");
    add("mixing", "geodesic flow correlations (needs surface.json, spectra.json)");
    add("report", "merge every qvar.csv below --out into summary.csv");
    auto* run = add("run", "whole pipeline over the configured degrees and seeds");
    run->add_option("--degrees", f.degrees, "comma separated cover degrees");

    CLI11_PARSE(app, argc, argv);

    std::string command = "hyperwave";
    for (int k = 1; k < argc; ++k) command += std::string(" ") + argv[k];
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    if (name == "verify-lemmas") {
        const int rc = run_stage(f, command, [&](const ExperimentConfig& c, const fs::path& d) {
            return stage_verify(c, d, f.only);
        });
        if (fs::exists(fs::path(f.out) / "verification.log")) {
            std::ifstream in(fs::path(f.out) / "verification.log");
            std::fputs(std::string(std::istreambuf_iterator<char>(in), {}).c_str(), stdout);
        }
        return rc;
    }
    if (name == "build-cover") return run_stage(f, command, stage_build_cover);
    if (name == "sample") return run_stage(f, command, stage_sample);
    if (name == "eigensolve") return run_stage(f, command, stage_eigensolve);
    if (name == "qvar") return run_stage(f, command, stage_qvar);
    if (name == "mixing") return run_stage(f, command, stage_mixing);
    if (name == "report")
        return run_stage(f, command, [](const ExperimentConfig&, const fs::path& d) { return stage_report(d); });
    return run_stage(f, command, stage_run);
}
