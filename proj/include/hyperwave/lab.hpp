#pragma once

// Experiment orchestration: configuration, file-based pipeline stages, the
// verification suite and the output manifest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hyperwave/fuchsian.hpp"
#include "hyperwave/geoflow.hpp"
#include "hyperwave/qvar.hpp"
#include "hyperwave/spectral.hpp"
#include "json.hpp"

namespace hyperwave {

inline constexpr const char* kVersion = "1.0.0";

// ------------------------------------------------------------- verification

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string summary;
    nlohmann::json detail;
};

/// Ball counts against e^{t+1} / r^2, r = min(1, injrad / 2), for t = 1..t_max
/// and random point pairs on each cover.
CheckResult verify_counting(const std::vector<CoverDescriptor>& covers, int pairs = 10, int t_max = 8,
                            std::uint64_t seed = 1);

/// Duhamel residual at quadrature order `order` on random instances, and its
/// decrease under doubling of the order down to the rounding floor.
CheckResult verify_duhamel(int instances = 20, int dim = 16, int order = 48, std::uint64_t seed = 1);

/// inf over a lambda grid in [1/2, 1] of the time average of h^2 against 4/9.
CheckResult verify_time_average(int grid = 200, double T = 100);

/// Abel pair, lens and mixing-integral bounds on their grids.
CheckResult verify_integrals(double tol = 1e-5);

/// Matrix elements recovered from the time-averaged conjugation.
CheckResult verify_reconstruction(int instances = 5, std::uint64_t seed = 1);

/// N(H_V, I) >= N(H_0, [a - min(0, C_min), b - C_max]) on discretized
/// surfaces with several potentials and windows.
CheckResult verify_sandwich(std::uint64_t seed = 1);

struct WeylInputs {
    int points = 2000;
    std::uint64_t seed = 1;
    WindowSpec window{1, 30};
    double tolerance = 0.3;
};
/// Discrete count per volume against weyl_density on Bolza. Also returns the
/// lowest nonzero free eigenvalue in detail["lambda1"].
CheckResult verify_weyl(const WeylInputs& in = {});

struct MixingInputs {
    double lambda1 = 3.84;
    double lambda1_lo = 3.5;
    double lambda1_hi = 4.2;
    int samples = 100000;
    std::uint64_t seed = 7;
    double ball_radius = 0.7;
    int t_max = 12;
    int threads = 1;
};
CheckResult verify_mixing(const CoverDescriptor& cover, const MixingInputs& in);

/// Parseval ceiling and band partition on every report.
CheckResult verify_qvar_identities(const std::vector<QVarReport>& reports);

CheckResult verify_trend(const TrendResult& trend);

// ------------------------------------------------------------------ config

struct FlowConfig {
    int samples = 100000;
    std::uint64_t seed = 7;
    double ball_radius = 0.7;
    int t_max = 12;
    std::optional<double> lambda1;   // defaults to the eigensolve estimate
};

struct ExperimentConfig {
    nlohmann::json surface = {{"base", "bolza"}};
    nlohmann::json cover = {{"kind", "trivial"}};
    int points_per_sheet = 500;
    std::uint64_t seed = 1;
    double epsilon_scale = 2.0;
    PotentialSpec potential;
    QVarConfig qvar;
    double observable_radius = 1.0;
    FlowConfig flow;
    std::vector<int> degrees{1, 2, 4};
    std::vector<std::uint64_t> trend_seeds{1, 2, 3};
    std::set<std::string> verify;     // suites run by verify-lemmas
    int threads = 1;
    std::filesystem::path base_dir;   // relative paths resolve against this

    /// Parses and validates; ConfigError messages start with the field path.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    CoverDescriptor make_cover() const;
    /// Cyclic cover of the configured base surface (trivial for degree 1).
    CoverDescriptor cover_of_degree(int degree) const;
};

/// Names accepted by verify-lemmas --only.
const std::vector<std::string>& verification_suites();

// ------------------------------------------------------------------ stages

/// Exclusive per-directory lock, released on destruction.
class OutputLock {
public:
    explicit OutputLock(const std::filesystem::path& dir);
    ~OutputLock();
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::filesystem::path path_;
};

std::string sha256_file(const std::filesystem::path& path);

/// manifest.json listing every file under dir with its SHA-256.
void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& command);

/// Each stage reads its prerequisites from `dir` (MissingArtifact naming the
/// expected path when absent) and returns true when its checks passed.
bool stage_build_cover(const ExperimentConfig& cfg, const std::filesystem::path& dir);
bool stage_sample(const ExperimentConfig& cfg, const std::filesystem::path& dir);
bool stage_eigensolve(const ExperimentConfig& cfg, const std::filesystem::path& dir);
bool stage_qvar(const ExperimentConfig& cfg, const std::filesystem::path& dir);
bool stage_mixing(const ExperimentConfig& cfg, const std::filesystem::path& dir);
bool stage_verify(const ExperimentConfig& cfg, const std::filesystem::path& dir, const std::vector<std::string>& only);
/// Merges every qvar.csv below dir into summary.csv keyed by degree.
bool stage_report(const std::filesystem::path& dir);
/// Whole pipeline: per degree and seed the cover, sample, eigensolve and qvar
/// stages, then the trend summary, mixing, verification and report.
bool stage_run(const ExperimentConfig& cfg, const std::filesystem::path& dir);

}  // namespace hyperwave
