#pragma once

// Quantum variance sums over a spectral window: the diagonal sum, the
// near-diagonal and tau-shifted off-diagonal sums, their consistency
// identities and the time-averaged Hilbert-Schmidt majorant.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hyperwave/opcalc.hpp"
#include "hyperwave/spectral.hpp"
#include "json.hpp"

namespace hyperwave {

struct QVarConfig {
    WindowSpec window{1, 30};
    double T = 100;
    std::vector<double> taus{0, 1};
    std::vector<double> deltas{0.4, 0.2, 0.1, 0.05};

    /// Throws ConfigError naming the offending field.
    void validate() const;
    nlohmann::json to_json() const;
    static QVarConfig from_json(const nlohmann::json& j);
};

/// <a psi_j, psi_k> over the modes of S inside I, under the discrete measure.
Eigen::MatrixXd matrix_elements(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I);

/// Discrete surface mean of a.
double surface_mean(const SpectralData& S, const Eigen::VectorXd& a);

/// (1/N) sum_j |<a psi_j, psi_j> - mean(a)|^2 over lambda_j in I.
double diagonal_variance(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I);

/// (1/N) sum over ordered j != k with |rho_j - rho_k - tau| < delta.
double offdiag_variance(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I, double tau,
                        double delta);

/// Same sum over the half-open band lo <= rho_j - rho_k < hi.
double offdiag_band(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I, double lo, double hi);

struct IdentityCheck {
    double lhs = 0;
    double rhs = 0;
    double gap = 0;   // lhs - rhs for equalities, lhs - rhs (<= 0 wanted) for ceilings
    bool pass = false;
};

/// N (diagonal + full off-diagonal) of the centred observable against
/// sum_i (a_i - mean)^2.
IdentityCheck parseval_ceiling(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I,
                               double tol = 1e-9);

/// Bands [2 delta k - delta, 2 delta k + delta) over all k partition the
/// off-diagonal pairs; their total against the full off-diagonal sum.
IdentityCheck band_partition(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I, double delta,
                             double tol = 1e-9);

struct BoundChainReport {
    double sum = 0;        // (1/N) sum over band pairs, diagonal included when |tau| < delta
    double majorant = 0;   // (1/N) ||time-averaged conjugation||_HS^2 / s_min^2
    double s_min = 0;      // smallest |scalar time average| over band pairs
    double ratio = 0;
    int pairs = 0;
    long n = 0;
    bool pass = false;
    nlohmann::json to_json() const;
};

/// Band sum of the centred observable against the HS norm of its time
/// averaged conjugation on the eigenbasis of P.HV, divided by the measured
/// denominator infimum. Throws DenominatorDegenerate below `floor`.
BoundChainReport bound_chain_check(const PropagatorSet& P, const Eigen::VectorXd& a, const WindowSpec& I, double T,
                                   double tau, double delta, double floor = 1e-8);

/// Bump of the given radius about `center` on sheet 0 (or every sheet),
/// mean-centred on the sample and scaled to sup norm 1.
Eigen::VectorXd bump_observable(const SurfaceSample& sample, const HPointd& center, double radius,
                                bool every_sheet = false);

struct QVarRow {
    double tau = 0;
    double delta = 0;
    double sum2 = 0;
    double sum3 = 0;
};

struct QVarReport {
    int degree = 1;
    int genus = 2;
    long n = 0;          // N(H_V, I)
    double sum1 = 0;
    double T = 0;
    std::string potential_kind;
    std::uint64_t seed = 0;
    std::string normalization = "sup=1, mean=0";
    std::vector<QVarRow> rows;
    IdentityCheck parseval;
    std::vector<IdentityCheck> bands;   // one per delta

    nlohmann::json to_json() const;
    static QVarReport from_json(const nlohmann::json& j);
};

QVarReport qvar_report(const SpectralData& S, const Eigen::VectorXd& a, const QVarConfig& cfg, int degree, int genus,
                       const std::string& potential_kind, std::uint64_t seed);

/// Columns degree, genus, N, sum1, sum2, sum3, tau, delta, T, potential_kind, seed.
void write_qvar_csv(const std::vector<QVarReport>& reports, const std::filesystem::path& path);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct TrendConfig {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    int points_per_sheet = 500;
    EpsilonRule epsilon;
    PotentialSpec potential;
    HPointd observable_center = HPointd::i();
    double observable_radius = 1.0;
    QVarConfig qvar;
    int threads = 1;
};

struct TrendResult {
    std::vector<QVarReport> reports;   // covers x seeds, cover-major
    std::vector<int> degrees;
    std::vector<double> mean_sum1;     // per cover, over seeds
    std::vector<double> spread_sum1;   // per cover: max - min over seeds
    double spearman = 0;               // mean_sum1 against degree
    double min_gap = 0;                // smallest gap between consecutive degrees
    double max_spread = 0;
    bool separated = false;            // each consecutive pair: both spreads below their gap
    bool pass = false;                 // spearman <= 0 and separated

    nlohmann::json to_json() const;
};

/// Trend statistics from reports laid out cover-major with `seeds_per_cover`
/// reports per cover.
TrendResult trend_from_reports(std::vector<QVarReport> reports, std::size_t seeds_per_cover);

/// Covers need strictly increasing degree; at least three.
TrendResult trend_experiment(const std::vector<CoverDescriptor>& covers, const TrendConfig& cfg);

/// One surface, one seed: sample, operator, window solve and report.
QVarReport qvar_on_cover(const CoverDescriptor& cover, std::uint64_t seed, const TrendConfig& cfg);

}  // namespace hyperwave
