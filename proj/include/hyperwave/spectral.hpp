#pragma once

// Point-cloud discretization of -Laplacian + V on a quotient surface:
// stratified samples in the Dirichlet domain, a heat-kernel graph
// Laplacian on quotient distances, windowed eigensolves and the potential
// families.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hyperwave/fuchsian.hpp"
#include "hyperwave/kernels.hpp"
#include "hyperwave/opcalc.hpp"
#include "json.hpp"

namespace hyperwave {

struct Edge {
    int i = 0;
    int j = 0;
    double d = 0;
};

struct SurfaceSample {
    explicit SurfaceSample(CoverDescriptor c) : cover(std::move(c)) {}

    CoverDescriptor cover;
    std::vector<SurfacePoint> points;   // sheet-major: sheet s owns [s n, (s+1) n)
    int points_per_sheet = 0;
    std::uint64_t seed = 0;
    double cutoff = 0;                  // quotient distances stored up to this
    std::vector<Edge> edges;            // i < j, d <= cutoff

    std::size_t size() const { return points.size(); }
    /// Discrete measure weight Vol(X) / N.
    double weight() const { return cover.volume() / static_cast<double>(points.size()); }
    double median_nearest_neighbor() const;
};

/// Area-uniform rejection samples in the base Dirichlet domain, replicated
/// on every sheet, with quotient distances up to `cutoff`.
SurfaceSample sample_surface(const CoverDescriptor& cover, int points_per_sheet, std::uint64_t seed, double cutoff);

/// Graph bandwidth rule: epsilon = scale * (median nearest-neighbour distance)^2.
struct EpsilonRule {
    double scale = 2.0;
    double apply(const SurfaceSample& s) const;
};

/// Distance cutoff needed for a kernel of bandwidth eps: 3 kernel radii of 2 sqrt(eps).
double graph_cutoff(double eps);

/// A sample with its bandwidth, resampled if the first cutoff was too short
/// for the kernel.
struct Discretization {
    SurfaceSample sample;
    double eps = 0;
};
Discretization discretize_surface(const CoverDescriptor& cover, int points_per_sheet, std::uint64_t seed,
                                  const EpsilonRule& rule = {});

enum class PotentialKind { InducedBump, PointCloud, WeakCoupling, ConstantPlusThin };

std::string to_string(PotentialKind k);
PotentialKind potential_kind_from_string(const std::string& s);

struct PotentialSpec {
    PotentialKind kind = PotentialKind::InducedBump;
    double amplitude = 0;
    double radius = 0.5;                 // bump radius (induced bump, point cloud)
    HPointd center = HPointd::i();       // induced bump centre, on sheet 0
    std::vector<SurfacePoint> centers;   // point cloud centres
    double coupling = 0;                 // weak coupling epsilon_1
    double coupling_power = 1;           // epsilon_n = coupling / degree^power
    double constant = 0;                 // constant part (constant plus thin)
    double thin_threshold = 1.6;         // InjRad threshold (constant plus thin)

    nlohmann::json to_json() const;
    static PotentialSpec from_json(const nlohmann::json& j);
};

struct Potential {
    PotentialSpec spec;
    Eigen::VectorXd values;
    double c_min = 0;
    double c_max = 0;
    double l2_sq = 0;          // Monte Carlo estimate of ||V||^2_{L^2(X)}
    double l2_sq_stderr = 0;
};

/// Smooth bump exp(1 - 1/(1 - s^2)) for s < 1, peak value 1 at s = 0.
double bump_profile(double s);

Potential make_potential(const PotentialSpec& spec, const SurfaceSample& sample);

/// L = (D - W) / (c eps) with W_ij = exp(-d_ij^2 / (4 eps)) on stored edges;
/// c is the flat second moment of the truncated kernel times the sample
/// density, so L approximates -Laplacian. V is added on the diagonal.
Eigen::MatrixXd graph_laplacian(const SurfaceSample& sample, double eps);
Operator assemble_operator(const SurfaceSample& sample, const Eigen::VectorXd& V, double eps);

struct SpectralData {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;   // columns orthonormal under the weight
    WindowSpec window;
    double weight = 1;
    double trusted_max = 0;         // largest eigenvalue in the trusted band
    int total_modes = 0;
    nlohmann::json metadata;

    Eigen::Index count() const { return eigenvalues.size(); }
    /// rho_j = sqrt(lambda_j - 1/4); NaN below 1/4.
    Eigen::VectorXd rho() const;
};

/// All eigenpairs of H in I. The trusted band is the lowest
/// `trusted_fraction` of the modes; windows reaching past it throw
/// WindowUnreliable.
SpectralData solve_window(const Operator& H, const WindowSpec& I, double weight, double trusted_fraction = 0.1);

/// Largest eigenvalue of the trusted band.
double trusted_band_max(const Operator& H, double trusted_fraction = 0.1);

/// (1/2pi) int_{sqrt(a-1/4)}^{sqrt(b-1/4)} tanh(pi r) r dr.
double weyl_density(double a, double b);
inline double weyl_density(const WindowSpec& I) { return weyl_density(I.a, I.b); }

struct CountingReport {
    long n_v = 0;
    long n_0 = 0;
    double lower_a = 0;
    double lower_b = 0;
    bool pass = false;
};

/// N(H_V, I) >= N(H_0, [a - min(0, C_min), b - C_max]).
CountingReport counting_lower_bound_check(const Operator& H0, const Operator& HV, const WindowSpec& I, double c_min,
                                          double c_max);

/// JSON with the eigenvectors in a little-endian row-major float64 sidecar.
void save_spectral_data(const SpectralData& s, const std::filesystem::path& json_path, bool with_vectors = true);
SpectralData load_spectral_data(const std::filesystem::path& json_path);

}  // namespace hyperwave
