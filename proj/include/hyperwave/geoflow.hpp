#pragma once

// Geodesic flow on the unit tangent bundle of a cover, Liouville Monte Carlo
// and correlation decay against the exponential mixing bound.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "hyperwave/fuchsian.hpp"

namespace hyperwave {

/// 1 - sqrt(1 - 4 lambda) below 1/4, 1 above.
double beta(double lambda);

/// A unit tangent vector of the cover: frame (i, up) -> (z, v) on the base
/// with z in the Dirichlet domain, plus the sheet.
struct FlowState {
    Moebiusd frame;
    int sheet = 0;

    HPointd base_point() const { return apply(frame, HPointd::i()); }
    double angle() const { return tangent_of(frame).angle(); }
    SurfacePoint point() const { return {base_point(), sheet}; }
};

FlowState make_state(const CoverDescriptor& cover, const UnitTangentd& v, int sheet = 0);

struct FlowOptions {
    double step_cap = 1.0;    // longest single right multiplication
    double total_cap = 20.0;  // longest flow accepted
};

/// Right multiplication by diag(e^{t/2}, e^{-t/2}) in steps of at most
/// step_cap, reducing back into the domain after each step.
FlowState flow(const CoverDescriptor& cover, const FlowState& s, double t, const FlowOptions& opt = {});

/// Liouville-distributed state: area-uniform base point, uniform angle.
FlowState sample_liouville(const CoverDescriptor& cover, std::mt19937_64& rng);

/// Observable on T^1 X as a function of (point, angle). Lifts from X
/// ignore the angle.
using Observable = std::function<double(const SurfacePoint&, double)>;

/// Indicator of the quotient ball of radius r about c.
Observable ball_indicator(const CoverDescriptor& cover, const SurfacePoint& c, double r);
Observable constant_observable(double value);

struct CorrelationEstimate {
    double t = 0;
    double estimate = 0;
    double stderr_ = 0;
};

struct CorrelationOptions {
    int samples = 100000;
    std::uint64_t seed = 1;
    int threads = 1;
    FlowOptions flow;
};

/// <f o phi_t, g> - E f E g under the normalized Liouville measure, for each
/// t in `times` (nondecreasing, >= 0). Every sample is flowed once through
/// the whole grid. Deterministic per seed for any thread count.
std::vector<CorrelationEstimate> correlation_series(const CoverDescriptor& cover, const Observable& f,
                                                    const Observable& g, const std::vector<double>& times,
                                                    const CorrelationOptions& opt = {});

CorrelationEstimate correlation(const CoverDescriptor& cover, const Observable& f, const Observable& g, double t,
                                const CorrelationOptions& opt = {});

/// sqrt(E f^2) under the normalized Liouville measure.
double l2_norm(const CoverDescriptor& cover, const Observable& f, int samples, std::uint64_t seed);

struct MixingParams {
    double lambda1 = 0;
    double lambda1_lo = 0;   // uncertainty band of the lambda1 estimate
    double lambda1_hi = 0;
    std::vector<double> times;

    static MixingParams from_lambda1(double lambda1, double lo, double hi, std::vector<double> times);
    double beta() const { return hyperwave::beta(lambda1); }
    double constant() const;
    /// 11 e^beta (1 + t) e^{-beta t} ||f|| ||g||.
    double bound(double t, double f_norm, double g_norm) const;
    /// The bound at the low end of the lambda1 band (the bound grows as beta shrinks).
    double bound_upper(double t, double f_norm, double g_norm) const;
};

struct MixingRow {
    double t = 0;
    double estimate = 0;
    double stderr_ = 0;
    double bound = 0;
    bool resolved = false;  // bound >= 3 stderr
    bool pass = false;      // |estimate| <= bound + 3 stderr
};

std::vector<MixingRow> mixing_rows(const std::vector<CorrelationEstimate>& corr, const MixingParams& p,
                                   double f_norm, double g_norm);

/// Least-squares slope of log|estimate| on t over resolved rows whose
/// estimate exceeds 3 stderr; NaN with fewer than two such rows.
double decay_slope(const std::vector<MixingRow>& rows);

/// Columns t, estimate, stderr, bound, resolved.
void write_mixing_csv(const std::vector<MixingRow>& rows, const std::filesystem::path& path);

}  // namespace hyperwave
