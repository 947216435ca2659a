#pragma once

// Wave kernels on the hyperbolic plane and the scalar spectral functions
// built from them, with quadrature for the two-kernel integrals.

#include <optional>

#include "hyperwave/fuchsian.hpp"
#include "hyperwave/quadrature.hpp"

namespace hyperwave {

/// Spectral window I = [a, b] above 1/4 with an optional enclosing window.
struct WindowSpec {
    double a = 0;
    double b = 0;
    std::optional<double> outer_a;
    std::optional<double> outer_b;

    WindowSpec() = default;
    WindowSpec(double a_, double b_, std::optional<double> oa = std::nullopt,
               std::optional<double> ob = std::nullopt);

    bool contains(double lambda) const { return lambda >= a && lambda <= b; }
    double length() const { return b - a; }
};

inline constexpr double kAbelPrefactor = 0.11253953951963826;  // 1 / (2 sqrt(2) pi)

/// A(t, r) = (2 sqrt2 pi)^-1 (cosh t - cosh r)^-1/2 for r < t, else 0.
double abel(double t, double r);

/// sin(t sqrt(l - 1/4)) / sqrt(l - 1/4), continued through l = 1/4.
double h(double t, double lambda);
/// cos(tau t) h(t, lambda).
double h_mod(double tau, double t, double lambda);

/// (1/T) int_0^T h(t, lambda)^2 dt in closed form; lambda > 1/4.
double time_avg_h2(double lambda, double T);

struct ResonanceAverage {
    double value = 0;   // (1/T) |int_0^T h_tau(t, a) h(t, b) dt|
    double T = 0;
    double error = 0;   // quadrature error estimate of the integral / T
};

/// Time average of h_tau(., a) h(., b) over [0, pi / (2 delta)]. `m` is the
/// lower spectral bound of the hypothesis; defaults to min(a, b).
ResonanceAverage time_avg_hh_mod(double a, double b, double tau, double delta,
                                 std::optional<double> m = std::nullopt);

/// The same time average without the hypothesis check; used for scans that
/// intentionally leave the resonance region.
ResonanceAverage time_avg_hh_mod_unchecked(double a, double b, double tau, double delta);

/// Closed form of the same average (trigonometric product expansion).
double time_avg_hh_mod_exact(double a, double b, double tau, double T);

struct IntegralValue {
    double value = 0;
    double error = 0;
    bool infinite = false;
};

/// int_H A(t, d(z, x)) A(t', d(z', x)) dx for d(z, z') = d. Polar coordinates
/// about z; the angular integral is a complete elliptic integral.
IntegralValue abel_pair_integral(double t, double tp, double d, double rel_tol = 1e-10);

/// Reference evaluation of abel_pair_integral by nested adaptive quadrature
/// in (r, theta) with no closed-form step. Slow.
IntegralValue abel_pair_integral_nested(double t, double tp, double d, double rel_tol = 1e-8);

/// F(t, t', r): square of abel_pair_integral, zero for r >= t + t'.
IntegralValue F_func(double t, double tp, double r);

/// int_H 1[d(x,z) <= t] 1[d(x,z') <= t'] / sqrt(sinh d(x,z) sinh d(x,z')) dx.
IntegralValue sinh_lens_integral(double t, double tp, double d, double rel_tol = 1e-9);

/// int_0^{2T} sinh(r) (1 + r) e^{-beta r} F(t, t', r) dr.
IntegralValue mixing_integral(double t, double tp, double beta, double T);

/// Outcome of a numeric inequality lhs <= rhs.
struct BoundCheck {
    double lhs = 0;
    double rhs = 0;
    double error = 0;
    bool pass = false;
    bool degenerate = false;   // both sides infinite
};

/// abel_pair_integral <= 1[d <= t+t'] / sqrt(sinh(max(|t-t'|, d))).
BoundCheck check_abel_pair_bound(double t, double tp, double d, double tol = 1e-5);
/// Same integral against the bound without the square root.
BoundCheck check_abel_pair_bound_no_sqrt(double t, double tp, double d, double tol = 1e-5);
/// sinh_lens_integral <= 1[d <= t+t'] 4 pi min(t, t').
BoundCheck check_sinh_lens_bound(double t, double tp, double d, double tol = 1e-5);
/// F(t, t', r) <= 1[r <= t+t'] / sinh(max(t - t', r)), t' < t.
BoundCheck check_F_bound(double t, double tp, double r, double tol = 1e-5);
/// mixing_integral <= (4 / beta^2) e^{-beta (t - t') / 4}, t' < t.
BoundCheck check_mixing_integral_bound(double t, double tp, double beta, double T, double tol = 1e-5);

/// K(x, y) = sum over the cover group of A(t, d(x, g y)).
double automorphic_kernel(const CoverDescriptor& cover, double t, const SurfacePoint& x, const SurfacePoint& y);

}  // namespace hyperwave
