#include "hyperwave/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace hyperwave {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

// cosh x - cosh y without cancellation.
double cosh_diff(double x, double y) { return 2 * std::sinh((x + y) / 2) * std::sinh((x - y) / 2); }

// Integrate over [lo, hi] split at the given interior points; every piece
// gets the square-root substitution at both ends, which is harmless for
// smooth pieces and removes inverse-square-root and logarithmic endpoint
// behaviour where the pieces meet.
quad::Result integrate_pieces(const quad::Integrand& f, double lo, double hi, std::vector<double> cuts,
                              const quad::Options& opt) {
    cuts.push_back(lo);
    cuts.push_back(hi);
    std::sort(cuts.begin(), cuts.end());
    quad::Result total{0, 0, 0, true};
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double a = std::max(cuts[k], lo), b = std::min(cuts[k + 1], hi);
        if (!(b > a)) continue;
        const auto r = quad::adaptive_sqrt_ends(f, a, b, quad::Singular::Both, opt);
        total.value += r.value;
        total.error += r.error;
        total.evaluations += r.evaluations;
        total.converged = total.converged && r.converged;
    }
    return total;
}

// int_0^{2pi} (alpha + beta cos theta)_+^{-1/2} d theta with alpha + beta
// and alpha - beta passed in cancellation-free form.
// libstdc++ returns NaN at k = 1; the logarithmic singularity is integrable.
double ellint_k(double k) { return std::comp_ellint_1(std::min(k, 1 - 1e-16)); }

double angular_abel(double apb, double amb, double beta) {
    if (apb <= 0) return 0;
    if (beta <= 0) return 2 * kPi / std::sqrt(apb);
    if (amb > 0) {
        const double k = std::sqrt(std::min(1.0, 2 * beta / apb));
        return 4 / std::sqrt(apb) * ellint_k(k);
    }
    const double k = std::sqrt(std::min(1.0, apb / (2 * beta)));
    return 4 / std::sqrt(2 * beta) * ellint_k(k);
}

}  // namespace

WindowSpec::WindowSpec(double a_, double b_, std::optional<double> oa, std::optional<double> ob)
    : a(a_), b(b_), outer_a(oa), outer_b(ob) {
    if (!(a > 0.25 && a < b)) throw InvalidArgument("window needs 1/4 < a < b");
    if (outer_a && !(*outer_a <= a && *outer_a > 0.25)) throw InvalidArgument("outer window must contain [a, b]");
    if (outer_b && !(*outer_b >= b)) throw InvalidArgument("outer window must contain [a, b]");
}

double abel(double t, double r) {
    if (!(r < t)) return 0;
    return kAbelPrefactor / std::sqrt(cosh_diff(t, r));
}

double h(double t, double lambda) {
    const double mu = lambda - 0.25;
    if (std::abs(mu) < 1e-8) {
        const double t2 = t * t;
        return t * (1 - mu * t2 / 6 + mu * mu * t2 * t2 / 120);
    }
    if (mu > 0) {
        const double w = std::sqrt(mu);
        return std::sin(t * w) / w;
    }
    const double w = std::sqrt(-mu);
    return std::sinh(t * w) / w;
}

double h_mod(double tau, double t, double lambda) { return std::cos(tau * t) * h(t, lambda); }

double time_avg_h2(double lambda, double T) {
    if (!(lambda > 0.25)) throw InvalidArgument("time_avg_h2 needs lambda > 1/4");
    if (!(T > 0)) throw InvalidArgument("time_avg_h2 needs T > 0");
    const double mu = lambda - 0.25;
    const double w = std::sqrt(mu);
    return 1 / (2 * mu) - std::sin(2 * T * w) / (4 * T * mu * w);
}

double time_avg_hh_mod_exact(double a, double b, double tau, double T) {
    const double wa = std::sqrt(a - 0.25), wb = std::sqrt(b - 0.25);
    auto S = [T](double k) { return std::abs(k) < 1e-14 ? T : std::sin(k * T) / k; };
    // cos(tau t) sin(wa t) sin(wb t) as four cosines.
    const double integral =
        0.25 * (S(wa - wb - tau) + S(wa - wb + tau) - S(wa + wb - tau) - S(wa + wb + tau)) / (wa * wb);
    return std::abs(integral) / T;
}

ResonanceAverage time_avg_hh_mod_unchecked(double a, double b, double tau, double delta) {
    if (!(a > 0.25 && b > 0.25)) throw HypothesisViolated("a and b must exceed 1/4");
    if (!(delta > 0)) throw HypothesisViolated("delta must be positive");
    ResonanceAverage out;
    out.T = kPi / (2 * delta);
    const double wa = std::sqrt(a - 0.25), wb = std::sqrt(b - 0.25);
    const double fastest = wa + wb + std::abs(tau);
    const int panels = static_cast<int>(std::ceil(out.T * fastest / kPi)) + 1;
    std::vector<double> cuts;
    for (int k = 1; k < panels; ++k) cuts.push_back(out.T * k / panels);
    quad::Options opt;
    opt.rel_tol = 1e-13;
    opt.abs_tol = 1e-15;
    opt.max_intervals = 8 * panels + 200;
    const auto r = quad::adaptive([&](double t) { return h_mod(tau, t, a) * h(t, b); }, 0, out.T, opt, cuts);
    out.value = std::abs(r.value) / out.T;
    out.error = r.error / out.T;
    return out;
}

ResonanceAverage time_avg_hh_mod(double a, double b, double tau, double delta, std::optional<double> m) {
    if (!(a > 0.25 && b > 0.25)) throw HypothesisViolated("a and b must exceed 1/4");
    const double mm = m.value_or(std::min(a, b));
    if (!(mm > 0.25 && mm <= std::min(a, b))) throw HypothesisViolated("need 1/4 < m <= min(a, b)");
    const double dmax = 2.0 / 9.0 * std::sqrt(mm - 0.25);
    if (!(delta > 0 && delta < dmax)) throw HypothesisViolated("delta outside (0, 2/9 sqrt(m - 1/4))");
    const double off = std::sqrt(a - 0.25) - std::sqrt(b - 0.25) - tau;
    if (!(std::abs(off) < delta)) throw HypothesisViolated("resonance condition fails");
    return time_avg_hh_mod_unchecked(a, b, tau, delta);
}

IntegralValue abel_pair_integral(double t, double tp, double d, double rel_tol) {
    if (!(t > 0 && tp > 0 && d >= 0)) throw InvalidArgument("abel_pair_integral needs t, t' > 0 and d >= 0");
    IntegralValue out;
    if (d >= t + tp) return out;
    if (d == 0 && t == tp) {
        out.value = kInf;
        out.infinite = true;
        return out;
    }
    const double sd = std::sinh(d);
    auto integrand = [&](double r) {
        if (!(r < t)) return 0.0;
        const double beta = std::sinh(r) * sd;
        const double apb = cosh_diff(tp, r - d);
        const double amb = cosh_diff(tp, r + d);
        return std::sinh(r) / std::sqrt(cosh_diff(t, r)) * angular_abel(apb, amb, beta);
    };
    const double hi = std::min(t, d + tp);
    quad::Options opt;
    opt.rel_tol = rel_tol;
    opt.abs_tol = 1e-15;
    opt.max_intervals = 4000;
    const auto r = integrate_pieces(integrand, 0, hi, {tp - d, d - tp}, opt);
    const double c2 = kAbelPrefactor * kAbelPrefactor;
    out.value = c2 * r.value;
    out.error = c2 * r.error;
    if (!r.converged && out.error > 1e-6 * std::abs(out.value) + 1e-12)
        throw QuadratureFailure("abel_pair_integral did not converge");
    return out;
}

IntegralValue abel_pair_integral_nested(double t, double tp, double d, double rel_tol) {
    if (!(t > 0 && tp > 0 && d >= 0)) throw InvalidArgument("abel_pair_integral_nested arguments");
    IntegralValue out;
    if (d >= t + tp) return out;
    if (d == 0 && t == tp) {
        out.value = kInf;
        out.infinite = true;
        return out;
    }
    quad::Options inner_opt;
    inner_opt.rel_tol = rel_tol * 0.1;
    inner_opt.abs_tol = 1e-14;
    inner_opt.max_intervals = 4000;
    const double cd = std::cosh(d), sd = std::sinh(d);
    auto inner = [&](double r) {
        if (!(r < t)) return 0.0;
        const double cr = std::cosh(r), sr = std::sinh(r);
        const double ctp = std::cosh(tp);
        auto f = [&](double th) {
            // cosh t' - cosh rho with cosh rho by the law of cosines.
            const double u = ctp - (cr * cd - sr * sd * std::cos(th));
            return u > 0 ? 1 / std::sqrt(u) : 0.0;
        };
        double thmax = kPi;
        const double beta = sr * sd;
        if (beta > 0) {
            const double c0 = (cr * cd - ctp) / beta;
            if (c0 >= 1) return 0.0;
            if (c0 > -1) thmax = std::acos(c0);
        } else if (cr * cd >= ctp) {
            return 0.0;
        }
        const auto res = quad::adaptive_sqrt_ends(f, 0, thmax, thmax < kPi ? quad::Singular::Right : quad::Singular::None,
                                                  inner_opt);
        return sr / std::sqrt(cosh_diff(t, r)) * 2 * res.value;
    };
    quad::Options opt;
    opt.rel_tol = rel_tol;
    opt.abs_tol = 1e-14;
    opt.max_intervals = 2000;
    const auto r = integrate_pieces(inner, 0, std::min(t, d + tp), {tp - d, d - tp}, opt);
    const double c2 = kAbelPrefactor * kAbelPrefactor;
    out.value = c2 * r.value;
    out.error = c2 * r.error;
    return out;
}

IntegralValue F_func(double t, double tp, double r) {
    if (!(t > 0 && tp > 0 && r >= 0)) throw InvalidArgument("F_func needs t, t' > 0 and r >= 0");
    IntegralValue out;
    if (r >= t + tp) return out;
    const auto I = abel_pair_integral(t, tp, r, 1e-10);
    if (I.infinite) {
        out.value = kInf;
        out.infinite = true;
        return out;
    }
    if (I.error > 1e-6 * I.value + 1e-12) throw QuadratureFailure("F_func relative error above 1e-6");
    out.value = I.value * I.value;
    out.error = 2 * I.value * I.error;
    return out;
}

IntegralValue sinh_lens_integral(double t, double tp, double d, double rel_tol) {
    if (!(t > 0 && tp > 0 && d >= 0)) throw InvalidArgument("sinh_lens_integral arguments");
    IntegralValue out;
    if (d > t + tp) return out;
    if (d == 0) {
        // rho = r: 2 pi int_0^{min} dr.
        out.value = 2 * kPi * std::min(t, tp);
        return out;
    }
    const double cd = std::cosh(d), sd = std::sinh(d), ctp = std::cosh(tp);
    quad::Options inner_opt;
    inner_opt.rel_tol = rel_tol * 0.1;
    inner_opt.abs_tol = 1e-14;
    inner_opt.max_intervals = 4000;
    auto inner = [&](double r) {
        const double cr = std::cosh(r), sr = std::sinh(r);
        const double beta = sr * sd;
        double thmax = kPi;
        if (beta <= 0) {
            if (r > tp) return 0.0;
        } else {
            const double c0 = (cr * cd - ctp) / beta;
            if (c0 >= 1) return 0.0;
            if (c0 > -1) thmax = std::acos(c0);
        }
        const double base = 2 * std::pow(std::sinh((r - d) / 2), 2);
        auto f = [&](double th) {
            const double s = std::sin(th / 2);
            const double u = base + 2 * beta * s * s;   // cosh rho - 1
            const double sh = std::sqrt(u * (u + 2));
            return sh > 0 ? 1 / std::sqrt(sh) : 0.0;
        };
        const auto res = quad::adaptive_sqrt_ends(f, 0, thmax, quad::Singular::Left, inner_opt);
        return std::sqrt(sr) * 2 * res.value;
    };
    quad::Options opt;
    opt.rel_tol = rel_tol;
    opt.abs_tol = 1e-14;
    opt.max_intervals = 2000;
    const auto r = integrate_pieces(inner, 0, std::min(t, d + tp), {d, tp - d, d - tp}, opt);
    out.value = r.value;
    out.error = r.error;
    return out;
}

IntegralValue mixing_integral(double t, double tp, double beta, double T) {
    if (!(t > 0 && tp > 0 && beta > 0 && T > 0)) throw InvalidArgument("mixing_integral arguments");
    IntegralValue out;
    if (t == tp) {
        out.value = kInf;
        out.infinite = true;
        return out;
    }
    double ferr = 0;
    auto f = [&](double r) {
        const auto F = F_func(t, tp, r);
        ferr = std::max(ferr, F.error / std::max(F.value, 1e-300));
        return std::sinh(r) * (1 + r) * std::exp(-beta * r) * F.value;
    };
    quad::Options opt;
    opt.rel_tol = 1e-8;
    opt.abs_tol = 1e-14;
    opt.max_intervals = 400;
    const auto r = integrate_pieces(f, 0, std::min(2 * T, t + tp), {std::abs(t - tp)}, opt);
    out.value = r.value;
    out.error = r.error + ferr * std::abs(r.value);
    return out;
}

namespace {

BoundCheck finish(double lhs, double rhs, double err, double tol) {
    BoundCheck c{lhs, rhs, err, false, false};
    if (std::isinf(lhs) && std::isinf(rhs)) {
        c.degenerate = true;
        c.pass = true;
    } else {
        c.pass = lhs <= rhs + tol + err;
    }
    return c;
}

}  // namespace

BoundCheck check_abel_pair_bound(double t, double tp, double d, double tol) {
    const auto I = abel_pair_integral(t, tp, d);
    const double m = std::max(std::abs(t - tp), d);
    const double rhs = d <= t + tp ? (m > 0 ? 1 / std::sqrt(std::sinh(m)) : kInf) : 0.0;
    return finish(I.value, rhs, I.error, tol);
}

BoundCheck check_abel_pair_bound_no_sqrt(double t, double tp, double d, double tol) {
    const auto I = abel_pair_integral(t, tp, d);
    const double m = std::max(std::abs(t - tp), d);
    const double rhs = d <= t + tp ? (m > 0 ? 1 / std::sinh(m) : kInf) : 0.0;
    return finish(I.value, rhs, I.error, tol);
}

BoundCheck check_sinh_lens_bound(double t, double tp, double d, double tol) {
    const auto L = sinh_lens_integral(t, tp, d);
    const double rhs = d <= t + tp ? 4 * kPi * std::min(t, tp) : 0.0;
    return finish(L.value, rhs, L.error, tol);
}

BoundCheck check_F_bound(double t, double tp, double r, double tol) {
    if (!(tp < t)) throw InvalidArgument("check_F_bound needs t' < t");
    const auto F = F_func(t, tp, r);
    const double m = std::max(t - tp, r);
    const double rhs = r <= t + tp ? 1 / std::sinh(m) : 0.0;
    return finish(F.value, rhs, F.error, tol);
}

BoundCheck check_mixing_integral_bound(double t, double tp, double beta, double T, double tol) {
    if (!(tp < t)) throw InvalidArgument("check_mixing_integral_bound needs t' < t");
    const auto M = mixing_integral(t, tp, beta, T);
    const double rhs = 4 / (beta * beta) * std::exp(-beta / 4 * (t - tp));
    return finish(M.value, rhs, M.error, tol);
}

double automorphic_kernel(const CoverDescriptor& cover, double t, const SurfacePoint& x, const SurfacePoint& y) {
    if (!(t > 0)) return 0;
    const double cap = cover.base().options().enumeration_cap;
    const LatticeBall ball = enumerate_ball(cover, x.z, y.z, std::min(t + 1e-9, cap));
    double sum = 0;
    for (std::size_t k = 0; k < ball.size(); ++k) {
        if (ball.elements[k].perm[y.sheet] != x.sheet) continue;
        const double d = ball.distances[k];
        if (std::abs(d - t) < 1e-9)
            throw SingularConfiguration("an orbit point lies within 1e-9 of the wave front");
        sum += abel(t, d);
    }
    return sum;
}

}  // namespace hyperwave
