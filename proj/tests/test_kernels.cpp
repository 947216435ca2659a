#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "hyperwave/kernels.hpp"

using namespace hyperwave;

namespace {

constexpr double kPi = std::numbers::pi;

const double kGrid[] = {0.5, 1.0, 2.0, 4.0};
const double kDist[] = {0.0, 0.3, 1.0, 3.0};

}  // namespace

TEST_CASE("window spec") {
    CHECK_NOTHROW(WindowSpec(0.5, 1.0));
    CHECK_NOTHROW(WindowSpec(0.5, 1.0, 0.3, 2.0));
    CHECK_THROWS_AS(WindowSpec(0.2, 1.0), InvalidArgument);
    CHECK_THROWS_AS(WindowSpec(1.0, 0.5), InvalidArgument);
    CHECK_THROWS_AS(WindowSpec(0.5, 1.0, 0.6, 2.0), InvalidArgument);
    CHECK_THROWS_AS(WindowSpec(0.5, 1.0, 0.3, 0.9), InvalidArgument);
    const WindowSpec w(0.5, 1.0);
    CHECK(w.contains(0.75));
    CHECK_FALSE(w.contains(1.5));
    CHECK(w.length() == 0.5);
}

TEST_CASE("abel kernel") {
    CHECK(abel(1, 2) == 0.0);
    CHECK(abel(1, 1) == 0.0);
    const double direct = 1 / (2 * std::sqrt(2.0) * kPi) / std::sqrt(std::cosh(2.0) - std::cosh(1.0));
    CHECK(abel(2, 1) == doctest::Approx(direct).epsilon(1e-14));
    CHECK(abel(2, 1) == doctest::Approx(0.0755467).epsilon(1e-6));
    // Square-root blow-up at the wave front: A sqrt(t - r) -> c / sqrt(sinh t).
    const double limit = kAbelPrefactor / std::sqrt(std::sinh(2.0));
    for (int k = 2; k <= 8; ++k) {
        const double e = std::pow(10.0, -k);
        const double scaled = abel(2, 2 - e) * std::sqrt(e);
        CHECK(scaled < 2 * limit);
        if (k >= 4) CHECK(scaled == doctest::Approx(limit).epsilon(1e-3));
    }
}

TEST_CASE("spectral function h") {
    CHECK(h(kPi / 2, 1.25) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(h(0, 3.0) == 0.0);
    CHECK(h(0, -2.0) == 0.0);
    CHECK(h(1, 0) == doctest::Approx(2 * std::sinh(0.5)).epsilon(1e-14));
    CHECK(h(1, 0) == doctest::Approx(1.04219).epsilon(1e-5));
    for (double t = 0; t <= 10; t += 0.5) {
        // The leading correction is mu t^3 / 6, so 1e-6 holds up to t ~ 8.4.
        const double slack = 1e-8 * t * t * t / 6 * 1.001 + 1e-15;
        CHECK(std::abs(h(t, 0.25 + 1e-8) - t) <= slack);
        CHECK(std::abs(h(t, 0.25 - 1e-8) - t) <= slack);
        if (t <= 8) CHECK(std::abs(h(t, 0.25 + 1e-8) - t) <= 1e-6);
        CHECK(h(t, 0.25) == t);
        // Both sides of the series cutoff agree.
        const double jump = h(t, 0.25 + 1.0001e-8) - h(t, 0.25 + 0.9999e-8);
        CHECK(std::abs(jump + 2e-12 * t * t * t / 6) <= 1e-14 * (1 + t));
    }
    CHECK(h_mod(0, 1.3, 2.0) == h(1.3, 2.0));
    CHECK(h_mod(0.7, 0, 2.0) == 0.0);
    CHECK(std::abs(h_mod(1, kPi, 1.25)) < 1e-15);
}

TEST_CASE("time average of h squared") {
    CHECK(time_avg_h2(1.25, kPi) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(time_avg_h2(1.25, 1e8) == doctest::Approx(0.5).epsilon(1e-7));
    CHECK_THROWS_AS(time_avg_h2(0.25, 1.0), InvalidArgument);
    CHECK_THROWS_AS(time_avg_h2(1.0, 0.0), InvalidArgument);
    quad::Options opt;
    opt.rel_tol = 1e-13;
    for (double lambda : {0.3, 0.5, 0.8, 1.0, 3.0, 10.0})
        for (double T : {0.5, 3.0, 17.0, 100.0}) {
            const auto q = quad::adaptive([&](double t) { return h(t, lambda) * h(t, lambda); }, 0, T, opt);
            CHECK(time_avg_h2(lambda, T) == doctest::Approx(q.value / T).epsilon(1e-10));
        }
    double inf = 1e300;
    for (int k = 0; k < 200; ++k) inf = std::min(inf, time_avg_h2(0.5 + 0.5 * k / 199.0, 100.0));
    CHECK(inf >= 4.0 / 9.0);
}

TEST_CASE("resonance time average") {
    // Closed form against quadrature.
    for (double a : {0.5, 1.0, 2.5})
        for (double tau : {0.0, 0.05, -0.1}) {
            const double b = std::pow(std::sqrt(a - 0.25) - tau, 2) + 0.25;
            if (!(b > 0.25)) continue;
            const double delta = 0.05 * std::sqrt(std::min(a, b) - 0.25);
            const auto r = time_avg_hh_mod(a, b, tau, delta);
            CHECK(r.T == doctest::Approx(kPi / (2 * delta)));
            CHECK(r.value == doctest::Approx(time_avg_hh_mod_exact(a, b, tau, r.T)).epsilon(1e-8));
        }
    // Diagonal resonance tends to the mean of h^2.
    const auto diag = time_avg_hh_mod_unchecked(1.25, 1.25, 0, 1e-3);
    CHECK(diag.value == doctest::Approx(time_avg_h2(1.25, diag.T)).epsilon(1e-9));
    CHECK(diag.value == doctest::Approx(0.5).epsilon(1e-3));

    CHECK_THROWS_AS(time_avg_hh_mod(0.2, 1.0, 0, 0.01), HypothesisViolated);
    CHECK_THROWS_AS(time_avg_hh_mod(1.0, 1.0, 0, 0.5), HypothesisViolated);
    CHECK_THROWS_AS(time_avg_hh_mod(1.0, 1.0, 0, 0.0), HypothesisViolated);
    CHECK_THROWS_AS(time_avg_hh_mod(1.0, 1.0, 0.2, 0.01), HypothesisViolated);
    CHECK_THROWS_AS(time_avg_hh_mod(1.0, 1.0, 0, 0.01, 0.2), HypothesisViolated);

    // Off resonance the average decays like delta.
    const double d1 = time_avg_hh_mod_unchecked(1.25, 1.25, 0.7, 1e-2).value;
    const double d2 = time_avg_hh_mod_unchecked(1.25, 1.25, 0.7, 1e-3).value;
    CHECK(d2 < 0.2 * d1 + 1e-12);
}

TEST_CASE("abel pair integral: closed-form angle against nested quadrature") {
    const double cases[][3] = {{1, 1, 0.3}, {2, 1, 0.5}, {1, 2, 0.5}, {0.5, 4, 3}, {4, 0.5, 1},
                               {2, 2, 1}, {1, 0.5, 0}, {4, 2, 3}, {2, 1, 2.9}};
    for (const auto& c : cases) {
        const auto fast = abel_pair_integral(c[0], c[1], c[2]);
        const auto slow = abel_pair_integral_nested(c[0], c[1], c[2]);
        CHECK(fast.value == doctest::Approx(slow.value).epsilon(1e-6));
    }
    CHECK(abel_pair_integral(1, 1, 0).infinite);
    CHECK(abel_pair_integral(1, 2, 3.5).value == 0.0);
}

TEST_CASE("two-point function F") {
    CHECK(F_func(2, 1, 4).value == 0.0);
    CHECK(F_func(2, 1, 3).value == 0.0);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.3, 3);
    for (int k = 0; k < 20; ++k) {
        const double t = u(rng), tp = u(rng), r = u(rng);
        CHECK(F_func(t, tp, r).value == doctest::Approx(F_func(tp, t, r).value).epsilon(1e-8));
    }
    const auto F = F_func(2, 1, 0.5);
    CHECK(F.value > 0);
    CHECK(F.value <= 1 / std::sinh(1.0));
    CHECK(check_F_bound(2, 1, 0.5).pass);
    CHECK_THROWS_AS(check_F_bound(1, 2, 0.5), InvalidArgument);
}

TEST_CASE("abel pair bound on the grid") {
    int tighter_fails = 0;
    for (double t : kGrid)
        for (double tp : kGrid)
            for (double d : kDist) {
                const auto c = check_abel_pair_bound(t, tp, d);
                CHECK_MESSAGE(c.pass, "t=" << t << " t'=" << tp << " d=" << d << " lhs=" << c.lhs << " rhs=" << c.rhs);
                if (!check_abel_pair_bound_no_sqrt(t, tp, d).pass) ++tighter_fails;
            }
    MESSAGE("bound without square root fails at " << tighter_fails << " grid points");
}

TEST_CASE("lens bound on the grid") {
    CHECK(sinh_lens_integral(1, 2, 0).value == doctest::Approx(2 * kPi).epsilon(1e-12));
    for (double t : kGrid)
        for (double tp : kGrid)
            for (double d : kDist) {
                const auto c = check_sinh_lens_bound(t, tp, d);
                CHECK_MESSAGE(c.pass, "t=" << t << " t'=" << tp << " d=" << d << " lhs=" << c.lhs << " rhs=" << c.rhs);
                const auto s = sinh_lens_integral(tp, t, d);
                CHECK(s.value == doctest::Approx(c.lhs).epsilon(1e-6));
            }
}

TEST_CASE("mixing integral bound") {
    for (double beta : {0.5, 1.0})
        for (double t : kGrid)
            for (double tp : kGrid) {
                if (!(tp < t)) continue;
                const auto c = check_mixing_integral_bound(t, tp, beta, t + tp);
                CHECK_MESSAGE(c.pass, "beta=" << beta << " t=" << t << " t'=" << tp << " lhs=" << c.lhs << " rhs=" << c.rhs);
            }
}

TEST_CASE("automorphic kernel") {
    const auto cover = CoverDescriptor::trivial(std::make_shared<FuchsianGroup>(bolza_group()));
    const double sys = systole(cover);
    const SurfacePoint x{HPointd::i(), 0};
    CHECK(automorphic_kernel(cover, 1.0, x, x) == doctest::Approx(abel(1.0, 0.0)).epsilon(1e-14));
    CHECK(automorphic_kernel(cover, sys - 0.1, x, x) == doctest::Approx(abel(sys - 0.1, 0.0)).epsilon(1e-14));

    const SurfacePoint y{HPointd(0.2, 1.3), 0};
    const double q = quotient_dist(cover, x, y, 5.0);
    CHECK(automorphic_kernel(cover, 0.9 * q, x, y) == 0.0);
    CHECK(automorphic_kernel(cover, q + 0.5, x, y) > 0.0);

    std::mt19937_64 rng(23);
    for (int k = 0; k < 50; ++k) {
        const SurfacePoint a{sample_domain_point(cover, rng).z, 0};
        const SurfacePoint b{sample_domain_point(cover, rng).z, 0};
        const double t = 4.0 + 0.01 * k;
        double kab = 0, kba = 0;
        try {
            kab = automorphic_kernel(cover, t, a, b);
            kba = automorphic_kernel(cover, t, b, a);
        } catch (const SingularConfiguration&) {
            continue;
        }
        CHECK(kab == doctest::Approx(kba).epsilon(1e-9));
    }

    const auto cyc = CoverDescriptor::cyclic(std::make_shared<FuchsianGroup>(bolza_group()), 2);
    const SurfacePoint x0{HPointd::i(), 0}, x1{HPointd::i(), 1};
    CHECK(automorphic_kernel(cyc, 1.0, x0, x1) == 0.0);
    CHECK(automorphic_kernel(cyc, 5.0, x0, x1) == doctest::Approx(automorphic_kernel(cyc, 5.0, x1, x0)).epsilon(1e-9));
}
