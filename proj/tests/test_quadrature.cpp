#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "hyperwave/quadrature.hpp"

using namespace hyperwave;

TEST_CASE("gauss-legendre is exact to degree 2n-1") {
    for (int n : {1, 2, 5, 16, 48, 96}) {
        const auto& rule = quad::gauss_legendre(n);
        CHECK(rule.weights.sum() == doctest::Approx(2.0).epsilon(1e-14));
        for (int p = 0; p <= 2 * n - 1; ++p) {
            double acc = 0;
            for (int k = 0; k < n; ++k) acc += rule.weights[k] * std::pow(rule.nodes[k], p);
            const double exact = p % 2 ? 0.0 : 2.0 / (p + 1);
            CHECK(acc == doctest::Approx(exact).epsilon(1e-13).scale(1));
        }
        for (int k = 1; k < n; ++k) CHECK(rule.nodes[k] > rule.nodes[k - 1]);
    }
}

TEST_CASE("fixed and composite rules") {
    const double v = quad::fixed([](double x) { return std::exp(x); }, 0.0, 1.0, 20);
    CHECK(v == doctest::Approx(std::exp(1.0) - 1).epsilon(1e-15));
    auto [x, w] = quad::composite_rule(0.0, std::numbers::pi, 8, 10);
    CHECK(x.size() == 80);
    CHECK((w.array() * x.array().sin()).sum() == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("adaptive gauss-kronrod") {
    auto r = quad::adaptive([](double x) { return std::cos(20 * x); }, 0.0, 3.0);
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(std::sin(60.0) / 20).epsilon(1e-11));

    // Kink at an interior breakpoint.
    r = quad::adaptive([](double x) { return std::abs(x - 0.3); }, 0.0, 1.0, {}, {0.3});
    CHECK(r.value == doctest::Approx(0.045 + 0.245).epsilon(1e-13));
    CHECK(r.evaluations == 30);
}

TEST_CASE("square-root endpoint substitution") {
    auto r = quad::adaptive_sqrt_ends([](double x) { return 1 / std::sqrt(x); }, 0.0, 1.0, quad::Singular::Left);
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-12));
    r = quad::adaptive_sqrt_ends([](double x) { return 1 / std::sqrt(2 - x); }, 1.0, 2.0, quad::Singular::Right);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-12));
    r = quad::adaptive_sqrt_ends([](double x) { return 1 / std::sqrt(1 - x * x); }, -1.0, 1.0, quad::Singular::Both);
    CHECK(r.value == doctest::Approx(std::numbers::pi).epsilon(1e-12));
    r = quad::adaptive_sqrt_ends([](double x) { return x * x; }, 0.0, 3.0, quad::Singular::None);
    CHECK(r.value == doctest::Approx(9.0).epsilon(1e-14));
}
