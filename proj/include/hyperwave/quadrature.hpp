#pragma once

// Gauss-Legendre rules and a globally adaptive Gauss-Kronrod (7/15)
// integrator, plus the square-root endpoint substitution used for the
// inverse-square-root singularities of the wave kernels.

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace hyperwave::quad {

struct Rule {
    Eigen::VectorXd nodes;    // on [-1, 1], ascending
    Eigen::VectorXd weights;
};

/// n-point Gauss-Legendre rule; cached and safe to call concurrently.
const Rule& gauss_legendre(int n);

/// Integrate f over [a, b] with an n-point Gauss-Legendre rule.
template <typename F>
auto fixed(F&& f, double a, double b, int n) {
    const Rule& rule = gauss_legendre(n);
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    using R = decltype(f(mid));
    R acc = f(mid + half * rule.nodes[0]) * rule.weights[0];
    for (int k = 1; k < n; ++k) acc += f(mid + half * rule.nodes[k]) * rule.weights[k];
    return R(acc * half);
}

/// Composite Gauss-Legendre: `panels` equal panels of order n each.
/// Returns the nodes and weights on [a, b].
std::pair<Eigen::VectorXd, Eigen::VectorXd> composite_rule(double a, double b, int panels, int n);

struct Result {
    double value = 0;
    double error = 0;
    int evaluations = 0;
    bool converged = false;
};

struct Options {
    double rel_tol = 1e-10;
    double abs_tol = 1e-14;
    int max_intervals = 2000;
};

using Integrand = std::function<double(double)>;

/// Globally adaptive Gauss-Kronrod 7/15 on [a, b] with interior breakpoints.
Result adaptive(const Integrand& f, double a, double b, const Options& opt = {},
                const std::vector<double>& breakpoints = {});

enum class Singular { None, Left, Right, Both };

/// Adaptive integration after substituting x = a + s^2 (left) and/or
/// x = b - s^2 (right); removes 1/sqrt singularities at the marked ends.
Result adaptive_sqrt_ends(const Integrand& f, double a, double b, Singular ends,
                          const Options& opt = {});

}  // namespace hyperwave::quad
