#include "hyperwave/quadrature.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <queue>

namespace hyperwave::quad {

namespace {

Rule build_rule(int n) {
    Rule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int k = 0; k < (n + 1) / 2; ++k) {
        // Newton on P_n from the Tricomi initial guess.
        double x = std::cos(std::numbers::pi * (k + 0.75) / (n + 0.5));
        double dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = x;
            for (int j = 2; j <= n; ++j) {
                const double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1;
            dp = n * (x * p1 - p0) / (x * x - 1);
            const double step = p1 / dp;
            x -= step;
            if (std::abs(step) < 1e-16) break;
        }
        double p0 = 1, p1 = x;
        for (int j = 2; j <= n; ++j) {
            const double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1);
        const double w = 2 / ((1 - x * x) * dp * dp);
        rule.nodes[k] = -x;
        rule.weights[k] = w;
        rule.nodes[n - 1 - k] = x;
        rule.weights[n - 1 - k] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0;
    return rule;
}

// Kronrod 15-point extension of Gauss 7 (QUADPACK qk15 constants).
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
    double a, b, value, error;
    bool operator<(const Segment& o) const { return error < o.error; }
};

Segment kronrod(const Integrand& f, double a, double b, int& evals) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    const double fc = f(c);
    double resg = fc * kWg[3];
    double resk = fc * kWgk[7];
    for (int j = 0; j < 7; ++j) {
        const double x = h * kXgk[j];
        const double s = f(c - x) + f(c + x);
        resk += kWgk[j] * s;
        if (j % 2 == 1) resg += kWg[j / 2] * s;
    }
    evals += 15;
    return {a, b, resk * h, std::abs((resk - resg) * h)};
}

}  // namespace

const Rule& gauss_legendre(int n) {
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<Rule>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<Rule>(build_rule(n));
    return *slot;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> composite_rule(double a, double b, int panels, int n) {
    const Rule& rule = gauss_legendre(n);
    Eigen::VectorXd x(panels * n), w(panels * n);
    const double width = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        const double lo = a + p * width;
        for (int k = 0; k < n; ++k) {
            x[p * n + k] = lo + 0.5 * width * (rule.nodes[k] + 1);
            w[p * n + k] = 0.5 * width * rule.weights[k];
        }
    }
    return {x, w};
}

Result adaptive(const Integrand& f, double a, double b, const Options& opt,
                const std::vector<double>& breakpoints) {
    Result out;
    if (a == b) {
        out.converged = true;
        return out;
    }
    std::vector<double> cuts{a};
    for (double p : breakpoints)
        if (p > a && p < b) cuts.push_back(p);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());

    std::priority_queue<Segment> heap;
    double value = 0, error = 0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        if (cuts[k + 1] <= cuts[k]) continue;
        Segment s = kronrod(f, cuts[k], cuts[k + 1], out.evaluations);
        value += s.value;
        error += s.error;
        heap.push(s);
    }
    int intervals = static_cast<int>(heap.size());
    while (error > std::max(opt.abs_tol, opt.rel_tol * std::abs(value)) &&
           intervals < opt.max_intervals) {
        Segment worst = heap.top();
        heap.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        if (mid <= worst.a || mid >= worst.b) {
            heap.push(worst);
            break;
        }
        Segment left = kronrod(f, worst.a, mid, out.evaluations);
        Segment right = kronrod(f, mid, worst.b, out.evaluations);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        ++intervals;
    }
    // Re-sum to shed accumulated cancellation from the running updates.
    value = 0;
    error = 0;
    while (!heap.empty()) {
        value += heap.top().value;
        error += heap.top().error;
        heap.pop();
    }
    out.value = value;
    out.error = error;
    out.converged = error <= std::max(opt.abs_tol, opt.rel_tol * std::abs(value));
    return out;
}

Result adaptive_sqrt_ends(const Integrand& f, double a, double b, Singular ends, const Options& opt) {
    if (a == b) return Result{0, 0, 0, true};
    const double mid = 0.5 * (a + b);
    Result total{0, 0, 0, true};
    auto accumulate = [&total](const Result& r) {
        total.value += r.value;
        total.error += r.error;
        total.evaluations += r.evaluations;
        total.converged = total.converged && r.converged;
    };
    const bool left = ends == Singular::Left || ends == Singular::Both;
    const bool right = ends == Singular::Right || ends == Singular::Both;
    if (!left && !right) return adaptive(f, a, b, opt);

    if (left) {
        const double hi = right ? mid : b;
        const double smax = std::sqrt(hi - a);
        accumulate(adaptive([&](double s) { return 2 * s * f(a + s * s); }, 0, smax, opt));
    }
    if (right) {
        const double lo = left ? mid : a;
        const double smax = std::sqrt(b - lo);
        accumulate(adaptive([&](double s) { return 2 * s * f(b - s * s); }, 0, smax, opt));
    }
    return total;
}

}  // namespace hyperwave::quad
