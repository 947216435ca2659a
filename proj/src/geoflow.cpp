#include "hyperwave/geoflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <thread>

namespace hyperwave {

namespace {

constexpr int kChunk = 4096;

FlowState reduce_state(const CoverDescriptor& cover, const Moebiusd& frame, int sheet) {
    const Reduction r = reduce_to_domain(cover, apply(frame, HPointd::i()));
    return {r.to_original.g.inverse() * frame, invert(r.to_original.perm)[sheet]};
}

struct Moments {
    double sum = 0;
    double sum_sq = 0;
};

}  // namespace

double beta(double lambda) {
    if (!(lambda >= 0)) throw InvalidArgument("beta requires lambda >= 0");
    return lambda <= 0.25 ? 1 - std::sqrt(1 - 4 * lambda) : 1.0;
}

FlowState make_state(const CoverDescriptor& cover, const UnitTangentd& v, int sheet) {
    if (sheet < 0 || sheet >= cover.degree()) throw InvalidArgument("sheet out of range");
    return reduce_state(cover, frame_of(v), sheet);
}

FlowState flow(const CoverDescriptor& cover, const FlowState& s, double t, const FlowOptions& opt) {
    if (!(opt.step_cap > 0)) throw InvalidArgument("flow step cap must be positive");
    if (!(std::abs(t) <= opt.total_cap))
        throw CapExceeded("flow time " + std::to_string(t) + " above the cap " + std::to_string(opt.total_cap));
    if (t == 0) return s;
    const int steps = static_cast<int>(std::ceil(std::abs(t) / opt.step_cap));
    const double dt = t / steps;
    const Moebiusd a = geodesic_step(dt);
    FlowState cur = s;
    for (int k = 0; k < steps; ++k) cur = reduce_state(cover, cur.frame * a, cur.sheet);
    return cur;
}

FlowState sample_liouville(const CoverDescriptor& cover, std::mt19937_64& rng) {
    const SurfacePoint p = sample_domain_point(cover, rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double angle = 2 * std::numbers::pi * unit(rng);
    return {frame_of(UnitTangentd(p.z, angle)), p.sheet};
}

Observable ball_indicator(const CoverDescriptor& cover, const SurfacePoint& c, double r) {
    if (!(r > 0)) throw InvalidArgument("ball radius must be positive");
    auto metric = std::make_shared<QuotientMetric>(cover, r);
    const SurfacePoint c0 = reduce_to_domain(cover, c);
    return [metric, c0, r](const SurfacePoint& p, double) { return (*metric)(p, c0) <= r ? 1.0 : 0.0; };
}

Observable constant_observable(double value) {
    return [value](const SurfacePoint&, double) { return value; };
}

std::vector<CorrelationEstimate> correlation_series(const CoverDescriptor& cover, const Observable& f,
                                                    const Observable& g, const std::vector<double>& times,
                                                    const CorrelationOptions& opt) {
    if (opt.samples < 2) throw InvalidArgument("correlation needs at least two samples");
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (!(times[k] >= 0) || (k > 0 && times[k] < times[k - 1]))
            throw InvalidArgument("correlation times must be nondecreasing and >= 0");
    }
    if (!times.empty() && times.back() > opt.flow.total_cap)
        throw CapExceeded("correlation time " + std::to_string(times.back()) + " above the cap");

    const int n = opt.samples;
    const auto m = times.size();
    // F(k, i) = f(phi_{t_k} s_i), G(i) = g(s_i).
    std::vector<double> F(m * n), G(n);
    const int chunks = (n + kChunk - 1) / kChunk;
    auto work = [&](int c) {
        std::seed_seq seq{static_cast<std::uint64_t>(opt.seed), static_cast<std::uint64_t>(c)};
        std::mt19937_64 rng(seq);
        const int lo = c * kChunk, hi = std::min(n, lo + kChunk);
        for (int i = lo; i < hi; ++i) {
            FlowState s = sample_liouville(cover, rng);
            G[i] = g(s.point(), s.angle());
            double now = 0;
            for (std::size_t k = 0; k < m; ++k) {
                s = flow(cover, s, times[k] - now, opt.flow);
                now = times[k];
                F[k * n + i] = f(s.point(), s.angle());
            }
        }
    };
    const int threads = std::max(1, std::min(opt.threads, chunks));
    if (threads == 1) {
        for (int c = 0; c < chunks; ++c) work(c);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (int c = w; c < chunks; c += threads) work(c);
            });
        for (auto& th : pool) th.join();
    }

    double gm = 0;
    for (double v : G) gm += v;
    gm /= n;
    std::vector<CorrelationEstimate> out;
    for (std::size_t k = 0; k < m; ++k) {
        const double* Fk = F.data() + k * n;
        double fm = 0;
        for (int i = 0; i < n; ++i) fm += Fk[i];
        fm /= n;
        Moments mo;
        for (int i = 0; i < n; ++i) {
            const double p = (Fk[i] - fm) * (G[i] - gm);
            mo.sum += p;
            mo.sum_sq += p * p;
        }
        const double mean = mo.sum / n;
        const double var = std::max(0.0, (mo.sum_sq / n - mean * mean)) * n / (n - 1.0);
        out.push_back({times[k], mean, std::sqrt(var / n)});
    }
    return out;
}

CorrelationEstimate correlation(const CoverDescriptor& cover, const Observable& f, const Observable& g, double t,
                                const CorrelationOptions& opt) {
    return correlation_series(cover, f, g, {t}, opt).front();
}

double l2_norm(const CoverDescriptor& cover, const Observable& f, int samples, std::uint64_t seed) {
    if (samples < 1) throw InvalidArgument("l2_norm needs samples");
    std::mt19937_64 rng(seed);
    double acc = 0;
    for (int i = 0; i < samples; ++i) {
        const FlowState s = sample_liouville(cover, rng);
        const double v = f(s.point(), s.angle());
        acc += v * v;
    }
    return std::sqrt(acc / samples);
}

MixingParams MixingParams::from_lambda1(double lambda1, double lo, double hi, std::vector<double> times) {
    if (!(lambda1 > 0)) throw InvalidArgument("lambda1 must be positive");
    if (!(lo <= lambda1 && lambda1 <= hi)) throw InvalidArgument("lambda1 band must contain the estimate");
    MixingParams p;
    p.lambda1 = lambda1;
    p.lambda1_lo = std::max(lo, 0.0);
    p.lambda1_hi = hi;
    p.times = std::move(times);
    return p;
}

double MixingParams::constant() const { return 11 * std::exp(beta()); }

double MixingParams::bound(double t, double f_norm, double g_norm) const {
    const double b = beta();
    return 11 * std::exp(b) * (1 + t) * std::exp(-b * t) * f_norm * g_norm;
}

double MixingParams::bound_upper(double t, double f_norm, double g_norm) const {
    // For t >= 1 the bound is decreasing in beta.
    const double b = hyperwave::beta(lambda1_lo);
    return 11 * std::exp(b) * (1 + t) * std::exp(-b * t) * f_norm * g_norm;
}

std::vector<MixingRow> mixing_rows(const std::vector<CorrelationEstimate>& corr, const MixingParams& p,
                                   double f_norm, double g_norm) {
    std::vector<MixingRow> rows;
    for (const auto& c : corr) {
        MixingRow r;
        r.t = c.t;
        r.estimate = c.estimate;
        r.stderr_ = c.stderr_;
        r.bound = p.bound(c.t, f_norm, g_norm);
        r.resolved = r.bound >= 3 * r.stderr_;
        r.pass = std::abs(r.estimate) <= r.bound + 3 * r.stderr_;
        rows.push_back(r);
    }
    return rows;
}

double decay_slope(const std::vector<MixingRow>& rows) {
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
        if (!r.resolved || !(std::abs(r.estimate) > 3 * r.stderr_)) continue;
        xs.push_back(r.t);
        ys.push_back(std::log(std::abs(r.estimate)));
    }
    if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sx += xs[k];
        sy += ys[k];
        sxx += xs[k] * xs[k];
        sxy += xs[k] * ys[k];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void write_mixing_csv(const std::vector<MixingRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out << "t,estimate,stderr,bound,resolved\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%s\n", r.t, r.estimate, r.stderr_, r.bound,
                      r.resolved ? "true" : "false");
        out << buf;
    }
}

}  // namespace hyperwave
