#include "hyperwave/qvar.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace hyperwave {

namespace {

std::vector<Eigen::Index> window_modes(const SpectralData& S, const WindowSpec& I) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index k = 0; k < S.eigenvalues.size(); ++k)
        if (I.contains(S.eigenvalues[k])) idx.push_back(k);
    if (idx.empty()) throw EmptyWindow("no eigenvalues in [" + std::to_string(I.a) + ", " + std::to_string(I.b) + "]");
    return idx;
}

Eigen::VectorXd window_rho(const SpectralData& S, const std::vector<Eigen::Index>& idx) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double l = S.eigenvalues[idx[k]];
        if (!(l > 0.25)) throw UndefinedRho("eigenvalue " + std::to_string(l) + " <= 1/4 in the window");
        r[static_cast<Eigen::Index>(k)] = std::sqrt(l - 0.25);
    }
    return r;
}

template <typename Pred>
double pair_sum(const Eigen::MatrixXd& M, const Eigen::VectorXd& rho, Pred in_band) {
    // Unordered pairs visited once each, so the sum is bitwise symmetric in tau.
    double acc = 0;
    for (Eigen::Index j = 0; j < M.rows(); ++j)
        for (Eigen::Index k = j + 1; k < M.cols(); ++k) {
            const double v = M(j, k) * M(j, k);
            if (in_band(rho[j] - rho[k])) acc += v;
            if (in_band(rho[k] - rho[j])) acc += v;
        }
    return acc;
}

nlohmann::json check_json(const IdentityCheck& c) {
    return {{"lhs", c.lhs}, {"rhs", c.rhs}, {"gap", c.gap}, {"pass", c.pass}};
}

IdentityCheck check_from_json(const nlohmann::json& j) {
    return {j.at("lhs").get<double>(), j.at("rhs").get<double>(), j.at("gap").get<double>(), j.at("pass").get<bool>()};
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void QVarConfig::validate() const {
    if (!(window.a < window.b)) throw ConfigError("window.a: need a < b");
    if (!(window.a > 0.25)) throw ConfigError("window.a: need a > 1/4");
    if (window.outer_a && !(*window.outer_a > 0.25 && *window.outer_a <= window.a))
        throw ConfigError("window.outer_a: need 1/4 < outer_a <= a");
    if (window.outer_b && !(*window.outer_b >= window.b)) throw ConfigError("window.outer_b: need outer_b >= b");
    if (!(T > 0)) throw ConfigError("qvar.T: need T > 0");
    if (taus.empty()) throw ConfigError("qvar.taus: need at least one tau");
    if (deltas.empty()) throw ConfigError("qvar.deltas: need at least one delta");
    for (double d : deltas)
        if (!(d > 0)) throw ConfigError("qvar.deltas: need delta > 0");
}

nlohmann::json QVarConfig::to_json() const {
    nlohmann::json j{{"window", {{"a", window.a}, {"b", window.b}}}, {"T", T}, {"taus", taus}, {"deltas", deltas}};
    if (window.outer_a) j["window"]["outer_a"] = *window.outer_a;
    if (window.outer_b) j["window"]["outer_b"] = *window.outer_b;
    return j;
}

QVarConfig QVarConfig::from_json(const nlohmann::json& j) {
    QVarConfig c;
    if (j.contains("window")) {
        const auto& w = j.at("window");
        std::optional<double> oa, ob;
        if (w.contains("outer_a")) oa = w.at("outer_a").get<double>();
        if (w.contains("outer_b")) ob = w.at("outer_b").get<double>();
        const double a = w.value("a", c.window.a), b = w.value("b", c.window.b);
        if (!(a < b)) throw ConfigError("window.a: need a < b");
        c.window = WindowSpec(a, b, oa, ob);
    }
    c.T = j.value("T", c.T);
    if (j.contains("taus")) c.taus = j.at("taus").get<std::vector<double>>();
    if (j.contains("deltas")) c.deltas = j.at("deltas").get<std::vector<double>>();
    c.validate();
    return c;
}

Eigen::MatrixXd matrix_elements(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I) {
    if (a.size() != S.eigenvectors.rows()) throw InvalidArgument("observable length does not match the eigenvectors");
    const auto idx = window_modes(S, I);
    Eigen::MatrixXd Psi(S.eigenvectors.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Psi.col(static_cast<Eigen::Index>(k)) = S.eigenvectors.col(idx[k]);
    const Eigen::MatrixXd M = Psi.transpose() * (S.weight * a).asDiagonal() * Psi;
    return 0.5 * (M + M.transpose());
}

double surface_mean(const SpectralData&, const Eigen::VectorXd& a) {
    // Equal weights: sum_i w a_i / (N w).
    return a.mean();
}

double diagonal_variance(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I) {
    const Eigen::MatrixXd M = matrix_elements(S, a, I);
    const double mean = surface_mean(S, a);
    return (M.diagonal().array() - mean).square().sum() / static_cast<double>(M.rows());
}

double offdiag_variance(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I, double tau,
                        double delta) {
    if (!(delta > 0)) throw InvalidArgument("offdiag_variance needs delta > 0");
    const auto rho = window_rho(S, window_modes(S, I));
    const Eigen::MatrixXd M = matrix_elements(S, a, I);
    return pair_sum(M, rho, [&](double d) { return std::abs(d - tau) < delta; }) / static_cast<double>(M.rows());
}

double offdiag_band(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I, double lo, double hi) {
    const auto rho = window_rho(S, window_modes(S, I));
    const Eigen::MatrixXd M = matrix_elements(S, a, I);
    return pair_sum(M, rho, [&](double d) { return d >= lo && d < hi; }) / static_cast<double>(M.rows());
}

IdentityCheck parseval_ceiling(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I, double tol) {
    const Eigen::VectorXd c = a.array() - surface_mean(S, a);
    const Eigen::MatrixXd M = matrix_elements(S, c, I);
    IdentityCheck out;
    // N (diagonal + off-diagonal) is the full Frobenius norm of the block.
    out.lhs = M.squaredNorm();
    out.rhs = c.squaredNorm();
    out.gap = out.lhs - out.rhs;
    out.pass = out.gap <= tol;
    return out;
}

IdentityCheck band_partition(const SpectralData& S, const Eigen::VectorXd& a, const WindowSpec& I, double delta,
                             double tol) {
    if (!(delta > 0)) throw InvalidArgument("band_partition needs delta > 0");
    const auto rho = window_rho(S, window_modes(S, I));
    const Eigen::MatrixXd M = matrix_elements(S, a, I);
    const double n = static_cast<double>(M.rows());
    const double span = rho.maxCoeff() - rho.minCoeff();
    const int K = static_cast<int>(std::ceil(span / (2 * delta))) + 1;
    IdentityCheck out;
    for (int k = -K; k <= K; ++k) {
        const double lo = 2 * delta * k - delta, hi = 2 * delta * k + delta;
        out.lhs += pair_sum(M, rho, [&](double d) { return d >= lo && d < hi; }) / n;
    }
    out.rhs = pair_sum(M, rho, [](double) { return true; }) / n;
    out.gap = out.lhs - out.rhs;
    out.pass = std::abs(out.gap) <= tol;
    return out;
}

nlohmann::json BoundChainReport::to_json() const {
    return {{"sum", sum}, {"majorant", majorant}, {"s_min", s_min}, {"ratio", ratio},
            {"pairs", pairs}, {"N", n},           {"pass", pass}};
}

BoundChainReport bound_chain_check(const PropagatorSet& P, const Eigen::VectorXd& a, const WindowSpec& I, double T,
                                   double tau, double delta, double floor) {
    if (!(delta > 0)) throw InvalidArgument("bound_chain_check needs delta > 0");
    const Eigen::VectorXd c = a.array() - a.mean();
    const TimeAverage avg = time_avg_conjugation(P, c, I, T, tau);
    const auto m = avg.modes.size();
    if (m == 0) throw EmptyWindow("no eigenvalues of H_V in the window");
    const auto& lam = P.HV.eigenvalues();
    const auto& U = P.HV.eigenvectors();
    Eigen::MatrixXd Uw(U.rows(), m);
    Eigen::VectorXd rho(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        Uw.col(j) = U.col(avg.modes[j]);
        const double l = lam[avg.modes[j]];
        if (!(l > 0.25)) throw UndefinedRho("eigenvalue " + std::to_string(l) + " <= 1/4 in the window");
        rho[j] = std::sqrt(l - 0.25);
    }
    const Eigen::MatrixXd A = Uw.transpose() * c.asDiagonal() * Uw;

    BoundChainReport out;
    out.n = m;
    double s_min = std::numeric_limits<double>::infinity();
    double acc = 0;
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index k = 0; k < m; ++k) {
            if (!(std::abs(rho[j] - rho[k] - tau) < delta)) continue;
            const double s = std::abs(scalar_time_average(lam[avg.modes[j]], lam[avg.modes[k]], tau, T));
            s_min = std::min(s_min, s);
            acc += A(j, k) * A(j, k);
            ++out.pairs;
        }
    out.sum = acc / static_cast<double>(m);
    if (out.pairs == 0) {
        out.s_min = std::numeric_limits<double>::quiet_NaN();
        out.pass = true;
        return out;
    }
    if (s_min < floor)
        throw DenominatorDegenerate("time-average denominator " + std::to_string(s_min) + " below " +
                                    std::to_string(floor));
    out.s_min = s_min;
    out.majorant = avg.eigenbasis.squaredNorm() / (s_min * s_min) / static_cast<double>(m);
    out.ratio = out.majorant > 0 ? out.sum / out.majorant : 0;
    out.pass = out.sum <= out.majorant * (1 + 1e-6);
    return out;
}

Eigen::VectorXd bump_observable(const SurfaceSample& sample, const HPointd& center, double radius, bool every_sheet) {
    if (!(radius > 0)) throw InvalidParams("observable radius must be positive");
    const CoverDescriptor& cover = sample.cover;
    const QuotientMetric metric(cover, radius);
    const SurfacePoint c0 = reduce_to_domain(cover, SurfacePoint{center, 0});
    const auto n = static_cast<Eigen::Index>(sample.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& p = sample.points[k];
        double best = metric(p, c0);
        if (every_sheet)
            for (int s = 1; s < cover.degree(); ++s) best = std::min(best, metric(p, {c0.z, s}));
        if (best < radius) v[k] = bump_profile(best / radius);
    }
    v.array() -= v.mean();
    const double sup = v.cwiseAbs().maxCoeff();
    if (!(sup > 0)) throw InvalidParams("observable bump is constant on the sample");
    return v / sup;
}

nlohmann::json QVarReport::to_json() const {
    nlohmann::json j{{"degree", degree},
                     {"genus", genus},
                     {"N", n},
                     {"sum1", sum1},
                     {"T", T},
                     {"potential_kind", potential_kind},
                     {"seed", seed},
                     {"normalization", normalization},
                     {"parseval", check_json(parseval)}};
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) j["rows"].push_back({{"tau", r.tau}, {"delta", r.delta}, {"sum2", r.sum2}, {"sum3", r.sum3}});
    j["bands"] = nlohmann::json::array();
    for (const auto& b : bands) j["bands"].push_back(check_json(b));
    return j;
}

QVarReport QVarReport::from_json(const nlohmann::json& j) {
    QVarReport r;
    r.degree = j.at("degree").get<int>();
    r.genus = j.at("genus").get<int>();
    r.n = j.at("N").get<long>();
    r.sum1 = j.at("sum1").get<double>();
    r.T = j.at("T").get<double>();
    r.potential_kind = j.at("potential_kind").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.normalization = j.value("normalization", r.normalization);
    r.parseval = check_from_json(j.at("parseval"));
    for (const auto& x : j.at("rows"))
        r.rows.push_back({x.at("tau").get<double>(), x.at("delta").get<double>(), x.at("sum2").get<double>(),
                          x.at("sum3").get<double>()});
    for (const auto& x : j.at("bands")) r.bands.push_back(check_from_json(x));
    return r;
}

QVarReport qvar_report(const SpectralData& S, const Eigen::VectorXd& a, const QVarConfig& cfg, int degree, int genus,
                       const std::string& potential_kind, std::uint64_t seed) {
    cfg.validate();
    QVarReport r;
    r.degree = degree;
    r.genus = genus;
    r.T = cfg.T;
    r.potential_kind = potential_kind;
    r.seed = seed;
    r.n = static_cast<long>(window_modes(S, cfg.window).size());
    r.sum1 = diagonal_variance(S, a, cfg.window);
    for (double delta : cfg.deltas) {
        const double s2 = offdiag_variance(S, a, cfg.window, 0, delta);
        for (double tau : cfg.taus)
            r.rows.push_back({tau, delta, s2, tau == 0 ? s2 : offdiag_variance(S, a, cfg.window, tau, delta)});
        r.bands.push_back(band_partition(S, a, cfg.window, delta));
    }
    r.parseval = parseval_ceiling(S, a, cfg.window);
    return r;
}

void write_qvar_csv(const std::vector<QVarReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out << "degree,genus,N,sum1,sum2,sum3,tau,delta,T,potential_kind,seed\n";
    for (const auto& r : reports)
        for (const auto& row : r.rows)
            out << r.degree << ',' << r.genus << ',' << r.n << ',' << fmt(r.sum1) << ',' << fmt(row.sum2) << ','
                << fmt(row.sum3) << ',' << fmt(row.tau) << ',' << fmt(row.delta) << ',' << fmt(r.T) << ','
                << r.potential_kind << ',' << r.seed << '\n';
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two equal series of length >= 2");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto p, auto q) { return v[p] < v[q]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * (i + j) + 1;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0;
    return sxy / std::sqrt(sxx * syy);
}

nlohmann::json TrendResult::to_json() const {
    nlohmann::json j{{"degrees", degrees},   {"mean_sum1", mean_sum1}, {"spread_sum1", spread_sum1},
                     {"spearman", spearman}, {"min_gap", min_gap},     {"max_spread", max_spread},
                     {"separated", separated}, {"pass", pass}};
    j["reports"] = nlohmann::json::array();
    for (const auto& r : reports) j["reports"].push_back(r.to_json());
    return j;
}

QVarReport qvar_on_cover(const CoverDescriptor& cover, std::uint64_t seed, const TrendConfig& cfg) {
    const Discretization d = discretize_surface(cover, cfg.points_per_sheet, seed, cfg.epsilon);
    const Potential V = make_potential(cfg.potential, d.sample);
    const Operator H = assemble_operator(d.sample, V.values, d.eps);
    const SpectralData S = solve_window(H, cfg.qvar.window, d.sample.weight());
    const Eigen::VectorXd a = bump_observable(d.sample, cfg.observable_center, cfg.observable_radius);
    return qvar_report(S, a, cfg.qvar, cover.degree(), cover.genus(), to_string(cfg.potential.kind), seed);
}

TrendResult trend_from_reports(std::vector<QVarReport> reports, std::size_t ns) {
    if (ns == 0 || reports.empty() || reports.size() % ns != 0)
        throw InvalidArgument("trend reports must hold the same number of seeds per cover");
    const std::size_t covers = reports.size() / ns;
    if (covers < 3) throw InvalidArgument("trend needs at least three covers");
    TrendResult out;
    out.reports = std::move(reports);
    std::vector<double> deg;
    for (std::size_t c = 0; c < covers; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo, acc = 0;
        for (std::size_t s = 0; s < ns; ++s) {
            const double v = out.reports[c * ns + s].sum1;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            acc += v;
        }
        out.degrees.push_back(out.reports[c * ns].degree);
        deg.push_back(out.reports[c * ns].degree);
        out.mean_sum1.push_back(acc / static_cast<double>(ns));
        out.spread_sum1.push_back(hi - lo);
    }
    out.spearman = spearman(deg, out.mean_sum1);
    out.min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t c = 1; c < covers; ++c)
        out.min_gap = std::min(out.min_gap, std::abs(out.mean_sum1[c] - out.mean_sum1[c - 1]));
    out.max_spread = *std::max_element(out.spread_sum1.begin(), out.spread_sum1.end());
    out.separated = true;
    for (std::size_t c = 1; c < covers; ++c) {
        const double gap = std::abs(out.mean_sum1[c] - out.mean_sum1[c - 1]);
        if (!(std::max(out.spread_sum1[c], out.spread_sum1[c - 1]) < gap)) out.separated = false;
    }
    out.pass = out.spearman <= 0 && out.separated;
    return out;
}

TrendResult trend_experiment(const std::vector<CoverDescriptor>& covers, const TrendConfig& cfg) {
    if (covers.size() < 3) throw InvalidArgument("trend_experiment needs at least three covers");
    for (std::size_t k = 1; k < covers.size(); ++k)
        if (!(covers[k].degree() > covers[k - 1].degree()))
            throw InvalidArgument("trend_experiment needs strictly increasing degrees");
    if (cfg.seeds.empty()) throw InvalidArgument("trend_experiment needs at least one seed");
    cfg.qvar.validate();

    const std::size_t ns = cfg.seeds.size();
    const std::size_t jobs = covers.size() * ns;
    TrendResult out;
    out.reports.assign(jobs, QVarReport{});
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t job; (job = next++) < jobs;) {
            try {
                out.reports[job] = qvar_on_cover(covers[job / ns], cfg.seeds[job % ns], cfg);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(jobs)));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    return trend_from_reports(std::move(out.reports), ns);
}


}  // namespace hyperwave
