#include "hyperwave/lab.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include <openssl/evp.h>

#include "hyperwave/kernels.hpp"
#include "hyperwave/opcalc.hpp"

namespace hyperwave {

namespace fs = std::filesystem;

namespace {

// ------------------------------------------------------------ small helpers

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

Eigen::MatrixXd random_symmetric(int n, std::mt19937_64& rng, double shift) {
    std::normal_distribution<double> g(0, 1);
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = g(rng);
    m = (m + m.transpose()) / (2 * std::sqrt(double(n)));
    m.diagonal().array() += shift;
    return m;
}

Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

std::shared_ptr<const FuchsianGroup> bolza_ptr() {
    static auto g = std::make_shared<const FuchsianGroup>(bolza_group());
    return g;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("lab", "cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("expected artifact " + path.string());
    std::ifstream in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw MissingArtifact("unreadable artifact " + path.string() + ": " + e.what());
    }
}

void require(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("expected artifact " + path.string());
}

// ------------------------------------------------------------- config parsing

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

void reject_unknown(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* key : keys) ok = ok || k == key;
        if (!ok) throw ConfigError((path.empty() ? k : path + "." + k) + ": unknown field");
    }
}

// --------------------------------------------------------------- artifacts

CoverDescriptor load_cover(const fs::path& dir) { return surface_from_json(read_json(dir / "surface.json")); }

Discretization load_sample(const CoverDescriptor& cover, const fs::path& dir) {
    const auto j = read_json(dir / "sample.json");
    const auto d = discretize_surface(cover, j.at("points_per_sheet").get<int>(), j.at("seed").get<std::uint64_t>(),
                                      EpsilonRule{j.at("epsilon_scale").get<double>()});
    // The sample is regenerated from its seed; the stored points pin it.
    const auto& pts = j.at("points");
    bool same = pts.size() == 3 * d.sample.size() && j.at("eps").get<double>() == d.eps;
    for (std::size_t k = 0; same && k < d.sample.size(); ++k) {
        const auto& p = d.sample.points[k];
        same = pts[3 * k].get<double>() == p.z.x() && pts[3 * k + 1].get<double>() == p.z.y() &&
               pts[3 * k + 2].get<int>() == p.sheet;
    }
    if (!same) throw MissingArtifact((dir / "sample.json").string() + " does not match its regenerated sample");
    return d;
}

}  // namespace

// ============================================================ verification

CheckResult verify_counting(const std::vector<CoverDescriptor>& covers, int pairs, int t_max, std::uint64_t seed) {
    CheckResult out;
    out.name = "counting";
    out.pass = true;
    std::mt19937_64 rng(seed);
    double worst = 0;
    long checked = 0;
    for (const auto& cover : covers) {
        const double r = std::min(1.0, systole(cover) / 4);
        nlohmann::json per;
        per["degree"] = cover.degree();
        per["r"] = r;
        double cover_worst = 0;
        for (int p = 0; p < pairs; ++p) {
            const SurfacePoint x = sample_domain_point(cover, rng), y = sample_domain_point(cover, rng);
            const auto big = enumerate_ball(cover, x.z, y.z, t_max);
            for (int t = 1; t <= t_max; ++t) {
                LatticeBall ball;
                for (std::size_t k = 0; k < big.size(); ++k)
                    if (big.distances[k] <= t) ball.elements.push_back(big.elements[k]);
                const double count = static_cast<double>(ball.count_between(x.sheet, y.sheet));
                const double bound = std::exp(t + 1.0) / (r * r);
                cover_worst = std::max(cover_worst, count / bound);
                if (count > bound) out.pass = false;
                ++checked;
            }
        }
        per["max_ratio"] = cover_worst;
        out.detail["covers"].push_back(per);
        worst = std::max(worst, cover_worst);
    }
    out.detail["balls"] = checked;
    out.summary = std::to_string(checked) + " balls, max count/bound " + fmt(worst);
    return out;
}

CheckResult verify_duhamel(int instances, int dim, int order, std::uint64_t seed) {
    CheckResult out;
    out.name = "duhamel";
    out.pass = true;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ut(0.5, 4.0);
    constexpr double kFloor = 1e-12;   // rounding level of the residual
    double worst = 0;
    int not_shrinking = 0;
    for (int k = 0; k < instances; ++k) {
        const auto P = make_propagators(random_symmetric(dim, rng, 2.0), random_vector(dim, rng, -1, 1));
        const double t = ut(rng);
        const double r = duhamel_residual(P, t, order);
        worst = std::max(worst, r);
        if (!(r <= 1e-8)) out.pass = false;
        double prev = duhamel_residual(P, t, 8);
        for (int o = 16; o <= 2 * order; o *= 2) {
            const double cur = duhamel_residual(P, t, o);
            if (!(cur < prev || prev <= kFloor)) ++not_shrinking;
            prev = cur;
        }
    }
    if (not_shrinking > 0) out.pass = false;
    out.detail = {{"max_residual", worst}, {"order", order}, {"non_decreasing_doublings", not_shrinking}};
    out.summary = std::to_string(instances) + " instances, max residual " + fmt(worst) + " at order " +
                  std::to_string(order) + ", non-shrinking doublings above 1e-12: " + std::to_string(not_shrinking);
    return out;
}

CheckResult verify_time_average(int grid, double T) {
    CheckResult out;
    out.name = "time-average";
    double inf = std::numeric_limits<double>::infinity();
    double arg = 0;
    for (int k = 0; k < grid; ++k) {
        const double l = 0.5 + 0.5 * k / (grid - 1.0);
        const double v = time_avg_h2(l, T);
        if (v < inf) {
            inf = v;
            arg = l;
        }
    }
    out.pass = inf >= 4.0 / 9.0;
    out.detail = {{"inf", inf}, {"argmin", arg}, {"bound", 4.0 / 9.0}, {"T", T}};
    out.summary = "inf " + fmt(inf, "%.9g") + " at lambda " + fmt(arg) + " against 4/9";
    return out;
}

CheckResult verify_integrals(double tol) {
    CheckResult out;
    out.name = "integrals";
    const double grid[] = {0.5, 1, 2, 4};
    const double dists[] = {0, 0.3, 1, 3};
    int pair_fail = 0, lens_fail = 0, mix_fail = 0, n = 0, degenerate = 0;
    double pair_margin = -1e300, lens_margin = -1e300, mix_margin = -1e300;
    for (double t : grid)
        for (double tp : grid) {
            for (double d : dists) {
                const auto a = check_abel_pair_bound(t, tp, d, tol);
                if (!a.pass) ++pair_fail;
                if (a.degenerate) ++degenerate;
                else pair_margin = std::max(pair_margin, a.lhs - a.rhs);
                const auto l = check_sinh_lens_bound(t, tp, d, tol);
                if (!l.pass) ++lens_fail;
                lens_margin = std::max(lens_margin, l.lhs - l.rhs);
                n += 2;
            }
            if (!(tp < t)) continue;
            for (double beta : {0.5, 1.0}) {
                const auto m = check_mixing_integral_bound(t, tp, beta, t + tp, tol);
                if (!m.pass) ++mix_fail;
                mix_margin = std::max(mix_margin, m.lhs - m.rhs);
                ++n;
            }
        }
    out.pass = pair_fail == 0 && lens_fail == 0 && mix_fail == 0;
    out.detail = {{"checks", n},
                  {"abel_pair_failures", pair_fail},
                  {"lens_failures", lens_fail},
                  {"mixing_failures", mix_fail},
                  {"degenerate", degenerate},
                  {"max_abel_pair_lhs_minus_rhs", pair_margin},
                  {"max_lens_lhs_minus_rhs", lens_margin},
                  {"max_mixing_lhs_minus_rhs", mix_margin}};
    out.summary = std::to_string(n) + " grid checks, failures abel-pair/lens/mixing " + std::to_string(pair_fail) +
                  "/" + std::to_string(lens_fail) + "/" + std::to_string(mix_fail) + ", " +
                  std::to_string(degenerate) + " degenerate (both sides infinite)";
    return out;
}

CheckResult verify_reconstruction(int instances, std::uint64_t seed) {
    CheckResult out;
    out.name = "reconstruction";
    out.pass = true;
    std::mt19937_64 rng(seed);
    const int n = 40;
    const WindowSpec I(1.2, 2.8);
    const double T = 40;
    double worst = 0;
    long used = 0, skipped = 0;
    int min_modes = 1 << 30;
    for (int k = 0; k < instances; ++k) {
        const auto P = make_propagators(random_symmetric(n, rng, 2.0), random_vector(n, rng, -0.5, 0.5));
        const Eigen::VectorXd a = random_vector(n, rng, -1, 1);
        const auto& U = P.HV.eigenvectors();
        for (double tau : {0.0, 1.0}) {
            const auto avg = time_avg_conjugation(P, a, I, T, tau);
            min_modes = std::min(min_modes, static_cast<int>(avg.modes.size()));
            const auto rec = reconstruct_matrix_elements(P, avg, T, tau);
            for (Eigen::Index j = 0; j < avg.modes.size(); ++j)
                for (Eigen::Index l = 0; l < avg.modes.size(); ++l) {
                    if (std::isnan(rec(j, l))) {
                        ++skipped;
                        continue;
                    }
                    const double exact = U.col(avg.modes[j]).dot(a.asDiagonal() * U.col(avg.modes[l]));
                    worst = std::max(worst, std::abs(rec(j, l) - exact));
                    ++used;
                }
        }
    }
    out.pass = worst <= 1e-6 && min_modes >= 5 && used > 0;
    out.detail = {{"max_error", worst}, {"pairs", used}, {"skipped_small_denominator", skipped}, {"min_modes", min_modes}};
    out.summary = std::to_string(used) + " matrix elements over tau in {0, 1}, max error " + fmt(worst) +
                  ", at least " + std::to_string(min_modes) + " eigenvalues per window";
    return out;
}

CheckResult verify_sandwich(std::uint64_t seed) {
    CheckResult out;
    out.name = "sandwich";
    out.pass = true;
    std::mt19937_64 rng(seed);
    int instances = 0;
    const auto base = bolza_ptr();
    const std::vector<std::pair<CoverDescriptor, int>> surfaces{{CoverDescriptor::trivial(base), 300},
                                                                {CoverDescriptor::cyclic(base, 2), 200}};
    for (const auto& [cover, pps] : surfaces) {
        const auto d = discretize_surface(cover, pps, seed);
        const auto n = static_cast<Eigen::Index>(d.sample.size());
        const Operator H0 = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
        std::vector<Eigen::VectorXd> potentials;
        PotentialSpec bump;
        bump.amplitude = 2;
        potentials.push_back(make_potential(bump, d.sample).values);
        PotentialSpec weak;
        weak.kind = PotentialKind::WeakCoupling;
        weak.amplitude = 1;
        weak.coupling = 1.5;
        potentials.push_back(make_potential(weak, d.sample).values);
        PotentialSpec thin;
        thin.kind = PotentialKind::ConstantPlusThin;
        thin.constant = -0.5;
        thin.amplitude = 1;
        thin.thin_threshold = 1.55;
        potentials.push_back(make_potential(thin, d.sample).values);
        potentials.push_back(random_vector(static_cast<int>(n), rng, -2, 3));
        for (const auto& V : potentials) {
            const Operator HV = assemble_operator(d.sample, V, d.eps);
            for (const WindowSpec& I : {WindowSpec(2, 20), WindowSpec(1, 10), WindowSpec(4, 25)}) {
                const auto r = counting_lower_bound_check(H0, HV, I, V.minCoeff(), V.maxCoeff());
                if (!r.pass) out.pass = false;
                ++instances;
                out.detail["instances"].push_back({{"degree", cover.degree()},
                                                   {"window", {I.a, I.b}},
                                                   {"n_v", r.n_v},
                                                   {"n_0", r.n_0},
                                                   {"pass", r.pass}});
            }
        }
    }
    out.summary = std::to_string(instances) + " discretized instances";
    return out;
}

CheckResult verify_weyl(const WeylInputs& in) {
    CheckResult out;
    out.name = "weyl";
    const auto cover = CoverDescriptor::trivial(bolza_ptr());
    const auto d = discretize_surface(cover, in.points, in.seed);
    const auto n = static_cast<Eigen::Index>(d.sample.size());
    const Operator H0 = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
    const SpectralData S = solve_window(H0, in.window, d.sample.weight());
    const double per_volume = static_cast<double>(S.count()) / cover.volume();
    const double weyl = weyl_density(in.window);
    const double rel = std::abs(per_volume - weyl) / weyl;
    out.pass = rel <= in.tolerance;
    out.detail = {{"count", S.count()},         {"per_volume", per_volume}, {"weyl", weyl},
                  {"relative_error", rel},      {"trusted_max", S.trusted_max},
                  {"window", {in.window.a, in.window.b}}, {"lambda1", H0.eigenvalues()[1]}};
    out.summary = "count " + std::to_string(S.count()) + " in [" + fmt(in.window.a) + ", " + fmt(in.window.b) +
                  "], per volume " + fmt(per_volume) + " against " + fmt(weyl) + " (" + fmt(100 * rel, "%.1f") +
                  "%), trusted band up to " + fmt(S.trusted_max, "%.1f");
    return out;
}

CheckResult verify_mixing(const CoverDescriptor& cover, const MixingInputs& in) {
    CheckResult out;
    out.name = "mixing";
    const auto ball = ball_indicator(cover, {HPointd::i(), 0}, in.ball_radius);
    std::vector<double> ts;
    for (int t = 1; t <= in.t_max; ++t) ts.push_back(t);
    CorrelationOptions opt;
    opt.samples = in.samples;
    opt.seed = in.seed;
    opt.threads = in.threads;
    const auto corr = correlation_series(cover, ball, ball, ts, opt);
    const double fn = l2_norm(cover, ball, in.samples, in.seed + 1);
    const auto p = MixingParams::from_lambda1(in.lambda1, in.lambda1_lo, in.lambda1_hi, ts);
    const auto rows = mixing_rows(corr, p, fn, fn);
    out.pass = true;
    int resolved = 0;
    for (const auto& r : rows) {
        out.pass = out.pass && r.pass;
        resolved += r.resolved;
        out.detail["rows"].push_back({{"t", r.t},
                                      {"estimate", r.estimate},
                                      {"stderr", r.stderr_},
                                      {"bound", r.bound},
                                      {"resolved", r.resolved},
                                      {"pass", r.pass}});
    }
    const double slope = decay_slope(rows);
    out.detail["beta"] = p.beta();
    out.detail["lambda1"] = in.lambda1;
    out.detail["f_norm"] = fn;
    out.detail["decay_slope"] = std::isnan(slope) ? nlohmann::json(nullptr) : nlohmann::json(slope);
    out.summary = "t = 1.." + std::to_string(in.t_max) + ", beta " + fmt(p.beta()) + ", " + std::to_string(resolved) +
                  " resolved rows, fitted log-slope " + fmt(slope, "%.3f");
    return out;
}

CheckResult verify_qvar_identities(const std::vector<QVarReport>& reports) {
    CheckResult out;
    out.name = "qvar-identities";
    out.pass = !reports.empty();
    double worst_parseval = -1e300, worst_band = 0;
    int checks = 0;
    for (const auto& r : reports) {
        out.pass = out.pass && r.parseval.pass;
        worst_parseval = std::max(worst_parseval, r.parseval.gap);
        ++checks;
        for (const auto& b : r.bands) {
            out.pass = out.pass && b.pass && std::abs(b.gap) <= 1e-9;
            worst_band = std::max(worst_band, std::abs(b.gap));
            ++checks;
        }
    }
    out.detail = {{"reports", reports.size()}, {"checks", checks}, {"max_parseval_gap", worst_parseval},
                  {"max_band_gap", worst_band}};
    out.summary = std::to_string(checks) + " identity checks on " + std::to_string(reports.size()) +
                  " runs, Parseval lhs - rhs <= " + fmt(worst_parseval) + ", band gap <= " + fmt(worst_band);
    return out;
}

CheckResult verify_trend(const TrendResult& trend) {
    CheckResult out;
    out.name = "trend";
    out.pass = trend.pass;
    out.detail = trend.to_json();
    out.detail.erase("reports");
    std::ostringstream s;
    s << "degrees";
    for (int d : trend.degrees) s << ' ' << d;
    s << ", mean sum1";
    for (double v : trend.mean_sum1) s << ' ' << fmt(v, "%.3e");
    s << ", seed spread";
    for (double v : trend.spread_sum1) s << ' ' << fmt(v, "%.2e");
    s << ", Spearman " << fmt(trend.spearman, "%.3f") << ", adjacent degrees separated: "
      << (trend.separated ? "yes" : "no") << " (global max spread " << fmt(trend.max_spread, "%.2e")
      << " vs min gap " << fmt(trend.min_gap, "%.2e") << ")";
    out.summary = s.str();
    return out;
}

// ================================================================== config

const std::vector<std::string>& verification_suites() {
    static const std::vector<std::string> names{"counting",       "integrals", "time-average", "duhamel",
                                                "reconstruction", "sandwich",  "weyl",         "mixing"};
    return names;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
    ExperimentConfig c;
    c.base_dir = base_dir;
    reject_unknown(j, "", {"surface", "cover", "sampling", "potential", "window", "qvar", "observable", "flow",
                           "trend", "verify", "threads"});
    if (j.contains("surface")) {
        const auto& s = j.at("surface");
        reject_unknown(s, "surface", {"base", "file"});
        if (s.contains("file")) {
            const fs::path p = base_dir / s.at("file").get<std::string>();
            if (!fs::exists(p)) throw ConfigError("surface.file: no such file " + p.string());
        } else if (field<std::string>(s, "base", "surface", "bolza") != "bolza") {
            throw ConfigError("surface.base: only \"bolza\" is built in; use surface.file");
        }
        c.surface = s;
    }
    if (j.contains("cover")) {
        const auto& cv = j.at("cover");
        reject_unknown(cv, "cover", {"kind", "degree", "g", "h"});
        const auto kind = field<std::string>(cv, "kind", "cover", "trivial");
        if (kind != "trivial" && kind != "cyclic" && kind != "regular" && kind != "file")
            throw ConfigError("cover.kind: expected trivial, cyclic, regular or file");
        if (kind == "cyclic" && field<int>(cv, "degree", "cover", 0) < 1) throw ConfigError("cover.degree: need >= 1");
        if (kind == "regular" && !(cv.contains("g") && cv.contains("h")))
            throw ConfigError("cover.g: regular covers need g and h");
        if (kind == "file" && !c.surface.contains("file")) throw ConfigError("cover.kind: file needs surface.file");
        c.cover = cv;
    }
    if (j.contains("sampling")) {
        const auto& s = j.at("sampling");
        reject_unknown(s, "sampling", {"points_per_sheet", "seed", "epsilon_scale"});
        c.points_per_sheet = field<int>(s, "points_per_sheet", "sampling", c.points_per_sheet);
        c.seed = field<std::uint64_t>(s, "seed", "sampling", c.seed);
        c.epsilon_scale = field<double>(s, "epsilon_scale", "sampling", c.epsilon_scale);
        if (c.points_per_sheet < 50) throw ConfigError("sampling.points_per_sheet: need >= 50");
        if (!(c.epsilon_scale > 0)) throw ConfigError("sampling.epsilon_scale: need > 0");
    }
    if (j.contains("potential")) {
        try {
            c.potential = PotentialSpec::from_json(j.at("potential"));
        } catch (const Error& e) {
            throw ConfigError(std::string("potential: ") + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("potential: ") + e.what());
        }
    }
    nlohmann::json q = j.value("qvar", nlohmann::json::object());
    reject_unknown(q, "qvar", {"T", "taus", "deltas"});
    if (j.contains("window")) {
        reject_unknown(j.at("window"), "window", {"a", "b", "outer_a", "outer_b"});
        const auto& w = j.at("window");
        for (const char* k : {"a", "b", "outer_a", "outer_b"})
            if (w.contains(k) && !w.at(k).is_number()) throw ConfigError(std::string("window.") + k + ": expected a number");
        const double a = field<double>(w, "a", "window", 1.0), b = field<double>(w, "b", "window", 30.0);
        if (!(a < b)) throw ConfigError("window.a: need a < b");
        if (!(a > 0.25)) throw ConfigError("window.a: need a > 1/4");
        q["window"] = w;
    }
    try {
        c.qvar = QVarConfig::from_json(q);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("qvar: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("window: ") + e.what());
    }
    if (j.contains("observable")) {
        reject_unknown(j.at("observable"), "observable", {"radius"});
        c.observable_radius = field<double>(j.at("observable"), "radius", "observable", c.observable_radius);
        if (!(c.observable_radius > 0)) throw ConfigError("observable.radius: need > 0");
    }
    if (j.contains("flow")) {
        const auto& f = j.at("flow");
        reject_unknown(f, "flow", {"samples", "seed", "ball_radius", "t_max", "lambda1"});
        c.flow.samples = field<int>(f, "samples", "flow", c.flow.samples);
        c.flow.seed = field<std::uint64_t>(f, "seed", "flow", c.flow.seed);
        c.flow.ball_radius = field<double>(f, "ball_radius", "flow", c.flow.ball_radius);
        c.flow.t_max = field<int>(f, "t_max", "flow", c.flow.t_max);
        if (f.contains("lambda1")) c.flow.lambda1 = field<double>(f, "lambda1", "flow", 0.0);
        if (c.flow.samples < 2) throw ConfigError("flow.samples: need >= 2");
        if (!(c.flow.ball_radius > 0)) throw ConfigError("flow.ball_radius: need > 0");
        if (c.flow.t_max < 1 || c.flow.t_max > 20) throw ConfigError("flow.t_max: need 1..20");
        if (c.flow.lambda1 && !(*c.flow.lambda1 > 0)) throw ConfigError("flow.lambda1: need > 0");
    }
    if (j.contains("trend")) {
        const auto& t = j.at("trend");
        reject_unknown(t, "trend", {"degrees", "seeds"});
        c.degrees = field<std::vector<int>>(t, "degrees", "trend", c.degrees);
        c.trend_seeds = field<std::vector<std::uint64_t>>(t, "seeds", "trend", c.trend_seeds);
        if (c.degrees.empty()) throw ConfigError("trend.degrees: need at least one degree");
        for (std::size_t k = 0; k < c.degrees.size(); ++k)
            if (c.degrees[k] < 1 || (k > 0 && c.degrees[k] <= c.degrees[k - 1]))
                throw ConfigError("trend.degrees: need strictly increasing positive degrees");
        if (c.trend_seeds.empty()) throw ConfigError("trend.seeds: need at least one seed");
    }
    if (j.contains("verify")) {
        for (const auto& v : field<std::vector<std::string>>(j, "verify", "", {})) {
            const auto& names = verification_suites();
            if (std::find(names.begin(), names.end(), v) == names.end())
                throw ConfigError("verify: unknown suite \"" + v + "\"");
            c.verify.insert(v);
        }
    }
    c.threads = field<int>(j, "threads", "", c.threads);
    if (c.threads < 1) throw ConfigError("threads: need >= 1");
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config: no such file " + path.string());
    std::ifstream in(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return from_json(j, path.parent_path());
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["surface"] = surface;
    j["cover"] = cover;
    j["sampling"] = {{"points_per_sheet", points_per_sheet}, {"seed", seed}, {"epsilon_scale", epsilon_scale}};
    j["potential"] = potential.to_json();
    const auto q = qvar.to_json();
    j["window"] = q.at("window");
    j["qvar"] = {{"T", qvar.T}, {"taus", qvar.taus}, {"deltas", qvar.deltas}};
    j["observable"] = {{"radius", observable_radius}};
    j["flow"] = {{"samples", flow.samples}, {"seed", flow.seed}, {"ball_radius", flow.ball_radius}, {"t_max", flow.t_max}};
    if (flow.lambda1) j["flow"]["lambda1"] = *flow.lambda1;
    j["trend"] = {{"degrees", degrees}, {"seeds", trend_seeds}};
    j["verify"] = std::vector<std::string>(verify.begin(), verify.end());
    j["threads"] = threads;
    return j;
}

namespace {

std::shared_ptr<const FuchsianGroup> configured_base(const ExperimentConfig& c) {
    if (c.surface.contains("file"))
        return surface_from_json(read_json(c.base_dir / c.surface.at("file").get<std::string>())).base_ptr();
    return bolza_ptr();
}

}  // namespace

CoverDescriptor ExperimentConfig::make_cover() const {
    const auto kind = cover.value("kind", std::string("trivial"));
    if (kind == "file") return surface_from_json(read_json(base_dir / surface.at("file").get<std::string>()));
    const auto base = configured_base(*this);
    if (kind == "cyclic") return CoverDescriptor::cyclic(base, cover.at("degree").get<int>());
    if (kind == "regular")
        return CoverDescriptor::regular(base, cover.at("g").get<Permutation>(), cover.at("h").get<Permutation>());
    return CoverDescriptor::trivial(base);
}

CoverDescriptor ExperimentConfig::cover_of_degree(int degree) const {
    const auto base = configured_base(*this);
    return degree == 1 ? CoverDescriptor::trivial(base) : CoverDescriptor::cyclic(base, degree);
}

// ================================================================== stages

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".hyperwave.lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            const bool written = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
            ::close(fd);
            if (!written) throw Error("lab", "cannot write lock file " + path_.string());
            return;
        }
        // A lock whose owner has exited is stale.
        long owner = 0;
        std::ifstream(path_) >> owner;
        if (attempt > 0 || owner <= 0 || ::kill(static_cast<pid_t>(owner), 0) == 0 || errno != ESRCH) break;
        std::error_code ec;
        fs::remove(path_, ec);
    }
    throw Error("lab", "output directory is locked by another run: " + path_.string());
}

OutputLock::~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot read " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream s;
    for (unsigned int k = 0; k < len; ++k) s << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
    return s.str();
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::string& command) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto name = e.path().filename().string();
        if (name == "manifest.json" || name == ".hyperwave.lock") continue;
        files.push_back(fs::relative(e.path(), dir));
    }
    std::sort(files.begin(), files.end());
    nlohmann::json j;
    j["tool"] = "hyperwave";
    j["version"] = kVersion;
    j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    j["command"] = command;
    j["config"] = cfg.to_json();
    j["files"] = nlohmann::json::array();
    for (const auto& f : files)
        j["files"].push_back({{"path", f.generic_string()}, {"sha256", sha256_file(dir / f)},
                              {"bytes", fs::file_size(dir / f)}});
    write_json(dir / "manifest.json", j);
}

bool stage_build_cover(const ExperimentConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    const auto cover = cfg.make_cover();
    auto j = surface_to_json(cover);
    j["genus"] = cover.genus();
    j["systole"] = systole(cover);
    write_json(dir / "surface.json", j);
    return true;
}

bool stage_sample(const ExperimentConfig& cfg, const fs::path& dir) {
    const auto cover = load_cover(dir);
    const auto d = discretize_surface(cover, cfg.points_per_sheet, cfg.seed, EpsilonRule{cfg.epsilon_scale});
    nlohmann::json j{{"points_per_sheet", cfg.points_per_sheet},
                     {"seed", cfg.seed},
                     {"epsilon_scale", cfg.epsilon_scale},
                     {"eps", d.eps},
                     {"cutoff", d.sample.cutoff},
                     {"size", d.sample.size()},
                     {"edges", d.sample.edges.size()}};
    auto& pts = j["points"] = nlohmann::json::array();
    for (const auto& p : d.sample.points) {
        pts.push_back(p.z.x());
        pts.push_back(p.z.y());
        pts.push_back(p.sheet);
    }
    write_json(dir / "sample.json", j);
    return true;
}

bool stage_eigensolve(const ExperimentConfig& cfg, const fs::path& dir) {
    const auto cover = load_cover(dir);
    const auto d = load_sample(cover, dir);
    const auto n = static_cast<Eigen::Index>(d.sample.size());
    const Potential V = make_potential(cfg.potential, d.sample);
    const Operator H = assemble_operator(d.sample, V.values, d.eps);
    SpectralData S = solve_window(H, cfg.qvar.window, d.sample.weight());
    double lambda1 = H.eigenvalues()[1];
    if (V.values.cwiseAbs().maxCoeff() > 0) {
        const Operator H0 = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
        lambda1 = H0.eigenvalues()[1];
    }
    S.metadata["lambda1_free"] = lambda1;
    S.metadata["degree"] = cover.degree();
    S.metadata["genus"] = cover.genus();
    S.metadata["points"] = n;
    S.metadata["eps"] = d.eps;
    S.metadata["potential"] = cfg.potential.to_json();
    S.metadata["weyl_density"] = weyl_density(cfg.qvar.window);
    S.metadata["count_per_volume"] = static_cast<double>(S.count()) / cover.volume();
    save_spectral_data(S, dir / "spectra.json");
    write_json(dir / "potential.json", {{"spec", cfg.potential.to_json()},
                                        {"c_min", V.c_min},
                                        {"c_max", V.c_max},
                                        {"l2_sq", V.l2_sq},
                                        {"l2_sq_stderr", V.l2_sq_stderr}});
    return true;
}

bool stage_qvar(const ExperimentConfig& cfg, const fs::path& dir) {
    require(dir / "spectra.json");
    const auto cover = load_cover(dir);
    const SpectralData S = load_spectral_data(dir / "spectra.json");
    const auto d = load_sample(cover, dir);
    const Eigen::VectorXd a = bump_observable(d.sample, HPointd::i(), cfg.observable_radius);
    const auto r = qvar_report(S, a, cfg.qvar, cover.degree(), cover.genus(), to_string(cfg.potential.kind), cfg.seed);
    write_json(dir / "qvar.json", r.to_json());
    write_qvar_csv({r}, dir / "qvar.csv");
    bool ok = r.parseval.pass;
    for (const auto& b : r.bands) ok = ok && b.pass;
    return ok;
}

bool stage_mixing(const ExperimentConfig& cfg, const fs::path& dir) {
    const auto cover = load_cover(dir);
    MixingInputs in;
    if (cfg.flow.lambda1) {
        in.lambda1 = *cfg.flow.lambda1;
    } else {
        const auto spectra = read_json(dir / "spectra.json");
        in.lambda1 = spectra.at("metadata").at("lambda1_free").get<double>();
    }
    // Discretization bias of the estimate, measured on Bolza, is a few percent.
    in.lambda1_lo = 0.9 * in.lambda1;
    in.lambda1_hi = 1.1 * in.lambda1;
    in.samples = cfg.flow.samples;
    in.seed = cfg.flow.seed;
    in.ball_radius = cfg.flow.ball_radius;
    in.t_max = cfg.flow.t_max;
    in.threads = cfg.threads;
    const auto res = verify_mixing(cover, in);
    std::vector<MixingRow> rows;
    for (const auto& r : res.detail.at("rows"))
        rows.push_back({r.at("t").get<double>(), r.at("estimate").get<double>(), r.at("stderr").get<double>(),
                        r.at("bound").get<double>(), r.at("resolved").get<bool>(), r.at("pass").get<bool>()});
    write_mixing_csv(rows, dir / "mixing.csv");
    auto j = res.detail;
    j["pass"] = res.pass;
    write_json(dir / "mixing.json", j);
    return res.pass;
}

bool stage_verify(const ExperimentConfig& cfg, const fs::path& dir, const std::vector<std::string>& only) {
    fs::create_directories(dir);
    std::vector<std::string> suites;
    if (!only.empty()) {
        for (const auto& o : only) {
            const auto& names = verification_suites();
            if (std::find(names.begin(), names.end(), o) == names.end())
                throw ConfigError("only: unknown suite \"" + o + "\"");
            suites.push_back(o);
        }
    } else if (!cfg.verify.empty()) {
        for (const auto& n : verification_suites())
            if (cfg.verify.count(n)) suites.push_back(n);
    } else {
        suites = {"counting", "integrals", "time-average", "duhamel", "reconstruction", "sandwich"};
    }
    const auto base = configured_base(cfg);
    std::vector<CheckResult> results;
    for (const auto& s : suites) {
        if (s == "counting") {
            results.push_back(verify_counting({CoverDescriptor::trivial(base), CoverDescriptor::cyclic(base, 2)}, 10, 8,
                                              cfg.seed));
        } else if (s == "integrals") {
            results.push_back(verify_integrals());
        } else if (s == "time-average") {
            results.push_back(verify_time_average());
        } else if (s == "duhamel") {
            results.push_back(verify_duhamel(20, 16, 48, cfg.seed));
        } else if (s == "reconstruction") {
            results.push_back(verify_reconstruction(5, cfg.seed));
        } else if (s == "sandwich") {
            results.push_back(verify_sandwich(cfg.seed));
        } else if (s == "weyl") {
            WeylInputs w;
            w.seed = cfg.seed;
            results.push_back(verify_weyl(w));
        } else if (s == "mixing") {
            MixingInputs m;
            m.samples = cfg.flow.samples;
            m.seed = cfg.flow.seed;
            m.threads = cfg.threads;
            if (cfg.flow.lambda1) {
                m.lambda1 = *cfg.flow.lambda1;
                m.lambda1_lo = 0.9 * m.lambda1;
                m.lambda1_hi = 1.1 * m.lambda1;
            }
            results.push_back(verify_mixing(CoverDescriptor::trivial(base), m));
        }
    }
    bool ok = true;
    std::string log;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results) {
        ok = ok && r.pass;
        log += std::string(r.pass ? "PASS " : "FAIL ") + r.name + ": " + r.summary + "\n";
        j.push_back({{"name", r.name}, {"pass", r.pass}, {"summary", r.summary}, {"detail", r.detail}});
    }
    write_text(dir / "verification.log", log);
    write_json(dir / "verification.json", j);
    return ok;
}

bool stage_report(const fs::path& dir) {
    struct Acc {
        int runs = 0;
        double n = 0, s1 = 0, s2 = 0, s3 = 0;
    };
    std::map<std::tuple<int, double, double>, Acc> table;
    std::vector<fs::path> inputs;
    if (fs::exists(dir))
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file() && e.path().filename() == "qvar.csv") inputs.push_back(e.path());
    if (inputs.empty()) throw MissingArtifact("expected at least one qvar.csv under " + dir.string());
    std::sort(inputs.begin(), inputs.end());
    for (const auto& p : inputs) {
        std::ifstream in(p);
        std::string line;
        std::getline(in, line);
        if (line != "degree,genus,N,sum1,sum2,sum3,tau,delta,T,potential_kind,seed")
            throw MissingArtifact(p.string() + " has an unexpected header");
        while (std::getline(in, line)) {
            std::vector<std::string> f;
            std::stringstream ss(line);
            for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
            if (f.size() != 11) throw MissingArtifact(p.string() + " has a malformed row");
            auto& a = table[{std::stoi(f[0]), std::stod(f[6]), std::stod(f[7])}];
            ++a.runs;
            a.n += std::stod(f[2]);
            a.s1 += std::stod(f[3]);
            a.s2 += std::stod(f[4]);
            a.s3 += std::stod(f[5]);
        }
    }
    std::string out = "degree,tau,delta,runs,N,sum1,sum2,sum3\n";
    for (const auto& [key, a] : table) {
        const auto [deg, tau, delta] = key;
        const double r = a.runs;
        out += std::to_string(deg) + "," + fmt(tau, "%.10g") + "," + fmt(delta, "%.10g") + "," + std::to_string(a.runs) +
               "," + fmt(a.n / r, "%.17g") + "," + fmt(a.s1 / r, "%.17g") + "," + fmt(a.s2 / r, "%.17g") + "," +
               fmt(a.s3 / r, "%.17g") + "\n";
    }
    write_text(dir / "summary.csv", out);
    return true;
}

bool stage_run(const ExperimentConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    bool ok = true;
    std::vector<QVarReport> reports;
    fs::path first;
    for (int degree : cfg.degrees) {
        for (std::uint64_t seed : cfg.trend_seeds) {
            ExperimentConfig c = cfg;
            c.cover = degree == 1 ? nlohmann::json{{"kind", "trivial"}} : nlohmann::json{{"kind", "cyclic"}, {"degree", degree}};
            c.seed = seed;
            const fs::path sub = dir / ("degree_" + std::to_string(degree)) / ("seed_" + std::to_string(seed));
            if (first.empty()) first = sub;
            stage_build_cover(c, sub);
            stage_sample(c, sub);
            stage_eigensolve(c, sub);
            ok = stage_qvar(c, sub) && ok;
            reports.push_back(QVarReport::from_json(read_json(sub / "qvar.json")));
        }
    }
    write_qvar_csv(reports, dir / "qvar_all.csv");
    if (cfg.degrees.size() >= 3) {
        const auto trend = trend_from_reports(reports, cfg.trend_seeds.size());
        write_json(dir / "trend.json", trend.to_json());
        ok = trend.pass && ok;
    }
    ok = stage_mixing(cfg, first) && ok;
    ok = stage_verify(cfg, dir / "verification", {}) && ok;
    stage_report(dir);
    return ok;
}

}  // namespace hyperwave
