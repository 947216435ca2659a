#include "hyperwave/spectral.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <tuple>
#include <unordered_map>

namespace hyperwave {

namespace {

constexpr double kPi = std::numbers::pi;

// Radical inverse of k in the given base (Halton component).
double radical_inverse(std::uint64_t k, unsigned base) {
    double inv = 1.0 / base, f = inv, r = 0;
    while (k > 0) {
        r += f * static_cast<double>(k % base);
        k /= base;
        f *= inv;
    }
    return r;
}

// Quasi-uniform domain points: a Cranley-Patterson rotated Halton sequence
// mapped area-uniformly onto the disc of radius R_D about i, then rejected
// against the Dirichlet domain.
std::vector<HPointd> quasi_uniform_domain_points(const FuchsianGroup& g, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double s1 = unit(rng), s2 = unit(rng);
    const double rd = g.domain_radius();
    std::vector<HPointd> out;
    out.reserve(n);
    for (std::uint64_t k = 1; static_cast<int>(out.size()) < n; ++k) {
        const double u = std::fmod(radical_inverse(k, 2) + s1, 1.0);
        const double v = std::fmod(radical_inverse(k, 3) + s2, 1.0);
        const double r = std::acosh(1 + u * (std::cosh(rd) - 1));
        const HPointd z = polar_to_point(HPointd::i(), kUpAngle<double>, r, 2 * kPi * v);
        if (g.in_domain(z)) out.push_back(z);
    }
    return out;
}

std::uint64_t pair_key(int i, int j) {
    if (i > j) std::swap(i, j);
    return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint32_t>(j);
}

}  // namespace

double SurfaceSample::median_nearest_neighbor() const {
    std::vector<double> nn(points.size(), kUnreachable);
    for (const auto& e : edges) {
        nn[e.i] = std::min(nn[e.i], e.d);
        nn[e.j] = std::min(nn[e.j], e.d);
    }
    std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
    return nn[nn.size() / 2];
}

SurfaceSample sample_surface(const CoverDescriptor& cover, int points_per_sheet, std::uint64_t seed, double cutoff) {
    if (points_per_sheet < 50) throw InvalidParams("sample_surface needs at least 50 points per sheet");
    if (!(cutoff > 0)) throw InvalidParams("sample_surface needs a positive cutoff");
    SurfaceSample s(cover);
    s.points_per_sheet = points_per_sheet;
    s.seed = seed;
    s.cutoff = cutoff;
    const int n = points_per_sheet, m = cover.degree();

    const std::vector<HPointd> base = quasi_uniform_domain_points(cover.base(), n, seed);
    s.points.reserve(static_cast<std::size_t>(n) * m);
    for (int sh = 0; sh < m; ++sh)
        for (const auto& z : base) s.points.push_back({z, sh});

    // Orbit images g z_j that can come within `cutoff` of the domain.
    const QuotientMetric metric(cover, cutoff);
    const double reach = cover.base().domain_radius() + cutoff;
    struct Image {
        HPointd w;
        int j;
        const CoverElement* e;
    };
    std::vector<Image> images;
    for (const auto& e : metric.elements())
        for (int j = 0; j < n; ++j) {
            const HPointd w = apply(e.g, base[j]);
            if (dist(HPointd::i(), w) <= reach) images.push_back({w, j, &e});
        }

    const double limit = 2 * std::pow(std::sinh(cutoff / 2), 2) * 2;   // |z - w|^2 / (y y') bound
    std::unordered_map<std::uint64_t, double> best;
    for (int i = 0; i < n; ++i) {
        const HPointd& z = base[i];
        for (const auto& im : images) {
            const double dx = z.x() - im.w.x(), dy = z.y() - im.w.y();
            if ((dx * dx + dy * dy) / (z.y() * im.w.y()) > limit) continue;
            const double d = dist(z, im.w);
            if (d > cutoff) continue;
            // g carries sheet s' of point j to sheet perm[s'] of point i.
            for (int sj = 0; sj < m; ++sj) {
                const int a = im.e->perm[sj] * n + i, b = sj * n + im.j;
                if (a == b) continue;
                auto [it, fresh] = best.try_emplace(pair_key(a, b), d);
                if (!fresh) it->second = std::min(it->second, d);
            }
        }
    }
    s.edges.reserve(best.size());
    for (const auto& [key, d] : best)
        s.edges.push_back({static_cast<int>(key >> 32), static_cast<int>(key & 0xffffffffu), d});
    std::sort(s.edges.begin(), s.edges.end(), [](const Edge& x, const Edge& y) {
        return std::tie(x.i, x.j) < std::tie(y.i, y.j);
    });
    return s;
}

double EpsilonRule::apply(const SurfaceSample& s) const {
    const double nn = s.median_nearest_neighbor();
    if (!std::isfinite(nn)) throw InvalidParams("sample cutoff below the nearest-neighbour scale");
    return scale * nn * nn;
}

double graph_cutoff(double eps) { return 6 * std::sqrt(eps); }

Discretization discretize_surface(const CoverDescriptor& cover, int points_per_sheet, std::uint64_t seed,
                                  const EpsilonRule& rule) {
    auto probe = sample_surface(cover, points_per_sheet, seed, 0.6);
    const double eps = rule.apply(probe);
    if (graph_cutoff(eps) > probe.cutoff) probe = sample_surface(cover, points_per_sheet, seed, graph_cutoff(eps));
    return {std::move(probe), eps};
}

std::string to_string(PotentialKind k) {
    switch (k) {
        case PotentialKind::InducedBump: return "induced_bump";
        case PotentialKind::PointCloud: return "point_cloud";
        case PotentialKind::WeakCoupling: return "weak_coupling";
        case PotentialKind::ConstantPlusThin: return "constant_plus_thin";
    }
    return "unknown";
}

PotentialKind potential_kind_from_string(const std::string& s) {
    for (auto k : {PotentialKind::InducedBump, PotentialKind::PointCloud, PotentialKind::WeakCoupling,
                   PotentialKind::ConstantPlusThin})
        if (to_string(k) == s) return k;
    throw InvalidParams("unknown potential kind '" + s + "'");
}

nlohmann::json PotentialSpec::to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["amplitude"] = amplitude;
    j["radius"] = radius;
    j["center"] = {center.x(), center.y()};
    j["centers"] = nlohmann::json::array();
    for (const auto& c : centers) j["centers"].push_back({c.z.x(), c.z.y(), c.sheet});
    j["coupling"] = coupling;
    j["coupling_power"] = coupling_power;
    j["constant"] = constant;
    j["thin_threshold"] = thin_threshold;
    return j;
}

PotentialSpec PotentialSpec::from_json(const nlohmann::json& j) {
    PotentialSpec p;
    p.kind = potential_kind_from_string(j.value("kind", std::string("induced_bump")));
    p.amplitude = j.value("amplitude", 0.0);
    p.radius = j.value("radius", 0.5);
    if (j.contains("center")) p.center = HPointd(j["center"].at(0).get<double>(), j["center"].at(1).get<double>());
    if (j.contains("centers"))
        for (const auto& c : j["centers"])
            p.centers.push_back({HPointd(c.at(0).get<double>(), c.at(1).get<double>()), c.size() > 2 ? c.at(2).get<int>() : 0});
    p.coupling = j.value("coupling", 0.0);
    p.coupling_power = j.value("coupling_power", 1.0);
    p.constant = j.value("constant", 0.0);
    p.thin_threshold = j.value("thin_threshold", 1.6);
    return p;
}

double bump_profile(double s) {
    s = std::abs(s);
    if (s >= 1) return 0;
    return std::exp(1 - 1 / (1 - s * s));
}

Potential make_potential(const PotentialSpec& spec, const SurfaceSample& sample) {
    const CoverDescriptor& cover = sample.cover;
    const auto n = static_cast<Eigen::Index>(sample.size());
    Potential out;
    out.spec = spec;
    out.values = Eigen::VectorXd::Zero(n);

    auto bump_values = [&](const SurfacePoint& c, double radius, bool every_sheet) {
        const SurfacePoint rc = reduce_to_domain(cover, c);
        const QuotientMetric metric(cover, radius);
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto& p = sample.points[k];
            double best = kUnreachable;
            if (every_sheet) {
                for (int sh = 0; sh < cover.degree(); ++sh) best = std::min(best, metric(p, {rc.z, sh}));
            } else {
                best = metric(p, rc);
            }
            if (best < radius) v[k] = bump_profile(best / radius);
        }
        return v;
    };

    switch (spec.kind) {
        case PotentialKind::InducedBump: {
            if (!(spec.radius > 0)) throw InvalidParams("induced_bump needs radius > 0");
            out.values = spec.amplitude * bump_values({spec.center, 0}, spec.radius, false);
            break;
        }
        case PotentialKind::PointCloud: {
            if (spec.centers.empty()) throw InvalidParams("point_cloud needs at least one centre");
            if (!(spec.radius > 0)) throw InvalidParams("point_cloud needs radius > 0");
            for (std::size_t a = 0; a < spec.centers.size(); ++a) {
                const SurfacePoint ca = spec.centers[a];
                if (ca.sheet < 0 || ca.sheet >= cover.degree()) throw InvalidParams("point_cloud centre sheet out of range");
                if (!(spec.radius < injectivity_radius(cover, ca)))
                    throw InvalidParams("point_cloud radius must be below the injectivity radius at each centre");
                for (std::size_t b = a + 1; b < spec.centers.size(); ++b)
                    if (!(quotient_dist(cover, ca, spec.centers[b], 2 * spec.radius) > 2 * spec.radius))
                        throw InvalidParams("point_cloud centres must be more than 2 radius apart");
                out.values += spec.amplitude * bump_values(ca, spec.radius, false);
            }
            break;
        }
        case PotentialKind::WeakCoupling: {
            const double eps = spec.coupling / std::pow(static_cast<double>(cover.degree()), spec.coupling_power);
            if (eps != 0) out.values = eps * spec.amplitude * bump_values({spec.center, 0}, spec.radius, true);
            break;
        }
        case PotentialKind::ConstantPlusThin: {
            out.values.setConstant(spec.constant);
            if (spec.amplitude != 0)
                for (Eigen::Index k = 0; k < n; ++k)
                    if (injectivity_radius(cover, sample.points[k]) < spec.thin_threshold) out.values[k] += spec.amplitude;
            break;
        }
    }
    out.c_min = n ? out.values.minCoeff() : 0;
    out.c_max = n ? out.values.maxCoeff() : 0;
    const Eigen::ArrayXd sq = out.values.array().square();
    const double vol = cover.volume();
    out.l2_sq = vol * sq.mean();
    if (n > 1) {
        const double var = (sq - sq.mean()).square().sum() / static_cast<double>(n - 1);
        out.l2_sq_stderr = vol * std::sqrt(var / static_cast<double>(n));
    }
    return out;
}

Eigen::MatrixXd graph_laplacian(const SurfaceSample& sample, double eps) {
    if (!(eps > 0)) throw InvalidParams("graph bandwidth must be positive");
    const double R = graph_cutoff(eps);
    if (R > sample.cutoff * (1 + 1e-12)) throw InvalidParams("sample cutoff below the graph cutoff");
    const auto n = static_cast<Eigen::Index>(sample.size());
    const double density = static_cast<double>(n) / sample.cover.volume();
    const double u = R * R / (4 * eps);
    const double moment = 8 * kPi * eps * eps * (1 - std::exp(-u) * (1 + u));   // int_{|y|<R} y_1^2 K
    const double scale = density * moment / 2;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    for (const auto& e : sample.edges) {
        if (e.d > R) continue;
        const double w = std::exp(-e.d * e.d / (4 * eps)) / scale;
        L(e.i, e.j) -= w;
        L(e.j, e.i) -= w;
        L(e.i, e.i) += w;
        L(e.j, e.j) += w;
    }
    // Connectivity by union-find over the kept edges.
    std::vector<int> parent(n);
    for (Eigen::Index k = 0; k < n; ++k) parent[k] = static_cast<int>(k);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : sample.edges)
        if (e.d <= R) parent[find(e.i)] = find(e.j);
    for (Eigen::Index k = 1; k < n; ++k)
        if (find(static_cast<int>(k)) != find(0)) throw DisconnectedGraph("graph Laplacian is disconnected");
    return L;
}

Operator assemble_operator(const SurfaceSample& sample, const Eigen::VectorXd& V, double eps) {
    Eigen::MatrixXd L = graph_laplacian(sample, eps);
    if (V.size() != L.rows()) throw InvalidParams("potential length does not match the sample");
    L.diagonal() += V;
    return Operator(L);
}

Eigen::VectorXd SpectralData::rho() const {
    Eigen::VectorXd r(eigenvalues.size());
    for (Eigen::Index k = 0; k < r.size(); ++k)
        r[k] = eigenvalues[k] > 0.25 ? std::sqrt(eigenvalues[k] - 0.25) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

double trusted_band_max(const Operator& H, double trusted_fraction) {
    const auto n = H.dim();
    const auto k = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(trusted_fraction * n)), 1, n);
    return H.eigenvalues()[k - 1];
}

SpectralData solve_window(const Operator& H, const WindowSpec& I, double weight, double trusted_fraction) {
    SpectralData s;
    s.window = I;
    s.weight = weight;
    s.total_modes = static_cast<int>(H.dim());
    s.trusted_max = trusted_band_max(H, trusted_fraction);
    if (I.b > s.trusted_max)
        throw WindowUnreliable("window upper edge " + std::to_string(I.b) + " exceeds the trusted band " +
                               std::to_string(s.trusted_max));
    std::vector<Eigen::Index> idx;
    for (Eigen::Index k = 0; k < H.dim(); ++k)
        if (I.contains(H.eigenvalues()[k])) idx.push_back(k);
    s.eigenvalues.resize(static_cast<Eigen::Index>(idx.size()));
    s.eigenvectors.resize(H.dim(), static_cast<Eigen::Index>(idx.size()));
    const double inv = 1 / std::sqrt(weight);
    for (std::size_t c = 0; c < idx.size(); ++c) {
        s.eigenvalues[c] = H.eigenvalues()[idx[c]];
        s.eigenvectors.col(c) = H.eigenvectors().col(idx[c]) * inv;
    }
    s.metadata["trusted_fraction"] = trusted_fraction;
    return s;
}

double weyl_density(double a, double b) {
    if (!(a > 0.25 && b >= a)) throw InvalidArgument("weyl_density needs 1/4 < a <= b");
    if (a == b) return 0;
    quad::Options opt;
    opt.rel_tol = 1e-12;
    const auto r = quad::adaptive([](double x) { return std::tanh(kPi * x) * x; }, std::sqrt(a - 0.25),
                                  std::sqrt(b - 0.25), opt);
    return r.value / (2 * kPi);
}

CountingReport counting_lower_bound_check(const Operator& H0, const Operator& HV, const WindowSpec& I, double c_min,
                                          double c_max) {
    CountingReport r;
    r.lower_a = I.a - std::min(0.0, c_min);
    r.lower_b = I.b - c_max;
    if (!(r.lower_b > r.lower_a)) throw HypothesisViolated("need b - C_max > a - min(0, C_min)");
    r.n_v = HV.count_in(I.a, I.b);
    r.n_0 = H0.count_in(r.lower_a, r.lower_b);
    r.pass = r.n_v >= r.n_0;
    return r;
}

void save_spectral_data(const SpectralData& s, const std::filesystem::path& json_path, bool with_vectors) {
    nlohmann::json j;
    j["eigenvalues"] = std::vector<double>(s.eigenvalues.data(), s.eigenvalues.data() + s.eigenvalues.size());
    j["window"] = {{"a", s.window.a}, {"b", s.window.b}};
    j["weight"] = s.weight;
    j["trusted_max"] = s.trusted_max;
    j["total_modes"] = s.total_modes;
    j["metadata"] = s.metadata;
    if (with_vectors) {
        static_assert(std::endian::native == std::endian::little, "sidecar writer assumes little-endian");
        auto bin = json_path;
        bin.replace_extension(".vectors.bin");
        std::ofstream out(bin, std::ios::binary);
        if (!out) throw MissingArtifact("cannot write " + bin.string());
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = s.eigenvectors;
        out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
        j["vectors"] = {{"file", bin.filename().string()},
                        {"rows", s.eigenvectors.rows()},
                        {"cols", s.eigenvectors.cols()},
                        {"layout", "row-major float64 little-endian"}};
    }
    std::ofstream out(json_path);
    if (!out) throw MissingArtifact("cannot write " + json_path.string());
    out << j.dump(2) << "\n";
}

SpectralData load_spectral_data(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw MissingArtifact("missing spectral data: " + json_path.string());
    const auto j = nlohmann::json::parse(in);
    SpectralData s;
    const auto ev = j.at("eigenvalues").get<std::vector<double>>();
    s.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    s.window = WindowSpec(j.at("window").at("a").get<double>(), j.at("window").at("b").get<double>());
    s.weight = j.at("weight").get<double>();
    s.trusted_max = j.at("trusted_max").get<double>();
    s.total_modes = j.at("total_modes").get<int>();
    s.metadata = j.value("metadata", nlohmann::json::object());
    if (j.contains("vectors")) {
        const auto rows = j["vectors"].at("rows").get<Eigen::Index>(), cols = j["vectors"].at("cols").get<Eigen::Index>();
        const auto bin = json_path.parent_path() / j["vectors"].at("file").get<std::string>();
        std::ifstream vin(bin, std::ios::binary);
        if (!vin) throw MissingArtifact("missing eigenvector sidecar: " + bin.string());
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
        vin.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
        if (!vin) throw MissingArtifact("truncated eigenvector sidecar: " + bin.string());
        s.eigenvectors = rm;
    }
    return s;
}

}  // namespace hyperwave
