#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "hyperwave/spectral.hpp"

using namespace hyperwave;

namespace {

constexpr double kPi = std::numbers::pi;

// Lowest nonzero Laplace eigenvalue of the Bolza surface (literature value,
// multiplicity 3), used as an external oracle.
constexpr double kBolzaLambda1 = 3.8388872588;

std::shared_ptr<const FuchsianGroup> bolza() {
    static auto g = std::make_shared<const FuchsianGroup>(bolza_group());
    return g;
}

struct Discretization {
    SurfaceSample sample;
    double eps;
};

Discretization discretize(const CoverDescriptor& cover, int n, std::uint64_t seed, double scale = 2.0) {
    auto probe = sample_surface(cover, n, seed, 0.6);
    const double eps = EpsilonRule{scale}.apply(probe);
    if (graph_cutoff(eps) > probe.cutoff) probe = sample_surface(cover, n, seed, graph_cutoff(eps));
    return {std::move(probe), eps};
}

const Discretization& bolza_300() {
    static const Discretization d = discretize(CoverDescriptor::trivial(bolza()), 300, 1);
    return d;
}

}  // namespace

TEST_CASE("surface sample") {
    const auto cover = CoverDescriptor::cyclic(bolza(), 2);
    const auto s = sample_surface(cover, 120, 5, 0.5);
    CHECK(s.size() == 240);
    std::set<int> sheets;
    for (const auto& p : s.points) sheets.insert(p.sheet);
    CHECK(sheets.size() == 2);
    for (int sh = 0; sh < 2; ++sh)
        CHECK(std::count_if(s.points.begin(), s.points.end(), [&](const SurfacePoint& p) { return p.sheet == sh; }) == 120);
    for (int k = 0; k < 120; k += 7) CHECK(dirichlet_domain_membership(*bolza(), s.points[k].z));
    for (const auto& e : s.edges) {
        CHECK(e.i < e.j);
        CHECK(e.d >= 0);
        CHECK(e.d <= 0.5);
    }
    const auto again = sample_surface(cover, 120, 5, 0.5);
    CHECK(again.points.size() == s.points.size());
    bool same = again.edges.size() == s.edges.size();
    for (std::size_t k = 0; same && k < s.points.size(); ++k) same = again.points[k].z == s.points[k].z;
    CHECK(same);
    CHECK_THROWS_AS(sample_surface(cover, 10, 1, 0.5), InvalidParams);
}

TEST_CASE("sample distances match the quotient metric") {
    const auto cover = CoverDescriptor::cyclic(bolza(), 2);
    const auto s = sample_surface(cover, 100, 3, 0.8);
    std::map<std::pair<int, int>, double> stored;
    for (const auto& e : s.edges) stored[{e.i, e.j}] = e.d;
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(s.size()) - 1);
    int hits = 0;
    for (int k = 0; k < 400; ++k) {
        int i = pick(rng), j = pick(rng);
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        const double q = quotient_dist(cover, s.points[i], s.points[j], 0.8);
        const auto it = stored.find({i, j});
        if (q <= 0.8) {
            REQUIRE(it != stored.end());
            CHECK(it->second == doctest::Approx(q).epsilon(1e-12));
            ++hits;
        } else {
            CHECK(it == stored.end());
        }
    }
    CHECK(hits > 0);
}

TEST_CASE("sample density matches the Gauss-Bonnet area") {
    // Mean number of neighbours within rho against N area(rho) / Vol(X).
    const auto cover = CoverDescriptor::trivial(bolza());
    const auto s = sample_surface(cover, 1000, 7, 0.4);
    const double rho = 0.4;
    double count = 0;
    for (const auto& e : s.edges)
        if (e.d <= rho) count += 2;
    const double mean = count / s.size();
    const double expected = (s.size() - 1) * ball_volume(rho) / (4 * kPi);
    CHECK(mean == doctest::Approx(expected).epsilon(0.05));
    CHECK(s.weight() == doctest::Approx(4 * kPi / 1000));
}

TEST_CASE("graph laplacian") {
    const auto& d = bolza_300();
    const auto n = static_cast<Eigen::Index>(d.sample.size());
    const Operator H = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
    CHECK(std::abs(H.eigenvalues()[0]) < 1e-9);
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(n) / std::sqrt(double(n));
    CHECK((H.matrix() * one).norm() <= 1e-8);
    CHECK(std::abs(H.eigenvectors().col(0).dot(one)) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(H.eigenvalues().minCoeff() > -1e-9);

    const Operator Hc = assemble_operator(d.sample, Eigen::VectorXd::Constant(n, 0.7), d.eps);
    CHECK((Hc.eigenvalues() - H.eigenvalues() - Eigen::VectorXd::Constant(n, 0.7)).cwiseAbs().maxCoeff() < 1e-9);

    CHECK_THROWS_AS(graph_laplacian(d.sample, 1e-6), DisconnectedGraph);
    CHECK_THROWS_AS(graph_laplacian(d.sample, 1.0), InvalidParams);
    CHECK_THROWS_AS(assemble_operator(d.sample, Eigen::VectorXd::Zero(3), d.eps), InvalidParams);
}

TEST_CASE("first eigenvalue converges toward the Bolza value") {
    std::vector<double> est;
    for (int n : {250, 500, 1000}) {
        const auto d = discretize(CoverDescriptor::trivial(bolza()), n, 11);
        const Operator H = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
        est.push_back(H.eigenvalues()[1]);
    }
    // First-order self-convergence: Richardson in 1/sqrt(N).
    const double r = (std::sqrt(2.0) * est[2] - est[1]) / (std::sqrt(2.0) - 1);
    MESSAGE("lambda_1 estimates " << est[0] << " " << est[1] << " " << est[2] << " extrapolated " << r);
    CHECK(est[2] == doctest::Approx(r).epsilon(0.25));
    CHECK(est[2] == doctest::Approx(kBolzaLambda1).epsilon(0.25));
    CHECK(r == doctest::Approx(kBolzaLambda1).epsilon(0.25));
}

TEST_CASE("solve window") {
    const auto& d = bolza_300();
    const auto n = static_cast<Eigen::Index>(d.sample.size());
    const Operator H = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
    const double w = d.sample.weight();
    const double top = trusted_band_max(H);

    CHECK(solve_window(H, WindowSpec(0.3, 0.4), w).count() == (H.eigenvalues()[1] > 0.4 ? 0 : 1));
    long prev = 0;
    for (double b = 1; b <= top; b += 1) {
        const auto s = solve_window(H, WindowSpec(0.3, b), w);
        CHECK(s.count() >= prev);
        prev = s.count();
    }
    CHECK_THROWS_AS(solve_window(H, WindowSpec(0.3, top + 1), w), WindowUnreliable);

    const auto s = solve_window(H, WindowSpec(0.3, top), w);
    const Eigen::MatrixXd gram = w * s.eigenvectors.transpose() * s.eigenvectors;
    CHECK((gram - Eigen::MatrixXd::Identity(s.count(), s.count())).cwiseAbs().maxCoeff() <= 1e-8);
    const auto rho = s.rho();
    for (Eigen::Index k = 0; k < s.count(); ++k)
        CHECK(rho[k] == doctest::Approx(std::sqrt(s.eigenvalues[k] - 0.25)));

    // Frobenius identity for the multiplication operator over all modes.
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    Eigen::VectorXd a(n);
    for (auto& x : a) x = u(rng);
    const Eigen::MatrixXd Psi = H.eigenvectors() / std::sqrt(w);
    const Eigen::MatrixXd M = w * Psi.transpose() * a.asDiagonal() * Psi;
    CHECK(M.squaredNorm() == doctest::Approx(a.squaredNorm()).epsilon(1e-10));
}

TEST_CASE("weyl density") {
    CHECK(weyl_density(1.25, 4.25) == doctest::Approx(0.23852).epsilon(1e-4));
    CHECK(weyl_density(2.0, 2.0) == 0.0);
    const double big = weyl_density(10, 40);
    CHECK(big == doctest::Approx(30 / (4 * kPi)).epsilon(0.01));
    CHECK_THROWS_AS(weyl_density(0.2, 1), InvalidArgument);
}

TEST_CASE("counting lower bound") {
    const auto& d = bolza_300();
    const auto n = static_cast<Eigen::Index>(d.sample.size());
    const Operator H0 = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
    const WindowSpec I(2.0, 20.0);

    const auto zero = counting_lower_bound_check(H0, H0, I, 0, 0);
    CHECK(zero.pass);
    CHECK(zero.n_v == zero.n_0);

    const double c = 1.5;
    const Operator Hc = assemble_operator(d.sample, Eigen::VectorXd::Constant(n, c), d.eps);
    const auto shifted = counting_lower_bound_check(H0, Hc, I, c, c);
    CHECK(shifted.pass);
    CHECK(shifted.n_v == H0.count_in(I.a - c, I.b - c));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 3);
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::VectorXd V(n);
        for (auto& x : V) x = u(rng);
        const Operator HV = assemble_operator(d.sample, V, d.eps);
        CHECK(counting_lower_bound_check(H0, HV, I, V.minCoeff(), V.maxCoeff()).pass);
    }
    CHECK_THROWS_AS(counting_lower_bound_check(H0, H0, I, 0, 30), HypothesisViolated);
}

TEST_CASE("potentials") {
    const auto& d = bolza_300();
    PotentialSpec weak;
    weak.kind = PotentialKind::WeakCoupling;
    weak.amplitude = 2;
    weak.coupling = 0;
    const auto w0 = make_potential(weak, d.sample);
    CHECK(w0.values.cwiseAbs().maxCoeff() == 0.0);
    weak.coupling = 0.5;
    const auto w1 = make_potential(weak, d.sample);
    CHECK(w1.c_max <= 1.0 + 1e-12);
    CHECK(w1.c_max > 0);

    PotentialSpec cloud;
    cloud.kind = PotentialKind::PointCloud;
    cloud.amplitude = 3;
    cloud.radius = 0.4;
    cloud.centers = {d.sample.points[0], d.sample.points[150]};
    if (quotient_dist(d.sample.cover, cloud.centers[0], cloud.centers[1], 1.0) > 0.8) {
        const auto pc = make_potential(cloud, d.sample);
        CHECK(pc.c_max == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(pc.c_min == 0.0);
    }
    cloud.centers = {d.sample.points[0], d.sample.points[0]};
    CHECK_THROWS_AS(make_potential(cloud, d.sample), InvalidParams);
    cloud.centers = {d.sample.points[0]};
    cloud.radius = 2.0;
    CHECK_THROWS_AS(make_potential(cloud, d.sample), InvalidParams);

    PotentialSpec thin;
    thin.kind = PotentialKind::ConstantPlusThin;
    thin.constant = 0.5;
    thin.amplitude = 1;
    thin.thin_threshold = 1.55;
    const auto th = make_potential(thin, d.sample);
    CHECK(th.c_min == doctest::Approx(0.5));
    CHECK(th.c_max == doctest::Approx(1.5));
    const double frac = (th.values.array() > 1.0).cast<double>().mean();
    CHECK(frac > 0.6);
    CHECK(frac < 0.97);

    // Induced bump on sheet 0: the L^2 norm does not grow with the degree.
    PotentialSpec bump;
    bump.amplitude = 2;
    bump.radius = 0.8;
    std::vector<double> norms;
    for (int m : {1, 2, 4}) {
        const auto s = sample_surface(CoverDescriptor::cyclic(bolza(), m), 300, 9, 0.3);
        const auto v = make_potential(bump, s);
        norms.push_back(v.l2_sq);
        CHECK(v.l2_sq_stderr > 0);
        if (m > 1) CHECK(std::abs(v.l2_sq - norms[0]) <= 3 * v.l2_sq_stderr + 1e-12);
    }
    const double exact = 4 * 2 * kPi * [] {
        quad::Options o;
        return quad::adaptive([](double r) { return std::pow(bump_profile(r / 0.8), 2) * std::sinh(r); }, 0, 0.8, o).value;
    }();
    CHECK(norms[0] == doctest::Approx(exact).epsilon(0.1));
    CHECK_THROWS_AS(potential_kind_from_string("nope"), InvalidParams);
    CHECK(PotentialSpec::from_json(bump.to_json()).radius == 0.8);
}

TEST_CASE("spectral data round trip") {
    const auto& d = bolza_300();
    const auto n = static_cast<Eigen::Index>(d.sample.size());
    const Operator H = assemble_operator(d.sample, Eigen::VectorXd::Zero(n), d.eps);
    auto s = solve_window(H, WindowSpec(0.3, 15), d.sample.weight());
    s.metadata["note"] = "test";
    const auto dir = std::filesystem::temp_directory_path() / "hyperwave_spectral_test";
    std::filesystem::create_directories(dir);
    save_spectral_data(s, dir / "spec.json");
    const auto back = load_spectral_data(dir / "spec.json");
    CHECK(back.eigenvalues == s.eigenvalues);
    CHECK(back.eigenvectors == s.eigenvectors);
    CHECK(back.window.b == 15);
    CHECK(back.metadata["note"] == "test");
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_spectral_data(dir / "spec.json"), MissingArtifact);
}
