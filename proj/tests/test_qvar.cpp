#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "hyperwave/qvar.hpp"

using namespace hyperwave;

namespace {

std::shared_ptr<const FuchsianGroup> bolza() {
    static auto g = std::make_shared<const FuchsianGroup>(bolza_group());
    return g;
}

struct Instance {
    Discretization disc;
    Operator H;
    SpectralData S;
    Eigen::VectorXd a;
};

// Bolza with 300 points, eigenpairs in [1, 12].
const Instance& bolza_instance() {
    static const Instance inst = [] {
        auto d = discretize_surface(CoverDescriptor::trivial(bolza()), 300, 1);
        PotentialSpec ps;
        ps.amplitude = 1;
        const auto V = make_potential(ps, d.sample);
        Operator H = assemble_operator(d.sample, V.values, d.eps);
        SpectralData S = solve_window(H, WindowSpec(1, 12), d.sample.weight());
        Eigen::VectorXd a = bump_observable(d.sample, HPointd::i(), 1.0);
        return Instance{std::move(d), std::move(H), std::move(S), std::move(a)};
    }();
    return inst;
}

// All eigenpairs of a random symmetric matrix, eigenvectors normalized
// under the weight w.
SpectralData full_spectrum(int n, double w, std::uint64_t seed, double shift) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = g(rng);
    M = 0.5 * (M + M.transpose());
    M.diagonal().array() += shift;
    const Operator H(M);
    SpectralData S;
    S.eigenvalues = H.eigenvalues();
    S.eigenvectors = H.eigenvectors() / std::sqrt(w);
    S.weight = w;
    S.window = WindowSpec(0.26, 1e6);
    S.total_modes = n;
    return S;
}

Eigen::VectorXd random_observable(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    Eigen::VectorXd a(n);
    for (auto& v : a) v = u(rng);
    return a;
}

}  // namespace

TEST_CASE("config") {
    QVarConfig c;
    CHECK_NOTHROW(c.validate());
    const auto back = QVarConfig::from_json(c.to_json());
    CHECK(back.window.a == c.window.a);
    CHECK(back.deltas == c.deltas);
    CHECK(back.taus == c.taus);
    try {
        QVarConfig::from_json(nlohmann::json::parse(R"({"window": {"a": 5, "b": 2}})"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("window.a") != std::string::npos);
    }
    CHECK_THROWS_AS(QVarConfig::from_json(nlohmann::json::parse(R"({"T": -1})")), ConfigError);
    CHECK_THROWS_AS(QVarConfig::from_json(nlohmann::json::parse(R"({"deltas": [0.1, 0]})")), ConfigError);
}

TEST_CASE("diagonal variance") {
    const auto& I = bolza_instance();
    const WindowSpec W(1, 12);
    REQUIRE(I.S.count() >= 5);

    SUBCASE("constant observable") {
        const Eigen::VectorXd c = Eigen::VectorXd::Constant(I.a.size(), 0.7);
        CHECK(diagonal_variance(I.S, c, W) < 1e-24);
    }
    SUBCASE("brute force") {
        const double mean = I.a.mean();
        double acc = 0;
        for (Eigen::Index j = 0; j < I.S.count(); ++j) {
            double m = 0;
            for (Eigen::Index i = 0; i < I.a.size(); ++i)
                m += I.S.weight * I.a[i] * I.S.eigenvectors(i, j) * I.S.eigenvectors(i, j);
            acc += (m - mean) * (m - mean);
        }
        CHECK(diagonal_variance(I.S, I.a, W) == doctest::Approx(acc / I.S.count()).epsilon(1e-12));
    }
    SUBCASE("crude bound") {
        const double sup = I.a.cwiseAbs().maxCoeff();
        CHECK(diagonal_variance(I.S, I.a, W) <= 4 * sup * sup);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(diagonal_variance(I.S, I.a, WindowSpec(200, 300)), EmptyWindow);
        CHECK_THROWS_AS(diagonal_variance(I.S, Eigen::VectorXd::Ones(3), W), InvalidArgument);
    }
}

TEST_CASE("off-diagonal variance") {
    const auto& I = bolza_instance();
    const WindowSpec W(1, 12);
    const auto rho = I.S.rho();
    const double span = rho.maxCoeff() - rho.minCoeff();

    CHECK(offdiag_variance(I.S, I.a, W, span + 0.5, 0.4) == 0);
    // The smallest rho gap at this resolution is far above 1e-12.
    CHECK(offdiag_variance(I.S, I.a, W, 0, 1e-12) == 0);
    for (double tau : {0.0, 0.3, 1.0})
        for (double delta : {0.4, 0.1}) {
            CHECK(offdiag_variance(I.S, I.a, W, tau, delta) == offdiag_variance(I.S, I.a, W, -tau, delta));
        }
    const double wide = offdiag_variance(I.S, I.a, W, 0, 1e3);
    const double full = offdiag_band(I.S, I.a, W, -1e3, 1e3);
    CHECK(wide == doctest::Approx(full).epsilon(1e-14));
    CHECK(wide > 0);
}

TEST_CASE("identities") {
    const auto& I = bolza_instance();
    const WindowSpec W(1, 12);

    SUBCASE("band partition") {
        for (double delta : {0.4, 0.2, 0.1, 0.05}) {
            const auto c = band_partition(I.S, I.a, W, delta);
            CHECK(c.pass);
            CHECK(std::abs(c.gap) <= 1e-12);
        }
    }
    SUBCASE("Parseval ceiling on a window") {
        const auto c = parseval_ceiling(I.S, I.a, W);
        CHECK(c.pass);
        CHECK(c.lhs <= c.rhs);
        // N (sum1 + full off-diagonal) is the left side.
        const double n = static_cast<double>(I.S.count());
        CHECK(c.lhs == doctest::Approx(n * (diagonal_variance(I.S, I.a, W) + offdiag_band(I.S, I.a, W, -1e3, 1e3)))
                           .epsilon(1e-12));
    }
    SUBCASE("Parseval is an equality on the full spectrum") {
        const auto S = full_spectrum(40, 0.37, 8, 30.0);
        REQUIRE(S.eigenvalues.minCoeff() > 0.26);
        const Eigen::VectorXd a = random_observable(40, 9);
        const auto c = parseval_ceiling(S, a, WindowSpec(0.26, 1e6));
        CHECK(std::abs(c.gap) <= 1e-9);
    }
    SUBCASE("sign flips") {
        SpectralData flipped = I.S;
        std::mt19937_64 rng(12);
        for (Eigen::Index j = 0; j < flipped.count(); ++j)
            if (rng() & 1) flipped.eigenvectors.col(j) *= -1;
        CHECK(std::abs(diagonal_variance(flipped, I.a, W) - diagonal_variance(I.S, I.a, W)) <= 1e-12);
        for (double tau : {0.0, 1.0})
            CHECK(std::abs(offdiag_variance(flipped, I.a, W, tau, 0.4) - offdiag_variance(I.S, I.a, W, tau, 0.4)) <=
                  1e-12);
    }
    SUBCASE("mean removal") {
        const Eigen::VectorXd b = I.a.array() + 3.0;
        CHECK(std::abs(diagonal_variance(I.S, b, W) - diagonal_variance(I.S, I.a, W)) <= 1e-12);
        for (double tau : {0.0, 1.0})
            CHECK(std::abs(offdiag_variance(I.S, b, W, tau, 0.2) - offdiag_variance(I.S, I.a, W, tau, 0.2)) <= 1e-12);
    }
}

TEST_CASE("bound chain") {
    SUBCASE("Bolza window [2, 6], T = 100") {
        auto d = discretize_surface(CoverDescriptor::trivial(bolza()), 300, 2);
        PotentialSpec ps;
        ps.amplitude = 1;
        const auto V = make_potential(ps, d.sample);
        const auto P = make_propagators(graph_laplacian(d.sample, d.eps), V.values);
        const Eigen::VectorXd a = bump_observable(d.sample, HPointd::i(), 1.0);
        const WindowSpec W(2, 6);
        REQUIRE(P.HV.count_in(2, 6) >= 3);
        for (double delta : {0.4, 0.1}) {
            const auto r = bound_chain_check(P, a, W, 100, 0, delta);
            MESSAGE("delta " << delta << ": sum " << r.sum << " majorant " << r.majorant << " ratio " << r.ratio);
            CHECK(r.pass);
            CHECK(r.pairs >= r.n);
        }
        const Eigen::VectorXd c = Eigen::VectorXd::Constant(a.size(), 2.0);
        const auto z = bound_chain_check(P, c, W, 100, 0, 0.4);
        CHECK(z.sum == doctest::Approx(0).scale(1e-20));
        CHECK(z.majorant == doctest::Approx(0).scale(1e-20));
    }
    SUBCASE("random matrices, tau = 1") {
        std::mt19937_64 rng(21);
        std::normal_distribution<double> g;
        for (int rep = 0; rep < 5; ++rep) {
            Eigen::MatrixXd H0 = Eigen::MatrixXd::Zero(16, 16);
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 16; ++j) H0(i, j) = g(rng);
            H0 = 0.5 * (H0 + H0.transpose());
            H0.diagonal().array() += 6;
            Eigen::VectorXd V(16);
            for (auto& v : V) v = 0.3 * g(rng);
            const auto P = make_propagators(H0, V);
            const Eigen::VectorXd a = random_observable(16, 100 + rep);
            const auto r = bound_chain_check(P, a, WindowSpec(1, 12), 50, 1, 0.5);
            CHECK(r.pass);
        }
    }
    SUBCASE("single eigenvalue") {
        Eigen::MatrixXd H0 = Eigen::MatrixXd::Zero(3, 3);
        H0.diagonal() << 1, 4, 9;
        const auto P = make_propagators(H0, Eigen::VectorXd::Zero(3));
        const Eigen::Vector3d a(0.9, -0.2, 0.4);
        const auto r = bound_chain_check(P, a, WindowSpec(3, 5), 100, 0, 0.1);
        const double c = a[1] - a.mean();
        CHECK(r.n == 1);
        CHECK(r.sum == doctest::Approx(c * c).epsilon(1e-14));
        CHECK(r.majorant == doctest::Approx(c * c).epsilon(1e-9));
    }
    SUBCASE("degenerate denominator") {
        // A floor above every denominator.
        Eigen::MatrixXd H0 = Eigen::MatrixXd::Zero(2, 2);
        H0.diagonal() << 1.25, 4.25;
        const auto P = make_propagators(H0, Eigen::VectorXd::Zero(2));
        const Eigen::Vector2d a(1, -1);
        CHECK_THROWS_AS(bound_chain_check(P, a, WindowSpec(1, 5), 100, 0, 0.1, 1e3), DenominatorDegenerate);
    }
}

TEST_CASE("reports and trend helpers") {
    const auto& I = bolza_instance();
    QVarConfig cfg;
    cfg.window = WindowSpec(1, 12);
    const auto r = qvar_report(I.S, I.a, cfg, 1, 2, "induced_bump", 1);
    CHECK(r.n == I.S.count());
    CHECK(r.rows.size() == cfg.taus.size() * cfg.deltas.size());
    for (const auto& row : r.rows) {
        CHECK(row.sum2 >= 0);
        CHECK(row.sum3 >= 0);
        if (row.tau == 0) CHECK(row.sum2 == row.sum3);
    }
    CHECK(r.parseval.pass);
    for (const auto& b : r.bands) CHECK(b.pass);

    const auto back = QVarReport::from_json(nlohmann::json::parse(r.to_json().dump()));
    CHECK(back.sum1 == r.sum1);
    CHECK(back.rows.size() == r.rows.size());

    const Eigen::VectorXd c = Eigen::VectorXd::Constant(I.a.size(), 1.0);
    const auto z = qvar_report(I.S, c, cfg, 1, 2, "induced_bump", 1);
    CHECK(z.sum1 < 1e-24);
    for (const auto& row : z.rows) CHECK(row.sum3 < 1e-24);

    const auto path = std::filesystem::temp_directory_path() / "hyperwave_qvar_test.csv";
    write_qvar_csv({r, r}, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "degree,genus,N,sum1,sum2,sum3,tau,delta,T,potential_kind,seed");
    int lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 2 * static_cast<int>(r.rows.size()));
    std::filesystem::remove(path);

    CHECK(spearman({1, 2, 4}, {3, 2, 1}) == doctest::Approx(-1));
    CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
    CHECK(spearman({1, 2, 3}, {5, 5, 1}) == doctest::Approx(-std::sqrt(0.75)));
    CHECK_THROWS_AS(spearman({1}, {1}), InvalidArgument);
}

TEST_CASE("trend calibration") {
    const auto cover = CoverDescriptor::trivial(bolza());
    TrendConfig cfg;
    cfg.potential.amplitude = 1;
    // Same surface, different seeds: sampling noise stays within a factor 2.
    double lo = 1e300, hi = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto r = qvar_on_cover(cover, seed, cfg);
        lo = std::min(lo, r.sum1);
        hi = std::max(hi, r.sum1);
    }
    CHECK(hi <= 2 * lo);

    const std::vector<CoverDescriptor> same{cover, cover, cover};
    CHECK_THROWS_AS(trend_experiment(same, cfg), InvalidArgument);
    CHECK_THROWS_AS(trend_experiment({cover}, cfg), InvalidArgument);
}
