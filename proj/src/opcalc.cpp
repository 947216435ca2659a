#include "hyperwave/opcalc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hyperwave {

namespace {

double cos_fn(double t, double lambda) {
    const double mu = lambda - 0.25;
    return mu >= 0 ? std::cos(t * std::sqrt(mu)) : std::cosh(t * std::sqrt(-mu));
}

Eigen::MatrixXd spectral_fn(const Operator& H, const std::function<double(double)>& f) { return H.apply(f); }

}  // namespace

PropagatorSet make_propagators(const Eigen::MatrixXd& H0, const Eigen::VectorXd& V) {
    if (H0.rows() != V.size()) throw InvalidArgument("potential length does not match operator dimension");
    PropagatorSet P;
    P.H0 = Operator(H0);
    P.V = V;
    Eigen::MatrixXd hv = P.H0.matrix();
    hv.diagonal() += V;
    P.HV = Operator(hv);
    if (V.size() > 0) {
        const double lo = P.H0.eigenvalues().minCoeff() + V.minCoeff();
        const double hi = P.H0.eigenvalues().maxCoeff() + V.maxCoeff();
        const double slack = 1e-9 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
        if (P.HV.eigenvalues().minCoeff() < lo - slack || P.HV.eigenvalues().maxCoeff() > hi + slack)
            throw InvalidArgument("perturbed spectrum escapes the min-max shift bounds");
    }
    return P;
}

Eigen::MatrixXd propagate(const PropagatorSet& P, Which which, double t) {
    return spectral_fn(P.op(which), [t](double l) { return h(t, l); });
}

Eigen::MatrixXd cosine_propagate(const PropagatorSet& P, Which which, double t) {
    return spectral_fn(P.op(which), [t](double l) { return cos_fn(t, l); });
}

Eigen::MatrixXd propagate_mod(const PropagatorSet& P, Which which, double t, double tau) {
    return std::cos(tau * t) * propagate(P, which, t);
}

Eigen::MatrixXd duhamel_Q(const PropagatorSet& P, double t, int quad_order) {
    if (quad_order < 8) throw InvalidArgument("duhamel_Q needs quadrature order >= 8");
    const auto n = P.V.size();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
    if (t == 0) return Q;
    const auto& rule = quad::gauss_legendre(quad_order);
    const auto& Uv = P.HV.eigenvectors();
    const auto& U0 = P.H0.eigenvectors();
    // In mixed eigenbases the integrand is diag(h_V(s)) (Uv^T V U0) diag(h_0(t - s)).
    const Eigen::MatrixXd C = Uv.transpose() * P.V.asDiagonal() * U0;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
    for (int k = 0; k < quad_order; ++k) {
        const double s = 0.5 * t * (1 + rule.nodes[k]);
        const double w = 0.5 * t * rule.weights[k];
        Eigen::VectorXd hv(n), h0(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            hv[j] = h(s, P.HV.eigenvalues()[j]);
            h0[j] = h(t - s, P.H0.eigenvalues()[j]);
        }
        acc.noalias() += w * (hv.asDiagonal() * C * h0.asDiagonal());
    }
    Q = Uv * acc * U0.transpose();
    return Q;
}

double duhamel_residual(const PropagatorSet& P, double t, int quad_order) {
    return hs_norm(propagate(P, Which::Potential, t) - propagate(P, Which::Free, t) + duhamel_Q(P, t, quad_order));
}

Projector spectral_projector(const Operator& H, const WindowSpec& I) {
    Projector out;
    const auto& lam = H.eigenvalues();
    const auto& U = H.eigenvectors();
    out.matrix = Eigen::MatrixXd::Zero(H.dim(), H.dim());
    for (Eigen::Index k = 0; k < lam.size(); ++k) {
        if (std::abs(lam[k] - I.a) < 1e-9 || std::abs(lam[k] - I.b) < 1e-9) out.edge_warning = true;
        if (!I.contains(lam[k])) continue;
        out.matrix.noalias() += U.col(k) * U.col(k).transpose();
        ++out.rank;
    }
    return out;
}

double hs_norm(const Eigen::MatrixXd& M) { return M.norm(); }

double scalar_time_average(double l1, double l2, double tau, double T) {
    if (!(T > 0)) throw InvalidArgument("time average needs T > 0");
    const double m1 = l1 - 0.25, m2 = l2 - 0.25;
    if (m1 > 1e-6 && m2 > 1e-6) {
        const double w1 = std::sqrt(m1), w2 = std::sqrt(m2);
        auto S = [T](double k) {
            const double x = k * T;
            return std::abs(x) < 1e-4 ? T * (1 - x * x / 6) : std::sin(x) / k;
        };
        return 0.25 * (S(w1 - w2 - tau) + S(w1 - w2 + tau) - S(w1 + w2 - tau) - S(w1 + w2 + tau)) / (w1 * w2 * T);
    }
    const double fastest = std::sqrt(std::abs(m1)) + std::sqrt(std::abs(m2)) + std::abs(tau);
    const int panels = static_cast<int>(std::ceil(T * fastest / std::numbers::pi)) + 1;
    std::vector<double> cuts;
    for (int k = 1; k < panels; ++k) cuts.push_back(T * k / panels);
    quad::Options opt;
    opt.rel_tol = 1e-13;
    opt.abs_tol = 1e-300;
    opt.max_intervals = 8 * panels + 200;
    const auto r = quad::adaptive([&](double t) { return std::cos(tau * t) * h(t, l1) * h(t, l2); }, 0, T, opt, cuts);
    return r.value / T;
}

TimeAverage time_avg_conjugation(const PropagatorSet& P, const Eigen::VectorXd& a, const WindowSpec& I, double T,
                                 double tau, int quad_order) {
    if (!(T > 0)) throw InvalidArgument("time_avg_conjugation needs T > 0");
    if (a.size() != P.V.size()) throw InvalidArgument("observable length does not match operator dimension");
    const auto& lam = P.HV.eigenvalues();
    const auto& U = P.HV.eigenvectors();
    std::vector<int> idx;
    for (Eigen::Index k = 0; k < lam.size(); ++k)
        if (I.contains(lam[k])) idx.push_back(static_cast<int>(k));
    const auto m = static_cast<Eigen::Index>(idx.size());
    TimeAverage out;
    out.modes = Eigen::Map<const Eigen::VectorXi>(idx.data(), m);
    out.matrix = Eigen::MatrixXd::Zero(a.size(), a.size());
    out.eigenbasis = Eigen::MatrixXd::Zero(m, m);
    if (m == 0) return out;

    Eigen::MatrixXd Uw(U.rows(), m);
    for (Eigen::Index j = 0; j < m; ++j) Uw.col(j) = U.col(idx[j]);
    const Eigen::MatrixXd A = Uw.transpose() * a.asDiagonal() * Uw;

    // The integrand in the eigenbasis is diag(h_tau) A diag(h); integrate
    // the scalar factors on a composite rule resolving the fastest phase.
    double wmax = 0;
    for (int k : idx) wmax = std::max(wmax, std::sqrt(std::abs(lam[k] - 0.25)));
    const int panels = static_cast<int>(std::ceil(T * (2 * wmax + std::abs(tau)) / std::numbers::pi)) + 1;
    const auto [nodes, weights] = quad::composite_rule(0, T, panels, quad_order);
    Eigen::MatrixXd Hm(nodes.size(), m), Hl(nodes.size(), m);
    for (Eigen::Index q = 0; q < nodes.size(); ++q)
        for (Eigen::Index j = 0; j < m; ++j) {
            const double hv = h(nodes[q], lam[idx[j]]);
            Hl(q, j) = weights[q] * std::cos(tau * nodes[q]) * hv;
            Hm(q, j) = hv;
        }
    const Eigen::MatrixXd G = Hl.transpose() * Hm / T;
    out.eigenbasis = G.cwiseProduct(A);
    out.matrix = Uw * out.eigenbasis * Uw.transpose();
    return out;
}

Eigen::MatrixXd reconstruct_matrix_elements(const PropagatorSet& P, const TimeAverage& avg, double T, double tau,
                                            double floor) {
    const auto m = avg.modes.size();
    Eigen::MatrixXd out(m, m);
    const auto& lam = P.HV.eigenvalues();
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index k = 0; k < m; ++k) {
            const double s = scalar_time_average(lam[avg.modes[j]], lam[avg.modes[k]], tau, T);
            out(j, k) = std::abs(s) < floor ? std::numeric_limits<double>::quiet_NaN() : avg.eigenbasis(j, k) / s;
        }
    return out;
}

double hs_bound_rhs(const HSBoundInputs& in) {
    const double pi = std::numbers::pi;
    const double ci = std::pow(200 * pi * std::max(1.0, 1 / (in.window_min - 0.25)), 2);
    const double a2 = in.a_inf * in.a_inf;
    const double v4 = std::max(1.0, std::pow(in.v_inf, 4));
    return kHSConstant * in.T / std::pow(in.beta1, 3) * in.a_l2_sq + 16 * pi * std::pow(in.T, 3) * a2 * in.thin_volume +
           ci * std::pow(in.T, 7) * v4 * a2 *
               (std::exp(4 * in.T + 0.5) * in.thin_volume / (in.r * in.r) + in.v_l2_sq);
}

}  // namespace hyperwave
