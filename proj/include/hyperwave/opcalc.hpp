#pragma once

// Dense functional calculus for symmetric matrices: wave propagators,
// spectral projectors, the Duhamel integral and time-averaged
// conjugations, all through one cached eigendecomposition.

#include <cmath>
#include <functional>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "hyperwave/kernels.hpp"

namespace hyperwave {

template <typename Scalar = double>
class HermitianOperator {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    HermitianOperator() = default;
    explicit HermitianOperator(const Matrix& m) {
        if (m.rows() != m.cols()) throw InvalidArgument("operator matrix must be square");
        m_ = (m + m.transpose()) / Scalar(2);
        Eigen::SelfAdjointEigenSolver<Matrix> es(m_);
        if (es.info() != Eigen::Success) throw InvalidArgument("eigendecomposition failed");
        values_ = es.eigenvalues();
        vectors_ = es.eigenvectors();
    }

    Eigen::Index dim() const { return m_.rows(); }
    const Matrix& matrix() const { return m_; }
    const Vector& eigenvalues() const { return values_; }
    const Matrix& eigenvectors() const { return vectors_; }

    /// U f(Lambda) U^T.
    template <typename F>
    Matrix apply(F&& f) const {
        Vector fv(values_.size());
        for (Eigen::Index k = 0; k < values_.size(); ++k) fv[k] = f(values_[k]);
        return vectors_ * fv.asDiagonal() * vectors_.transpose();
    }

    /// max_k |H v_k - lambda_k v_k|.
    Scalar max_residual() const {
        Scalar worst = 0;
        for (Eigen::Index k = 0; k < values_.size(); ++k)
            worst = std::max(worst, (m_ * vectors_.col(k) - values_[k] * vectors_.col(k)).norm());
        return worst;
    }

    /// Number of eigenvalues strictly below alpha.
    Eigen::Index count_below(Scalar alpha) const {
        Eigen::Index n = 0;
        for (Eigen::Index k = 0; k < values_.size(); ++k) n += values_[k] < alpha;
        return n;
    }

    /// Number of eigenvalues in the closed interval [a, b].
    Eigen::Index count_in(Scalar a, Scalar b) const {
        Eigen::Index n = 0;
        for (Eigen::Index k = 0; k < values_.size(); ++k) n += values_[k] >= a && values_[k] <= b;
        return n;
    }

private:
    Matrix m_;
    Vector values_;
    Matrix vectors_;
};

using Operator = HermitianOperator<double>;

enum class Which { Free, Potential };

/// H0, the potential V as a diagonal, and HV = H0 + diag(V).
struct PropagatorSet {
    Operator H0;
    Eigen::VectorXd V;
    Operator HV;

    const Operator& op(Which w) const { return w == Which::Free ? H0 : HV; }
};

/// Builds HV and checks the min-max shift bounds on its spectrum.
PropagatorSet make_propagators(const Eigen::MatrixXd& H0, const Eigen::VectorXd& V);

/// h(t, H): the sine propagator (H - 1/4)^{-1/2} sin(t sqrt(H - 1/4)).
Eigen::MatrixXd propagate(const PropagatorSet& P, Which which, double t);
/// cos(t sqrt(H - 1/4)), with cosh below 1/4.
Eigen::MatrixXd cosine_propagate(const PropagatorSet& P, Which which, double t);
/// cos(tau t) h(t, H).
Eigen::MatrixXd propagate_mod(const PropagatorSet& P, Which which, double t, double tau);

/// int_0^t P_V(s) V P_0(t - s) ds by Gauss-Legendre of the given order.
Eigen::MatrixXd duhamel_Q(const PropagatorSet& P, double t, int quad_order);
/// ||P_V(t) - P_0(t) + Q_V(t)||_HS.
double duhamel_residual(const PropagatorSet& P, double t, int quad_order);

struct Projector {
    Eigen::MatrixXd matrix;
    int rank = 0;
    bool edge_warning = false;   // an eigenvalue within 1e-9 of a window edge
};

Projector spectral_projector(const Operator& H, const WindowSpec& I);

/// Frobenius norm.
double hs_norm(const Eigen::MatrixXd& M);

/// (1/T) int_0^T cos(tau t) h(t, l1) h(t, l2) dt, signed, in closed form.
double scalar_time_average(double l1, double l2, double tau, double T);

struct TimeAverage {
    Eigen::MatrixXd matrix;        // in the original basis
    Eigen::MatrixXd eigenbasis;    // restricted to the window modes
    Eigen::VectorXi modes;         // indices of the window eigenvalues
};

/// (1/T) int_0^T Pi_I h_tau(t, HV) a h(t, HV) Pi_I dt with a diagonal,
/// by composite Gauss-Legendre in t.
TimeAverage time_avg_conjugation(const PropagatorSet& P, const Eigen::VectorXd& a, const WindowSpec& I, double T,
                                 double tau, int quad_order = 16);

/// Recovers <a psi_j, psi_k> for window modes by dividing the averaged
/// entries by the scalar averages. Entries whose scalar average is below
/// `floor` in magnitude are left as NaN.
Eigen::MatrixXd reconstruct_matrix_elements(const PropagatorSet& P, const TimeAverage& avg, double T, double tau,
                                            double floor = 1e-8);

/// Right-hand side of the Hilbert-Schmidt estimate for the time integral
/// of Pi_I P_V a P_V Pi_I.
struct HSBoundInputs {
    double T = 1;
    double beta1 = 1;
    double a_l2_sq = 0;
    double a_inf = 0;
    double thin_volume = 0;   // Vol(X(<= 2T))
    double v_inf = 0;
    double v_l2_sq = 0;
    double r = 1;
    double window_min = 1;
};

inline constexpr double kHSConstant = 1408 * 2.718281828459045;

double hs_bound_rhs(const HSBoundInputs& in);

}  // namespace hyperwave
