#pragma once

// Upper half-plane geometry: points, PSL(2,R) isometries, unit tangent
// vectors, distances and geodesic polar coordinates. Everything here is a
// value type templated on the scalar, following the Eigen fixed-size style.

#include <cmath>
#include <complex>
#include <numbers>

#include <Eigen/Core>

#include "hyperwave/errors.hpp"

namespace hyperwave {

template <typename Scalar>
class HPoint {
public:
    using Complex = std::complex<Scalar>;

    HPoint() : x_(0), y_(1) {}
    HPoint(Scalar x, Scalar y) : x_(x), y_(y) {
        if (!(y > Scalar(0)))
            throw InvalidArgument("HPoint requires y > 0");
    }
    explicit HPoint(const Complex& z) : HPoint(z.real(), z.imag()) {}

    static HPoint i() { return HPoint(Scalar(0), Scalar(1)); }

    Scalar x() const { return x_; }
    Scalar y() const { return y_; }
    Complex z() const { return {x_, y_}; }

    friend bool operator==(const HPoint&, const HPoint&) = default;

private:
    Scalar x_;
    Scalar y_;
};

/// Orientation-preserving isometry of the upper half-plane. Entries satisfy
/// ad - bc = 1 and the first entry above 1e-12 in magnitude is positive, so
/// M and -M share one representative.
template <typename Scalar>
class Moebius {
public:
    using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;

    static constexpr Scalar kSignThreshold = Scalar(1e-12);
    static constexpr Scalar kDetDrift = Scalar(1e-12);

    Moebius() : m_(Matrix2::Identity()) {}
    Moebius(Scalar a, Scalar b, Scalar c, Scalar d) {
        m_ << a, b, c, d;
        canonicalize();
    }
    explicit Moebius(const Matrix2& m) : m_(m) { canonicalize(); }

    static Moebius identity() { return Moebius(); }

    Scalar a() const { return m_(0, 0); }
    Scalar b() const { return m_(0, 1); }
    Scalar c() const { return m_(1, 0); }
    Scalar d() const { return m_(1, 1); }
    const Matrix2& matrix() const { return m_; }

    Scalar trace() const { return m_.trace(); }
    Scalar det() const { return m_(0, 0) * m_(1, 1) - m_(0, 1) * m_(1, 0); }

    Moebius inverse() const { return Moebius(d(), -b(), -c(), a()); }

    friend Moebius operator*(const Moebius& g, const Moebius& h) {
        return Moebius(Matrix2(g.m_ * h.m_));
    }

    /// Sign-normalized copy of a raw 2x2 matrix; exposed so the PSL
    /// identification can be checked without going through the constructor.
    static Matrix2 normalize(const Matrix2& m) {
        Matrix2 out = m;
        for (int k = 0; k < 4; ++k) {
            const Scalar v = out(k / 2, k % 2);
            if (std::abs(v) > kSignThreshold) {
                if (v < Scalar(0)) out = -out;
                break;
            }
        }
        return out;
    }

private:
    void canonicalize() {
        const Scalar det = m_(0, 0) * m_(1, 1) - m_(0, 1) * m_(1, 0);
        if (!(det > Scalar(0)))
            throw InvalidArgument("Moebius requires a positive determinant");
        if (std::abs(det - Scalar(1)) > kDetDrift) m_ /= std::sqrt(det);
        m_ = normalize(m_);
    }

    Matrix2 m_;
};

/// Point of the unit tangent bundle. The angle is the Euclidean direction of
/// the tangent vector in the half-plane chart, reduced to [0, 2pi).
template <typename Scalar>
class UnitTangent {
public:
    UnitTangent() = default;
    UnitTangent(HPoint<Scalar> base, Scalar angle) : base_(base), angle_(reduce(angle)) {}

    const HPoint<Scalar>& base() const { return base_; }
    Scalar angle() const { return angle_; }

    static Scalar reduce(Scalar angle) {
        constexpr Scalar two_pi = 2 * std::numbers::pi_v<Scalar>;
        Scalar r = std::fmod(angle, two_pi);
        if (r < Scalar(0)) r += two_pi;
        if (r >= two_pi) r = Scalar(0);
        return r;
    }

private:
    HPoint<Scalar> base_;
    Scalar angle_ = std::numbers::pi_v<Scalar> / 2;
};

template <typename Scalar>
inline constexpr Scalar kUpAngle = std::numbers::pi_v<Scalar> / 2;

// cosh d - 1 = 2 sinh^2(d/2) = |z-w|^2 / (2 y_z y_w), so the asinh form is
// exact and keeps full relative accuracy for nearby points.
template <typename Scalar>
Scalar dist(const HPoint<Scalar>& z, const HPoint<Scalar>& w) {
    const Scalar dx = z.x() - w.x();
    const Scalar dy = z.y() - w.y();
    const Scalar chord = std::sqrt(dx * dx + dy * dy);
    return Scalar(2) * std::asinh(chord / (Scalar(2) * std::sqrt(z.y() * w.y())));
}

template <typename Scalar>
Scalar cosh_dist(const HPoint<Scalar>& z, const HPoint<Scalar>& w) {
    const Scalar dx = z.x() - w.x();
    const Scalar dy = z.y() - w.y();
    return Scalar(1) + (dx * dx + dy * dy) / (Scalar(2) * z.y() * w.y());
}

/// cosh d(i, g i) = (a^2 + b^2 + c^2 + d^2) / 2.
template <typename Scalar>
Scalar displacement_at_i(const Moebius<Scalar>& g) {
    const Scalar c = g.matrix().squaredNorm() / Scalar(2);
    return std::acosh(std::max(c, Scalar(1)));
}

template <typename Scalar>
HPoint<Scalar> apply(const Moebius<Scalar>& g, const HPoint<Scalar>& z) {
    const auto zc = z.z();
    const std::complex<Scalar> num = g.a() * zc + g.b();
    const std::complex<Scalar> den = g.c() * zc + g.d();
    const Scalar den2 = std::norm(den);
    // Im((az+b)/(cz+d)) = y / |cz+d|^2 exactly for det 1; avoids cancellation.
    return HPoint<Scalar>((num * std::conj(den)).real() / den2, z.y() / den2);
}

template <typename Scalar>
UnitTangent<Scalar> apply_tangent(const Moebius<Scalar>& g, const UnitTangent<Scalar>& v) {
    const std::complex<Scalar> den = g.c() * v.base().z() + g.d();
    return UnitTangent<Scalar>(apply(g, v.base()), v.angle() - Scalar(2) * std::arg(den));
}

/// Rotation about i turning tangent directions at i by +alpha.
template <typename Scalar>
Moebius<Scalar> rotation_about_i(Scalar alpha) {
    const Scalar c = std::cos(alpha / 2);
    const Scalar s = std::sin(alpha / 2);
    return Moebius<Scalar>(c, s, -s, c);
}

/// Hyperbolic translation along the imaginary axis, z -> e^t z.
template <typename Scalar>
Moebius<Scalar> geodesic_step(Scalar t) {
    return Moebius<Scalar>(std::exp(t / 2), Scalar(0), Scalar(0), std::exp(-t / 2));
}

/// The isometry g with g(i, up) = v; identifies T^1 H with PSL(2,R).
template <typename Scalar>
Moebius<Scalar> frame_of(const UnitTangent<Scalar>& v) {
    const Scalar sy = std::sqrt(v.base().y());
    const Moebius<Scalar> to_base(sy, v.base().x() / sy, Scalar(0), Scalar(1) / sy);
    return to_base * rotation_about_i(v.angle() - kUpAngle<Scalar>);
}

template <typename Scalar>
UnitTangent<Scalar> tangent_of(const Moebius<Scalar>& g) {
    return apply_tangent(g, UnitTangent<Scalar>(HPoint<Scalar>::i(), kUpAngle<Scalar>));
}

template <typename Scalar>
Scalar ball_volume(Scalar r) {
    if (r < Scalar(0)) throw InvalidArgument("ball_volume requires r >= 0");
    const Scalar s = std::sinh(r / 2);
    return Scalar(4) * std::numbers::pi_v<Scalar> * s * s;
}

/// Endpoint of the geodesic of length r leaving `center` at angle
/// ref_angle + theta.
template <typename Scalar>
HPoint<Scalar> polar_to_point(const HPoint<Scalar>& center, Scalar ref_angle, Scalar r, Scalar theta) {
    if (r < Scalar(0)) throw InvalidArgument("polar_to_point requires r >= 0");
    const auto g = frame_of(UnitTangent<Scalar>(center, ref_angle + theta));
    return apply(g, HPoint<Scalar>(Scalar(0), std::exp(r)));
}

template <typename Scalar>
struct Polar {
    Scalar r;
    Scalar theta;  // in [0, 2pi), relative to the reference direction
};

template <typename Scalar>
Polar<Scalar> point_to_polar(const HPoint<Scalar>& center, Scalar ref_angle, const HPoint<Scalar>& w) {
    const auto g = frame_of(UnitTangent<Scalar>(center, ref_angle));
    const auto local = apply(g.inverse(), w);
    // Cayley map sends (i, up) to (0, positive real direction).
    const std::complex<Scalar> zi(Scalar(0), Scalar(1));
    const std::complex<Scalar> u = (local.z() - zi) / (local.z() + zi);
    const Scalar theta = std::abs(u) > Scalar(0) ? std::arg(u) : Scalar(0);
    return {dist(center, w), UnitTangent<Scalar>::reduce(theta)};
}

using HPointd = HPoint<double>;
using Moebiusd = Moebius<double>;
using UnitTangentd = UnitTangent<double>;

}  // namespace hyperwave
