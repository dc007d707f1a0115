#pragma once

// Homoclinic loop of the pendulum, the energy-time chart (s, e) along it and
// the complex strips on which the chart is analytic.

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "common.hpp"

namespace sepsplit {

/// Which half of the separatrix: upper runs x: 0 -> 2pi, lower runs x: 4pi -> 2pi on the double cover.
enum class Branch { upper, lower };

inline double psi(double x) { return 2.0 * std::sin(0.5 * x); }
inline double psi_derivative(double x) { return std::cos(0.5 * x); }

struct OrbitPoint {
    double x = 0.0;
    double y = 0.0;     // psi(x); the physical momentum is arms[0]^2 * lambda0 * y
    double xdot = 0.0;  // lambda0 * psi(x)
};

inline OrbitPoint separatrix_orbit(double t, double lambda0, Branch branch = Branch::upper) {
    require(lambda0 > 0.0, "separatrix_orbit: lambda0 must be positive");
    double x = 4.0 * std::atan(std::exp(lambda0 * t));
    if (branch == Branch::lower) x = 2.0 * two_pi - x;
    return {x, psi(x), lambda0 * psi(x)};
}

/// chi(s) = psi(x(s)) = 2 sech s.
inline double chi(double s) { return 2.0 / std::cosh(s); }
inline complex chi(complex s) { return 2.0 / std::cosh(s); }

/// d/ds ln chi = -tanh s.
inline double log_chi_derivative(double s) { return -std::tanh(s); }

struct ChartPoint {
    double x = 0.0;
    double s = 0.0;
    double chi = 0.0;
    double e = 0.0;
};

/// s(x) = integral from pi to x of d zeta / psi(zeta) = ln|tan(x/4)|. The lower
/// branch is the mirror image x -> 4pi - x.
inline double s_of_x(double x) {
    if (!std::isfinite(x)) throw PreconditionError("s_of_x: x is not finite");
    double r = wrap_angle(x, 2.0 * two_pi);
    if (r > two_pi) r = 2.0 * two_pi - r;
    if (r <= 0.0 || r >= two_pi)
        throw PreconditionError("s_of_x: x = " + format_double(x) + " is a chart singularity (multiple of 2pi)");
    if (r == pi) return 0.0;
    return std::log(std::tan(0.25 * r));
}

inline double x_of_s(double s, Branch branch = Branch::upper) {
    double x = 4.0 * std::atan(std::exp(s));
    return branch == Branch::upper ? x : 2.0 * two_pi - x;
}

/// Chart point at s with momentum y; e = y chi(s).
inline ChartPoint chart_of_s(double s, double y, Branch branch = Branch::upper) {
    ChartPoint p;
    p.s = s;
    p.x = x_of_s(s, branch);
    p.chi = chi(s);
    p.e = y * p.chi;
    return p;
}

/// Chart point on the unperturbed loop (y = psi(x)).
inline ChartPoint chart_of_s(double s, Branch branch = Branch::upper) {
    return chart_of_s(s, psi(x_of_s(s, branch)), branch);
}

/// Energy-time chart for an arbitrary separatrix profile psi, computed by
/// quadrature and Newton inversion. Used to cross-check the closed forms.
template <class Psi>
class QuadratureChart {
public:
    explicit QuadratureChart(Psi profile, double tol = 1e-14) : psi_(std::move(profile)), tol_(tol) {}

    /// s(x) for x in (0, 2pi).
    [[nodiscard]] double s_of_x(double x) const {
        require(x > 0.0 && x < two_pi, "QuadratureChart::s_of_x: x outside (0, 2pi)");
        if (x == pi) return 0.0;
        boost::math::quadrature::tanh_sinh<double> q;
        auto f = [this](double z) { return 1.0 / psi_(z); };
        return x > pi ? q.integrate(f, pi, x, tol_) : -q.integrate(f, x, pi, tol_);
    }

    [[nodiscard]] double x_of_s(double s) const {
        // ds/dx = 1/psi, so Newton on x converges from the midpoint for moderate |s|.
        double lo = 0.0, hi = two_pi, x = pi;
        for (int it = 0; it < 200; ++it) {
            double r = s_of_x(x) - s;
            if (r > 0) hi = x; else lo = x;
            double step = r * psi_(x);
            double nx = x - step;
            if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
            if (std::abs(nx - x) < 1e-15 * std::max(1.0, x)) return nx;
            x = nx;
        }
        return x;
    }

    [[nodiscard]] double chi(double s) const { return psi_(x_of_s(s)); }

private:
    Psi psi_;
    double tol_;
};

struct AnalyticityParams {
    double sigma = 0.5;
    double T = 10.0;
    double rho = 0.4 * pi;
    double r = 0.1;
    double T0 = 20.0;
    double delta = 0.5;
    double kappa = 0.1;
    double log_factor = 0.0;  // delta >= log_factor * ln T

    void validate() const {
        require(sigma > 0.0, "analyticity.sigma must be positive");
        require(rho > 0.0 && rho < 0.5 * pi, "analyticity.rho must lie in (0, pi/2)");
        require(T > 0.0 && T <= T0, "analyticity.T must satisfy 0 < T <= T0");
        require(r > 0.0, "analyticity.r must be positive");
        require(delta > 0.0 && delta < 1.0, "analyticity.delta must lie in (0, 1)");
        require(kappa > 0.0, "analyticity.kappa must be positive");
        require(delta >= log_factor * std::log(T), "analyticity.delta must be >= log_factor * ln T");
    }
};

enum class DomainKind { semi, bi, finite };

namespace detail {
/// Distance from Im s to `center` on the circle R / 2pi.
inline double circular_distance(double im, double center) {
    double d = wrap_angle(im - center, two_pi);
    return std::min(d, two_pi - d);
}

inline bool in_semi_strip(complex s, const AnalyticityParams& p) {
    const double re = s.real(), im = s.imag();
    if (re <= p.T && circular_distance(im, 0.0) <= p.rho) return true;
    if (re <= p.T && circular_distance(im, pi) <= p.rho) return true;
    return re <= p.T - 2.0 * p.T0;
}
} // namespace detail

/// Membership of s in the strip family, with Im s read modulo 2pi.
inline bool domain_membership(complex s, const AnalyticityParams& p, DomainKind kind) {
    require(p.rho > 0.0 && p.rho < 0.5 * pi, "domain_membership: rho must lie in (0, pi/2)");
    switch (kind) {
        case DomainKind::semi: return detail::in_semi_strip(s, p);
        case DomainKind::bi: return detail::in_semi_strip(s, p) || detail::in_semi_strip(-s, p);
        case DomainKind::finite: return std::abs(s.real()) <= p.T && detail::circular_distance(s.imag(), 0.0) <= p.rho;
    }
    return false;
}

} // namespace sepsplit
