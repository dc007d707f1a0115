#pragma once

// Linearized flow along the homoclinic loop and the Riccati slopes of the
// transverse unstable/stable directions.

#include "ode.hpp"
#include "separatrix.hpp"

namespace sepsplit {

/// Tangent vector along the loop for one transverse direction.
struct VariationalState {
    double xhat = 0.0;
    double yhat = 0.0;
    double zhat = 0.0;
    double zbarhat = 0.0;
    double t = 0.0;
};

/// One transverse direction z_a of the natural system restricted to the loop:
///   zhat' = zbarhat / arm^2,  zbarhat' = (l0 cos x0(t) + offset) zhat
/// with offset = l_1 + ... + l_a.
struct TransverseMode {
    double l0 = 1.0;
    double offset = 2.0;
    double arm = 2.0;

    /// The two-arm pendulum (1, l).
    static TransverseMode two_arm(double l) {
        require(l > 1.0, "transverse mode requires l > 1");
        return {1.0, l, l};
    }

    /// Direction a (1-based) of the (1+m)-arm pendulum.
    static TransverseMode of_arms(std::span<const double> arms, std::size_t a) {
        require(a >= 1 && a < arms.size(), "transverse direction index out of range");
        double off = 0.0;
        for (std::size_t j = 1; j <= a; ++j) off += arms[j];
        return {arms[0], off, arms[a]};
    }

    [[nodiscard]] double lambda0() const { return 1.0 / std::sqrt(l0); }
    /// Transverse exponent sqrt(l0 + offset) / arm.
    [[nodiscard]] double exponent() const { return std::sqrt(l0 + offset) / arm; }
    /// cos x0(t) = 1 - 2 sech^2(lambda0 t) on the upper loop.
    [[nodiscard]] double coefficient(double t) const {
        double c = 1.0 / std::cosh(lambda0() * t);
        return l0 * (1.0 - 2.0 * c * c) + offset;
    }
    /// Riccati slope bounds [arm sqrt(offset - l0), arm sqrt(offset + l0)].
    [[nodiscard]] double slope_min() const { return arm * std::sqrt(offset - l0); }
    [[nodiscard]] double slope_max() const { return arm * std::sqrt(offset + l0); }
};

/// Integrates the variational equations of the loop from t0 to each requested
/// time (the first entry of `times` must be t0).
inline std::vector<VariationalState> variational_flow(const TransverseMode& mode, const VariationalState& init,
                                                      std::span<const double> times, double tol = 1e-12) {
    require(!times.empty() && times.front() == init.t, "variational_flow: first sample time must equal init.t");
    const double lam0 = mode.lambda0();
    auto rhs = [&](const std::array<double, 4>& u, std::array<double, 4>& du, double t) {
        double x0 = 4.0 * std::atan(std::exp(lam0 * t));
        // scaled so that xhat = xdot0 is an exact solution
        double dpsi = lam0 * psi_derivative(x0);
        du[0] = dpsi * u[0] + u[1];
        du[1] = -dpsi * u[1];
        du[2] = u[3] / (mode.arm * mode.arm);
        du[3] = mode.coefficient(t) * u[2];
    };
    auto raw = integrate_at_times(rhs, std::array<double, 4>{init.xhat, init.yhat, init.zhat, init.zbarhat}, times,
                                  tol);
    std::vector<VariationalState> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out.push_back({raw[i][0], raw[i][1], raw[i][2], raw[i][3], times[i]});
    return out;
}

inline std::vector<VariationalState> variational_flow(double l, double t0, double t1, const VariationalState& init,
                                                      int samples = 201) {
    require(t0 < t1, "variational_flow: t0 must be < t1");
    require(samples >= 2, "variational_flow: need at least two samples");
    std::vector<double> times(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i) times[i] = t0 + (t1 - t0) * i / (samples - 1);
    VariationalState s = init;
    s.t = t0;
    return variational_flow(TransverseMode::two_arm(l), s, times);
}

enum class ManifoldBranch { unstable, stable };

/// Slopes zbarhat/zhat of the transverse unstable and stable directions along
/// the upper loop, sampled on an x-grid in (0, 2pi).
struct TransverseDirectionField {
    TransverseMode mode;
    std::vector<double> grid;
    std::vector<double> lambda_u;
    std::vector<double> lambda_s;
    std::vector<double> Lambda_u;  // lambda_u / arm^2
};

struct RiccatiOptions {
    double t_asym = 0.0;  // 0 selects 15 / (transverse exponent)
    double tol = 1e-12;
    bool direct_stable = false;  // integrate the stable slope backward instead of reflecting
};

inline std::vector<double> uniform_grid(double a, double b, std::size_t count) {
    require(count >= 2 && b > a, "uniform_grid: need b > a and at least two points");
    std::vector<double> g(count);
    for (std::size_t i = 0; i < count; ++i) g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1);
    return g;
}

namespace detail {
/// Riccati slope on the loop sampled at loop times `times`. Unstable slopes
/// start at -t_asym on the attracting root, stable slopes at +t_asym going backward.
inline std::vector<double> riccati_slopes(const TransverseMode& mode, std::vector<double> times, ManifoldBranch branch,
                                          const RiccatiOptions& opt) {
    const double t_asym = opt.t_asym > 0.0 ? opt.t_asym : 15.0 / mode.exponent();
    const double a2 = mode.arm * mode.arm;
    const double lo = mode.slope_min(), hi = mode.slope_max();
    const bool unstable = branch == ManifoldBranch::unstable;
    double t_start = unstable ? -t_asym : t_asym;
    require(unstable ? times.front() > t_start : times.back() < t_start,
            "riccati: grid extends beyond the asymptotic start time");
    std::vector<double> ts{t_start};
    if (unstable)
        ts.insert(ts.end(), times.begin(), times.end());
    else
        ts.insert(ts.end(), times.rbegin(), times.rend());
    auto rhs = [&](const std::array<double, 1>& u, std::array<double, 1>& du, double t) {
        du[0] = mode.coefficient(t) - u[0] * u[0] / a2;
    };
    double start = unstable ? hi : -hi;
    auto raw = integrate_at_times(rhs, std::array<double, 1>{start}, ts, opt.tol);
    std::vector<double> out(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        double v = raw[i + 1][0];
        double mag = std::abs(v);
        if (mag < lo * (1.0 - 1e-12) || mag > hi * (1.0 + 1e-12))
            throw NumericalError("riccati slope " + format_double(v) + " left its invariant interval at t = " +
                                 format_double(ts[i + 1]));
        out[unstable ? i : times.size() - 1 - i] = v;
    }
    return out;
}
} // namespace detail

/// Solves the Riccati equation for the slopes on the given x-grid (points in (0, 2pi), increasing).
inline TransverseDirectionField riccati_direction(const TransverseMode& mode, std::vector<double> grid,
                                                  const RiccatiOptions& opt = {}) {
    require(!grid.empty(), "riccati_direction: empty grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        require(grid[i] > 0.0 && grid[i] < two_pi, "riccati_direction: grid must lie in (0, 2pi)");
        if (i) require(grid[i] > grid[i - 1], "riccati_direction: grid must be increasing");
    }
    const double lam0 = mode.lambda0();
    std::vector<double> times(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) times[i] = s_of_x(grid[i]) / lam0;

    TransverseDirectionField f;
    f.mode = mode;
    f.grid = grid;
    f.lambda_u = detail::riccati_slopes(mode, times, ManifoldBranch::unstable, opt);
    if (opt.direct_stable) {
        f.lambda_s = detail::riccati_slopes(mode, times, ManifoldBranch::stable, opt);
    } else {
        // The coefficient is even in t, so lambda_s(t) = -lambda_u(-t), i.e. x -> 2pi - x.
        std::vector<double> mirrored(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) mirrored[i] = -times[grid.size() - 1 - i];
        auto lu = detail::riccati_slopes(mode, mirrored, ManifoldBranch::unstable, opt);
        f.lambda_s.resize(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) f.lambda_s[i] = -lu[grid.size() - 1 - i];
    }
    f.Lambda_u.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) f.Lambda_u[i] = f.lambda_u[i] / (mode.arm * mode.arm);
    return f;
}

inline TransverseDirectionField riccati_direction(double l, double delta = 0.05, std::size_t points = 2000,
                                                  const RiccatiOptions& opt = {}) {
    return riccati_direction(TransverseMode::two_arm(l), uniform_grid(delta, two_pi - delta, points), opt);
}

struct ResidualReport {
    double sup = 0.0;
    double argmax_x = 0.0;
    double derivative_error = 0.0;  // max |psi| * |6th-order - 4th-order derivative|
    std::vector<double> pointwise;  // |residual| at each grid point
};

namespace detail {
/// Finite-difference derivative on a uniform grid: central stencils in the interior,
/// one-sided stencils of the same order near the ends. order is 4 or 6.
inline std::vector<double> uniform_derivative(std::span<const double> f, double h, int order) {
    static const double c4[] = {1.0 / 12, -2.0 / 3, 0.0, 2.0 / 3, -1.0 / 12};
    static const double c6[] = {-1.0 / 60, 3.0 / 20, -3.0 / 4, 0.0, 3.0 / 4, -3.0 / 20, 1.0 / 60};
    // one-sided weights for offsets 0..order from the left edge, row = position of the node
    static const double e4[2][5] = {{-25.0 / 12, 4.0, -3.0, 4.0 / 3, -1.0 / 4},
                                    {-1.0 / 4, -5.0 / 6, 3.0 / 2, -1.0 / 2, 1.0 / 12}};
    static const double e6[3][7] = {{-49.0 / 20, 6.0, -15.0 / 2, 20.0 / 3, -15.0 / 4, 6.0 / 5, -1.0 / 6},
                                    {-1.0 / 6, -77.0 / 60, 5.0 / 2, -5.0 / 3, 5.0 / 6, -1.0 / 4, 1.0 / 30},
                                    {1.0 / 30, -2.0 / 5, -7.0 / 12, 4.0 / 3, -1.0 / 2, 2.0 / 15, -1.0 / 60}};
    const int n = static_cast<int>(f.size());
    const int half = order / 2;
    require(n >= order + 1, "finite-difference derivative needs at least order + 1 points");
    std::vector<double> d(static_cast<std::size_t>(n), 0.0);
    const double* central = order == 6 ? c6 : c4;
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        if (i >= half && i < n - half) {
            for (int k = -half; k <= half; ++k) acc += central[k + half] * f[i + k];
        } else if (i < half) {
            const double* w = order == 6 ? e6[i] : e4[i];
            for (int k = 0; k <= order; ++k) acc += w[k] * f[k];
        } else {
            int r = n - 1 - i;
            const double* w = order == 6 ? e6[r] : e4[r];
            for (int k = 0; k <= order; ++k) acc -= w[k] * f[n - 1 - k];
        }
        d[i] = acc / h;
    }
    return d;
}
} // namespace detail

/// sup over the grid of |lambda0 psi d(lambda)/dx - (l0 cos x + offset) + lambda^2/arm^2|
/// for the unstable slopes (the stable ones when `stable` is set).
inline ResidualReport tilde_lambda_residual(const TransverseDirectionField& field, bool stable = false,
                                            double max_derivative_error = 1e-6) {
    ResidualReport rep;
    if (field.grid.empty()) return rep;
    const auto& lam = stable ? field.lambda_s : field.lambda_u;
    const std::size_t n = field.grid.size();
    const double h = (field.grid.back() - field.grid.front()) / static_cast<double>(n - 1);
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(field.grid[i] - field.grid[i - 1] - h) > 1e-9 * h)
            throw PreconditionError("tilde_lambda_residual: grid must be uniform");
    if (n < 8) throw NumericalError("tilde_lambda_residual: grid too coarse (" + std::to_string(n) + " points)");
    auto d6 = detail::uniform_derivative(lam, h, 6);
    auto d4 = detail::uniform_derivative(lam, h, 4);
    const auto& md = field.mode;
    const double a2 = md.arm * md.arm;
    for (std::size_t i = 0; i < n; ++i) {
        double x = field.grid[i];
        double p = md.lambda0() * psi(x);
        rep.derivative_error = std::max(rep.derivative_error, std::abs(p) * std::abs(d6[i] - d4[i]));
        double r = p * d6[i] - (md.l0 * std::cos(x) + md.offset) + lam[i] * lam[i] / a2;
        rep.pointwise.push_back(std::abs(r));
        if (std::abs(r) > rep.sup) {
            rep.sup = std::abs(r);
            rep.argmax_x = x;
        }
    }
    if (rep.derivative_error > max_derivative_error)
        throw NumericalError("tilde_lambda_residual: grid too coarse, derivative error estimate " +
                             format_double(rep.derivative_error));
    return rep;
}

struct TransversalityReport {
    double min_angle = 0.0;
    double argmin_x = 0.0;
};

/// Angle between (1, lambda_u) and (1, lambda_s) in the (zhat, zbarhat) plane, minimized over the grid.
inline TransversalityReport transversality_angle(std::span<const double> grid, std::span<const double> lambda_u,
                                                 std::span<const double> lambda_s) {
    require(grid.size() == lambda_u.size() && grid.size() == lambda_s.size() && !grid.empty(),
            "transversality_angle: size mismatch");
    TransversalityReport r{std::numeric_limits<double>::infinity(), 0.0};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double a = std::abs(std::atan(lambda_u[i]) - std::atan(lambda_s[i]));
        if (a < r.min_angle) r = {a, grid[i]};
    }
    return r;
}

inline TransversalityReport transversality_angle(const TransverseDirectionField& f) {
    return transversality_angle(f.grid, f.lambda_u, f.lambda_s);
}

} // namespace sepsplit
