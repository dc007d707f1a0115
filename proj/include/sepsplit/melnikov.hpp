#pragma once

// First-order splitting function along the homoclinic loop and the
// exponential decay of its Fourier coefficients.

#include <map>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "model.hpp"
#include "separatrix.hpp"

namespace sepsplit {

/// Truncated Fourier series sum_k c_k e^{i k.alpha} on T^n.
class FourierSeries {
public:
    FourierSeries() = default;
    explicit FourierSeries(int n, int K = 0) : n_(n), K_(K) {}

    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] int K() const { return K_; }
    [[nodiscard]] const std::map<Lattice, complex>& coeffs() const { return coeffs_; }

    void set(const Lattice& k, complex c) {
        require(static_cast<int>(k.size()) == n_, "FourierSeries: lattice point has wrong dimension");
        K_ = std::max(K_, sup_norm(k));
        if (c == complex{})
            coeffs_.erase(k);
        else
            coeffs_[k] = c;
    }

    void add(const Lattice& k, complex c) { set(k, coeff(k) + c); }

    [[nodiscard]] complex coeff(const Lattice& k) const {
        auto it = coeffs_.find(k);
        return it == coeffs_.end() ? complex{} : it->second;
    }

    [[nodiscard]] complex evaluate_complex(std::span<const double> alpha) const {
        complex s{};
        for (const auto& [k, c] : coeffs_) {
            double th = 0.0;
            for (int i = 0; i < n_; ++i) th += k[i] * alpha[i];
            s += c * complex(std::cos(th), std::sin(th));
        }
        return s;
    }

    [[nodiscard]] double evaluate(std::span<const double> alpha) const { return evaluate_complex(alpha).real(); }

    /// Series of the partial derivative in alpha_i.
    [[nodiscard]] FourierSeries derivative(int i) const {
        FourierSeries d(n_, K_);
        for (const auto& [k, c] : coeffs_)
            if (k[i] != 0) d.set(k, c * complex(0.0, k[i]));
        return d;
    }

    [[nodiscard]] bool is_real(double tol = 1e-12) const {
        for (const auto& [k, c] : coeffs_)
            if (std::abs(coeff(negate(k)) - std::conj(c)) > tol * std::max(1.0, std::abs(c))) return false;
        return true;
    }

    /// sum |c_k| e^{rho |k.omega| + sigma |k|}.
    [[nodiscard]] double weighted_norm(const std::vector<double>& omega, double rho, double sigma) const {
        double s = 0.0;
        for (const auto& [k, c] : coeffs_) s += std::abs(c) * std::exp(rho * std::abs(dot(k, omega)) + sigma * sup_norm(k));
        return s;
    }

    /// Max |partial sum| over a uniform grid with `per_dim` points per angle.
    [[nodiscard]] double sampled_sup(int per_dim = 64) const {
        std::vector<double> a(static_cast<std::size_t>(n_));
        double best = 0.0;
        for (const auto& idx : grid_indices(per_dim)) {
            for (int i = 0; i < n_; ++i) a[i] = two_pi * idx[i] / per_dim;
            best = std::max(best, std::abs(evaluate_complex(a)));
        }
        return best;
    }

    [[nodiscard]] std::vector<Lattice> grid_indices(int per_dim) const {
        std::vector<Lattice> out;
        for (auto k : lattice_box(n_, per_dim)) {
            bool ok = true;
            for (int& v : k) {
                if (v < 0) ok = false;
                if (v == per_dim) ok = false;
            }
            if (ok) out.push_back(k);
        }
        return out;
    }

private:
    int n_ = 0;
    int K_ = 0;
    std::map<Lattice, complex> coeffs_;
};

struct QuadratureOptions {
    double T_quad = 0.0;  // 0 picks the cut-off from the tail bound
    double tol = 1e-13;
    double lambda0 = 1.0;
};

struct MelnikovResult {
    FourierSeries series;
    std::vector<std::vector<double>> alpha_grid;
    std::vector<double> values;  // M at alpha_grid by direct quadrature
    double T_quad = 0.0;
    double tail_bound = 0.0;
    double reconstruction_error = 0.0;  // max |series - direct| on the grid
};

namespace detail {

/// Integral over [a, b] of an analytic oscillatory function: 31-point Gauss-Kronrod on panels of
/// width <= width. The integrands have poles no closer than pi/2 to the real axis, so one
/// rule per panel is already at rounding level.
template <class F>
double panel_integral(F&& f, double a, double b, double width, double tol) {
    using boost::math::quadrature::gauss_kronrod;
    const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / width)));
    const double h = (b - a) / panels;
    double total = 0.0;
    for (int p = 0; p < panels; ++p) {
        double lo = a + p * h, hi = lo + h;
        total += gauss_kronrod<double, 31>::integrate(f, lo, hi, 0, tol);
    }
    return total;
}

inline double melnikov_cutoff(const PerturbationSpec& v0, const QuadratureOptions& q) {
    if (q.T_quad > 0.0) return q.T_quad;
    // |e^{i j x0} - 1| <= 4|j| e^{-lambda0 |t|} on each side
    double weight = 0.0;
    for (const auto& t : v0.terms()) weight += std::abs(t.amplitude) * std::abs(t.j[0]);
    if (weight == 0.0) return 1.0;
    double target = q.tol / 10.0;
    double T = std::log(8.0 * weight / (q.lambda0 * target)) / q.lambda0;
    return std::max(T, 1.0);
}

inline double melnikov_tail(const PerturbationSpec& v0, double T, double lambda0) {
    double weight = 0.0;
    for (const auto& t : v0.terms()) weight += std::abs(t.amplitude) * std::abs(t.j[0]);
    return 8.0 * weight * std::exp(-lambda0 * T) / lambda0;
}

inline double loop_angle(double t, double lambda0) { return 4.0 * std::atan(std::exp(lambda0 * t)); }

} // namespace detail

/// Integral over R of e^{i kappa t} (e^{i j x0(t)} - 1) on [-T, T].
inline complex loop_mode_integral(double kappa, int j, double T, const QuadratureOptions& q) {
    if (j == 0) return complex{};
    const double width = std::min(1.0, pi / std::max(std::abs(kappa), 1e-300));
    auto re = [&](double t) {
        double x = detail::loop_angle(t, q.lambda0);
        return std::cos(kappa * t + j * x) - std::cos(kappa * t);
    };
    auto im = [&](double t) {
        double x = detail::loop_angle(t, q.lambda0);
        return std::sin(kappa * t + j * x) - std::sin(kappa * t);
    };
    return {detail::panel_integral(re, -T, T, width, q.tol), detail::panel_integral(im, -T, T, width, q.tol)};
}

/// Fourier coefficients of M(alpha) = integral over R of V0(alpha + omega t, x0(t)) dt.
/// V0 must be a spec with m = 0 that vanishes at x0 = 0.
inline FourierSeries melnikov_coefficients(const PerturbationSpec& v0, const std::vector<double>& omega,
                                           const QuadratureOptions& q = {}, unsigned threads = 1) {
    require(v0.m() == 0, "melnikov: V0 must depend on (phi, x0) only; restrict the perturbation first");
    require(v0.n() == static_cast<int>(omega.size()), "melnikov: omega dimension does not match V0");
    if (!v0.vanishes_at_origin(1))
        throw PreconditionError("melnikov: V0(phi, 0) does not vanish identically; the integral diverges");
    const double T = detail::melnikov_cutoff(v0, q);

    std::vector<Lattice> modes;
    for (const auto& t : v0.terms())
        if (modes.empty() || modes.back() != t.k) modes.push_back(t.k);
    std::vector<complex> values(modes.size());
    parallel_for(modes.size(), threads, [&](std::size_t i) {
        const Lattice& k = modes[i];
        double kappa = dot(k, omega);
        complex c{};
        for (const auto& t : v0.terms())
            if (t.k == k) c += t.amplitude * loop_mode_integral(kappa, t.j[0], T, q);
        values[i] = c;
    });
    FourierSeries s(v0.n());
    for (std::size_t i = 0; i < modes.size(); ++i) s.set(modes[i], values[i]);
    return s;
}

/// M(alpha) by direct quadrature of the real integrand (independent of the mode expansion).
inline double melnikov_direct(const PerturbationSpec& v0, const std::vector<double>& omega,
                              std::span<const double> alpha, const QuadratureOptions& q = {}) {
    const double T = detail::melnikov_cutoff(v0, q);
    double wmax = 0.0;
    for (const auto& t : v0.terms()) wmax = std::max(wmax, std::abs(dot(t.k, omega)) + std::abs(t.j[0]) * q.lambda0);
    const double width = std::min(1.0, pi / std::max(wmax, 1e-300));
    std::vector<double> phi(omega.size());
    std::array<double, 1> ang{};
    auto f = [&](double t) {
        for (std::size_t i = 0; i < omega.size(); ++i) phi[i] = alpha[i] + omega[i] * t;
        ang[0] = detail::loop_angle(t, q.lambda0);
        return v0.value(phi, ang);
    };
    return detail::panel_integral(f, -T, T, width, q.tol);
}

inline MelnikovResult melnikov_function(const PerturbationSpec& v0, const std::vector<double>& omega,
                                        std::vector<std::vector<double>> alpha_grid, const QuadratureOptions& q = {},
                                        unsigned threads = 1) {
    MelnikovResult r;
    r.series = melnikov_coefficients(v0, omega, q, threads);
    r.T_quad = detail::melnikov_cutoff(v0, q);
    r.tail_bound = detail::melnikov_tail(v0, r.T_quad, q.lambda0);
    r.alpha_grid = std::move(alpha_grid);
    r.values.resize(r.alpha_grid.size());
    parallel_for(r.alpha_grid.size(), threads,
                 [&](std::size_t i) { r.values[i] = melnikov_direct(v0, omega, r.alpha_grid[i], q); });
    for (std::size_t i = 0; i < r.alpha_grid.size(); ++i)
        r.reconstruction_error =
            std::max(r.reconstruction_error, std::abs(r.series.evaluate(r.alpha_grid[i]) - r.values[i]));
    return r;
}

/// Uniform grid on T^n with `per_dim` points per angle.
inline std::vector<std::vector<double>> torus_grid(int n, int per_dim) {
    FourierSeries shape(n);
    std::vector<std::vector<double>> out;
    for (const auto& idx : shape.grid_indices(per_dim)) {
        std::vector<double> a(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) a[i] = two_pi * idx[i] / per_dim;
        out.push_back(std::move(a));
    }
    return out;
}

/// Fit of log|c_k| = log C - rho |k.omega| - sigma |k| + p log|k.omega| over the
/// nonzero modes with k.omega > 0. When |k.omega| and |k| are proportional on
/// the data the rate in |k| is not identifiable and sigma is held at sigma_ref.
struct DecayFit {
    double rho_hat = 0.0;
    double sigma_hat = 0.0;
    double C_hat = 0.0;
    double prefactor_power = 0.0;
    bool sigma_fixed = false;
    double max_violation = 0.0;  // max |c_k| / fitted bound
    std::size_t modes_used = 0;
    Eigen::MatrixXd covariance;  // of (log C, rho, [sigma,] p)
};

struct DecayFitOptions {
    bool fit_prefactor = true;
    double relative_floor = 1e-13;  // modes below this fraction of the largest are treated as zero
};

inline DecayFit melnikov_fourier_decay(const FourierSeries& series, const std::vector<double>& omega, double sigma_ref,
                                       const DecayFitOptions& opt = {}) {
    double cmax = 0.0;
    for (const auto& [k, c] : series.coeffs()) cmax = std::max(cmax, std::abs(c));
    struct Row {
        double kw, kn, logc;
    };
    std::vector<Row> rows;
    for (const auto& [k, c] : series.coeffs()) {
        double kw = dot(k, omega);
        if (kw <= 0.0 || std::abs(c) <= opt.relative_floor * cmax) continue;
        rows.push_back({kw, static_cast<double>(sup_norm(k)), std::log(std::abs(c))});
    }
    std::vector<double> distinct;
    for (const auto& r : rows)
        if (std::none_of(distinct.begin(), distinct.end(), [&](double d) { return std::abs(d - r.kw) < 1e-12; }))
            distinct.push_back(r.kw);
    if (distinct.size() < 4)
        throw PreconditionError("melnikov_fourier_decay: insufficient modes (" + std::to_string(distinct.size()) +
                                " distinct |k.omega| values, need 4)");

    DecayFit fit;
    fit.modes_used = rows.size();
    const auto nr = static_cast<Eigen::Index>(rows.size());
    auto build = [&](bool with_sigma) {
        Eigen::Index cols = 2 + (with_sigma ? 1 : 0) + (opt.fit_prefactor ? 1 : 0);
        Eigen::MatrixXd A(nr, cols);
        Eigen::VectorXd b(nr);
        for (Eigen::Index i = 0; i < nr; ++i) {
            const auto& r = rows[static_cast<std::size_t>(i)];
            Eigen::Index c = 0;
            A(i, c++) = 1.0;
            A(i, c++) = -r.kw;
            if (with_sigma) A(i, c++) = -r.kn;
            if (opt.fit_prefactor) A(i, c++) = std::log(r.kw);
            b(i) = r.logc + (with_sigma ? 0.0 : sigma_ref * r.kn);
        }
        return std::pair{A, b};
    };
    auto [A, b] = build(true);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < A.cols()) {
        fit.sigma_fixed = true;
        std::tie(A, b) = build(false);
        qr.compute(A);
    }
    Eigen::VectorXd x = qr.solve(b);
    Eigen::Index c = 0;
    fit.C_hat = std::exp(x(c++));
    fit.rho_hat = x(c++);
    fit.sigma_hat = fit.sigma_fixed ? sigma_ref : x(c++);
    fit.prefactor_power = opt.fit_prefactor ? x(c++) : 0.0;

    Eigen::VectorXd res = A * x - b;
    double dof = std::max<double>(1.0, static_cast<double>(nr - A.cols()));
    double s2 = res.squaredNorm() / dof;
    Eigen::MatrixXd AtA = A.transpose() * A;
    fit.covariance = s2 * AtA.completeOrthogonalDecomposition().pseudoInverse();

    for (const auto& r : rows) {
        double bound = fit.C_hat * std::exp(-fit.rho_hat * r.kw - fit.sigma_hat * r.kn) *
                       std::pow(r.kw, fit.prefactor_power);
        fit.max_violation = std::max(fit.max_violation, std::exp(r.logc) / bound);
    }
    return fit;
}

/// Smallest C with |c_k| <= C e^{-rho |k.omega| - sigma |k|} for every mode.
inline double decay_envelope_constant(const FourierSeries& series, const std::vector<double>& omega, double rho,
                                      double sigma) {
    double C = 0.0;
    for (const auto& [k, c] : series.coeffs())
        C = std::max(C, std::abs(c) * std::exp(rho * std::abs(dot(k, omega)) + sigma * sup_norm(k)));
    return C;
}

struct CriticalPoint {
    std::vector<double> alpha;
    double value = 0.0;
    int index = 0;  // number of negative Hessian eigenvalues
};

/// Critical points of a real trigonometric polynomial on T^n found by Newton's
/// method on the gradient from every node of a uniform seed grid.
inline std::vector<CriticalPoint> critical_points(const FourierSeries& f, int seeds_per_dim = 32, double tol = 1e-12) {
    const int n = f.n();
    std::vector<FourierSeries> grad;
    std::vector<std::vector<FourierSeries>> hess(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        grad.push_back(f.derivative(i));
        for (int j = 0; j < n; ++j) hess[i].push_back(grad[i].derivative(j));
    }
    std::vector<CriticalPoint> found;
    auto circ = [](double a, double b) {
        double d = wrap_angle(a - b, two_pi);
        return std::min(d, two_pi - d);
    };
    for (auto a : torus_grid(n, seeds_per_dim)) {
        Eigen::VectorXd g(n);
        Eigen::MatrixXd H(n, n);
        bool converged = false;
        for (int it = 0; it < 60; ++it) {
            for (int i = 0; i < n; ++i) {
                g(i) = grad[i].evaluate(a);
                for (int j = 0; j < n; ++j) H(i, j) = hess[i][j].evaluate(a);
            }
            Eigen::VectorXd step = H.fullPivLu().solve(g);
            if (!step.allFinite()) break;
            double len = step.norm();
            if (len > 0.5) step *= 0.5 / len;
            for (int i = 0; i < n; ++i) a[i] -= step(i);
            if (len < tol) {
                converged = true;
                break;
            }
        }
        if (!converged) continue;
        double scale = 0.0;
        for (const auto& [k, c] : f.coeffs()) scale += std::abs(c) * sup_norm(k);
        for (int i = 0; i < n; ++i) g(i) = grad[i].evaluate(a);
        if (g.norm() > 1e-9 * std::max(scale, 1e-300)) continue;
        for (double& v : a) v = wrap_angle(v, two_pi);
        bool dup = false;
        for (const auto& p : found) {
            double d = 0.0;
            for (int i = 0; i < n; ++i) d = std::max(d, circ(p.alpha[i], a[i]));
            if (d < 1e-6) dup = true;
        }
        if (dup) continue;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) H(i, j) = hess[i][j].evaluate(a);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
        int neg = 0;
        for (int i = 0; i < n; ++i) neg += es.eigenvalues()(i) < 0.0;
        found.push_back({a, f.evaluate(a), neg});
    }
    std::sort(found.begin(), found.end(), [](const auto& l, const auto& r) { return l.alpha < r.alpha; });
    return found;
}

/// Closed-form amplitude of M for V0 = (1 - cos x0) cos(k phi): 2 pi kappa / sinh(pi kappa / 2)
/// with kappa = k omega, along the loop with lambda0 = 1.
inline double pendulum_melnikov_amplitude(double kappa) {
    if (kappa == 0.0) return 4.0;
    return two_pi * kappa / std::sinh(0.5 * pi * kappa);
}

} // namespace sepsplit
