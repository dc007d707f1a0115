#pragma once

// Symplectic integration of the full model and a direct measurement of the
// separatrix splitting by shooting the unstable and stable manifolds of the
// torus at the origin to Poincare sections x = const.

#include "melnikov.hpp"
#include "model.hpp"
#include "separatrix.hpp"
#include "variational.hpp"

#include <numeric>

namespace sepsplit {

enum class Scheme { leapfrog, yoshida4, implicit_midpoint };

inline std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::leapfrog: return "leapfrog";
        case Scheme::yoshida4: return "yoshida4";
        case Scheme::implicit_midpoint: return "implicit_midpoint";
    }
    return "?";
}

struct IntegratorConfig {
    Scheme scheme = Scheme::yoshida4;
    double h = 1e-3;
    double tol = 1e-14;  // fixed-point tolerance of the implicit scheme
    int max_iter = 100;
    double max_time = 200.0;

    void validate() const {
        require(h > 0.0 && std::isfinite(h), "integrator: step must be positive");
        require(tol > 0.0, "integrator: tolerance must be positive");
        require(max_time > 0.0, "integrator: max_time must be positive");
    }
};

namespace detail {

/// Angles q = (phi, x, z) and momenta p = (iota, y, zbar) in flat arrays.
struct Canonical {
    std::vector<double> q, p;
};

inline Canonical to_canonical(const PhaseState& s) {
    Canonical c;
    c.q = s.phi;
    c.q.push_back(s.x);
    c.q.insert(c.q.end(), s.z.begin(), s.z.end());
    c.p = s.iota;
    c.p.push_back(s.y);
    c.p.insert(c.p.end(), s.zbar.begin(), s.zbar.end());
    return c;
}

inline PhaseState to_state(const Canonical& c, int n, int m) {
    PhaseState s;
    s.phi.assign(c.q.begin(), c.q.begin() + n);
    s.x = c.q[static_cast<std::size_t>(n)];
    s.z.assign(c.q.begin() + n + 1, c.q.begin() + n + 1 + m);
    s.iota.assign(c.p.begin(), c.p.begin() + n);
    s.y = c.p[static_cast<std::size_t>(n)];
    s.zbar.assign(c.p.begin() + n + 1, c.p.begin() + n + 1 + m);
    return s;
}

/// H = T(p) + W(q) is separable: kinetic part in the momenta, potential plus perturbation in the angles.
class Stepper {
public:
    Stepper(const ModelParams& p, const IntegratorConfig& cfg)
        : p_(p), cfg_(cfg), n_(p.n()), m_(p.m()), grad_u_(static_cast<std::size_t>(m_ + 1)),
          gv_phi_(static_cast<std::size_t>(n_)), gv_ang_(static_cast<std::size_t>(m_ + 1)),
          inv_mass_(static_cast<std::size_t>(m_ + 1)) {
        p.validate();
        cfg.validate();
        for (int i = 0; i <= m_; ++i) inv_mass_[i] = 1.0 / (p.arms[i] * p.arms[i]);
        perturbed_ = p.mu != 0.0 && !p.perturbation.empty();
    }

    void step(Canonical& c, double h) {
        switch (cfg_.scheme) {
            case Scheme::leapfrog: leapfrog(c, h); break;
            case Scheme::yoshida4: {
                static const double w1 = 1.0 / (2.0 - std::cbrt(2.0));
                static const double w0 = -std::cbrt(2.0) * w1;
                leapfrog(c, w1 * h);
                leapfrog(c, w0 * h);
                leapfrog(c, w1 * h);
                break;
            }
            case Scheme::implicit_midpoint: midpoint(c, h); break;
        }
    }

    [[nodiscard]] double energy(const Canonical& c) const {
        double e = 0.0;
        for (int i = 0; i < n_; ++i) e += p_.omega[i] * c.p[i] + 0.5 * c.p[i] * c.p[i];
        for (int i = 0; i <= m_; ++i) e += 0.5 * inv_mass_[i] * c.p[n_ + i] * c.p[n_ + i];
        std::span<const double> ang(c.q.data() + n_, static_cast<std::size_t>(m_ + 1));
        e += potential(p_.arms, ang);
        if (perturbed_) e += p_.mu * p_.perturbation.value(std::span<const double>(c.q.data(), n_), ang);
        return e;
    }

private:
    void forces(const Canonical& c) {
        std::span<const double> ang(c.q.data() + n_, static_cast<std::size_t>(m_ + 1));
        potential_gradient(p_.arms, ang, grad_u_);
        if (perturbed_) {
            std::fill(gv_phi_.begin(), gv_phi_.end(), 0.0);
            std::fill(gv_ang_.begin(), gv_ang_.end(), 0.0);
            p_.perturbation.gradient(std::span<const double>(c.q.data(), n_), ang, gv_phi_, gv_ang_);
        }
    }
    void kick(Canonical& c, double tau) {
        forces(c);
        for (int i = 0; i <= m_; ++i) c.p[n_ + i] -= tau * grad_u_[i];
        if (perturbed_) {
            for (int i = 0; i < n_; ++i) c.p[i] -= tau * p_.mu * gv_phi_[i];
            for (int i = 0; i <= m_; ++i) c.p[n_ + i] -= tau * p_.mu * gv_ang_[i];
        }
    }
    void drift(Canonical& c, double tau) const {
        for (int i = 0; i < n_; ++i) c.q[i] += tau * (p_.omega[i] + c.p[i]);
        for (int i = 0; i <= m_; ++i) c.q[n_ + i] += tau * inv_mass_[i] * c.p[n_ + i];
    }
    void leapfrog(Canonical& c, double h) {
        kick(c, 0.5 * h);
        drift(c, h);
        kick(c, 0.5 * h);
    }
    void field(const Canonical& c, Canonical& d) {
        forces(c);
        d.q.resize(c.q.size());
        d.p.resize(c.p.size());
        for (int i = 0; i < n_; ++i) {
            d.q[i] = p_.omega[i] + c.p[i];
            d.p[i] = perturbed_ ? -p_.mu * gv_phi_[i] : 0.0;
        }
        for (int i = 0; i <= m_; ++i) {
            d.q[n_ + i] = inv_mass_[i] * c.p[n_ + i];
            d.p[n_ + i] = -grad_u_[i] - (perturbed_ ? p_.mu * gv_ang_[i] : 0.0);
        }
    }
    void midpoint(Canonical& c, double h) {
        Canonical next = c, mid = c, f;
        for (int it = 0; it < cfg_.max_iter; ++it) {
            for (std::size_t i = 0; i < c.q.size(); ++i) mid.q[i] = 0.5 * (c.q[i] + next.q[i]);
            for (std::size_t i = 0; i < c.p.size(); ++i) mid.p[i] = 0.5 * (c.p[i] + next.p[i]);
            field(mid, f);
            double change = 0.0;
            for (std::size_t i = 0; i < c.q.size(); ++i) {
                double v = c.q[i] + h * f.q[i];
                change = std::max(change, std::abs(v - next.q[i]));
                next.q[i] = v;
            }
            for (std::size_t i = 0; i < c.p.size(); ++i) {
                double v = c.p[i] + h * f.p[i];
                change = std::max(change, std::abs(v - next.p[i]));
                next.p[i] = v;
            }
            if (change <= cfg_.tol * std::max(1.0, std::abs(next.q[static_cast<std::size_t>(n_)]))) {
                c = std::move(next);
                return;
            }
        }
        throw NumericalError("implicit midpoint: fixed-point iteration did not converge (h = " + format_double(h) +
                             ")");
    }

    const ModelParams& p_;
    IntegratorConfig cfg_;
    int n_, m_;
    std::vector<double> grad_u_, gv_phi_, gv_ang_, inv_mass_;
    bool perturbed_ = false;
};

} // namespace detail

struct Trajectory {
    std::vector<double> t;
    std::vector<PhaseState> states;
    double max_energy_drift = 0.0;
};

/// Integrates from t = 0 to t1 (negative t1 runs backward) and keeps `samples` equally spaced states.
inline Trajectory integrate(const ModelParams& params, const PhaseState& start, const IntegratorConfig& cfg, double t1,
                            int samples = 1001) {
    start.check(params);
    require(samples >= 2, "integrate: need at least two samples");
    detail::Stepper stepper(params, cfg);
    auto steps = static_cast<long>(std::ceil(std::abs(t1) / cfg.h - 1e-9));
    steps = std::max(steps, 1L);
    const double h = t1 / static_cast<double>(steps);
    detail::Canonical c = detail::to_canonical(start);
    const double e0 = stepper.energy(c);
    Trajectory tr;
    tr.t.push_back(0.0);
    tr.states.push_back(start);
    long next_sample = 1;
    for (long i = 1; i <= steps; ++i) {
        try {
            stepper.step(c, h);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at t = " + format_double((i - 1) * h));
        }
        tr.max_energy_drift = std::max(tr.max_energy_drift, std::abs(stepper.energy(c) - e0));
        if (!std::isfinite(c.q[0]) || !std::isfinite(c.p[0]))
            throw NumericalError("integrate: non-finite state at t = " + format_double(i * h));
        long target = (next_sample * steps) / (samples - 1);
        while (next_sample < samples && i == target) {
            tr.t.push_back(i * h);
            tr.states.push_back(detail::to_state(c, params.n(), params.m()));
            ++next_sample;
            target = (next_sample * steps) / (samples - 1);
        }
    }
    return tr;
}

struct CrossingRecord {
    PhaseState state;
    double t = 0.0;  // time from the seed (negative on the stable branch)
    double section_x = 0.0;
};

struct ShotResult {
    std::vector<CrossingRecord> crossings;  // in the order of the requested sections
    double max_transverse = 0.0;            // max |z|, |zbar| along the shot
};

namespace detail {

inline void check_torus_persistence(const ModelParams& params) {
    if (params.mu != 0.0 && !params.perturbation.empty())
        require(params.perturbation.vanishes_at_origin(2),
                "shooting: perturbation must vanish to second order at (x, z) = 0 so the torus stays at the origin");
}

} // namespace detail

/// Seeds on the linear unstable (stable) direction at distance eps0 from the torus at x = 0 (x = 2 pi)
/// with iota = z = zbar = 0, integrates forward (backward) and records the crossings of x = section.
inline ShotResult shoot_sections(const ModelParams& params, ManifoldBranch branch, std::span<const double> phi_seed,
                                 double eps0, std::span<const double> sections, const IntegratorConfig& cfg) {
    params.validate();
    detail::check_torus_persistence(params);
    require(static_cast<int>(phi_seed.size()) == params.n(), "shoot: seed phase has wrong dimension");
    require(eps0 > 0.0 && eps0 < 0.1, "shoot: eps0 must be in (0, 0.1)");
    require(!sections.empty(), "shoot: no sections");
    for (double x : sections) require(x > eps0 && x < two_pi - eps0, "shoot: section must lie in (eps0, 2pi - eps0)");
    const bool unstable = branch == ManifoldBranch::unstable;
    const double l0 = params.arms[0];
    const double lambda0 = characteristic_exponents(params.arms)[0];

    PhaseState s = PhaseState::zero(params.n(), params.m());
    s.phi.assign(phi_seed.begin(), phi_seed.end());
    s.x = unstable ? eps0 : two_pi - eps0;
    s.y = l0 * l0 * lambda0 * eps0;
    detail::Canonical c = detail::to_canonical(s);
    detail::Stepper stepper(params, cfg);
    const double h = unstable ? cfg.h : -cfg.h;
    const std::size_t ix = static_cast<std::size_t>(params.n());

    // visit sections in the order the branch meets them
    std::vector<std::size_t> order(sections.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return unstable ? sections[a] < sections[b] : sections[a] > sections[b];
    });

    ShotResult out;
    out.crossings.resize(sections.size());
    std::size_t next = 0;
    double t = 0.0;
    const long max_steps = static_cast<long>(cfg.max_time / cfg.h) + 1;
    for (long i = 0; i < max_steps && next < order.size(); ++i) {
        detail::Canonical prev = c;
        stepper.step(c, h);
        t += h;
        for (std::size_t j = ix + 1; j < c.q.size(); ++j) out.max_transverse = std::max(out.max_transverse, std::abs(c.q[j]));
        for (std::size_t j = ix + 1; j < c.p.size(); ++j) out.max_transverse = std::max(out.max_transverse, std::abs(c.p[j]));
        while (next < order.size()) {
            const double target = sections[order[next]];
            const bool crossed = unstable ? c.q[ix] >= target : c.q[ix] <= target;
            if (!crossed) break;
            // secant on the partial step length
            double a = 0.0, fa = prev.q[ix] - target;
            double b = h, fb = c.q[ix] - target;
            detail::Canonical probe = c;
            int it = 0;
            while (std::abs(fb) > 1e-12) {
                if (++it > 60 || fb == fa) throw NumericalError("shoot: event localization failed at t = " + format_double(t));
                double tau = b - fb * (b - a) / (fb - fa);
                probe = prev;
                stepper.step(probe, tau);
                a = b;
                fa = fb;
                b = tau;
                fb = probe.q[ix] - target;
            }
            if (it == 0) probe = c;
            CrossingRecord rec;
            rec.state = detail::to_state(probe, params.n(), params.m());
            rec.t = t - h + b;
            rec.section_x = target;
            out.crossings[order[next]] = std::move(rec);
            ++next;
        }
        if (!std::isfinite(c.q[ix])) throw NumericalError("shoot: non-finite state at t = " + format_double(t));
    }
    if (next < order.size())
        throw NumericalError("shoot: section x = " + format_double(sections[order[next]]) + " not reached within " +
                             format_double(cfg.max_time));
    return out;
}

/// Unperturbed travel time from the seed at distance eps0 to the section (negative on the stable branch).
inline double unperturbed_transit(double lambda0, ManifoldBranch branch, double eps0, double section_x) {
    double ts = s_of_x(section_x) / lambda0;
    return branch == ManifoldBranch::unstable ? ts - s_of_x(eps0) / lambda0 : ts - s_of_x(two_pi - eps0) / lambda0;
}

inline double wrap_pm_pi(double a) {
    double r = wrap_angle(a + pi, two_pi) - pi;
    return r;
}

/// Crossing of the branch with x = section_x at rotator angle phi0 (mod 2 pi); the seed phase is
/// found by Newton's method with a finite-difference Jacobian.
inline CrossingRecord manifold_shoot(const ModelParams& params, ManifoldBranch branch, std::span<const double> phi0,
                                     double eps0, double section_x, const IntegratorConfig& cfg = {}) {
    const int n = params.n();
    require(static_cast<int>(phi0.size()) == n, "manifold_shoot: phi0 has wrong dimension");
    const double lambda0 = characteristic_exponents(params.arms)[0];
    const double dt = unperturbed_transit(lambda0, branch, eps0, section_x);
    std::vector<double> seed(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) seed[i] = phi0[i] - params.omega[i] * dt;
    const double sec[] = {section_x};
    auto miss = [&](const std::vector<double>& th, CrossingRecord& rec) {
        rec = shoot_sections(params, branch, th, eps0, sec, cfg).crossings[0];
        Eigen::VectorXd f(n);
        for (int i = 0; i < n; ++i) f(i) = wrap_pm_pi(rec.state.phi[i] - phi0[i]);
        return f;
    };
    CrossingRecord rec;
    for (int it = 0; it < 30; ++it) {
        Eigen::VectorXd f = miss(seed, rec);
        if (f.cwiseAbs().maxCoeff() < 1e-12) return rec;
        Eigen::MatrixXd J(n, n);
        const double d = 1e-6;
        for (int j = 0; j < n; ++j) {
            auto th = seed;
            th[j] += d;
            CrossingRecord tmp;
            J.col(j) = (miss(th, tmp) - f) / d;
        }
        Eigen::VectorXd step = J.fullPivLu().solve(f);
        for (int i = 0; i < n; ++i) seed[i] -= step(i);
    }
    throw NumericalError("manifold_shoot: phase matching did not converge");
}

struct SplittingOptions {
    int seeds = 64;        // shots per branch (n = 1)
    int alpha_points = 64;  // alpha samples per angle
    double eps0 = 1e-7;
    unsigned threads = 1;
    IntegratorConfig integrator;
};

struct SectionMeasurement {
    double section_x = 0.0;
    std::vector<std::vector<double>> alpha;
    std::vector<std::vector<double>> phi;
    std::vector<double> delta_iota;  // iota^u - iota^s, first rotator
    std::vector<double> delta_y;     // y^u - y^s
    std::vector<double> predicted;   // -mu dM/dalpha_1
    double melnikov_error = 0.0;     // max |delta_iota - predicted|
    double energy_relation = 0.0;    // max |omega.delta_iota + y delta_y|
    int zero_count = 0;              // sign changes of delta_iota along alpha (n = 1)
    bool zeros_simple = false;
};

struct SplittingMeasurement {
    double mu = 0.0;
    std::vector<SectionMeasurement> sections;
    double collapse_residual = 0.0;  // max over alpha of the spread of delta_iota across sections
    double melnikov_error = 0.0;     // max over sections
    double max_transverse = 0.0;
    FourierSeries melnikov;          // M(alpha) used for the prediction
};

namespace detail {

/// Real trigonometric interpolant of equally spaced periodic samples.
class TrigInterpolant {
public:
    explicit TrigInterpolant(const std::vector<double>& f) : N_(static_cast<int>(f.size())) {
        c_.resize(static_cast<std::size_t>(N_ / 2 + 1));
        for (int k = 0; k <= N_ / 2; ++k) {
            complex acc{};
            for (int j = 0; j < N_; ++j) acc += f[j] * std::polar(1.0, -two_pi * k * j / N_);
            c_[k] = acc / static_cast<double>(N_);
        }
    }
    [[nodiscard]] double operator()(double t) const { return eval(t, false); }
    [[nodiscard]] double derivative(double t) const { return eval(t, true); }

private:
    [[nodiscard]] double eval(double t, bool deriv) const {
        double v = deriv ? 0.0 : c_[0].real();
        for (int k = 1; k <= N_ / 2; ++k) {
            double w = (2 * k == N_) ? 1.0 : 2.0;
            complex e = std::polar(1.0, k * t);
            if (deriv)
                v += w * (c_[k] * complex(0.0, k) * e).real();
            else
                v += w * (c_[k] * e).real();
        }
        return v;
    }
    int N_;
    std::vector<complex> c_;
};

/// Branch data at each section as functions of the arrival phase (n = 1): the seed family is shot
/// once and the map seed phase -> arrival phase is inverted on its trigonometric interpolant.
struct BranchOnSection {
    TrigInterpolant shift, iota, y;  // arrival phase - seed phase, and the crossing values
    double mean_shift;
};

inline std::vector<BranchOnSection> shoot_family(const ModelParams& params, ManifoldBranch branch,
                                                 const std::vector<double>& sections, const SplittingOptions& opt,
                                                 double& max_transverse) {
    const int J = opt.seeds;
    std::vector<ShotResult> shots(static_cast<std::size_t>(J));
    parallel_for(shots.size(), opt.threads, [&](std::size_t j) {
        const double seed[] = {two_pi * static_cast<double>(j) / J};
        shots[j] = shoot_sections(params, branch, seed, opt.eps0, sections, opt.integrator);
    });
    std::vector<BranchOnSection> out;
    for (std::size_t s = 0; s < sections.size(); ++s) {
        std::vector<double> shift(static_cast<std::size_t>(J)), iota(shift.size()), y(shift.size());
        for (int j = 0; j < J; ++j) {
            const auto& st = shots[j].crossings[s].state;
            shift[j] = st.phi[0] - two_pi * j / J;
            iota[j] = st.iota[0];
            y[j] = st.y;
        }
        double mean = 0.0;
        for (double v : shift) mean += v / J;
        out.push_back({TrigInterpolant(shift), TrigInterpolant(iota), TrigInterpolant(y), mean});
    }
    for (const auto& sh : shots) max_transverse = std::max(max_transverse, sh.max_transverse);
    return out;
}

/// Seed phase theta with theta + shift(theta) = phi (mod 2 pi).
inline double invert_arrival(const BranchOnSection& b, double phi) {
    double theta = phi - b.mean_shift;
    for (int it = 0; it < 50; ++it) {
        double g = wrap_pm_pi(theta + b.shift(theta) - phi);
        if (std::abs(g) < 1e-14) return theta;
        theta -= g / (1.0 + b.shift.derivative(theta));
    }
    throw NumericalError("measure_splitting: arrival-phase inversion did not converge");
}

} // namespace detail

/// Delta iota = iota^u - iota^s and Delta y at equal phi on each section, reindexed by
/// alpha = phi - omega s(x*) / lambda0 and compared with -mu dM/dalpha.
inline SplittingMeasurement measure_splitting(const ModelParams& params, const std::vector<double>& sections,
                                              const SplittingOptions& opt = {}) {
    params.validate();
    require(params.n() == 1, "measure_splitting: the seed-family inversion is implemented for n = 1");
    require(!sections.empty(), "measure_splitting: no sections");
    require(opt.seeds >= 8 && opt.alpha_points >= 4, "measure_splitting: too few seeds or alpha points");
    const double lambda0 = characteristic_exponents(params.arms)[0];
    const double omega = params.omega[0];

    SplittingMeasurement out;
    out.mu = params.mu;
    PerturbationSpec v0 = params.perturbation.empty() ? PerturbationSpec(1, 0) : params.perturbation.restricted_to_pendulum();
    QuadratureOptions q;
    q.lambda0 = lambda0;
    out.melnikov = melnikov_coefficients(v0, params.omega, q, opt.threads);
    const FourierSeries dM = out.melnikov.derivative(0);

    auto unstable = detail::shoot_family(params, ManifoldBranch::unstable, sections, opt, out.max_transverse);
    auto stable = detail::shoot_family(params, ManifoldBranch::stable, sections, opt, out.max_transverse);

    const int G = opt.alpha_points;
    for (std::size_t s = 0; s < sections.size(); ++s) {
        SectionMeasurement sm;
        sm.section_x = sections[s];
        const double t_star = s_of_x(sections[s]) / lambda0;
        for (int g = 0; g < G; ++g) {
            double alpha = two_pi * g / G;
            double phi = alpha + omega * t_star;
            double th_u = detail::invert_arrival(unstable[s], phi);
            double th_s = detail::invert_arrival(stable[s], phi);
            double di = unstable[s].iota(th_u) - stable[s].iota(th_s);
            double yu = unstable[s].y(th_u);
            double dy = yu - stable[s].y(th_s);
            double pred = -params.mu * dM.evaluate(std::vector<double>{alpha});
            sm.alpha.push_back({alpha});
            sm.phi.push_back({wrap_angle(phi, two_pi)});
            sm.delta_iota.push_back(di);
            sm.delta_y.push_back(dy);
            sm.predicted.push_back(pred);
            sm.melnikov_error = std::max(sm.melnikov_error, std::abs(di - pred));
            sm.energy_relation = std::max(sm.energy_relation, std::abs(omega * di + yu * dy));
        }
        // sign changes around the circle; a zero is simple when the slope there is not tiny
        double scale = 0.0;
        for (double v : sm.delta_iota) scale = std::max(scale, std::abs(v));
        sm.zeros_simple = true;
        for (int g = 0; g < G; ++g) {
            double a = sm.delta_iota[g], b = sm.delta_iota[(g + 1) % G];
            if ((a < 0.0) != (b < 0.0)) {
                ++sm.zero_count;
                double slope = std::abs(b - a) / (two_pi / G);
                if (slope < 1e-3 * scale) sm.zeros_simple = false;
            }
        }
        if (scale == 0.0) sm.zeros_simple = false;
        out.melnikov_error = std::max(out.melnikov_error, sm.melnikov_error);
        out.sections.push_back(std::move(sm));
    }
    for (int g = 0; g < G; ++g) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& sm : out.sections) {
            lo = std::min(lo, sm.delta_iota[g]);
            hi = std::max(hi, sm.delta_iota[g]);
        }
        out.collapse_residual = std::max(out.collapse_residual, hi - lo);
    }
    return out;
}

/// The standard experiment: n = m = 1, arms (1, 2), omega = 2, V = (1 - cos x) cos phi.
inline ModelParams splitting_example(double mu) {
    ModelParams p;
    p.arms = {1.0, 2.0};
    p.omega = {2.0};
    p.mu = mu;
    p.perturbation = pendulum_cosine_perturbation(1, 1, 1);
    return p;
}

} // namespace sepsplit
