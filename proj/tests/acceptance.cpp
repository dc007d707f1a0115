// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include <sepsplit/sepsplit.hpp>

using namespace sepsplit;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [violated]");
    }
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome exponents() {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> arms{1.0, 2.0};
    auto lam = characteristic_exponents(arms);
    auto ev = linearization_eigenvalues(arms);
    std::vector<double> pos;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i).real() > 0) pos.push_back(ev(i).real());
    std::sort(pos.rbegin(), pos.rend());
    double mismatch = std::max(std::abs(pos.at(0) - lam[0]), std::abs(pos.at(1) - lam[1]));
    o.check(std::abs(lam[0] - 1.0) < 1e-10 && std::abs(lam[1] - std::sqrt(3.0) / 2) < 1e-10,
            "lambda = (" + num(lam[0]) + ", " + num(lam[1]) + ")");
    o.check(mismatch < 1e-10, "eigenvalue mismatch " + num(mismatch));
    auto r = check_nonresonance(lam);
    o.check(std::abs(r.nonres_margin - 0.1339746) <= 1e-7 && std::abs(r.nonres_margin - (1 - std::sqrt(3.0) / 2)) < 1e-9,
            "margin " + num(r.nonres_margin));
    o.check(r.witness_k == Lattice{1}, "witness k = " + to_string(r.witness_k));
    double t = seconds_since(t0);
    o.check(t < 1.0, "runtime " + num(t) + " s");
    return o;
}

Outcome chart() {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    o.check(s_of_x(pi) == 0.0, "s(pi) = " + num(s_of_x(pi)));
    double rt = 0.0;
    for (int i = 0; i < 1000; ++i) {
        double s = -15.0 + 30.0 * i / 999;
        for (Branch b : {Branch::upper, Branch::lower}) {
            double x = x_of_s(s, b);
            rt = std::max(rt, std::abs(x_of_s(s_of_x(x), b) - x));
        }
    }
    for (int i = 0; i < 1000; ++i) {
        double x = two_pi * (i + 0.5) / 1000;
        rt = std::max(rt, std::abs(x_of_s(s_of_x(x)) - x));
    }
    o.check(rt < 1e-12, "round trip " + num(rt));
    double lo = 1e300, hi = 0.0;
    for (int i = 0; i <= 3000; ++i) {
        double s = -15.0 + 30.0 * i / 3000;
        double v = chi(s) * std::exp(std::abs(s));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    o.check(lo >= 2.0 && hi <= 4.0, "chi e^|s| in [" + num(lo) + ", " + num(hi) + "]");
    double t = seconds_since(t0);
    o.check(t < 1.0, "runtime " + num(t) + " s");
    return o;
}

Outcome separatrix() {
    Outcome o;
    ModelParams p;
    double res = 0.0, energy = 0.0;
    for (int i = 0; i <= 2000; ++i) {
        double t = -10.0 + 20.0 * i / 2000;
        auto pt = separatrix_orbit(t, 1.0);
        double xdot = 2.0 / std::cosh(t);
        res = std::max(res, std::abs(xdot - psi(pt.x)));
        auto s = PhaseState::zero(1, 1);
        s.x = pt.x;
        s.y = pt.y;
        energy = std::max(energy, std::abs(evaluate_hamiltonian(p, s)));
    }
    o.check(res < 1e-12, "|x0' - psi(x0)| " + num(res));
    o.check(energy < 1e-12, "energy " + num(energy));
    return o;
}

Outcome riccati() {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    auto f = riccati_direction(2.0, 0.05, 2000);
    double sup = std::max(tilde_lambda_residual(f).sup, tilde_lambda_residual(f, true).sup);
    o.check(sup < 1e-8, "sup |residual| " + num(sup));
    auto near = riccati_direction(TransverseMode::two_arm(2.0), {1e-6, 1e-5});
    double l0 = near.lambda_u[0];
    o.check(std::abs(l0 - 2 * std::sqrt(3.0)) < 1e-8, "lambda_u(0) " + num(l0));
    auto [lo, hi] = std::minmax_element(f.lambda_u.begin(), f.lambda_u.end());
    o.check(*lo >= 2.0 && *hi <= 2 * std::sqrt(3.0), "lambda_u in [" + num(*lo) + ", " + num(*hi) + "]");
    auto ang = transversality_angle(f);
    o.check(ang.min_angle > 0.5, "min angle " + num(ang.min_angle) + " rad");
    double t = seconds_since(t0);
    o.check(t < 10.0, "runtime " + num(t) + " s");
    return o;
}

Outcome melnikov() {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    auto v = pendulum_cosine_perturbation(1, 0, 1);
    auto s = melnikov_coefficients(v, {2.0});
    double amp = 2.0 * s.coeff({1}).real();
    const double closed = 2 * pi * 2.0 / std::sinh(pi);
    // independent quadrature of M(0)
    const double a0[] = {0.0};
    double direct = melnikov_direct(v, {2.0}, a0);
    o.check(std::abs(amp / closed - 1) < 1e-8, "amplitude " + format_double(amp) + " vs 2 pi w / sinh(pi w/2) = " +
                                                   format_double(closed));
    o.check(std::abs(direct / closed - 1) < 1e-8, "direct quadrature " + num(direct));
    auto s4 = melnikov_coefficients(pendulum_cosine_perturbation(1, 0, 4), {2.0});
    auto fit = melnikov_fourier_decay(s4, {2.0}, 0.0);
    double ratio = fit.rho_hat / (pi / 2);
    o.check(ratio >= 0.95 && ratio <= 1.05, "rho_hat " + num(fit.rho_hat) + " = " + num(ratio) + " pi/2");
    double t = seconds_since(t0);
    o.check(t < 30.0, "runtime " + num(t) + " s");
    return o;
}

OperatorSpec model_spec() {
    OperatorSpec s;
    s.lambda0 = 1.0;
    s.omega = {2.0};
    s.Lambda0 = Eigen::MatrixXd::Constant(1, 1, std::sqrt(3.0) / 2);
    return s;
}

Outcome homological() {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    auto grid = std::make_shared<const SGrid>(SGrid::for_exponent(1.0));
    const OperatorSpec spec = model_spec();
    double worst = 0.0;

    // battery of explicit examples
    {
        FourierSeries tv(1);
        tv.set({1}, 0.5);
        tv.set({-1}, 0.5);
        auto tu = solve_torus_mode(tv, {2.0}, 1.0);
        // (-1 + 2i) u_1 = 1/2
        worst = std::max(worst, std::abs(tu.coeff({1}) * complex(-1.0, 2.0) - 0.5));
    }
    {
        OperatorSpec scalar;
        scalar.lambda0 = 1.0;
        scalar.omega = {2.0};
        CylinderFunction v(grid, 1, 0);
        v.set_tail_fn({0, {}, {1}}, [](double x) { return chi(x); });
        v.set_tail_fn({0, {}, {-1}}, [](double x) { return chi(x); });
        worst = std::max(worst, solve_cylinder(v, scalar).report.residual);
        CylinderFunction w(grid, 1, 0, 1, true);
        w.set_wedge({0, {}, {0}}, 1.0);
        worst = std::max(worst, solve_extended(w, scalar, {.absorb_resonant_means = true}).report.residual);
    }
    {
        CylinderFunction v(grid, 1, 1);
        v.add_cos_mean(0, {1}, {1}, 1.0);
        v.add_cos_mean(0, {2}, {2}, 0.5);
        worst = std::max(worst, solve_extended(v, spec).report.residual);
        OperatorSpec coupled = spec;
        coupled.Lambda1 = [](double x) { return Eigen::MatrixXd::Constant(1, 1, 0.05 * chi(x)); };
        std::mt19937_64 rng(1);
        for (auto t : {TransposeTerm::none, TransposeTerm::minus, TransposeTerm::plus}) {
            auto r = random_cylinder_function(rng, grid, 1, 1, 1, 3, 2, false);
            worst = std::max(worst, solve_extended(r, coupled, {.transpose = t, .absorb_resonant_means = true}).report.residual);
        }
    }
    // negative controls: resonances must be rejected
    int rejected = 0;
    for (double l1 : {1.0, 0.5}) {
        OperatorSpec bad = spec;
        bad.Lambda0(0, 0) = l1;
        CylinderFunction v(grid, 1, 1);
        v.add_cos_mean(0, {1}, {1}, 1.0);
        try {
            (void)solve_extended(v, bad);
        } catch (const PreconditionError&) {
            ++rejected;
        }
    }
    o.check(worst < 1e-10, "battery residual " + num(worst));
    o.check(rejected == 2, "resonant controls rejected " + std::to_string(rejected) + "/2");

    // linearity
    std::mt19937_64 rng(5);
    auto v1 = random_cylinder_function(rng, grid, 1, 1, 1, 4, 2, false);
    auto v2 = random_cylinder_function(rng, grid, 1, 1, 1, 4, 2, false);
    // the k = 0, z^0 mean is the obstruction of the bare operator
    v1.set_mean({0, {0}, {0}}, 0.0);
    v2.set_mean({0, {0}, {0}}, 0.0);
    auto u1 = solve_extended(v1, spec).u, u2 = solve_extended(v2, spec).u;
    CylinderFunction comb = v1;
    comb *= complex(0.3);
    comb.axpy(-1.7, v2);
    CylinderFunction diff = solve_extended(comb, spec).u;
    diff.axpy(-0.3, u1);
    diff.axpy(1.7, u2);
    double lin = diff.norm() / std::max(1.0, comb.norm());
    o.check(lin < 1e-12, "linearity " + num(lin));

    // norm-ratio bound on random inputs
    int ok = 0;
    double ratio = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto v = random_cylinder_function(rng, grid, 1, 1, 1, 4, 2, false);
        v.set_mean({0, {0}, {0}}, 0.0);
        auto r = solve_extended(v, spec).report;
        ratio = std::max(ratio, r.u_norm / r.v_norm / r.bound_factor);
        ok += r.u_norm <= r.bound_factor * r.v_norm && r.residual < 1e-10;
    }
    o.check(ok == 100, "norm-ratio bound " + std::to_string(ok) + "/100 (max ratio/bound " + num(ratio) + ")");

    // full-size solve
    auto t1 = std::chrono::steady_clock::now();
    auto big = random_cylinder_function(rng, grid, 1, 1, 1, 32, 4, false);
    big.set_mean({0, {0}, {0}}, 0.0);
    auto rb = solve_extended(big, spec).report;
    double tb = seconds_since(t1);
    o.check(rb.residual < 1e-10, "K=32 D=4 residual " + num(rb.residual) + " in " + num(tb) + " s");
    double t = seconds_since(t0);
    o.check(t < 60.0, "runtime " + num(t) + " s");
    return o;
}

Outcome step() {
    Outcome o;
    for (double w : {2.0, 0.7}) {
        auto grid = std::make_shared<const SGrid>(SGrid::for_exponent(1.0));
        OperatorSpec spec = model_spec();
        spec.omega = {w};
        auto in = StepForcing::zero(grid, 1, 1);
        in.f.add_cos_mean(0, {0}, {1}, 1.0);
        auto sol = homological_step(spec, {Eigen::MatrixXd::Identity(3, 3)}, in);
        double err = 0.0;
        std::vector<double> phi(1);
        std::vector<complex> z{0.0};
        for (int i = 0; i < 64; ++i)
            for (double s : {-8.0, 0.0, 5.0}) {
                phi[0] = two_pi * i / 64;
                err = std::max(err, std::abs(sol.S0hat.value(0, phi, s, z) - complex(-std::sin(phi[0]) / w)));
            }
        o.check(err < 1e-10, "omega " + num(w) + ": S0 error " + num(err));
        o.check(sol.max_residual() < 1e-10 && sol.residuals.size() == 4,
                "residuals max " + num(sol.max_residual()) + " over " + std::to_string(sol.residuals.size()));
    }
    return o;
}

Outcome splitting() {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> sections{pi / 2, pi, 3 * pi / 2};
    auto a = measure_splitting(splitting_example(1e-3), sections);
    auto b = measure_splitting(splitting_example(5e-4), sections);
    double ratio = a.melnikov_error / b.melnikov_error;
    o.check(ratio >= 3.2 && ratio <= 4.8, "e(1e-3) = " + num(a.melnikov_error) + ", e(5e-4) = " +
                                              num(b.melnikov_error) + ", ratio " + num(ratio));
    o.check(a.collapse_residual <= 10 * a.melnikov_error && b.collapse_residual <= 10 * b.melnikov_error,
            "collapse " + num(a.collapse_residual) + ", " + num(b.collapse_residual));
    bool zeros = true;
    for (const auto& s : a.sections) zeros = zeros && s.zero_count == 2 && s.zeros_simple;
    for (const auto& s : b.sections) zeros = zeros && s.zero_count == 2 && s.zeros_simple;
    o.check(zeros, "2 simple zeros on every section");
    double t = seconds_since(t0);
    o.check(t < 300.0, "runtime " + num(t) + " s");
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"exponents", exponents}, {"chart identities", chart},   {"separatrix residual", separatrix},
        {"riccati", riccati},     {"melnikov", melnikov},        {"homological solvers", homological},
        {"homological step", step}, {"splitting experiment", splitting}};
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failures += !o.pass;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
