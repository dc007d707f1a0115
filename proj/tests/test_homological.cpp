#include <random>

#include <gtest/gtest.h>

#include "sepsplit/homological.hpp"

using namespace sepsplit;

namespace {

std::shared_ptr<const SGrid> default_grid(double lambda0 = 1.0, int order = 20) {
    return std::make_shared<SGrid>(SGrid::for_exponent(lambda0, 15.0, 1.0, order));
}

OperatorSpec scalar_spec(double lambda0, double omega) {
    OperatorSpec s;
    s.lambda0 = lambda0;
    s.omega = {omega};
    return s;
}

OperatorSpec one_z_spec(double lambda1, double lambda0 = 1.0, double omega = 2.0) {
    OperatorSpec s = scalar_spec(lambda0, omega);
    s.Lambda0 = Eigen::MatrixXd::Constant(1, 1, lambda1);
    return s;
}

const Lattice k0{0};
const Lattice kp{1};
const Lattice km{-1};

// A random real function with bounded s-constant parts and tails vanishing like chi at -inf.
CylinderFunction random_function(std::mt19937_64& rng, std::shared_ptr<const SGrid> grid, int m, int components,
                                 int K, int D, bool wedge) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CylinderFunction f(grid, 1, m, components, wedge);
    for (int c = 0; c < components; ++c)
        for (int d = 0; d <= D; ++d)
            for (const auto& alpha : monomials_of_degree(m, d))
                for (int k = 0; k <= K; ++k) {
                    complex mean(u(rng), k == 0 ? 0.0 : u(rng));
                    complex a(u(rng), u(rng)), b(u(rng), u(rng)), w(u(rng), u(rng));
                    double shift = u(rng);
                    auto tail = [=](double s) { return a * chi(s - shift) + b * chi(s) * std::tanh(s); };
                    if (k == 0) {
                        a = a.real();
                        b = b.real();
                        w = w.real();
                    }
                    for (int sign : {1, -1}) {
                        if (k == 0 && sign < 0) continue;
                        ModeKey key{c, alpha, {sign * k}};
                        auto cj = [&](complex z) { return sign > 0 ? z : std::conj(z); };
                        f.set_mean(key, cj(mean));
                        f.set_tail_fn(key, [&](double s) { return cj(tail(s)); });
                        if (wedge) f.set_wedge(key, cj(w));
                    }
                }
    return f;
}

} // namespace

TEST(TorusMode, Examples) {
    FourierSeries v(1);
    v.set(kp, complex(0.0, -0.5));  // sin phi
    v.set(km, complex(0.0, 0.5));
    auto u = solve_torus_mode(v, {1.0}, 0.0);
    for (double a : {0.0, 0.7, 2.5}) EXPECT_NEAR(u.evaluate(std::vector<double>{a}), -std::cos(a), 1e-15);

    FourierSeries w(1);
    w.set(kp, 0.5);
    w.set(km, 0.5);
    auto r = solve_torus_mode(w, {1.0}, 1.0);
    for (double a : {0.0, 0.7, 2.5}) {
        std::vector<double> x{a};
        EXPECT_NEAR(r.evaluate(x), 0.5 * (std::sin(a) - std::cos(a)), 1e-15);
        // (D - 1) u - v
        EXPECT_LT(std::abs(r.derivative(0).evaluate(x) - r.evaluate(x) - std::cos(a)), 1e-14);
    }
    EXPECT_TRUE(solve_torus_mode(FourierSeries(1), {1.0}, 0.0).coeffs().empty());
}

TEST(TorusMode, Rejections) {
    FourierSeries v(1);
    v.set(k0, 0.25);
    try {
        solve_torus_mode(v, {1.0}, 0.0);
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("mean"), std::string::npos);
    }
    FourierSeries r(2);
    r.set({1, -1}, 1.0);
    try {
        solve_torus_mode(r, {1.0, 1.0}, 0.0);
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("(1,-1)"), std::string::npos);
    }
}

TEST(Divisors, MatchDiophantineScan) {
    for (double w : {2.0, 0.5 * (1 + std::sqrt(5.0)), std::sqrt(2.0)}) {
        auto d = minimal_torus_divisor({w}, 32);
        auto dio = check_diophantine({w}, 0.0, 32);
        EXPECT_DOUBLE_EQ(d.value, dio.theta);
    }
    std::vector<double> w2{1.0, 0.5 * (1 + std::sqrt(5.0))};
    auto d = minimal_torus_divisor(w2, 8);
    double brute = 1e300;
    for (int a = -8; a <= 8; ++a)
        for (int b = -8; b <= 8; ++b)
            if (a || b) brute = std::min(brute, std::abs(a * w2[0] + b * w2[1]));
    EXPECT_DOUBLE_EQ(d.value, brute);

    // the solver reports the same minimum for the scalar operator
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 0);
    v.add_cos_mean(0, {}, {3}, 1.0);
    auto sol = solve_cylinder(v, scalar_spec(1.0, std::sqrt(2.0)), {.K = 32});
    EXPECT_DOUBLE_EQ(sol.report.min_divisor, check_diophantine({std::sqrt(2.0)}, 0.0, 32).theta);
}

TEST(Grid, SpectralDerivativeAndInterpolation) {
    SGrid g(3.0, 6, 16);
    std::vector<double> f(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) f[i] = std::sin(g.node(i)) * std::exp(-0.1 * g.node(i));
    auto d = g.derivative(f);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double s = g.node(i);
        EXPECT_NEAR(d[i], std::exp(-0.1 * s) * (std::cos(s) - 0.1 * std::sin(s)), 1e-11);
    }
    for (double s : {-2.95, -0.3, 0.01, 2.2}) {
        EXPECT_NEAR(g.interpolate(f, s), std::sin(s) * std::exp(-0.1 * s), 1e-13);
        EXPECT_NEAR(g.interpolate_derivative(f, s), std::exp(-0.1 * s) * (std::cos(s) - 0.1 * std::sin(s)), 1e-11);
    }
}

TEST(Cylinder, ExponentialTail) {
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 0);
    for (const auto& k : {kp, km}) v.set_tail_fn({0, {}, k}, [](double s) { return 0.5 * std::exp(s); });
    auto sol = solve_cylinder(v, scalar_spec(1.0, 1.0));
    EXPECT_LT(sol.report.residual, 1e-10);
    // ansatz u = A e^s: A (1 + i k) = 1/2
    for (int k : {1, -1}) {
        const ModeData* d = sol.u.find({0, {}, {k}});
        ASSERT_NE(d, nullptr);
        EXPECT_EQ(d->mean, complex{});
        for (double s : {-10.0, -1.0, 0.0, 3.0, 14.0}) {
            complex expect = 0.5 * std::exp(s) / complex(1.0, k);
            EXPECT_LT(std::abs(grid->interpolate(d->tail, s) - expect), 1e-12 * std::max(1.0, std::abs(expect)));
        }
    }
}

TEST(Cylinder, ConstantReducesToTorusMode) {
    auto grid = default_grid(0.7);
    CylinderFunction v(grid, 1, 0);
    v.add_cos_mean(0, {}, kp, 1.0);
    auto sol = solve_cylinder(v, scalar_spec(0.7, 2.0));
    FourierSeries tv(1);
    tv.set(kp, 0.5);
    tv.set(km, 0.5);
    auto tu = solve_torus_mode(tv, {2.0}, 0.0);
    for (const auto& k : {kp, km}) {
        const ModeData* d = sol.u.find({0, {}, k});
        ASSERT_NE(d, nullptr);
        EXPECT_NEAR(std::abs(d->mean - tu.coeff(k)), 0.0, 1e-16);
        EXPECT_TRUE(d->tail.empty());
    }
    EXPECT_LT(sol.report.residual, 1e-15);
}

TEST(Cylinder, BoundedMeanRejected) {
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 0);
    v.set_mean({0, {}, k0}, 0.3);
    EXPECT_THROW(solve_cylinder(v, scalar_spec(1.0, 2.0)), PreconditionError);
    CylinderFunction bad(grid, 1, 0);
    bad.set_tail_fn({0, {}, k0}, [](double s) { return std::tanh(s); });
    EXPECT_THROW(solve_cylinder(bad, scalar_spec(1.0, 2.0)), PreconditionError);
}

TEST(Cylinder, WedgeInverseChi) {
    for (double lam : {1.0, 0.8}) {
        auto grid = default_grid(lam);
        CylinderFunction v(grid, 1, 0, 1, true);
        v.set_wedge({0, {}, k0}, 1.0);
        auto sol = solve_cylinder(v, scalar_spec(lam, 2.0));
        EXPECT_LT(sol.report.residual, 1e-10);
        EXPECT_LT(std::abs(sol.constant({0, {}, k0})), 1e-14);
        // lambda0 du/ds = cosh(s)/2 has the solution sinh(s)/(2 lambda0) up to constants
        std::vector<double> phi{0.3};
        for (double s : {-12.0, -2.0, 0.0, 1.5, 10.0}) {
            double expect = std::sinh(s) / (2 * lam);
            EXPECT_NEAR(sol.u.value(phi, s).real(), expect, 1e-12 * std::max(1.0, std::abs(expect)));
        }
        // doubled resolution agrees
        auto fine = std::make_shared<SGrid>(SGrid::for_exponent(lam, 15.0, 1.0, 40));
        CylinderFunction vf(fine, 1, 0, 1, true);
        vf.set_wedge({0, {}, k0}, 1.0);
        auto solf = solve_cylinder(vf, scalar_spec(lam, 2.0));
        for (double s : {-7.3, 0.4, 6.1})
            EXPECT_NEAR(solf.u.value(phi, s).real() / sol.u.value(phi, s).real(), 1.0, 1e-12);
    }
}

TEST(Cylinder, WedgeConstantIsMeanOfRemainder) {
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 0, 1, true);
    v.set_wedge({0, {}, k0}, 0.5);
    v.set_mean({0, {}, k0}, 0.25);
    v.set_wedge({0, {}, kp}, complex(0.1, 0.2));
    v.set_wedge({0, {}, km}, complex(0.1, -0.2));
    v.set_tail_fn({0, {}, kp}, [](double s) { return complex(0.3, -0.1) * chi(s); });
    v.set_tail_fn({0, {}, km}, [](double s) { return complex(0.3, 0.1) * chi(s); });
    auto sol = solve_cylinder(v, scalar_spec(1.0, 2.0));
    EXPECT_NEAR(sol.constant({0, {}, k0}).real(), 0.25, 1e-15);
    EXPECT_LT(sol.report.residual, 1e-10);
}

TEST(Extended, MonomialTimesTorusMode) {
    const double l1 = std::sqrt(3.0) / 2;
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 1);
    v.add_cos_mean(0, {1}, kp, 1.0);
    auto sol = solve_extended(v, one_z_spec(l1));
    FourierSeries tv(1);
    tv.set(kp, 0.5);
    tv.set(km, 0.5);
    auto tu = solve_torus_mode(tv, {2.0}, -l1);
    for (const auto& k : {kp, km}) EXPECT_LT(std::abs(sol.u.find({0, {1}, k})->mean - tu.coeff(k)), 1e-16);
    EXPECT_LT(sol.report.residual, 1e-15);
    EXPECT_EQ(sol.u.entries().size(), 2u);
}

TEST(Extended, ZFreeDelegates) {
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 1);
    v.set_tail_fn({0, {0}, kp}, [](double s) { return chi(s); });
    v.set_tail_fn({0, {0}, km}, [](double s) { return chi(s); });
    auto a = solve_extended(v, one_z_spec(0.45));
    CylinderFunction w(grid, 1, 0);
    w.set_tail_fn({0, {}, kp}, [](double s) { return chi(s); });
    w.set_tail_fn({0, {}, km}, [](double s) { return chi(s); });
    auto b = solve_cylinder(w, scalar_spec(1.0, 2.0));
    EXPECT_EQ(a.u.find({0, {0}, kp})->tail, b.u.find({0, {}, kp})->tail);
}

TEST(Extended, ResonanceRejectedWithWitness) {
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 1);
    v.add_cos_mean(0, {1}, kp, 1.0);
    try {
        solve_extended(v, one_z_spec(1.0));
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("k = (1)"), std::string::npos) << e.what();
    }
    // two z coordinates, lambda0 = lambda1 + lambda2
    OperatorSpec s = scalar_spec(1.0, 2.0);
    s.Lambda0 = Eigen::Vector2d(0.6, 0.4).asDiagonal();
    CylinderFunction w(grid, 1, 2);
    w.add_cos_mean(0, {1, 0}, kp, 1.0);
    try {
        solve_extended(w, s);
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("k = (1,1)"), std::string::npos) << e.what();
    }
}

TEST(Extended, NonDiagonalLambda0Rejected) {
    auto grid = default_grid();
    OperatorSpec s = scalar_spec(1.0, 2.0);
    s.Lambda0 = Eigen::Matrix2d{{0.5, 0.1}, {0.0, 0.3}};
    CylinderFunction v(grid, 1, 2);
    v.add_cos_mean(0, {1, 0}, kp, 1.0);
    EXPECT_THROW(solve_extended(v, s), PreconditionError);
}

TEST(Extended, SpectrumOutsideIntervalRejected) {
    auto grid = default_grid();
    OperatorSpec s = one_z_spec(0.45);
    s.Lambda1 = [](double x) { return Eigen::MatrixXd::Constant(1, 1, 0.7 * chi(x)); };
    CylinderFunction v(grid, 1, 1);
    v.add_cos_mean(0, {1}, kp, 1.0);
    EXPECT_THROW(solve_extended(v, s), PreconditionError);
}

TEST(Extended, CoupledVariantsCertify) {
    auto grid = default_grid();
    OperatorSpec s = scalar_spec(1.0, 2.0);
    s.Lambda0 = Eigen::Vector2d(0.45, 0.3).asDiagonal();
    s.Lambda1 = [](double x) {
        double c = chi(x);
        return Eigen::Matrix2d{{0.05 * c, 0.03 * c}, {-0.02 * c, 0.04 * c * std::tanh(x)}}.eval();
    };
    std::mt19937_64 rng(7);
    for (auto t : {TransposeTerm::none, TransposeTerm::minus, TransposeTerm::plus}) {
        int comps = t == TransposeTerm::none ? 1 : 2;
        auto v = random_function(rng, grid, 2, comps, 2, 2, false);
        auto sol = solve_extended(v, s, {.transpose = t, .absorb_resonant_means = true});
        EXPECT_LT(sol.report.residual, 1e-10) << to_string(t);
        auto lu = apply_operator(sol.u, s, t);
        for (const auto& [key, c] : sol.constants) lu.at(key).mean += c;
        std::vector<double> phi{0.9};
        std::vector<complex> z{0.3, -0.2};
        for (double x : {-9.0, 0.0, 4.0})
            for (int c = 0; c < comps; ++c)
                EXPECT_NEAR(std::abs(lu.value(c, phi, x, z) - v.value(c, phi, x, z)), 0.0, 1e-9);
    }
}

TEST(Extended, WedgeWithCoupling) {
    auto grid = default_grid();
    OperatorSpec s = one_z_spec(0.4);
    s.Lambda1 = [](double x) { return Eigen::MatrixXd::Constant(1, 1, 0.1 * chi(x)); };
    std::mt19937_64 rng(8);
    auto v = random_function(rng, grid, 1, 1, 3, 2, true);
    v.set_mean({0, {0}, k0}, 0.0);
    auto sol = solve_extended(v, s);
    EXPECT_LT(sol.report.residual, 1e-10);
    EXPECT_LE(sol.constants.size(), 1u);
}

TEST(Extended, Linearity) {
    auto grid = default_grid();
    OperatorSpec s = one_z_spec(0.6);
    s.Lambda1 = [](double x) { return Eigen::MatrixXd::Constant(1, 1, 0.1 * chi(x)); };
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        auto v1 = random_function(rng, grid, 1, 1, 3, 2, false);
        auto v2 = random_function(rng, grid, 1, 1, 3, 2, false);
        for (auto* v : {&v1, &v2}) v->set_mean({0, {0}, k0}, 0.0);
        complex a(0.7, 0.0), b(-1.3, 0.0);
        auto u1 = solve_extended(v1, s).u;
        auto u2 = solve_extended(v2, s).u;
        CylinderFunction comb = a * v1;
        comb.axpy(b, v2);
        auto u = solve_extended(comb, s).u;
        CylinderFunction diff = u;
        diff.axpy(-a, u1);
        diff.axpy(-b, u2);
        EXPECT_LT(diff.norm() / std::max(1.0, u.norm()), 1e-12);
    }
}

TEST(Extended, NormRatioBound) {
    auto grid = default_grid();
    OperatorSpec s = one_z_spec(std::sqrt(3.0) / 2);
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        auto v = random_function(rng, grid, 1, 1, 4, 2, false);
        v.set_mean({0, {0}, k0}, 0.0);
        auto sol = solve_extended(v, s);
        EXPECT_LE(sol.report.u_norm / sol.report.v_norm, sol.report.bound_factor);
        EXPECT_LT(sol.report.residual, 1e-10);
    }
}

TEST(Extended, SmoothingWeight) {
    auto grid = default_grid();
    CylinderFunction v(grid, 1, 0);
    v.add_cos_mean(0, {}, {3}, 1.0);
    auto w = v.smoothed(0.5);
    EXPECT_NEAR(w.find({0, {}, {3}})->mean.real(), 0.5 * std::exp(-1.5), 1e-16);
}

TEST(Step, CosineForcing) {
    for (double w : {2.0, 0.7}) {
        auto grid = default_grid();
        OperatorSpec s = one_z_spec(std::sqrt(3.0) / 2, 1.0, w);
        auto in = StepForcing::zero(grid, 1, 1);
        in.f.add_cos_mean(0, {0}, kp, 1.0);
        QuadraticPart q{Eigen::MatrixXd::Identity(3, 3)};
        auto sol = homological_step(s, q, in);
        std::vector<double> phi(1);
        std::vector<complex> z{0.0};
        for (double a : {0.0, 0.4, 2.0, 5.0}) {
            phi[0] = a;
            EXPECT_NEAR(sol.S0hat.value(0, phi, 0.0, z).real(), -std::sin(a) / w, 1e-10);
        }
        EXPECT_EQ(sol.c_hat, 0.0);
        EXPECT_NEAR(sol.xi_hat[0], 0.0, 1e-16);
        EXPECT_LT(sol.max_residual(), 1e-10);
        EXPECT_EQ(sol.residuals.size(), 4u);
    }
}

TEST(Step, ZeroForcing) {
    auto grid = default_grid();
    OperatorSpec s = one_z_spec(0.45);
    auto sol = homological_step(s, {Eigen::MatrixXd::Identity(3, 3)}, StepForcing::zero(grid, 1, 1));
    EXPECT_TRUE(sol.S0hat.empty());
    EXPECT_TRUE(sol.beta_hat.empty());
    EXPECT_TRUE(sol.b_hat.empty());
    EXPECT_TRUE(sol.flat_hat->empty());
    EXPECT_EQ(sol.xi_hat[0], 0.0);
    EXPECT_EQ(sol.c_hat, 0.0);
    EXPECT_EQ(sol.lambda0_hat, 0.0);
    EXPECT_EQ(sol.Lambda0_hat.norm(), 0.0);
}

TEST(Step, ChiCosineForcing) {
    auto grid = default_grid();
    OperatorSpec s = one_z_spec(0.45);
    auto in = StepForcing::zero(grid, 1, 1);
    for (const auto& k : {kp, km}) in.f.set_tail_fn({0, {0}, k}, [](double x) { return 0.5 * chi(x); });
    auto sol = homological_step(s, {Eigen::MatrixXd::Identity(3, 3)}, in);
    EXPECT_LT(sol.residuals.at("S0"), 1e-9);
    EXPECT_LT(sol.max_residual(), 1e-9);
    // per mode: lambda0 u' + i k w u = -chi/2, compared with direct quadrature at s = 0
    const ModeData* d = sol.S0hat.find({0, {0}, kp});
    ASSERT_NE(d, nullptr);
    complex integral{};
    const int N = 200000;
    const double a = -40.0, h = -a / N;
    for (int i = 0; i <= N; ++i) {
        double t = a + i * h;
        double wgt = (i == 0 || i == N) ? 0.5 : 1.0;
        integral += wgt * h * std::exp(complex(0.0, 2.0 * t)) * (-0.5 * chi(t));
    }
    EXPECT_NEAR(std::abs(grid->interpolate(d->tail, 0.0) - integral), 0.0, 1e-8);
}

TEST(Step, GeneralForcingExtractsConstants) {
    auto grid = default_grid();
    OperatorSpec s = scalar_spec(1.0, 2.0);
    s.Lambda0 = Eigen::MatrixXd::Constant(1, 1, 0.45);
    s.Lambda1 = [](double x) { return Eigen::MatrixXd::Constant(1, 1, 0.1 * chi(x)); };
    s.Lambda1_prime = [](double x) { return Eigen::MatrixXd::Constant(1, 1, -0.1 * chi(x) * std::tanh(x)); };
    std::mt19937_64 rng(11);
    auto in = StepForcing::zero(grid, 1, 1);
    in.f = random_function(rng, grid, 1, 1, 2, 2, false);
    in.g_iota = random_function(rng, grid, 1, 1, 2, 2, false);
    in.g_e = random_function(rng, grid, 1, 1, 2, 2, true);
    in.g_flat = random_function(rng, grid, 1, 1, 2, 2, false);
    Eigen::Matrix3d Q{{1.0, 0.2, 0.1}, {0.2, 0.5, 0.0}, {0.1, 0.0, 0.8}};
    auto sol = homological_step(s, {Q}, in);
    for (const auto& [name, r] : sol.residuals) EXPECT_LT(r, 1e-10) << name;
    EXPECT_NE(sol.xi_hat[0], 0.0);
    EXPECT_NE(sol.lambda0_hat, 0.0);
    EXPECT_NE(sol.Lambda0_hat(0, 0), 0.0);
    EXPECT_NEAR(sol.c_hat, in.f.average().real() + 2.0 * sol.xi_hat[0], 1e-15);
    EXPECT_GE(sol.diagonalization_condition, 1.0);

    // the spectral and closed-form derivatives of Lambda1 agree
    OperatorSpec s2 = s;
    s2.Lambda1_prime = nullptr;
    auto sol2 = homological_step(s2, {Q}, in);
    EXPECT_NEAR(sol2.Lambda0_hat(0, 0), sol.Lambda0_hat(0, 0), 1e-10);
}

TEST(Step, SingularQuadraticPartRejected) {
    auto grid = default_grid();
    auto in = StepForcing::zero(grid, 1, 1);
    in.f.add_cos_mean(0, {0}, kp, 1.0);
    Eigen::Matrix3d Q = Eigen::Matrix3d::Identity();
    Q(0, 0) = 0.0;
    try {
        homological_step(one_z_spec(0.45), {Q}, in);
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("stage xi"), std::string::npos);
    }
}
