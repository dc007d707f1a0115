#include <gtest/gtest.h>

#include <sepsplit/dynamics.hpp>

using namespace sepsplit;

namespace {

PhaseState on_separatrix(const ModelParams& p, double t0) {
    const double lambda0 = characteristic_exponents(p.arms)[0];
    PhaseState s = PhaseState::zero(p.n(), p.m());
    auto pt = separatrix_orbit(t0, lambda0);
    s.x = pt.x;
    s.y = p.arms[0] * p.arms[0] * lambda0 * pt.y;
    return s;
}

const std::vector<double> kSections{pi / 2, pi, 3 * pi / 2};

} // namespace

TEST(Integrate, TracksClosedFormSeparatrix) {
    ModelParams p = splitting_example(0.0);
    // start at t = -5 and integrate 10 units of time
    auto tr = integrate(p, on_separatrix(p, -5.0), {}, 10.0, 101);
    double err = 0.0;
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
        double exact = 4.0 * std::atan(std::exp(tr.t[i] - 5.0));
        err = std::max(err, std::abs(tr.states[i].x - exact));
    }
    EXPECT_LT(err, 1e-6);
}

TEST(Integrate, TorusRotatesRigidly) {
    ModelParams p = splitting_example(1e-3);
    PhaseState s = PhaseState::zero(1, 1);
    s.phi[0] = 0.3;
    for (Scheme sc : {Scheme::leapfrog, Scheme::yoshida4, Scheme::implicit_midpoint}) {
        IntegratorConfig cfg;
        cfg.scheme = sc;
        auto tr = integrate(p, s, cfg, 5.0, 11);
        for (std::size_t i = 0; i < tr.t.size(); ++i) {
            EXPECT_NEAR(tr.states[i].phi[0], 0.3 + 2.0 * tr.t[i], 1e-11) << to_string(sc);
            EXPECT_EQ(tr.states[i].x, 0.0);
            EXPECT_EQ(tr.states[i].iota[0], 0.0);
        }
    }
}

TEST(Integrate, EnergyDrift) {
    ModelParams p = splitting_example(1e-3);
    PhaseState s = on_separatrix(p, -3.0);
    s.phi[0] = 1.0;
    s.z[0] = 0.01;
    auto tr = integrate(p, s, {}, 100.0, 2);
    EXPECT_LT(tr.max_energy_drift, 1e-9);
}

TEST(Integrate, LeapfrogDriftIsSecondOrder) {
    ModelParams p = splitting_example(1e-3);
    PhaseState s = on_separatrix(p, 0.0);
    s.phi[0] = 0.5;
    IntegratorConfig cfg;
    cfg.scheme = Scheme::leapfrog;
    cfg.h = 2e-2;
    double d1 = integrate(p, s, cfg, 10.0, 2).max_energy_drift;
    cfg.h = 1e-2;
    double d2 = integrate(p, s, cfg, 10.0, 2).max_energy_drift;
    EXPECT_NEAR(d1 / d2, 4.0, 0.4);
}

TEST(Integrate, ImplicitMidpointAgreesWithSplitting) {
    ModelParams p = splitting_example(1e-2);
    PhaseState s = on_separatrix(p, -2.0);
    IntegratorConfig mid;
    mid.scheme = Scheme::implicit_midpoint;
    mid.h = 1e-3;
    auto a = integrate(p, s, mid, 4.0, 2).states.back();
    auto b = integrate(p, s, {}, 4.0, 2).states.back();
    EXPECT_NEAR(a.x, b.x, 1e-6);
    EXPECT_NEAR(a.iota[0], b.iota[0], 1e-8);
}

TEST(Integrate, ImplicitSolverFailureNamesTime) {
    ModelParams p = splitting_example(0.0);
    IntegratorConfig cfg;
    cfg.scheme = Scheme::implicit_midpoint;
    cfg.h = 3.0;
    cfg.max_iter = 5;
    try {
        (void)integrate(p, on_separatrix(p, 0.0), cfg, 30.0, 2);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("t = "), std::string::npos);
    }
}

TEST(Shoot, UnperturbedCrossingIsOnCylinder) {
    ModelParams p = splitting_example(0.0);
    for (auto br : {ManifoldBranch::unstable, ManifoldBranch::stable})
        for (double x : kSections) {
            const double phi0[] = {1.0};
            auto rec = manifold_shoot(p, br, phi0, 1e-7, x);
            EXPECT_NEAR(rec.state.x, x, 1e-12);
            EXPECT_EQ(rec.state.iota[0], 0.0);
            EXPECT_EQ(rec.state.z[0], 0.0);
            EXPECT_EQ(rec.state.zbar[0], 0.0);
            EXPECT_NEAR(rec.state.y, psi(x), 1e-7);
            EXPECT_NEAR(wrap_pm_pi(rec.state.phi[0] - 1.0), 0.0, 1e-12);
        }
}

TEST(Shoot, DeviationIsFirstOrderInMu) {
    const double phi0[] = {0.7};
    auto dev = [&](double mu) { return manifold_shoot(splitting_example(mu), ManifoldBranch::unstable, phi0, 1e-7, pi).state.iota[0]; };
    double a = dev(1e-3), b = dev(5e-4);
    EXPECT_GT(std::abs(a), 1e-5);
    EXPECT_NEAR(a / b, 2.0, 0.2);
}

TEST(Shoot, InsensitiveToSeedDistance) {
    ModelParams p = splitting_example(1e-3);
    const double phi0[] = {2.0};
    for (auto br : {ManifoldBranch::unstable, ManifoldBranch::stable}) {
        auto a = manifold_shoot(p, br, phi0, 1e-7, pi).state;
        auto b = manifold_shoot(p, br, phi0, 5e-8, pi).state;
        EXPECT_LT(std::abs(a.iota[0] - b.iota[0]), 1e-6);
        EXPECT_LT(std::abs(a.y - b.y), 1e-6);
    }
}

TEST(Shoot, SectionsAreReportedInRequestOrder) {
    ModelParams p = splitting_example(1e-3);
    const double seed[] = {0.0};
    const double secs[] = {3 * pi / 2, pi / 2, pi};
    auto shot = shoot_sections(p, ManifoldBranch::stable, seed, 1e-7, secs, {});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(shot.crossings[i].state.x, secs[i], 1e-12);
    EXPECT_LT(shot.crossings[0].t, 0.0);
    EXPECT_GT(shot.crossings[0].t, shot.crossings[1].t);
}

TEST(Shoot, Preconditions) {
    ModelParams p = splitting_example(1e-3);
    p.perturbation = PerturbationSpec(1, 1).add_cos({1}, {0, 0}, 1.0);
    const double phi0[] = {0.0};
    EXPECT_THROW((void)manifold_shoot(p, ManifoldBranch::unstable, phi0, 1e-7, pi), PreconditionError);
    IntegratorConfig cfg;
    cfg.max_time = 5.0;
    EXPECT_THROW((void)manifold_shoot(splitting_example(0.0), ManifoldBranch::unstable, phi0, 1e-7, pi, cfg),
                 NumericalError);
    EXPECT_THROW((void)manifold_shoot(splitting_example(0.0), ManifoldBranch::unstable, phi0, 1e-7, 0.0),
                 PreconditionError);
}

TEST(Splitting, CoincidentManifoldsWithoutPerturbation) {
    SplittingOptions opt;
    opt.seeds = 16;
    opt.alpha_points = 16;
    auto m = measure_splitting(splitting_example(0.0), kSections, opt);
    for (const auto& s : m.sections)
        for (std::size_t g = 0; g < s.delta_iota.size(); ++g) {
            EXPECT_LT(std::abs(s.delta_iota[g]), 2e-7);
            EXPECT_LT(std::abs(s.delta_y[g]), 2e-7);
        }
}

TEST(Splitting, MelnikovAgreementCollapseAndZeros) {
    auto a = measure_splitting(splitting_example(1e-3), kSections);
    auto b = measure_splitting(splitting_example(5e-4), kSections);
    // amplitude of the prediction from the closed form
    const double amp = pendulum_melnikov_amplitude(2.0);
    EXPECT_NEAR(a.sections[1].predicted[16], 1e-3 * amp, 1e-12);  // alpha = pi/2
    const double ratio = a.melnikov_error / b.melnikov_error;
    EXPECT_GE(ratio, 3.2);
    EXPECT_LE(ratio, 4.8);
    EXPECT_LE(a.collapse_residual, 10.0 * a.melnikov_error);
    EXPECT_LT(a.melnikov_error, 1e-2 * 1e-3 * amp);
    for (const auto& s : a.sections) {
        EXPECT_EQ(s.zero_count, 2);
        EXPECT_TRUE(s.zeros_simple);
        // first-order energy balance omega Delta iota + y Delta y = O(mu^2)
        EXPECT_LT(s.energy_relation, 1e-5);
    }
    EXPECT_LT(a.max_transverse, 1e-6);
}
