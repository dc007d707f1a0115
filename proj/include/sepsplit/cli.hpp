#pragma once

// Batch front end: one experiment per run, artifacts plus a manifest in the output directory.

#include <chrono>
#include <cstdlib>
#include <random>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <openssl/opensslv.h>

#include "config.hpp"
#include "io.hpp"

namespace sepsplit {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kDefaultOutDir = "sepsplit_out";

struct RunOptions {
    std::string out_dir;               // overrides the config and the environment
    std::optional<unsigned> threads;   // overrides numeric.threads
    std::uint64_t seed = 0;            // consumed by the random homological battery
};

struct RunResult {
    std::filesystem::path out_dir;
    json summary;  // the main JSON artifact of the command
    json manifest;
};

inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return 2;
        case ErrorKind::precondition: return 3;
        case ErrorKind::numerical: return 4;
        case ErrorKind::io: return 5;
    }
    return 1;
}

inline std::string to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return "config";
        case ErrorKind::precondition: return "precondition";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::io: return "io";
    }
    return "internal";
}

/// --out, then output.dir from the config, then $SEPSPLIT_OUT, then ./sepsplit_out.
inline std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg, const RunOptions& opt) {
    if (!opt.out_dir.empty()) return opt.out_dir;
    if (!cfg.output.dir.empty()) return cfg.output.dir;
    if (const char* env = std::getenv("SEPSPLIT_OUT"); env && *env) return env;
    return kDefaultOutDir;
}

namespace detail {

inline json lattice_json(const Lattice& k) { return json(k); }

inline void add_forcing(CylinderFunction& f, const std::vector<ForcingTerm>& terms) {
    for (const auto& t : terms) {
        const bool zero = std::all_of(t.k.begin(), t.k.end(), [](int v) { return v == 0; });
        std::vector<std::pair<Lattice, complex>> parts;
        if (zero)
            parts.push_back({t.k, complex(t.cos, 0.0)});
        else {
            parts.push_back({t.k, complex(t.cos, -t.sin) * 0.5});
            parts.push_back({negate(t.k), complex(t.cos, t.sin) * 0.5});
        }
        for (const auto& [k, a] : parts) {
            ModeKey key{t.component, t.alpha, k};
            auto& d = f.at(key);
            if (t.profile == "const") {
                d.mean += a;
            } else if (t.profile == "chi") {
                if (d.tail.empty()) d.tail.assign(f.grid().size(), complex{});
                for (std::size_t i = 0; i < d.tail.size(); ++i) d.tail[i] += a * chi(f.grid().node(i));
            } else {
                d.wedge += a;
                f.set_wedge_class(true);
            }
        }
    }
}

inline OperatorSpec model_operator(const ExperimentConfig& cfg) {
    const auto lam = characteristic_exponents(cfg.params.arms);
    OperatorSpec s;
    s.lambda0 = lam[0];
    s.omega = cfg.params.omega;
    const int m = cfg.params.m();
    s.Lambda0 = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) s.Lambda0(i, i) = lam[static_cast<std::size_t>(i + 1)];
    return s;
}

inline json matrix_json(const Eigen::MatrixXd& A) {
    json a = json::array();
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
        a.push_back(row);
    }
    return a;
}

inline json run_exponents(const ExperimentConfig& cfg, ArtifactWriter& out) {
    const auto lam = characteristic_exponents(cfg.params.arms);
    Eigen::VectorXcd ev = linearization_eigenvalues(cfg.params.arms);
    std::vector<double> positive;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i).real() > 0.0) positive.push_back(ev(i).real());
    std::sort(positive.begin(), positive.end(), std::greater<>());
    double mismatch = 0.0;
    std::vector<double> sorted = lam;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    for (std::size_t i = 0; i < std::min(sorted.size(), positive.size()); ++i)
        mismatch = std::max(mismatch, std::abs(sorted[i] - positive[i]));
    json j = {{"arms", cfg.params.arms},
              {"lambdas", lam},
              {"linearization_eigenvalues", positive},
              {"max_mismatch", mismatch}};
    out.write_json("exponents.json", j);
    return j;
}

inline json run_nonres(const ExperimentConfig& cfg, ArtifactWriter& out) {
    const auto lam = characteristic_exponents(cfg.params.arms);
    MarginRule rule{cfg.numeric.nonres_fraction, cfg.numeric.nonres_absolute};
    auto r = check_nonresonance(lam, rule);
    json j = {{"lambdas", lam},
              {"dominance_ok", r.dominance_ok},
              {"nonres_margin", r.nonres_margin},
              {"nonres_threshold", r.nonres_threshold},
              {"nonres_ok", r.nonres_ok},
              {"witness_k", r.witness_k}};
    out.write_json("nonres.json", j);
    return j;
}

inline json run_dioph(const ExperimentConfig& cfg, ArtifactWriter& out) {
    auto r = check_diophantine(cfg.params.omega, cfg.numeric.tau, cfg.numeric.dioph_K);
    json j = {{"omega", cfg.params.omega},
              {"tau", cfg.numeric.tau},
              {"K", cfg.numeric.dioph_K},
              {"theta", r.theta},
              {"witness", r.witness}};
    out.write_json("dioph.json", j);
    return j;
}

inline json run_chart(const ExperimentConfig& cfg, ArtifactWriter& out) {
    const int N = cfg.numeric.chart_points;
    const double S = cfg.numeric.chart_s_max;
    CsvTable t({"s", "x", "chi", "psi_x", "w"});
    double roundtrip = 0.0, lower = std::numeric_limits<double>::infinity(), upper = 0.0;
    for (int i = 0; i < N; ++i) {
        double s = -S + 2.0 * S * i / (N - 1);
        double x = x_of_s(s);
        double c = chi(s);
        double scaled = c * std::exp(std::abs(s));
        lower = std::min(lower, scaled);
        upper = std::max(upper, scaled);
        t.add({s, x, c, psi(x), chart_w(s)});
        // x -> s -> x on a uniform grid in (0, 2pi)
        double xr = two_pi * (i + 0.5) / N;
        roundtrip = std::max(roundtrip, std::abs(x_of_s(s_of_x(xr)) - xr));
    }
    json j = {{"s_at_pi", s_of_x(pi)},
              {"roundtrip_x_max_error", roundtrip},
              {"chi_exp_abs_s_min", lower},
              {"chi_exp_abs_s_max", upper},
              {"chi_bounds_ok", lower >= 2.0 && upper <= 4.0},
              {"points", N},
              {"s_max", S}};
    if (cfg.output.csv) out.write_csv("chart.csv", t);
    out.write_json("chart.json", j);
    return j;
}

inline std::vector<TransverseDirectionField> riccati_fields(const ExperimentConfig& cfg) {
    require(cfg.params.m() >= 1, "riccati: needs at least one transverse arm (m >= 1)");
    RiccatiOptions ro;
    ro.tol = cfg.numeric.riccati_tol;
    const auto grid = uniform_grid(cfg.numeric.riccati_delta, two_pi - cfg.numeric.riccati_delta,
                                   static_cast<std::size_t>(cfg.numeric.riccati_points));
    std::vector<TransverseDirectionField> fields(static_cast<std::size_t>(cfg.params.m()));
    parallel_for(fields.size(), cfg.numeric.threads, [&](std::size_t a) {
        fields[a] = riccati_direction(TransverseMode::of_arms(cfg.params.arms, a + 1), grid, ro);
    });
    return fields;
}

inline json run_riccati(const ExperimentConfig& cfg, ArtifactWriter& out) {
    auto fields = riccati_fields(cfg);
    json dirs = json::array();
    for (std::size_t a = 0; a < fields.size(); ++a) {
        const auto& f = fields[a];
        auto ru = tilde_lambda_residual(f, false);
        auto rs = tilde_lambda_residual(f, true);
        auto [lo, hi] = std::minmax_element(f.lambda_u.begin(), f.lambda_u.end());
        dirs.push_back({{"direction", a + 1},
                        {"arm", f.mode.arm},
                        {"residual_sup_unstable", ru.sup},
                        {"residual_argmax_unstable", ru.argmax_x},
                        {"residual_sup_stable", rs.sup},
                        {"lambda_u_min", *lo},
                        {"lambda_u_max", *hi},
                        {"invariant_interval", {f.mode.slope_min(), f.mode.slope_max()}}});
        if (cfg.output.csv) {
            CsvTable t({"x", "lambda_u", "lambda_s", "residual_u"});
            for (std::size_t i = 0; i < f.grid.size(); ++i) t.add({f.grid[i], f.lambda_u[i], f.lambda_s[i], ru.pointwise[i]});
            out.write_csv("riccati_" + std::to_string(a + 1) + ".csv", t);
        }
    }
    json j = {{"delta", cfg.numeric.riccati_delta}, {"points", cfg.numeric.riccati_points}, {"directions", dirs}};
    out.write_json("riccati.json", j);
    return j;
}

inline json run_transversality(const ExperimentConfig& cfg, ArtifactWriter& out) {
    auto fields = riccati_fields(cfg);
    json dirs = json::array();
    double overall = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < fields.size(); ++a) {
        auto r = transversality_angle(fields[a]);
        overall = std::min(overall, r.min_angle);
        dirs.push_back({{"direction", a + 1}, {"min_angle", r.min_angle}, {"argmin_x", r.argmin_x}});
    }
    json j = {{"min_angle", overall}, {"directions", dirs}};
    out.write_json("transversality.json", j);
    return j;
}

inline QuadratureOptions quadrature(const ExperimentConfig& cfg) {
    QuadratureOptions q;
    q.T_quad = cfg.numeric.T_quad;
    q.tol = cfg.numeric.quad_tol;
    q.lambda0 = characteristic_exponents(cfg.params.arms)[0];
    return q;
}

inline json coefficients_json(const FourierSeries& s) {
    json a = json::array();
    for (const auto& [k, c] : s.coeffs()) a.push_back({{"k", k}, {"re", c.real()}, {"im", c.imag()}});
    return a;
}

inline json run_melnikov(const ExperimentConfig& cfg, ArtifactWriter& out) {
    const PerturbationSpec v0 = cfg.params.perturbation.restricted_to_pendulum();
    auto grid = torus_grid(cfg.params.n(), cfg.params.n() == 1 ? cfg.numeric.melnikov_grid : std::min(cfg.numeric.melnikov_grid, 32));
    auto r = melnikov_function(v0, cfg.params.omega, grid, quadrature(cfg), cfg.numeric.threads);
    double sup = 0.0;
    for (double v : r.values) sup = std::max(sup, std::abs(v));
    if (cfg.output.csv) {
        std::vector<std::string> cols;
        for (int i = 0; i < cfg.params.n(); ++i) cols.push_back("alpha_" + std::to_string(i + 1));
        cols.insert(cols.end(), {"M_series", "M_direct"});
        CsvTable t(cols);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            auto row = grid[i];
            row.push_back(r.series.evaluate(grid[i]));
            row.push_back(r.values[i]);
            t.add(row);
        }
        out.write_csv("melnikov.csv", t);
    }
    json crit = json::array();
    for (const auto& c : critical_points(r.series))
        crit.push_back({{"alpha", c.alpha}, {"value", c.value}, {"index", c.index}});
    json j = {{"omega", cfg.params.omega},
              {"T_quad", r.T_quad},
              {"tail_bound", r.tail_bound},
              {"reconstruction_error", r.reconstruction_error},
              {"sup_abs", sup},
              {"coefficients", coefficients_json(r.series)},
              {"critical_points", crit}};
    out.write_json("melnikov.json", j);
    return j;
}

inline json run_decay(const ExperimentConfig& cfg, ArtifactWriter& out) {
    const PerturbationSpec v0 = cfg.params.perturbation.restricted_to_pendulum();
    auto series = melnikov_coefficients(v0, cfg.params.omega, quadrature(cfg), cfg.numeric.threads);
    auto fit = melnikov_fourier_decay(series, cfg.params.omega, cfg.numeric.decay_sigma_ref);
    if (cfg.output.csv) {
        std::vector<std::string> cols;
        for (int i = 0; i < cfg.params.n(); ++i) cols.push_back("k_" + std::to_string(i + 1));
        cols.insert(cols.end(), {"k_dot_omega", "abs_coefficient"});
        CsvTable t(cols);
        for (const auto& [k, c] : series.coeffs()) {
            std::vector<double> row(k.begin(), k.end());
            row.push_back(dot(k, cfg.params.omega));
            row.push_back(std::abs(c));
            t.add(row);
        }
        out.write_csv("decay.csv", t);
    }
    json j = {{"rho_hat", fit.rho_hat},
              {"sigma_hat", fit.sigma_hat},
              {"sigma_fixed", fit.sigma_fixed},
              {"C_hat", fit.C_hat},
              {"prefactor_power", fit.prefactor_power},
              {"max_violation", fit.max_violation},
              {"modes_used", fit.modes_used},
              {"rho_reference", 0.5 * pi},
              {"envelope_constant", decay_envelope_constant(series, cfg.params.omega, cfg.analyticity.rho,
                                                            cfg.analyticity.sigma)}};
    out.write_json("decay.json", j);
    return j;
}

inline json run_homological(const ExperimentConfig& cfg, ArtifactWriter& out, std::uint64_t seed) {
    const auto& nc = cfg.numeric;
    const int n = cfg.params.n(), m = cfg.params.m();
    OperatorSpec spec = model_operator(cfg);
    auto grid = std::make_shared<const SGrid>(SGrid::for_exponent(spec.lambda0, nc.T_num, nc.panel_width, nc.order));
    StepForcing in = StepForcing::zero(grid, n, m);
    add_forcing(in.f, nc.f);
    add_forcing(in.g_iota, nc.g_iota);
    add_forcing(in.g_e, nc.g_e);
    in.g_e.set_wedge_class(true);
    if (in.g_flat) add_forcing(*in.g_flat, nc.g_flat);
    QuadraticPart quad{nc.quadratic ? *nc.quadratic : Eigen::MatrixXd::Identity(n + 1 + m, n + 1 + m)};
    StepOptions so{nc.D, nc.K, nc.threads, nc.residual_tol};
    auto sol = homological_step(spec, quad, in, so);

    out.write_json("S0hat.json", to_json(sol.S0hat));
    out.write_json("beta_hat.json", to_json(sol.beta_hat));
    out.write_json("b_hat.json", to_json(sol.b_hat));
    if (sol.flat_hat) out.write_json("flat_hat.json", to_json(*sol.flat_hat));
    json j = {{"residuals", sol.residuals},
              {"max_residual", sol.max_residual()},
              {"xi_hat", sol.xi_hat},
              {"c_hat", sol.c_hat},
              {"lambda0_hat", sol.lambda0_hat},
              {"Lambda0_hat", matrix_json(sol.Lambda0_hat)},
              {"min_divisor", sol.min_divisor},
              {"diagonalization_condition", sol.diagonalization_condition},
              {"grid", to_json(*grid)},
              {"K", nc.K},
              {"D", nc.D}};

    if (nc.random_inputs > 0) {
        // random battery for the extended operator: residual and norm-ratio bound
        std::mt19937_64 rng(seed);
        CsvTable t({"trial", "residual", "u_norm", "v_norm", "bound_factor"});
        double worst_residual = 0.0, worst_ratio = 0.0;
        bool bound_ok = true;
        for (int trial = 0; trial < nc.random_inputs; ++trial) {
            auto v = random_cylinder_function(rng, grid, n, m, 1, std::min(nc.K, 4), std::min(nc.D, 2), false);
            v.set_mean({0, Lattice(static_cast<std::size_t>(m), 0), Lattice(static_cast<std::size_t>(n), 0)}, 0.0);
            auto r = solve_extended(v, spec, {.threads = nc.threads}).report;
            t.add({double(trial), r.residual, r.u_norm, r.v_norm, r.bound_factor});
            worst_residual = std::max(worst_residual, r.residual);
            worst_ratio = std::max(worst_ratio, r.u_norm / r.v_norm / r.bound_factor);
            bound_ok = bound_ok && r.u_norm <= r.bound_factor * r.v_norm;
        }
        if (cfg.output.csv) out.write_csv("battery.csv", t);
        j["battery"] = {{"inputs", nc.random_inputs},
                        {"seed", seed},
                        {"max_residual", worst_residual},
                        {"max_ratio_over_bound", worst_ratio},
                        {"bound_ok", bound_ok}};
    }
    out.write_json("homological.json", j);
    return j;
}

inline json run_split(const ExperimentConfig& cfg, ArtifactWriter& out) {
    const auto& nc = cfg.numeric;
    SplittingOptions so;
    so.seeds = nc.seeds;
    so.alpha_points = nc.alpha_points;
    so.eps0 = nc.eps0;
    so.threads = nc.threads;
    so.integrator.scheme = nc.scheme;
    so.integrator.h = nc.h;
    so.integrator.tol = nc.solver_tol;
    so.integrator.max_time = nc.max_time;
    auto m = measure_splitting(cfg.params, nc.sections, so);
    CsvTable t({"section_x", "alpha", "phi", "delta_iota", "delta_y", "predicted"});
    json secs = json::array();
    for (const auto& s : m.sections) {
        for (std::size_t g = 0; g < s.delta_iota.size(); ++g)
            t.add({s.section_x, s.alpha[g][0], s.phi[g][0], s.delta_iota[g], s.delta_y[g], s.predicted[g]});
        secs.push_back({{"section_x", s.section_x},
                        {"melnikov_error", s.melnikov_error},
                        {"energy_relation", s.energy_relation},
                        {"zero_count", s.zero_count},
                        {"zeros_simple", s.zeros_simple}});
    }
    if (cfg.output.csv) out.write_csv("split.csv", t);
    json j = {{"mu", m.mu},
              {"sign_convention", "delta_iota = iota_u - iota_s, predicted = -mu dM/dalpha"},
              {"melnikov_error", m.melnikov_error},
              {"collapse_residual", m.collapse_residual},
              {"max_transverse", m.max_transverse},
              {"melnikov_coefficients", coefficients_json(m.melnikov)},
              {"sections", secs}};
    out.write_json("split.json", j);
    return j;
}

} // namespace detail

/// Runs one experiment and writes its artifacts and manifest.json into the output directory.
inline RunResult run(ExperimentConfig cfg, const RunOptions& opt = {}) {
    if (opt.threads) {
        if (*opt.threads < 1) throw ConfigError("--threads: must be >= 1");
        cfg.numeric.threads = *opt.threads;
    }
    RunResult res;
    res.out_dir = resolve_out_dir(cfg, opt);
    ArtifactWriter out(res.out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    const std::string& c = cfg.command;
    if (c == "exponents") res.summary = detail::run_exponents(cfg, out);
    else if (c == "nonres") res.summary = detail::run_nonres(cfg, out);
    else if (c == "dioph") res.summary = detail::run_dioph(cfg, out);
    else if (c == "chart") res.summary = detail::run_chart(cfg, out);
    else if (c == "riccati") res.summary = detail::run_riccati(cfg, out);
    else if (c == "transversality") res.summary = detail::run_transversality(cfg, out);
    else if (c == "melnikov") res.summary = detail::run_melnikov(cfg, out);
    else if (c == "decay") res.summary = detail::run_decay(cfg, out);
    else if (c == "homological") res.summary = detail::run_homological(cfg, out, opt.seed);
    else if (c == "split") res.summary = detail::run_split(cfg, out);
    else throw ConfigError("command: unknown command '" + c + "'");
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json resolved = cfg.resolved;
    resolved["numeric"]["threads"] = cfg.numeric.threads;
    res.manifest = {{"tool", "sepsplit"},
                    {"version", kVersion},
                    {"command", c},
                    {"config", resolved},
                    {"seed", opt.seed},
                    {"versions",
                     {{"compiler", __VERSION__},
                      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"boost", BOOST_LIB_VERSION},
                      {"openssl", OPENSSL_VERSION_TEXT},
                      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                    {"timings", {{"run_seconds", seconds}}},
                    {"files", out.file_list()}};
    {
        std::ofstream mf(res.out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
        if (!mf) throw IoError("cannot write manifest in '" + res.out_dir.string() + "'");
        mf << res.manifest.dump(2) << "\n";
    }
    return res;
}

/// Machine-readable error record.
inline json error_json(ErrorKind kind, const std::string& message) {
    return {{"error", {{"kind", to_string(kind)}, {"message", message}, {"exit_code", exit_code(kind)}}}};
}

} // namespace sepsplit
