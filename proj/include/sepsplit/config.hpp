#pragma once

// Experiment configuration: JSON schema, defaults and validation.

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dynamics.hpp"
#include "homological.hpp"
#include "separatrix.hpp"

namespace sepsplit {

using json = nlohmann::json;

inline const std::vector<std::string>& known_commands() {
    static const std::vector<std::string> c{"exponents", "nonres",  "dioph",       "chart", "riccati",
                                            "transversality", "melnikov", "decay", "homological", "split"};
    return c;
}

/// One real term of a cylinder function: (cos cos(k.phi) + sin sin(k.phi)) z^alpha times a profile in s.
struct ForcingTerm {
    int component = 0;
    Lattice k;
    Lattice alpha;
    double cos = 0.0;
    double sin = 0.0;
    std::string profile = "const";  // const | chi | inv_chi
};

struct NumericConfig {
    // homological
    int K = 32;
    int D = 4;
    double T_num = 15.0;  // grid half-width in units of 1/lambda0
    double panel_width = 1.0;
    int order = 20;
    double residual_tol = 1e-10;
    std::vector<ForcingTerm> f, g_e;
    std::vector<ForcingTerm> g_iota, g_flat;
    std::optional<Eigen::MatrixXd> quadratic;
    int random_inputs = 0;
    // arithmetic
    double tau = -1.0;  // < 0 selects n
    int dioph_K = 64;
    double nonres_fraction = 0.1;
    std::optional<double> nonres_absolute;
    // chart
    int chart_points = 1000;
    double chart_s_max = 15.0;
    // riccati / transversality
    double riccati_delta = 0.05;
    int riccati_points = 2000;
    double riccati_tol = 1e-12;
    // melnikov / decay
    double T_quad = 0.0;
    double quad_tol = 1e-13;
    int melnikov_grid = 64;
    double decay_sigma_ref = 0.0;  // rate in |k| held fixed when it is not identifiable
    // dynamics
    Scheme scheme = Scheme::yoshida4;
    double h = 1e-3;
    double solver_tol = 1e-14;
    double max_time = 200.0;
    double eps0 = 1e-7;
    std::vector<double> sections{pi / 2, pi, 3 * pi / 2};
    int seeds = 64;
    int alpha_points = 64;

    unsigned threads = 1;
};

struct OutputConfig {
    std::string dir;  // empty: --out, then $SEPSPLIT_OUT, then ./sepsplit_out
    bool csv = true;
};

struct ExperimentConfig {
    std::string command;
    ModelParams params;
    AnalyticityParams analyticity;
    NumericConfig numeric;
    OutputConfig output;
    json resolved;  // the config with every default filled in
};

namespace detail {

/// Walks a JSON object, reports missing/ill-typed fields by path and rejects unknown keys.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("must be an object");
    }
    ~Reader() = default;
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    [[nodiscard]] bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        out = convert<T>(j_.at(key), field(key));
    }

    [[nodiscard]] const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + field(it.key()) + "'");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError((path_.empty() ? std::string("config") : path_) + ": " + what);
    }

    template <class T>
    static T convert(const json& v, const std::string& where) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(where + ": expected a number");
                return v.get<double>();
            } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, unsigned>) {
                if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
                if constexpr (std::is_same_v<T, unsigned>)
                    if (v.get<long long>() < 0) throw ConfigError(where + ": must be non-negative");
                return v.get<T>();
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
                return v.get<bool>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(where + ": expected a string");
                return v.get<std::string>();
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
                std::vector<double> out;
                for (std::size_t i = 0; i < v.size(); ++i)
                    out.push_back(convert<double>(v[i], where + "[" + std::to_string(i) + "]"));
                return out;
            } else if constexpr (std::is_same_v<T, Lattice>) {
                if (!v.is_array()) throw ConfigError(where + ": expected an array of integers");
                Lattice out;
                for (std::size_t i = 0; i < v.size(); ++i)
                    out.push_back(convert<int>(v[i], where + "[" + std::to_string(i) + "]"));
                return out;
            } else {
                static_assert(sizeof(T) == 0, "unsupported config type");
            }
        } catch (const json::exception& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline Scheme parse_scheme(const std::string& s, const std::string& where) {
    if (s == "leapfrog") return Scheme::leapfrog;
    if (s == "yoshida4") return Scheme::yoshida4;
    if (s == "implicit_midpoint") return Scheme::implicit_midpoint;
    throw ConfigError(where + ": unknown scheme '" + s + "' (leapfrog, yoshida4, implicit_midpoint)");
}

inline PerturbationSpec parse_perturbation(const json& j, int n, int m, json& echo) {
    Reader r(j, "params.perturbation");
    std::string preset = "pendulum_cosine";
    r.get("preset", preset);
    PerturbationSpec v(n, m);
    if (r.has("terms")) {
        if (r.has("harmonics")) r.fail("'terms' and 'harmonics' are mutually exclusive");
        preset = "terms";
        const json& terms = r.raw("terms");
        if (!terms.is_array()) r.fail("terms must be an array");
        echo = json{{"terms", json::array()}};
        for (std::size_t i = 0; i < terms.size(); ++i) {
            Reader t(terms[i], "params.perturbation.terms[" + std::to_string(i) + "]");
            Lattice k, jj;
            double a = 0.0, b = 0.0;
            t.get("k", k);
            t.get("j", jj);
            t.get("cos", a);
            t.get("sin", b);
            t.finish();
            if (static_cast<int>(k.size()) != n) t.fail("k must have n = " + std::to_string(n) + " entries");
            if (static_cast<int>(jj.size()) != m + 1) t.fail("j must have m + 1 = " + std::to_string(m + 1) + " entries");
            v.add_real(k, jj, a, b);
            echo["terms"].push_back({{"k", k}, {"j", jj}, {"cos", a}, {"sin", b}});
        }
    } else if (preset == "pendulum_cosine") {
        int harmonics = 1;
        r.get("harmonics", harmonics);
        if (harmonics < 1) r.fail("harmonics must be >= 1");
        v = pendulum_cosine_perturbation(n, m, harmonics);
        echo = {{"preset", preset}, {"harmonics", harmonics}};
    } else if (preset == "none") {
        echo = {{"preset", preset}};
    } else {
        r.fail("unknown preset '" + preset + "' (pendulum_cosine, none) and no 'terms'");
    }
    r.finish();
    return v;
}

inline std::vector<ForcingTerm> parse_forcing(const json& j, const std::string& where, int components, int n, int m) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array of terms");
    std::vector<ForcingTerm> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        Reader r(j[i], where + "[" + std::to_string(i) + "]");
        ForcingTerm t;
        r.get("component", t.component);
        r.get("k", t.k);
        t.alpha.assign(static_cast<std::size_t>(m), 0);
        r.get("alpha", t.alpha);
        r.get("cos", t.cos);
        r.get("sin", t.sin);
        r.get("profile", t.profile);
        r.finish();
        if (t.component < 0 || t.component >= components)
            r.fail("component must lie in [0, " + std::to_string(components) + ")");
        if (static_cast<int>(t.k.size()) != n) r.fail("k must have n = " + std::to_string(n) + " entries");
        if (static_cast<int>(t.alpha.size()) != m) r.fail("alpha must have m = " + std::to_string(m) + " entries");
        for (int a : t.alpha)
            if (a < 0) r.fail("alpha must be non-negative");
        if (t.profile != "const" && t.profile != "chi" && t.profile != "inv_chi")
            r.fail("profile must be const, chi or inv_chi");
        out.push_back(t);
    }
    return out;
}

inline json forcing_echo(const std::vector<ForcingTerm>& ts) {
    json a = json::array();
    for (const auto& t : ts)
        a.push_back({{"component", t.component}, {"k", t.k}, {"alpha", t.alpha}, {"cos", t.cos}, {"sin", t.sin},
                     {"profile", t.profile}});
    return a;
}

/// 1-based line and column of a byte offset.
inline std::string line_context(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

} // namespace detail

/// Parses and validates a configuration; every default is filled in and echoed in `resolved`.
inline ExperimentConfig parse_config(const json& j) {
    detail::Reader root(j, "");
    ExperimentConfig cfg;
    if (!root.has("command")) throw ConfigError("missing required key 'command'");
    root.get("command", cfg.command);
    if (std::find(known_commands().begin(), known_commands().end(), cfg.command) == known_commands().end())
        throw ConfigError("command: unknown command '" + cfg.command + "'");

    // params
    json pert_echo;
    {
        json pj = root.has("params") ? root.raw("params") : json::object();
        detail::Reader r(pj, "params");
        r.get("arms", cfg.params.arms);
        r.get("omega", cfg.params.omega);
        cfg.params.mu = 1e-3;
        r.get("mu", cfg.params.mu);
        const int n = static_cast<int>(cfg.params.omega.size());
        const int m = static_cast<int>(cfg.params.arms.size()) - 1;
        if (cfg.params.arms.empty()) throw ConfigError("params.arms: must be non-empty");
        for (std::size_t i = 1; i < cfg.params.arms.size(); ++i)
            if (!(cfg.params.arms[i] > cfg.params.arms[i - 1]))
                throw ConfigError("params.arms: must be strictly increasing");
        for (double a : cfg.params.arms)
            if (!(a > 0.0)) throw ConfigError("params.arms: must be positive");
        if (n < 1) throw ConfigError("params.omega: must have at least one entry");
        if (!(cfg.params.mu >= 0.0)) throw ConfigError("params.mu: must be non-negative");
        cfg.params.perturbation = detail::parse_perturbation(
            r.has("perturbation") ? r.raw("perturbation") : json::object(), n, m, pert_echo);
        r.finish();
        try {
            cfg.params.validate();
        } catch (const PreconditionError& e) {
            throw ConfigError(std::string("params: ") + e.what());
        }
    }
    const int n = cfg.params.n();
    const int m = cfg.params.m();

    // analyticity
    {
        json aj = root.has("analyticity") ? root.raw("analyticity") : json::object();
        detail::Reader r(aj, "analyticity");
        auto& a = cfg.analyticity;
        r.get("sigma", a.sigma);
        r.get("T", a.T);
        r.get("rho", a.rho);
        r.get("r", a.r);
        r.get("T0", a.T0);
        r.get("delta", a.delta);
        r.get("kappa", a.kappa);
        r.get("log_factor", a.log_factor);
        r.finish();
        if (!(a.rho > 0.0 && a.rho < 0.5 * pi))
            throw ConfigError("analyticity.rho: must lie in (0, pi/2), got " + format_double(a.rho));
        try {
            a.validate();
        } catch (const PreconditionError& e) {
            throw ConfigError(e.what());
        }
    }

    // numeric
    auto& nc = cfg.numeric;
    nc.f = {ForcingTerm{0, Lattice(static_cast<std::size_t>(n), 0), Lattice(static_cast<std::size_t>(m), 0), 1.0, 0.0,
                        "const"}};
    nc.f[0].k[0] = 1;
    {
        json nj = root.has("numeric") ? root.raw("numeric") : json::object();
        detail::Reader r(nj, "numeric");
        r.get("K", nc.K);
        r.get("D", nc.D);
        r.get("T_num", nc.T_num);
        r.get("panel_width", nc.panel_width);
        r.get("order", nc.order);
        r.get("residual_tol", nc.residual_tol);
        if (r.has("forcing")) {
            detail::Reader fr(r.raw("forcing"), "numeric.forcing");
            if (fr.has("f")) nc.f = detail::parse_forcing(fr.raw("f"), "numeric.forcing.f", 1, n, m);
            if (fr.has("g_iota")) nc.g_iota = detail::parse_forcing(fr.raw("g_iota"), "numeric.forcing.g_iota", n, n, m);
            if (fr.has("g_e")) nc.g_e = detail::parse_forcing(fr.raw("g_e"), "numeric.forcing.g_e", 1, n, m);
            if (fr.has("g_flat")) {
                const json& gf = fr.raw("g_flat");
                if (m == 0 && !(gf.is_array() && gf.empty()))
                    throw ConfigError("numeric.forcing.g_flat: not available for m = 0");
                if (m > 0) nc.g_flat = detail::parse_forcing(gf, "numeric.forcing.g_flat", m, n, m);
            }
            fr.finish();
        }
        if (r.has("quadratic")) {
            const json& q = r.raw("quadratic");
            const int P = n + 1 + m;
            if (!q.is_array() || static_cast<int>(q.size()) != P)
                throw ConfigError("numeric.quadratic: expected a " + std::to_string(P) + "x" + std::to_string(P) +
                                  " matrix");
            Eigen::MatrixXd Q(P, P);
            for (int i = 0; i < P; ++i) {
                auto row = detail::Reader::convert<std::vector<double>>(q[i], "numeric.quadratic[" + std::to_string(i) + "]");
                if (static_cast<int>(row.size()) != P) throw ConfigError("numeric.quadratic: row " + std::to_string(i) + " has wrong length");
                for (int c = 0; c < P; ++c) Q(i, c) = row[c];
            }
            nc.quadratic = Q;
        }
        r.get("random_inputs", nc.random_inputs);
        r.get("tau", nc.tau);
        r.get("dioph_K", nc.dioph_K);
        r.get("nonres_fraction", nc.nonres_fraction);
        if (r.has("nonres_absolute")) {
            double v = 0.0;
            r.get("nonres_absolute", v);
            nc.nonres_absolute = v;
        }
        r.get("chart_points", nc.chart_points);
        r.get("chart_s_max", nc.chart_s_max);
        r.get("riccati_delta", nc.riccati_delta);
        r.get("riccati_points", nc.riccati_points);
        r.get("riccati_tol", nc.riccati_tol);
        r.get("T_quad", nc.T_quad);
        r.get("quad_tol", nc.quad_tol);
        r.get("melnikov_grid", nc.melnikov_grid);
        r.get("decay_sigma_ref", nc.decay_sigma_ref);
        if (r.has("scheme")) nc.scheme = detail::parse_scheme(detail::Reader::convert<std::string>(r.raw("scheme"), "numeric.scheme"), "numeric.scheme");
        r.get("h", nc.h);
        r.get("solver_tol", nc.solver_tol);
        r.get("max_time", nc.max_time);
        r.get("eps0", nc.eps0);
        r.get("sections", nc.sections);
        r.get("seeds", nc.seeds);
        r.get("alpha_points", nc.alpha_points);
        r.get("threads", nc.threads);
        r.finish();
    }
    if (nc.tau < 0.0) nc.tau = n;
    auto check = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("numeric." + what);
    };
    check(nc.K >= 1, "K: must be >= 1");
    check(nc.D >= 0, "D: must be >= 0");
    check(nc.T_num > 0.0, "T_num: must be positive");
    check(nc.panel_width > 0.0, "panel_width: must be positive");
    check(nc.order >= 4, "order: must be >= 4");
    check(nc.residual_tol > 0.0, "residual_tol: must be positive");
    check(nc.random_inputs >= 0, "random_inputs: must be >= 0");
    check(nc.tau >= n - 1, "tau: must be >= n - 1");
    check(nc.dioph_K >= 1, "dioph_K: must be >= 1");
    check(nc.nonres_fraction >= 0.0, "nonres_fraction: must be non-negative");
    check(nc.chart_points >= 2, "chart_points: must be >= 2");
    check(nc.chart_s_max > 0.0, "chart_s_max: must be positive");
    check(nc.riccati_delta > 0.0 && nc.riccati_delta < pi, "riccati_delta: must lie in (0, pi)");
    check(nc.riccati_points >= 8, "riccati_points: must be >= 8");
    check(nc.riccati_tol > 0.0, "riccati_tol: must be positive");
    check(nc.T_quad >= 0.0, "T_quad: must be non-negative");
    check(nc.quad_tol > 0.0, "quad_tol: must be positive");
    check(nc.melnikov_grid >= 2, "melnikov_grid: must be >= 2");
    check(nc.decay_sigma_ref >= 0.0, "decay_sigma_ref: must be non-negative");
    check(nc.h > 0.0, "h: must be positive");
    check(nc.solver_tol > 0.0, "solver_tol: must be positive");
    check(nc.max_time > 0.0, "max_time: must be positive");
    check(nc.eps0 > 0.0 && nc.eps0 < 0.1, "eps0: must lie in (0, 0.1)");
    check(!nc.sections.empty(), "sections: must be non-empty");
    for (double x : nc.sections) check(x > nc.eps0 && x < two_pi - nc.eps0, "sections: must lie in (eps0, 2pi - eps0)");
    check(nc.seeds >= 8, "seeds: must be >= 8");
    check(nc.alpha_points >= 4, "alpha_points: must be >= 4");
    check(nc.threads >= 1, "threads: must be >= 1");

    {
        json oj = root.has("output") ? root.raw("output") : json::object();
        detail::Reader r(oj, "output");
        r.get("dir", cfg.output.dir);
        r.get("csv", cfg.output.csv);
        r.finish();
    }
    root.finish();

    // echo with defaults
    const auto& a = cfg.analyticity;
    json numeric = {{"K", nc.K},
                    {"D", nc.D},
                    {"T_num", nc.T_num},
                    {"panel_width", nc.panel_width},
                    {"order", nc.order},
                    {"residual_tol", nc.residual_tol},
                    {"forcing",
                     {{"f", detail::forcing_echo(nc.f)},
                      {"g_iota", detail::forcing_echo(nc.g_iota)},
                      {"g_e", detail::forcing_echo(nc.g_e)},
                      {"g_flat", detail::forcing_echo(nc.g_flat)}}},
                    {"random_inputs", nc.random_inputs},
                    {"tau", nc.tau},
                    {"dioph_K", nc.dioph_K},
                    {"nonres_fraction", nc.nonres_fraction},
                    {"chart_points", nc.chart_points},
                    {"chart_s_max", nc.chart_s_max},
                    {"riccati_delta", nc.riccati_delta},
                    {"riccati_points", nc.riccati_points},
                    {"riccati_tol", nc.riccati_tol},
                    {"T_quad", nc.T_quad},
                    {"quad_tol", nc.quad_tol},
                    {"melnikov_grid", nc.melnikov_grid},
                    {"decay_sigma_ref", nc.decay_sigma_ref},
                    {"scheme", to_string(nc.scheme)},
                    {"h", nc.h},
                    {"solver_tol", nc.solver_tol},
                    {"max_time", nc.max_time},
                    {"eps0", nc.eps0},
                    {"sections", nc.sections},
                    {"seeds", nc.seeds},
                    {"alpha_points", nc.alpha_points},
                    {"threads", nc.threads}};
    if (nc.nonres_absolute) numeric["nonres_absolute"] = *nc.nonres_absolute;
    if (nc.quadratic) {
        json q = json::array();
        for (Eigen::Index i = 0; i < nc.quadratic->rows(); ++i) {
            json row = json::array();
            for (Eigen::Index c = 0; c < nc.quadratic->cols(); ++c) row.push_back((*nc.quadratic)(i, c));
            q.push_back(row);
        }
        numeric["quadratic"] = q;
    }
    cfg.resolved = {{"command", cfg.command},
                    {"params",
                     {{"arms", cfg.params.arms},
                      {"omega", cfg.params.omega},
                      {"mu", cfg.params.mu},
                      {"perturbation", pert_echo}}},
                    {"analyticity",
                     {{"sigma", a.sigma},
                      {"T", a.T},
                      {"rho", a.rho},
                      {"r", a.r},
                      {"T0", a.T0},
                      {"delta", a.delta},
                      {"kappa", a.kappa},
                      {"log_factor", a.log_factor}}},
                    {"numeric", numeric},
                    {"output", {{"dir", cfg.output.dir}, {"csv", cfg.output.csv}}}};
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("parse error at " + detail::line_context(text, e.byte == 0 ? 0 : e.byte - 1) + ": " +
                          e.what());
    }
    return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

} // namespace sepsplit
