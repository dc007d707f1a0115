#pragma once

// Toroidal-pendulum model: rotators coupled to a (1+m)-dimensional pendulum
// through a trigonometric-polynomial perturbation.

#include <map>
#include <optional>
#include <span>

#include <Eigen/Dense>

#include "common.hpp"

namespace sepsplit {

struct PerturbationTerm {
    Lattice k;  // rotator harmonic, size n
    Lattice j;  // pendulum harmonic on (x_0, ..., x_m), size 1+m
    complex amplitude;
};

/// V(phi, x_0..x_m) = sum a_{k,j} exp(i(k.phi + j.x)), stored merged by (k, j)
/// and required to satisfy a_{-k,-j} = conj(a_{k,j}).
class PerturbationSpec {
public:
    PerturbationSpec() = default;

    PerturbationSpec(int n, int m) : n_(n), m_(m) { require(n >= 0 && m >= 0, "negative dimension"); }

    PerturbationSpec(int n, int m, const std::vector<PerturbationTerm>& terms, double tol = 1e-12)
        : PerturbationSpec(n, m) {
        for (const auto& t : terms) accumulate(t.k, t.j, t.amplitude);
        finalize();
        check_reality(tol);
    }

    /// Adds a*cos(k.phi + j.x) as a conjugate pair.
    PerturbationSpec& add_cos(const Lattice& k, const Lattice& j, double a) {
        return add_real(k, j, a, 0.0);
    }

    /// Adds b*sin(k.phi + j.x) as a conjugate pair.
    PerturbationSpec& add_sin(const Lattice& k, const Lattice& j, double b) {
        return add_real(k, j, 0.0, b);
    }

    /// a*cos(theta) + b*sin(theta) = (a - ib)/2 e^{i theta} + (a + ib)/2 e^{-i theta}.
    PerturbationSpec& add_real(const Lattice& k, const Lattice& j, double a, double b) {
        check_dims(k, j);
        bool zero_freq = std::all_of(k.begin(), k.end(), [](int v) { return v == 0; }) &&
                         std::all_of(j.begin(), j.end(), [](int v) { return v == 0; });
        if (zero_freq) {
            accumulate(k, j, complex(a, 0.0));
        } else {
            accumulate(k, j, complex(a, -b) * 0.5);
            accumulate(negate(k), negate(j), complex(a, b) * 0.5);
        }
        finalize();
        return *this;
    }

    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] int m() const { return m_; }
    [[nodiscard]] bool empty() const { return terms_.empty(); }
    [[nodiscard]] const std::vector<PerturbationTerm>& terms() const { return terms_; }

    [[nodiscard]] double value(std::span<const double> phi, std::span<const double> angles) const {
        double v = 0.0;
        for (std::size_t t = 0; t < terms_.size(); ++t) {
            double th = phase(t, phi, angles);
            v += amp_re_[t] * std::cos(th) - amp_im_[t] * std::sin(th);
        }
        return v;
    }

    /// Partial derivatives of V with respect to phi (size n) and angles (size 1+m).
    void gradient(std::span<const double> phi, std::span<const double> angles, std::span<double> dphi,
                  std::span<double> dangles) const {
        std::fill(dphi.begin(), dphi.end(), 0.0);
        std::fill(dangles.begin(), dangles.end(), 0.0);
        const std::size_t stride_k = static_cast<std::size_t>(n_);
        const std::size_t stride_j = static_cast<std::size_t>(m_ + 1);
        for (std::size_t t = 0; t < terms_.size(); ++t) {
            double th = phase(t, phi, angles);
            // d/dtheta Re(a e^{i theta}) = -(a_re sin + a_im cos)
            double d = -(amp_re_[t] * std::sin(th) + amp_im_[t] * std::cos(th));
            for (std::size_t i = 0; i < stride_k; ++i) dphi[i] += d * kflat_[t * stride_k + i];
            for (std::size_t i = 0; i < stride_j; ++i) dangles[i] += d * jflat_[t * stride_j + i];
        }
    }

    /// sum |a_{k,j}|: the exact sup bound of a trigonometric polynomial on real arguments.
    [[nodiscard]] double majorant() const {
        double s = 0.0;
        for (const auto& t : terms_) s += std::abs(t.amplitude);
        return s;
    }

    /// Maximum of |V| over a uniform grid with `per_dim` points per angle, capped
    /// at about 2^22 evaluations by coarsening.
    [[nodiscard]] double sampled_sup(int per_dim = 32) const {
        const int dims = n_ + m_ + 1;
        if (terms_.empty()) return 0.0;
        while (per_dim > 4 && std::pow(static_cast<double>(per_dim), dims) > 4.2e6) per_dim /= 2;
        std::vector<int> idx(static_cast<std::size_t>(dims), 0);
        std::vector<double> phi(static_cast<std::size_t>(n_)), ang(static_cast<std::size_t>(m_ + 1));
        double best = 0.0;
        while (true) {
            for (int i = 0; i < n_; ++i) phi[i] = two_pi * idx[i] / per_dim;
            for (int i = 0; i <= m_; ++i) ang[i] = two_pi * idx[n_ + i] / per_dim;
            best = std::max(best, std::abs(value(phi, ang)));
            int d = dims - 1;
            while (d >= 0 && idx[d] == per_dim - 1) idx[d--] = 0;
            if (d < 0) break;
            ++idx[d];
        }
        return best;
    }

    /// V0(phi, x_0) = V(phi, x_0, 0, ..., 0) as a spec with m = 0.
    [[nodiscard]] PerturbationSpec restricted_to_pendulum() const {
        PerturbationSpec out(n_, 0);
        for (const auto& t : terms_) out.accumulate(t.k, Lattice{t.j[0]}, t.amplitude);
        out.finalize();
        return out;
    }

    /// True when V and, for order 2, its (x, z)-gradient vanish on x = z = 0 for every phi.
    [[nodiscard]] bool vanishes_at_origin(int order, double tol = 1e-13) const {
        std::map<Lattice, std::vector<complex>> sums;
        for (const auto& t : terms_) {
            auto& s = sums[t.k];
            s.resize(static_cast<std::size_t>(m_ + 2), complex{});
            s[0] += t.amplitude;
            if (order >= 2)
                for (int i = 0; i <= m_; ++i) s[static_cast<std::size_t>(i + 1)] += t.amplitude * double(t.j[i]);
        }
        double scale = std::max(1.0, majorant());
        for (const auto& [k, s] : sums)
            for (const auto& c : s)
                if (std::abs(c) > tol * scale) return false;
        return true;
    }

private:
    void check_dims(const Lattice& k, const Lattice& j) const {
        require(static_cast<int>(k.size()) == n_, "perturbation term: k has size " + std::to_string(k.size()) +
                                                      ", expected n = " + std::to_string(n_));
        require(static_cast<int>(j.size()) == m_ + 1, "perturbation term: j has size " +
                                                          std::to_string(j.size()) + ", expected 1+m = " +
                                                          std::to_string(m_ + 1));
    }

    void accumulate(const Lattice& k, const Lattice& j, complex a) {
        check_dims(k, j);
        merged_[{k, j}] += a;
    }

    void finalize() {
        terms_.clear();
        for (const auto& [key, a] : merged_)
            if (a != complex{}) terms_.push_back({key.first, key.second, a});
        amp_re_.clear();
        amp_im_.clear();
        kflat_.clear();
        jflat_.clear();
        for (const auto& t : terms_) {
            amp_re_.push_back(t.amplitude.real());
            amp_im_.push_back(t.amplitude.imag());
            for (int v : t.k) kflat_.push_back(v);
            for (int v : t.j) jflat_.push_back(v);
        }
    }

    void check_reality(double tol) const {
        double scale = std::max(1.0, majorant());
        for (const auto& [key, a] : merged_) {
            auto it = merged_.find({negate(key.first), negate(key.second)});
            complex partner = it == merged_.end() ? complex{} : it->second;
            if (std::abs(partner - std::conj(a)) > tol * scale)
                throw PreconditionError("perturbation violates reality constraint at k=" + to_string(key.first) +
                                        ", j=" + to_string(key.second));
        }
    }

    [[nodiscard]] double phase(std::size_t t, std::span<const double> phi, std::span<const double> angles) const {
        double th = 0.0;
        const std::size_t nk = static_cast<std::size_t>(n_), nj = static_cast<std::size_t>(m_ + 1);
        for (std::size_t i = 0; i < nk; ++i) th += kflat_[t * nk + i] * phi[i];
        for (std::size_t i = 0; i < nj; ++i) th += jflat_[t * nj + i] * angles[i];
        return th;
    }

    int n_ = 0;
    int m_ = 0;
    std::map<std::pair<Lattice, Lattice>, complex> merged_;
    std::vector<PerturbationTerm> terms_;
    std::vector<double> amp_re_, amp_im_, kflat_, jflat_;
};

/// V = (1 - cos x_0) * sum_{k=1..harmonics} cos(k phi_1): vanishes to second order at the torus.
inline PerturbationSpec pendulum_cosine_perturbation(int n, int m, int harmonics = 1) {
    PerturbationSpec v(n, m);
    for (int h = 1; h <= harmonics; ++h) {
        Lattice k(static_cast<std::size_t>(n), 0);
        k[0] = h;
        Lattice j0(static_cast<std::size_t>(m + 1), 0), j1 = j0, jm = j0;
        j1[0] = 1;
        jm[0] = -1;
        v.add_cos(k, j0, 1.0);
        // -cos(x0) cos(k phi) = -(cos(k phi + x0) + cos(k phi - x0)) / 2
        v.add_cos(k, j1, -0.5);
        v.add_cos(k, jm, -0.5);
    }
    return v;
}

struct ModelParams {
    std::vector<double> arms{1.0, 2.0};  // l_0 < l_1 < ... < l_m
    std::vector<double> omega{2.0};
    double mu = 0.0;
    PerturbationSpec perturbation;

    [[nodiscard]] int m() const { return static_cast<int>(arms.size()) - 1; }
    [[nodiscard]] int n() const { return static_cast<int>(omega.size()); }

    void validate() const {
        require(!arms.empty(), "arms must be non-empty");
        for (std::size_t i = 0; i < arms.size(); ++i) {
            require(arms[i] > 0.0 && std::isfinite(arms[i]), "arms must be positive");
            if (i > 0) require(arms[i] > arms[i - 1], "arms must be strictly increasing");
        }
        require(n() >= 1, "omega must have at least one component");
        for (double w : omega) require(std::isfinite(w), "omega must be finite");
        if (n() == 1) require(omega[0] != 0.0, "omega must be nonzero for n = 1");
        require(mu >= 0.0 && std::isfinite(mu), "mu must be non-negative");
        if (!perturbation.empty())
            require(perturbation.n() == n() && perturbation.m() == m(),
                    "perturbation dimensions do not match (n, m)");
    }
};

/// Full phase point (iota, phi; y, x; zbar, z). Angles are kept unwrapped;
/// wrapped() reduces phi mod 2pi and x mod 4pi.
struct PhaseState {
    std::vector<double> iota;
    std::vector<double> phi;
    double x = 0.0;
    double y = 0.0;
    std::vector<double> z;
    std::vector<double> zbar;

    static PhaseState zero(int n, int m) {
        PhaseState s;
        s.iota.assign(static_cast<std::size_t>(n), 0.0);
        s.phi.assign(static_cast<std::size_t>(n), 0.0);
        s.z.assign(static_cast<std::size_t>(m), 0.0);
        s.zbar.assign(static_cast<std::size_t>(m), 0.0);
        return s;
    }

    [[nodiscard]] PhaseState wrapped() const {
        PhaseState s = *this;
        for (double& p : s.phi) p = wrap_angle(p, two_pi);
        s.x = wrap_angle(s.x, 2.0 * two_pi);
        return s;
    }

    void check(const ModelParams& p) const {
        require(static_cast<int>(iota.size()) == p.n() && static_cast<int>(phi.size()) == p.n(),
                "state rotator dimension does not match n");
        require(static_cast<int>(z.size()) == p.m() && static_cast<int>(zbar.size()) == p.m(),
                "state transverse dimension does not match m");
    }
};

/// U_{1+m}(x) = sum_i l_i (prod_{j>=i} cos x_j - 1).
inline double potential(std::span<const double> arms, std::span<const double> angles) {
    double u = 0.0, prod = 1.0;
    for (std::size_t i = arms.size(); i-- > 0;) {
        prod *= std::cos(angles[i]);
        u += arms[i] * (prod - 1.0);
    }
    return u;
}

inline void potential_gradient(std::span<const double> arms, std::span<const double> angles,
                               std::span<double> grad) {
    const std::size_t d = arms.size();
    for (std::size_t a = 0; a < d; ++a) {
        // dU/dx_a = -sin x_a * sum_{i<=a} l_i prod_{j>=i, j!=a} cos x_j
        double acc = 0.0;
        for (std::size_t i = 0; i <= a; ++i) {
            double prod = 1.0;
            for (std::size_t j = i; j < d; ++j)
                if (j != a) prod *= std::cos(angles[j]);
            acc += arms[i] * prod;
        }
        grad[a] = -std::sin(angles[a]) * acc;
    }
}

inline Eigen::MatrixXd potential_hessian(std::span<const double> arms, std::span<const double> angles) {
    const std::size_t d = arms.size();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t a = i; a < d; ++a) {
            for (std::size_t b = i; b < d; ++b) {
                double prod = arms[i];
                for (std::size_t j = i; j < d; ++j) {
                    if (a == b && j == a)
                        prod *= -std::cos(angles[j]);
                    else if (j == a || j == b)
                        prod *= -std::sin(angles[j]);
                    else
                        prod *= std::cos(angles[j]);
                }
                h(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += prod;
            }
        }
    }
    return h;
}

namespace detail {
inline std::vector<double> full_angles(const PhaseState& s) {
    std::vector<double> a{s.x};
    a.insert(a.end(), s.z.begin(), s.z.end());
    return a;
}
} // namespace detail

inline double evaluate_hamiltonian(const ModelParams& p, const PhaseState& s) {
    s.check(p);
    double h = 0.0;
    for (int i = 0; i < p.n(); ++i) h += p.omega[i] * s.iota[i] + 0.5 * s.iota[i] * s.iota[i];
    h += 0.5 * s.y * s.y / (p.arms[0] * p.arms[0]);
    for (int i = 0; i < p.m(); ++i) h += 0.5 * s.zbar[i] * s.zbar[i] / (p.arms[i + 1] * p.arms[i + 1]);
    auto ang = detail::full_angles(s);
    h += potential(p.arms, ang);
    if (p.mu != 0.0 && !p.perturbation.empty()) h += p.mu * p.perturbation.value(s.phi, ang);
    return h;
}

/// Canonical equations of motion; the returned state holds time derivatives.
inline PhaseState hamiltonian_vector_field(const ModelParams& p, const PhaseState& s) {
    s.check(p);
    const int n = p.n(), m = p.m();
    PhaseState d = PhaseState::zero(n, m);
    auto ang = detail::full_angles(s);
    std::vector<double> gu(static_cast<std::size_t>(m + 1)), gvphi(static_cast<std::size_t>(n), 0.0),
        gvang(static_cast<std::size_t>(m + 1), 0.0);
    potential_gradient(p.arms, ang, gu);
    if (p.mu != 0.0 && !p.perturbation.empty()) p.perturbation.gradient(s.phi, ang, gvphi, gvang);
    for (int i = 0; i < n; ++i) {
        d.phi[i] = p.omega[i] + s.iota[i];
        d.iota[i] = -p.mu * gvphi[i];
    }
    d.x = s.y / (p.arms[0] * p.arms[0]);
    d.y = -gu[0] - p.mu * gvang[0];
    for (int i = 0; i < m; ++i) {
        d.z[i] = s.zbar[i] / (p.arms[i + 1] * p.arms[i + 1]);
        d.zbar[i] = -gu[i + 1] - p.mu * gvang[i + 1];
    }
    return d;
}

/// lambda_i = sqrt(l_0 + ... + l_i) / l_i.
inline std::vector<double> characteristic_exponents(std::span<const double> arms) {
    require(!arms.empty(), "arms must be non-empty");
    std::vector<double> out;
    double cum = 0.0;
    for (double l : arms) {
        require(l > 0.0, "arms must be positive");
        cum += l;
        out.push_back(std::sqrt(cum) / l);
    }
    return out;
}

/// Linearization of the natural system at the origin in the variables (x_0..x_m, y_0..y_m).
inline Eigen::MatrixXd linearization_matrix(std::span<const double> arms) {
    const auto d = static_cast<Eigen::Index>(arms.size());
    std::vector<double> zero(arms.size(), 0.0);
    Eigen::MatrixXd hess = potential_hessian(arms, zero);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    for (Eigen::Index i = 0; i < d; ++i) a(i, d + i) = 1.0 / (arms[i] * arms[i]);
    a.bottomLeftCorner(d, d) = -hess;
    return a;
}

inline Eigen::VectorXcd linearization_eigenvalues(std::span<const double> arms) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(linearization_matrix(arms), false);
    return es.eigenvalues();
}

struct SpectralReport {
    std::vector<double> lambdas;
    bool dominance_ok = false;
    double nonres_margin = 0.0;
    double nonres_threshold = 0.0;
    bool nonres_ok = false;
    Lattice witness_k;
};

/// Pass threshold for the non-resonance margin: `fraction * min_j lambda_j`
/// unless an absolute value is given.
struct MarginRule {
    double fraction = 0.1;
    std::optional<double> absolute;
};

/// inf over k in Z_+^m of |lambda_0 - sum k_j lambda_j|, attained on the finite set
/// sum k_j lambda_j <= lambda_0 + max_j lambda_j (beyond it the expression only grows).
inline SpectralReport check_nonresonance(std::span<const double> lambdas, const MarginRule& rule = {}) {
    if (lambdas.empty()) throw PreconditionError("check_nonresonance: empty exponent list");
    for (double l : lambdas) require(l > 0.0, "check_nonresonance: exponents must be positive");
    SpectralReport r;
    r.lambdas.assign(lambdas.begin(), lambdas.end());
    const std::size_t m = lambdas.size() - 1;
    const double l0 = lambdas[0];
    double lmax = 0.0, lmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j <= m; ++j) {
        lmax = std::max(lmax, lambdas[j]);
        lmin = std::min(lmin, lambdas[j]);
    }
    r.dominance_ok = m == 0 || l0 > lmax;
    const double bound = l0 + lmax;

    Lattice k(m, 0);
    r.nonres_margin = std::numeric_limits<double>::infinity();
    auto rec = [&](auto&& self, std::size_t pos, double sum) -> void {
        if (pos == m) {
            double v = std::abs(l0 - sum);
            if (v < r.nonres_margin) {
                r.nonres_margin = v;
                r.witness_k = k;
            }
            return;
        }
        for (int c = 0; sum + c * lambdas[pos + 1] <= bound; ++c) {
            k[pos] = c;
            self(self, pos + 1, sum + c * lambdas[pos + 1]);
        }
        k[pos] = 0;
    };
    rec(rec, 0, 0.0);

    if (rule.absolute)
        r.nonres_threshold = *rule.absolute;
    else
        r.nonres_threshold = m == 0 ? 0.0 : rule.fraction * lmin;
    r.nonres_ok = r.nonres_margin > r.nonres_threshold || (m == 0 && r.nonres_margin > 0.0);
    return r;
}

struct DiophantineEstimate {
    double theta = 0.0;
    Lattice witness;
};

/// min over 0 < |k|_inf <= K of |<k, omega>| |k|_inf^tau. Shells are scanned by
/// increasing |k|_inf so the smallest witness wins ties; the witness is reported
/// with its first nonzero entry positive.
inline DiophantineEstimate check_diophantine(const std::vector<double>& omega, double tau, int K) {
    const int n = static_cast<int>(omega.size());
    require(n >= 1, "check_diophantine: omega must be non-empty");
    require(std::any_of(omega.begin(), omega.end(), [](double w) { return w != 0.0; }),
            "check_diophantine: omega must be nonzero");
    require(K >= 1, "check_diophantine: K must be >= 1");
    require(tau >= n - 1, "check_diophantine: tau must be >= n - 1");
    DiophantineEstimate best{std::numeric_limits<double>::infinity(), {}};
    for (int r = 1; r <= K; ++r) {
        for (const auto& k : lattice_box(n, r)) {
            if (sup_norm(k) != r) continue;
            double v = std::abs(dot(k, omega)) * std::pow(static_cast<double>(r), tau);
            if (v < best.theta) best = {v, k};
        }
    }
    auto first = std::find_if(best.witness.begin(), best.witness.end(), [](int v) { return v != 0; });
    if (first != best.witness.end() && *first < 0) best.witness = negate(best.witness);
    return best;
}

} // namespace sepsplit
