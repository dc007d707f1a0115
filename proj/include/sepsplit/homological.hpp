#pragma once

// Truncated solvers for
//     [lambda0 d/ds + <omega, d/dphi> + <z, Lambda(s) d/dz> (-+ transpose term)] u = v
// and one step of the linearized conjugacy system built from them.

#include <functional>
#include <optional>
#include <set>

#include <Eigen/Dense>

#include "cylinder.hpp"
#include "melnikov.hpp"
#include "model.hpp"

namespace sepsplit {

// ---------------------------------------------------------------- torus modes

/// Solves (<omega, d/dphi> - lambda) u = v mode by mode. For lambda = 0 the mean
/// must vanish and the k = 0 coefficient of u is set to zero.
inline FourierSeries solve_torus_mode(const FourierSeries& v, const std::vector<double>& omega, double lambda,
                                      double floor = 1e-14) {
    require(static_cast<int>(omega.size()) == v.n(), "solve_torus_mode: omega has wrong dimension");
    FourierSeries u(v.n(), v.K());
    for (const auto& [k, c] : v.coeffs()) {
        complex div(-lambda, dot(k, omega));
        if (std::abs(div) < floor) {
            if (lambda == 0.0 && std::all_of(k.begin(), k.end(), [](int x) { return x == 0; }))
                throw PreconditionError("solve_torus_mode: nonzero mean " + format_double(std::abs(c)) +
                                        " with lambda = 0");
            throw PreconditionError("solve_torus_mode: divisor below " + format_double(floor) + " at k = " +
                                    to_string(k));
        }
        u.set(k, c / div);
    }
    return u;
}

struct DivisorWitness {
    double value = std::numeric_limits<double>::infinity();
    Lattice k;
};

/// min over the truncation lattice of |-lambda + i <k, omega>|, excluding the zero divisor at k = 0.
inline DivisorWitness minimal_torus_divisor(const std::vector<double>& omega, int K, double lambda = 0.0) {
    DivisorWitness best;
    for (const auto& k : lattice_box(static_cast<int>(omega.size()), K)) {
        double d = std::abs(complex(-lambda, dot(k, omega)));
        if (d == 0.0) continue;
        if (d < best.value) best = {d, k};
    }
    return best;
}

// ---------------------------------------------------------------- operator data

enum class TransposeTerm { none, minus, plus };

inline std::string to_string(TransposeTerm t) {
    switch (t) {
        case TransposeTerm::none: return "none";
        case TransposeTerm::minus: return "minus";
        case TransposeTerm::plus: return "plus";
    }
    return "?";
}

struct OperatorSpec {
    double lambda0 = 1.0;
    std::vector<double> omega{1.0};
    Eigen::MatrixXd Lambda0 = Eigen::MatrixXd::Zero(0, 0);  // m x m, diagonal
    std::function<Eigen::MatrixXd(double)> Lambda1;         // empty means zero; must vanish at s = -inf
    std::function<Eigen::MatrixXd(double)> Lambda1_prime;   // optional; spectral derivative otherwise
    double resonance_tolerance = 1e-6;
    double divisor_floor = 1e-14;

    [[nodiscard]] int n() const { return static_cast<int>(omega.size()); }
    [[nodiscard]] int m() const { return static_cast<int>(Lambda0.rows()); }
    [[nodiscard]] bool has_lambda1() const { return static_cast<bool>(Lambda1); }

    [[nodiscard]] Eigen::MatrixXd Lambda1_at(double s) const {
        if (!Lambda1) return Eigen::MatrixXd::Zero(m(), m());
        Eigen::MatrixXd L = Lambda1(s);
        require(L.rows() == m() && L.cols() == m(), "OperatorSpec: Lambda1 has wrong shape");
        return L;
    }

    /// Diagonal Lambda0, the lambda0 vs diag(Lambda0) margin, and spectrum of Lambda(s) in (0, lambda0).
    void validate(const SGrid& grid) const {
        require(lambda0 > 0.0, "OperatorSpec: lambda0 must be positive");
        require(!omega.empty(), "OperatorSpec: omega must be non-empty");
        require(Lambda0.rows() == Lambda0.cols(), "OperatorSpec: Lambda0 must be square");
        for (int a = 0; a < m(); ++a)
            for (int b = 0; b < m(); ++b)
                if (a != b && Lambda0(a, b) != 0.0)
                    throw PreconditionError("OperatorSpec: Lambda0 must be diagonal (entry " + std::to_string(a) +
                                            "," + std::to_string(b) + " is " + format_double(Lambda0(a, b)) + ")");
        if (m() > 0) {
            std::vector<double> lams{lambda0};
            for (int a = 0; a < m(); ++a) {
                require(Lambda0(a, a) > 0.0, "OperatorSpec: diagonal of Lambda0 must be positive");
                lams.push_back(Lambda0(a, a));
            }
            MarginRule rule;
            rule.absolute = resonance_tolerance;
            auto rep = check_nonresonance(lams, rule);
            if (!rep.nonres_ok)
                throw PreconditionError("OperatorSpec: resonance |lambda0 - sum k_j lambda_j| = " +
                                        format_double(rep.nonres_margin) + " at k = " + to_string(rep.witness_k));
            for (double s : grid.nodes()) {
                Eigen::MatrixXd L = Lambda0 + Lambda1_at(s);
                Eigen::EigenSolver<Eigen::MatrixXd> es(L, false);
                for (int i = 0; i < m(); ++i) {
                    double re = es.eigenvalues()[i].real();
                    if (!(re > 0.0 && re < lambda0))
                        throw PreconditionError("OperatorSpec: spectrum of Lambda(s) leaves (0, lambda0) at s = " +
                                                format_double(s) + " (eigenvalue " + format_double(re) + ")");
                }
            }
        }
    }
};

struct SolveOptions {
    TransposeTerm transpose = TransposeTerm::none;
    bool absorb_resonant_means = false;  // always on for wedge-class inputs
    int max_degree = -1;                 // divisor bookkeeping; -1 infers from v
    int K = -1;                          // divisor bookkeeping; -1 infers from v
    unsigned threads = 1;
    double obstruction_tol = 1e-13;  // relative to max(1, |v|)
};

struct SolveReport {
    double residual = 0.0;  // |L u - (v - constants)| / max(1, |v|, |u|), nodes and midpoints
    double v_norm = 0.0;
    double u_norm = 0.0;
    double min_divisor = std::numeric_limits<double>::infinity();
    ModeKey divisor_witness;
    double varsigma = 0.0;      // min(min_divisor, lambda0)
    double bound_factor = 0.0;  // (2 T + 1) / varsigma
};

struct ExtendedSolution {
    CylinderFunction u;
    std::map<ModeKey, complex> constants;  // resonant means removed from v
    SolveReport report;

    [[nodiscard]] complex constant(const ModeKey& key) const {
        auto it = constants.find(key);
        return it == constants.end() ? complex{} : it->second;
    }
};

namespace detail {

/// Unknowns (c, alpha) of one z-degree and the s-dependent coupling acting on them.
struct DegreeBlock {
    std::vector<std::pair<int, Lattice>> unknowns;
    std::map<std::pair<int, Lattice>, int> index;
    Eigen::VectorXd b0;                                  // constant coupling, diagonal
    std::vector<Eigen::MatrixXd> b1_nodes, b1_checks;    // Lambda1 coupling
    std::vector<Eigen::MatrixXd> b1c_nodes, b1c_checks;  // Lambda1 coupling / chi
    Eigen::MatrixXd b1_inf;                              // lim (Lambda1 coupling) / chi at s = -inf
    [[nodiscard]] int size() const { return static_cast<int>(unknowns.size()); }
};

/// Matrix of <z, L d/dz> plus the transpose term on one degree block: out = B * in.
inline Eigen::MatrixXd coupling(const DegreeBlock& blk, const Eigen::MatrixXd& L, TransposeTerm t) {
    const int M = blk.size();
    const int m = static_cast<int>(L.rows());
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(M, M);
    for (int in = 0; in < M; ++in) {
        const auto& [c, alpha] = blk.unknowns[in];
        for (int b = 0; b < m; ++b) {
            if (alpha[b] == 0) continue;
            for (int a = 0; a < m; ++a) {
                if (L(a, b) == 0.0) continue;
                Lattice out = alpha;
                --out[b];
                ++out[a];
                B(blk.index.at({c, out}), in) += alpha[b] * L(a, b);
            }
        }
        if (t == TransposeTerm::none) continue;
        for (int c2 = 0; c2 < m; ++c2) {
            int out = blk.index.at({c2, alpha});
            if (t == TransposeTerm::minus)
                B(out, in) -= L(c, c2);
            else
                B(out, in) += L(c2, c);
        }
    }
    return B;
}

class OperatorEngine {
public:
    OperatorEngine(const OperatorSpec& spec, std::shared_ptr<const SGrid> grid, TransposeTerm t, int components,
                   int max_degree)
        : spec_(spec), grid_(std::move(grid)), t_(t), checks_(grid_->check_points()) {
        const int m = spec.m();
        if (t != TransposeTerm::none)
            require(components == m, "solve: transpose variants need one component per z coordinate");
        const double s_far = -40.0;
        Eigen::MatrixXd L_inf = spec.Lambda1_at(s_far) / chi(s_far);
        std::vector<Eigen::MatrixXd> L_nodes, L_checks;
        if (spec.has_lambda1()) {
            for (double s : grid_->nodes()) L_nodes.push_back(spec.Lambda1_at(s));
            for (double s : checks_) L_checks.push_back(spec.Lambda1_at(s));
        }
        for (int d = 0; d <= max_degree; ++d) {
            DegreeBlock blk;
            for (int c = 0; c < components; ++c)
                for (const auto& alpha : monomials_of_degree(m, d)) {
                    blk.index[{c, alpha}] = blk.size();
                    blk.unknowns.emplace_back(c, alpha);
                }
            blk.b0 = coupling(blk, spec.Lambda0, t).diagonal();
            blk.b1_inf = coupling(blk, L_inf, t);
            for (std::size_t i = 0; i < L_nodes.size(); ++i) {
                blk.b1_nodes.push_back(coupling(blk, L_nodes[i], t));
                blk.b1c_nodes.push_back(blk.b1_nodes.back() / chi(grid_->node(i)));
            }
            for (std::size_t i = 0; i < L_checks.size(); ++i) {
                blk.b1_checks.push_back(coupling(blk, L_checks[i], t));
                blk.b1c_checks.push_back(blk.b1_checks.back() / chi(checks_[i]));
            }
            blocks_.push_back(std::move(blk));
        }
    }

    [[nodiscard]] const OperatorSpec& spec() const { return spec_; }
    [[nodiscard]] const SGrid& grid() const { return *grid_; }
    [[nodiscard]] const std::vector<double>& checks() const { return checks_; }
    [[nodiscard]] const DegreeBlock& block(int d) const { return blocks_.at(static_cast<std::size_t>(d)); }
    [[nodiscard]] int max_degree() const { return static_cast<int>(blocks_.size()) - 1; }
    [[nodiscard]] bool coupled() const { return spec_.has_lambda1(); }

private:
    const OperatorSpec& spec_;
    std::shared_ptr<const SGrid> grid_;
    TransposeTerm t_;
    std::vector<double> checks_;
    std::vector<DegreeBlock> blocks_;
};

/// Entries of one (mode, degree) group as dense arrays; tail is M x nodes.
struct GroupData {
    Eigen::VectorXcd wedge, mean;
    Eigen::MatrixXcd tail;
    bool has_tail = false;

    explicit GroupData(int M = 0) : wedge(Eigen::VectorXcd::Zero(M)), mean(Eigen::VectorXcd::Zero(M)) {}
};

inline GroupData gather(const CylinderFunction& f, const DegreeBlock& blk, const Lattice& k) {
    const int M = blk.size();
    GroupData g(M);
    const std::size_t N = f.grid().size();
    for (int j = 0; j < M; ++j) {
        const ModeData* d = f.find({blk.unknowns[j].first, blk.unknowns[j].second, k});
        if (!d) continue;
        g.wedge(j) = d->wedge;
        g.mean(j) = d->mean;
        if (!d->tail.empty()) {
            if (!g.has_tail) g.tail = Eigen::MatrixXcd::Zero(M, static_cast<Eigen::Index>(N));
            g.has_tail = true;
            for (std::size_t i = 0; i < N; ++i) g.tail(j, static_cast<Eigen::Index>(i)) = d->tail[i];
        }
    }
    return g;
}

inline void scatter(const GroupData& g, const DegreeBlock& blk, const Lattice& k, CylinderFunction& out) {
    for (int j = 0; j < blk.size(); ++j) {
        ModeData d;
        d.wedge = g.wedge(j);
        d.mean = g.mean(j);
        if (g.has_tail) {
            d.tail.resize(static_cast<std::size_t>(g.tail.cols()));
            for (Eigen::Index i = 0; i < g.tail.cols(); ++i) d.tail[static_cast<std::size_t>(i)] = g.tail(j, i);
            if (std::all_of(d.tail.begin(), d.tail.end(), [](complex v) { return v == complex{}; })) d.tail.clear();
        }
        if (!d.is_zero()) out.at({blk.unknowns[j].first, blk.unknowns[j].second, k}) = std::move(d);
    }
}

/// Solves lambda0 U' + A(s) U = R from s = -T with the e^s tail ansatz at the left end.
/// A is given per node.
inline Eigen::MatrixXcd march(const SGrid& grid, double lambda0, const std::vector<Eigen::MatrixXcd>& A,
                              const Eigen::MatrixXcd& R) {
    const Eigen::Index M = R.rows();
    const int N = grid.order();
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Zero(M, R.cols());
    Eigen::MatrixXcd left = lambda0 * Eigen::MatrixXcd::Identity(M, M) + A[0];
    U.col(0) = left.partialPivLu().solve(R.col(0));
    const Eigen::MatrixXd& D = grid.panel_diff();
    Eigen::MatrixXcd sys(M * N, M * N);
    Eigen::VectorXcd rhs(M * N);
    for (int p = 0; p < grid.panels(); ++p) {
        const Eigen::Index s0 = static_cast<Eigen::Index>(grid.panel_start(p));
        sys.setZero();
        for (int i = 1; i <= N; ++i) {
            for (int l = 1; l <= N; ++l)
                sys.block((i - 1) * M, (l - 1) * M, M, M).diagonal().setConstant(lambda0 * D(i, l));
            sys.block((i - 1) * M, (i - 1) * M, M, M) += A[static_cast<std::size_t>(s0 + i)];
            rhs.segment((i - 1) * M, M) = R.col(s0 + i) - lambda0 * D(i, 0) * U.col(s0);
        }
        Eigen::VectorXcd sol = sys.partialPivLu().solve(rhs);
        for (int i = 1; i <= N; ++i) U.col(s0 + i) = sol.segment((i - 1) * M, M);
    }
    if (!U.allFinite()) throw NumericalError("solve: non-finite values while marching in s");
    return U;
}

struct GroupSolve {
    GroupData u;
    std::vector<std::pair<int, complex>> constants;
};

inline GroupSolve solve_group(const OperatorEngine& E, int d, const Lattice& k, const GroupData& v, bool absorb,
                              double obstruction_tol) {
    const auto& spec = E.spec();
    const auto& blk = E.block(d);
    const auto& grid = E.grid();
    const int M = blk.size();
    const complex ik(0.0, dot(k, spec.omega));
    const double l0 = spec.lambda0;
    const double floor = spec.divisor_floor;
    GroupSolve out{GroupData(M), {}};
    GroupData& u = out.u;

    auto witness = [&](int j) {
        return to_string(ModeKey{blk.unknowns[j].first, blk.unknowns[j].second, k});
    };

    // wedge: (-lambda0 + i<k,w> + b0) u_w = v_w
    for (int j = 0; j < M; ++j) {
        if (v.wedge(j) == complex{}) continue;
        complex div = -l0 + ik + blk.b0(j);
        if (std::abs(div) < floor) throw PreconditionError("solve: wedge divisor underflow at " + witness(j));
        u.wedge(j) = v.wedge(j) / div;
    }

    // s-constant part
    Eigen::VectorXcd rhs_m = v.mean;
    if (E.coupled()) rhs_m -= blk.b1_inf * u.wedge;
    for (int j = 0; j < M; ++j) {
        complex div = ik + blk.b0(j);
        if (std::abs(div) < floor) {
            if (std::abs(rhs_m(j)) <= obstruction_tol) continue;
            if (!absorb)
                throw PreconditionError("solve: mean obstruction " + format_double(std::abs(rhs_m(j))) + " at " +
                                        witness(j));
            out.constants.emplace_back(j, rhs_m(j));
            continue;
        }
        u.mean(j) = rhs_m(j) / div;
    }

    // remainder that vanishes at s = -inf
    const std::size_t N = grid.size();
    const bool any_wedge = u.wedge.squaredNorm() > 0.0;
    if (!v.has_tail && !any_wedge && !(E.coupled() && u.mean.squaredNorm() > 0.0)) return out;
    Eigen::MatrixXcd R = v.has_tail ? v.tail : Eigen::MatrixXcd::Zero(M, static_cast<Eigen::Index>(N));
    for (std::size_t i = 0; i < N; ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        if (any_wedge) R.col(col) += l0 * chart_w(grid.node(i)) * u.wedge;
        if (E.coupled()) {
            R.col(col) -= blk.b1_nodes[i] * u.mean;
            if (any_wedge) R.col(col) -= (blk.b1c_nodes[i] - blk.b1_inf) * u.wedge;
        }
    }
    for (int j = 0; j < M; ++j)
        if (l0 + blk.b0(j) <= 0.0)
            throw PreconditionError("solve: no solution vanishing at s = -inf for " + witness(j));

    u.tail = Eigen::MatrixXcd::Zero(M, static_cast<Eigen::Index>(N));
    u.has_tail = true;
    if (E.coupled()) {
        std::vector<Eigen::MatrixXcd> A(N);
        for (std::size_t i = 0; i < N; ++i) {
            A[i] = blk.b1_nodes[i].cast<complex>();
            A[i].diagonal().array() += ik + blk.b0.array().cast<complex>();
        }
        u.tail = march(grid, l0, A, R);
    } else {
        for (int j = 0; j < M; ++j) {
            if (R.row(j).squaredNorm() == 0.0) continue;
            std::vector<Eigen::MatrixXcd> A(N, Eigen::MatrixXcd::Constant(1, 1, ik + blk.b0(j)));
            u.tail.row(j) = march(grid, l0, A, R.row(j));
        }
    }
    return out;
}

/// Operator applied to one group at point s given values, derivative and couplings there.
inline Eigen::VectorXcd apply_point(const OperatorEngine& E, const DegreeBlock& blk, complex ik, double s,
                                    const GroupData& u, const Eigen::VectorXcd& ut, const Eigen::VectorXcd& dut,
                                    const Eigen::MatrixXd* b1, const Eigen::MatrixXd* b1c) {
    const double l0 = E.spec().lambda0;
    Eigen::VectorXcd r = l0 * dut;
    r.array() += (ik + blk.b0.array().cast<complex>()) * ut.array();
    r -= l0 * chart_w(s) * u.wedge;
    if (b1) {
        r += *b1 * (ut + u.mean);
        r += (*b1c - blk.b1_inf) * u.wedge;
    }
    return r;
}

/// L u on one group: wedge and mean exactly, tail at the nodes (shared nodes averaged).
inline GroupData apply_group(const OperatorEngine& E, int d, const Lattice& k, const GroupData& u) {
    const auto& blk = E.block(d);
    const auto& grid = E.grid();
    const int M = blk.size();
    const complex ik(0.0, dot(k, E.spec().omega));
    const double l0 = E.spec().lambda0;
    GroupData r(M);
    Eigen::VectorXcd diag = ik + blk.b0.array().cast<complex>();
    r.wedge = ((-l0 + diag.array()) * u.wedge.array()).matrix();
    r.mean = (diag.array() * u.mean.array()).matrix();
    if (E.coupled()) r.mean += blk.b1_inf * u.wedge;
    const bool any_wedge = u.wedge.squaredNorm() > 0.0;
    if (!u.has_tail && !any_wedge && !(E.coupled() && u.mean.squaredNorm() > 0.0)) return r;
    const std::size_t N = grid.size();
    Eigen::MatrixXcd ut = u.has_tail ? u.tail : Eigen::MatrixXcd::Zero(M, static_cast<Eigen::Index>(N));
    r.tail = Eigen::MatrixXcd::Zero(M, static_cast<Eigen::Index>(N));
    r.has_tail = true;
    std::vector<int> count(N, 0);
    const Eigen::MatrixXd& D = grid.panel_diff();
    const int order = grid.order();
    for (int p = 0; p < grid.panels(); ++p) {
        const auto s0 = static_cast<Eigen::Index>(grid.panel_start(p));
        Eigen::MatrixXcd dloc = ut.middleCols(s0, order + 1) * D.transpose().cast<complex>();
        for (int i = 0; i <= order; ++i) {
            const std::size_t g = static_cast<std::size_t>(s0 + i);
            r.tail.col(s0 + i) += apply_point(E, blk, ik, grid.node(g), u, ut.col(s0 + i), dloc.col(i),
                                              E.coupled() ? &blk.b1_nodes[g] : nullptr,
                                              E.coupled() ? &blk.b1c_nodes[g] : nullptr);
            ++count[g];
        }
    }
    for (std::size_t g = 0; g < N; ++g) r.tail.col(static_cast<Eigen::Index>(g)) /= static_cast<double>(count[g]);
    return r;
}

/// Sum over unknowns of |wedge| + |mean| + sup weight |tail| of L u - v, the tail checked at
/// every node from both adjacent panels and at all midpoints.
inline double residual_group(const OperatorEngine& E, int d, const Lattice& k, const GroupData& u,
                             const GroupData& v, bool weighted) {
    const auto& blk = E.block(d);
    const auto& grid = E.grid();
    const int M = blk.size();
    const complex ik(0.0, dot(k, E.spec().omega));
    const double l0 = E.spec().lambda0;
    Eigen::VectorXcd diag = ik + blk.b0.array().cast<complex>();
    Eigen::VectorXcd rw = ((-l0 + diag.array()) * u.wedge.array()).matrix() - v.wedge;
    Eigen::VectorXcd rm = (diag.array() * u.mean.array()).matrix() - v.mean;
    if (E.coupled()) rm += blk.b1_inf * u.wedge;
    Eigen::VectorXd sup = Eigen::VectorXd::Zero(M);
    const bool any_wedge = u.wedge.squaredNorm() > 0.0;
    const bool tails = u.has_tail || v.has_tail || any_wedge || (E.coupled() && u.mean.squaredNorm() > 0.0);
    if (tails) {
        const std::size_t N = grid.size();
        const auto zero = Eigen::MatrixXcd::Zero(M, static_cast<Eigen::Index>(N));
        const Eigen::MatrixXcd ut = u.has_tail ? u.tail : Eigen::MatrixXcd(zero);
        const Eigen::MatrixXcd vt = v.has_tail ? v.tail : Eigen::MatrixXcd(zero);
        auto take = [&](double s, const Eigen::VectorXcd& r) {
            double w = weighted ? chi(s) : 1.0;
            for (int j = 0; j < M; ++j) sup(j) = std::max(sup(j), w * std::abs(r(j)));
        };
        const Eigen::MatrixXd& D = grid.panel_diff();
        const int order = grid.order();
        for (int p = 0; p < grid.panels(); ++p) {
            const auto s0 = static_cast<Eigen::Index>(grid.panel_start(p));
            Eigen::MatrixXcd dloc = ut.middleCols(s0, order + 1) * D.transpose().cast<complex>();
            for (int i = 0; i <= order; ++i) {
                const std::size_t g = static_cast<std::size_t>(s0 + i);
                Eigen::VectorXcd r = apply_point(E, blk, ik, grid.node(g), u, ut.col(s0 + i), dloc.col(i),
                                                 E.coupled() ? &blk.b1_nodes[g] : nullptr,
                                                 E.coupled() ? &blk.b1c_nodes[g] : nullptr);
                take(grid.node(g), r - vt.col(s0 + i));
            }
        }
        const auto& checks = E.checks();
        std::vector<complex> row_u(N), row_v(N);
        Eigen::MatrixXcd uc(M, static_cast<Eigen::Index>(checks.size())), duc(uc.rows(), uc.cols()),
            vc(uc.rows(), uc.cols());
        for (int j = 0; j < M; ++j) {
            for (std::size_t i = 0; i < N; ++i) {
                row_u[i] = ut(j, static_cast<Eigen::Index>(i));
                row_v[i] = vt(j, static_cast<Eigen::Index>(i));
            }
            for (std::size_t c = 0; c < checks.size(); ++c) {
                const auto col = static_cast<Eigen::Index>(c);
                uc(j, col) = grid.interpolate(row_u, checks[c]);
                duc(j, col) = grid.interpolate_derivative(row_u, checks[c]);
                vc(j, col) = grid.interpolate(row_v, checks[c]);
            }
        }
        for (std::size_t c = 0; c < checks.size(); ++c) {
            const auto col = static_cast<Eigen::Index>(c);
            Eigen::VectorXcd r = apply_point(E, blk, ik, checks[c], u, uc.col(col), duc.col(col),
                                             E.coupled() ? &blk.b1_checks[c] : nullptr,
                                             E.coupled() ? &blk.b1c_checks[c] : nullptr);
            take(checks[c], r - vc.col(col));
        }
    }
    double total = 0.0;
    for (int j = 0; j < M; ++j) total += std::abs(rw(j)) + std::abs(rm(j)) + sup(j);
    return total;
}

/// (mode, degree) groups touched by the given functions; with Lambda1 present a group couples
/// all monomials of its degree.
inline std::vector<std::pair<Lattice, int>> groups_of(std::initializer_list<const CylinderFunction*> fs) {
    std::set<std::pair<Lattice, int>> g;
    for (const auto* f : fs)
        for (const auto& [key, d] : f->entries()) g.insert({key.k, l1_norm(key.alpha)});
    return {g.begin(), g.end()};
}

inline int infer_degree(const CylinderFunction& v, int requested) {
    return requested >= 0 ? std::max(requested, v.max_degree()) : v.max_degree();
}

} // namespace detail

/// Minimal |i<k, omega> + b0| over the truncation lattice, all unknowns up to the given degree.
inline std::pair<double, ModeKey> minimal_divisor(const OperatorSpec& spec, TransposeTerm t, int components,
                                                  int max_degree, int K) {
    std::shared_ptr<const SGrid> g = std::make_shared<SGrid>(1.0, 1, 2);
    OperatorSpec constant = spec;
    constant.Lambda1 = nullptr;
    detail::OperatorEngine E(constant, g, t, components, max_degree);
    double best = std::numeric_limits<double>::infinity();
    ModeKey who;
    const auto lattice = lattice_box(spec.n(), K);
    for (int d = 0; d <= max_degree; ++d) {
        const auto& blk = E.block(d);
        for (const auto& k : lattice) {
            double kw = dot(k, spec.omega);
            for (int j = 0; j < blk.size(); ++j) {
                double v = std::abs(complex(blk.b0(j), kw));
                if (v >= spec.divisor_floor && v < best) {
                    best = v;
                    who = {blk.unknowns[j].first, blk.unknowns[j].second, k};
                }
            }
        }
    }
    return {best, who};
}

/// Applies the operator (with the chosen transpose term) to u; tails are returned at the nodes.
inline CylinderFunction apply_operator(const CylinderFunction& u, const OperatorSpec& spec,
                                       TransposeTerm t = TransposeTerm::none) {
    detail::OperatorEngine E(spec, u.grid_ptr(), t, u.components(), u.max_degree());
    CylinderFunction out = u.zero_like();
    out.set_wedge_class(u.wedge_class());
    for (const auto& [k, d] : detail::groups_of({&u})) {
        auto r = detail::apply_group(E, d, k, detail::gather(u, E.block(d), k));
        detail::scatter(r, E.block(d), k, out);
    }
    return out;
}

/// Backward-error residual |L u - (v - constants)| / max(1, |v|, |u|), tails checked on and
/// between nodes.
inline double operator_residual(const CylinderFunction& u, const CylinderFunction& v, const OperatorSpec& spec,
                                TransposeTerm t = TransposeTerm::none,
                                const std::map<ModeKey, complex>& constants = {}) {
    u.check_compatible(v);
    CylinderFunction target = v;
    for (const auto& [key, c] : constants) target.at(key).mean -= c;
    const int D = std::max(u.max_degree(), v.max_degree());
    detail::OperatorEngine E(spec, v.grid_ptr(), t, v.components(), D);
    double total = 0.0;
    for (const auto& [k, d] : detail::groups_of({&u, &target}))
        total += detail::residual_group(E, d, k, detail::gather(u, E.block(d), k),
                                        detail::gather(target, E.block(d), k), v.wedge_class());
    return total / std::max({1.0, v.norm(), u.norm()});
}

/// Solves [lambda0 d/ds + <omega, d/dphi> + <z, Lambda d/dz> -+ transpose] u = v - constants,
/// where the constants are resonant s-constant means (only allowed when absorbing).
inline ExtendedSolution solve_extended(const CylinderFunction& v, const OperatorSpec& spec,
                                       const SolveOptions& opt = {}) {
    require(v.n() == spec.n(), "solve: omega dimension does not match the function");
    require(v.m() == spec.m(), "solve: Lambda0 dimension does not match the function");
    spec.validate(v.grid());
    require(v.left_decay_defect() < 1e-3,
            "solve: sampled tails do not decay towards s = -inf; move the constant part into the mean");
    const int D = detail::infer_degree(v, opt.max_degree);
    detail::OperatorEngine E(spec, v.grid_ptr(), opt.transpose, v.components(), D);
    const bool absorb = opt.absorb_resonant_means || v.wedge_class();
    const double v_norm = v.norm();
    const double obstruction = opt.obstruction_tol * std::max(1.0, v_norm);

    const auto groups = detail::groups_of({&v});
    std::vector<detail::GroupSolve> solved(groups.size());
    parallel_for(groups.size(), opt.threads, [&](std::size_t g) {
        const auto& [k, d] = groups[g];
        solved[g] = detail::solve_group(E, d, k, detail::gather(v, E.block(d), k), absorb, obstruction);
    });

    ExtendedSolution sol{v.zero_like(), {}, {}};
    sol.u.set_wedge_class(v.wedge_class());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& [k, d] = groups[g];
        const auto& blk = E.block(d);
        detail::scatter(solved[g].u, blk, k, sol.u);
        for (const auto& [j, c] : solved[g].constants)
            sol.constants[{blk.unknowns[j].first, blk.unknowns[j].second, k}] = c;
    }

    auto& rep = sol.report;
    rep.v_norm = v_norm;
    rep.u_norm = sol.u.norm();
    rep.residual = operator_residual(sol.u, v, spec, opt.transpose, sol.constants);
    const int K = opt.K >= 0 ? opt.K : v.max_mode();
    std::tie(rep.min_divisor, rep.divisor_witness) = minimal_divisor(spec, opt.transpose, v.components(), D, K);
    rep.varsigma = std::min(rep.min_divisor, spec.lambda0);
    rep.bound_factor = (2.0 * v.grid().T() + 1.0) / rep.varsigma;
    return sol;
}

/// z-free, no transpose term; for the wedge class the returned constant c makes v - c solvable.
inline ExtendedSolution solve_cylinder(const CylinderFunction& v, const OperatorSpec& spec,
                                       const SolveOptions& opt = {}) {
    require(v.max_degree() == 0, "solve_cylinder: input depends on z");
    require(v.components() == 1, "solve_cylinder: input must be scalar");
    SolveOptions o = opt;
    o.transpose = TransposeTerm::none;
    return solve_extended(v, spec, o);
}

// ---------------------------------------------------------------- one conjugacy step

/// Constant second derivative in the momenta, ordered (iota_1..iota_n, e, zbar_1..zbar_m).
struct QuadraticPart {
    Eigen::MatrixXd Q;
};

struct StepForcing {
    CylinderFunction f;                     // bounded class
    CylinderFunction g_iota;                // n components, bounded class
    CylinderFunction g_e;                   // scalar, wedge class
    std::optional<CylinderFunction> g_flat;  // m components, bounded class (absent when m = 0)

    static StepForcing zero(std::shared_ptr<const SGrid> grid, int n, int m) {
        StepForcing s{CylinderFunction(grid, n, m), CylinderFunction(grid, n, m, n),
                      CylinderFunction(grid, n, m, 1, true), std::nullopt};
        if (m > 0) s.g_flat = CylinderFunction(grid, n, m, m);
        return s;
    }
};

struct StepOptions {
    int max_degree = 4;
    int K = 32;
    unsigned threads = 1;
    double residual_tol = 1e-10;
};

struct HomologicalSolution {
    CylinderFunction S0hat;
    CylinderFunction beta_hat;               // n components
    CylinderFunction b_hat;                  // wedge class
    std::optional<CylinderFunction> flat_hat;  // m components
    std::vector<double> xi_hat;
    double c_hat = 0.0;
    double lambda0_hat = 0.0;
    Eigen::MatrixXd Lambda0_hat;
    std::map<std::string, double> residuals;
    double diagonalization_condition = 1.0;
    double min_divisor = 0.0;

    [[nodiscard]] double max_residual() const {
        double r = 0.0;
        for (const auto& [name, v] : residuals) r = std::max(r, v);
        return r;
    }
};

namespace detail {

template <class F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const PreconditionError& e) {
        throw PreconditionError("stage " + stage + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError("stage " + stage + ": " + e.what());
    }
}

inline CylinderFunction constant_function(const CylinderFunction& like, double value, int components = 1,
                                          int c = 0) {
    CylinderFunction r = like.zero_like(components);
    if (value != 0.0) r.set_mean({c, Lattice(like.m(), 0), Lattice(like.n(), 0)}, value);
    return r;
}

/// s-dependent matrix G(s) times b (scalar) times z_d into component c; G vanishes at -inf with
/// lim G / chi = G_inf. Degrees above max_degree are dropped.
inline void add_product_term(CylinderFunction& out, const CylinderFunction& b,
                             const std::vector<Eigen::MatrixXd>& G_nodes, const Eigen::MatrixXd& G_inf,
                             int max_degree) {
    const SGrid& grid = out.grid();
    const int m = out.m();
    for (const auto& [key, d] : b.entries()) {
        if (l1_norm(key.alpha) + 1 > max_degree) continue;
        for (int c = 0; c < m; ++c)
            for (int dd = 0; dd < m; ++dd) {
                Lattice alpha = key.alpha;
                ++alpha[dd];
                ModeData& t = out.at({c, alpha, key.k});
                t.mean += G_inf(c, dd) * d.wedge;
                if (t.tail.empty()) t.tail.assign(grid.size(), complex{});
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    double g = G_nodes[i](c, dd);
                    double s = grid.node(i);
                    complex bounded = d.mean + (d.tail.empty() ? complex{} : d.tail[i]);
                    t.tail[i] += g * bounded + (g / chi(s) - G_inf(c, dd)) * d.wedge;
                }
            }
    }
}

} // namespace detail

/// One step of the linearized conjugacy system: zero-mean choice of c_hat, S0_hat, xi_hat from
/// the beta mean condition, b_hat with lambda0_hat, flat_hat with Lambda0_hat.
inline HomologicalSolution homological_step(const OperatorSpec& spec, const QuadraticPart& quad,
                                            const StepForcing& in, const StepOptions& opt = {}) {
    const int n = spec.n();
    const int m = spec.m();
    const int P = n + 1 + m;
    require(quad.Q.rows() == P && quad.Q.cols() == P, "homological_step: quadratic part must be (n+1+m) square");
    require((quad.Q - quad.Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, quad.Q.cwiseAbs().maxCoeff()),
            "homological_step: quadratic part must be symmetric");
    require(in.f.n() == n && in.f.m() == m && in.f.components() == 1 && !in.f.wedge_class(),
            "homological_step: f must be a scalar bounded-class function");
    require(in.g_iota.components() == n && !in.g_iota.wedge_class(),
            "homological_step: g_iota must have n bounded components");
    require(in.g_e.components() == 1, "homological_step: g_e must be scalar");
    require(m == 0 || (in.g_flat && in.g_flat->components() == m && !in.g_flat->wedge_class()),
            "homological_step: g_flat must have m bounded components");
    const auto grid = in.f.grid_ptr();
    spec.validate(*grid);

    SolveOptions so;
    so.max_degree = opt.max_degree;
    so.K = opt.K;
    so.threads = opt.threads;

    HomologicalSolution out{in.f.zero_like(),    in.f.zero_like(n), in.g_e.zero_like(), std::nullopt, {}, 0.0, 0.0,
                            Eigen::MatrixXd::Zero(m, m), {},       1.0,               0.0};
    out.b_hat.set_wedge_class(true);

    // S0: D S0 = -f + <f>
    const double f_mean = in.f.average().real();
    CylinderFunction rhs0 = (-1.0) * in.f.truncated(opt.max_degree, opt.K);
    rhs0 += detail::constant_function(in.f, f_mean);
    auto s0 = detail::staged("S0", [&] { return solve_extended(rhs0, spec, so); });
    out.S0hat = s0.u;
    out.residuals["S0"] = s0.report.residual;
    out.min_divisor = s0.report.min_divisor;

    // momenta of dS0 in the order (phi, s, z)
    std::vector<CylinderFunction> dS;
    for (int i = 0; i < n; ++i) dS.push_back(out.S0hat.derivative_phi(i));
    dS.push_back(out.S0hat.derivative_s());
    for (int j = 0; j < m; ++j) dS.push_back(out.S0hat.derivative_z(j));
    auto QdS = [&](int a) {
        CylinderFunction r = in.f.zero_like();
        for (int b = 0; b < P; ++b)
            if (quad.Q(a, b) != 0.0) r.axpy(quad.Q(a, b), dS[static_cast<std::size_t>(b)]);
        return r;
    };

    // xi from the zero-mean condition of the beta equation
    Eigen::VectorXd mean_iota(n);
    for (int i = 0; i < n; ++i) mean_iota(i) = in.g_iota.average(i).real() + QdS(i).average().real();
    Eigen::MatrixXd Qii = quad.Q.topLeftCorner(n, n);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Qii);
    if (!lu.isInvertible() || lu.rcond() < 1e-12)
        throw PreconditionError("stage xi: averaged D^2_iota,iota H is singular");
    Eigen::VectorXd xi = -lu.solve(mean_iota);
    out.xi_hat.assign(xi.data(), xi.data() + n);
    out.c_hat = f_mean;
    for (int i = 0; i < n; ++i) out.c_hat += spec.omega[static_cast<std::size_t>(i)] * xi(i);

    // Q (dS0 + xi) per momentum
    auto Qp = [&](int a) {
        CylinderFunction r = QdS(a);
        double c = 0.0;
        for (int i = 0; i < n; ++i) c += quad.Q(a, i) * xi(i);
        r += detail::constant_function(in.f, c);
        return r;
    };

    // beta
    std::vector<CylinderFunction> beta_rhs;
    for (int i = 0; i < n; ++i) beta_rhs.push_back(in.g_iota.component(i) + Qp(i));
    CylinderFunction beta_v = CylinderFunction::stack(beta_rhs).truncated(opt.max_degree, opt.K);
    auto beta = detail::staged("beta", [&] { return solve_extended(beta_v, spec, so); });
    out.beta_hat = beta.u;
    out.residuals["beta"] = beta.report.residual;

    // b with lambda0_hat
    CylinderFunction b_v = in.g_e + Qp(n);
    b_v.set_wedge_class(true);
    b_v = b_v.truncated(opt.max_degree, opt.K);
    auto b = detail::staged("b", [&] { return solve_extended(b_v, spec, so); });
    out.b_hat = b.u;
    out.lambda0_hat = b.constant({0, Lattice(m, 0), Lattice(n, 0)}).real();
    out.residuals["b"] = b.report.residual;

    if (m > 0) {
        // flat: [D + <z, Lambda D_z> - Lambda^T] flat = g_flat + Q_zbar (dS0 + xi) + b D_s Lambda^T z - Lambda0_hat^T z
        std::vector<CylinderFunction> parts;
        for (int c = 0; c < m; ++c) parts.push_back(in.g_flat->component(c) + Qp(n + 1 + c));
        CylinderFunction flat_v = CylinderFunction::stack(parts);
        if (spec.has_lambda1()) {
            const SGrid& g = *grid;
            std::vector<Eigen::MatrixXd> G(g.size());
            if (spec.Lambda1_prime) {
                for (std::size_t i = 0; i < g.size(); ++i) G[i] = spec.Lambda1_prime(g.node(i)).transpose();
            } else {
                for (int a = 0; a < m; ++a)
                    for (int c = 0; c < m; ++c) {
                        std::vector<double> row(g.size());
                        for (std::size_t i = 0; i < g.size(); ++i) row[i] = spec.Lambda1_at(g.node(i))(a, c);
                        auto dr = g.derivative(row);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            if (G[i].size() == 0) G[i] = Eigen::MatrixXd::Zero(m, m);
                            G[i](c, a) = dr[i];
                        }
                    }
            }
            // Lambda1 ~ e^s at -inf, so lim Lambda1' / chi = lim Lambda1 / chi
            const double s_far = -40.0;
            Eigen::MatrixXd G_inf = (spec.Lambda1_at(s_far) / chi(s_far)).transpose();
            detail::add_product_term(flat_v, out.b_hat, G, G_inf, opt.max_degree);
        }
        flat_v = flat_v.truncated(opt.max_degree, opt.K);
        // remove the constant z-linear part of mode 0
        Eigen::MatrixXd LhatT = Eigen::MatrixXd::Zero(m, m);
        for (int c = 0; c < m; ++c)
            for (int j = 0; j < m; ++j) {
                Lattice ej(m, 0);
                ej[j] = 1;
                ModeKey key{c, ej, Lattice(n, 0)};
                if (const ModeData* d = flat_v.find(key)) {
                    LhatT(c, j) = d->mean.real();
                    flat_v.at(key).mean -= LhatT(c, j);
                }
            }
        out.Lambda0_hat = LhatT.transpose();
        SolveOptions fo = so;
        fo.transpose = TransposeTerm::minus;
        auto flat = detail::staged("flat", [&] { return solve_extended(flat_v, spec, fo); });
        out.flat_hat = flat.u;
        out.residuals["flat"] = flat.report.residual;

        Eigen::MatrixXd Lfull = spec.Lambda0 + out.Lambda0_hat;
        Eigen::EigenSolver<Eigen::MatrixXd> es(Lfull);
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(es.eigenvectors());
        const auto& sv = svd.singularValues();
        out.diagonalization_condition =
            sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    }
    return out;
}

} // namespace sepsplit
