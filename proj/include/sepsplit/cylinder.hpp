#pragma once

// Functions on T^n x [-T, T] x C^m, truncated in Fourier modes and z-degree.
// Each (component, z-monomial, mode) entry is
//     wedge / chi(s) + mean + tail(s),
// with tail sampled on an SGrid and vanishing towards s = -inf.

#include <map>
#include <memory>
#include <random>
#include <span>

#include "separatrix.hpp"
#include "spectral.hpp"

namespace sepsplit {

struct ModeKey {
    int c = 0;
    Lattice alpha;  // z multi-index
    Lattice k;      // Fourier mode
    auto operator<=>(const ModeKey&) const = default;
};

struct ModeData {
    complex wedge{};
    complex mean{};
    std::vector<complex> tail;  // empty means identically zero

    [[nodiscard]] bool is_zero() const {
        if (wedge != complex{} || mean != complex{}) return false;
        return std::all_of(tail.begin(), tail.end(), [](complex v) { return v == complex{}; });
    }
};

inline std::string to_string(const ModeKey& key) {
    return "(c=" + std::to_string(key.c) + ", alpha=" + to_string(key.alpha) + ", k=" + to_string(key.k) + ")";
}

/// w(s) in D ln chi = 1 + chi w; exactly -e^s / 2 for the pendulum chart.
inline double chart_w(double s) { return -0.5 * std::exp(s); }

class CylinderFunction {
public:
    CylinderFunction(std::shared_ptr<const SGrid> grid, int n, int m, int components = 1, bool wedge_class = false)
        : grid_(std::move(grid)), n_(n), m_(m), components_(components), wedge_class_(wedge_class) {
        require(grid_ != nullptr, "CylinderFunction: grid is required");
        require(n >= 1 && m >= 0 && components >= 1, "CylinderFunction: bad dimensions");
    }

    [[nodiscard]] const std::shared_ptr<const SGrid>& grid_ptr() const { return grid_; }
    [[nodiscard]] const SGrid& grid() const { return *grid_; }
    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] int m() const { return m_; }
    [[nodiscard]] int components() const { return components_; }
    [[nodiscard]] bool wedge_class() const { return wedge_class_; }
    void set_wedge_class(bool w) { wedge_class_ = w; }
    [[nodiscard]] const std::map<ModeKey, ModeData>& entries() const { return data_; }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] const ModeData* find(const ModeKey& key) const {
        auto it = data_.find(key);
        return it == data_.end() ? nullptr : &it->second;
    }

    ModeData& at(const ModeKey& key) {
        check_key(key);
        return data_[key];
    }

    CylinderFunction& set_mean(const ModeKey& key, complex v) {
        at(key).mean = v;
        return *this;
    }
    CylinderFunction& set_wedge(const ModeKey& key, complex v) {
        at(key).wedge = v;
        if (v != complex{}) wedge_class_ = true;
        return *this;
    }
    CylinderFunction& set_tail(const ModeKey& key, std::vector<complex> samples) {
        require(samples.empty() || samples.size() == grid_->size(), "CylinderFunction: tail has wrong sample count");
        at(key).tail = std::move(samples);
        return *this;
    }
    /// Samples f(s) at the grid nodes.
    template <class F>
    CylinderFunction& set_tail_fn(const ModeKey& key, F&& f) {
        std::vector<complex> t(grid_->size());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = complex(f(grid_->node(i)));
        return set_tail(key, std::move(t));
    }

    /// Real-valued helpers: a cos(<k, phi>) and a sin(<k, phi>) in the mean part.
    CylinderFunction& add_cos_mean(int c, const Lattice& alpha, const Lattice& k, double a) {
        add_mode(c, alpha, k, complex(0.5 * a, 0.0), complex(0.5 * a, 0.0));
        return *this;
    }
    CylinderFunction& add_sin_mean(int c, const Lattice& alpha, const Lattice& k, double a) {
        add_mode(c, alpha, k, complex(0.0, -0.5 * a), complex(0.0, 0.5 * a));
        return *this;
    }

    [[nodiscard]] int max_degree() const {
        int d = 0;
        for (const auto& [key, v] : data_) d = std::max(d, l1_norm(key.alpha));
        return d;
    }
    [[nodiscard]] int max_mode() const {
        int K = 0;
        for (const auto& [key, v] : data_) K = std::max(K, sup_norm(key.k));
        return K;
    }

    /// s-constant, mode-0, z-free part of component c: the average at (s, z) = (-inf, 0).
    [[nodiscard]] complex average(int c = 0) const {
        const ModeData* d = find({c, Lattice(m_, 0), Lattice(n_, 0)});
        return d ? d->mean : complex{};
    }

    [[nodiscard]] complex entry_value(const ModeData& d, double s) const {
        complex v = d.mean;
        if (d.wedge != complex{}) v += d.wedge / chi(s);
        if (!d.tail.empty()) v += grid_->interpolate(d.tail, s);
        return v;
    }

    [[nodiscard]] complex value(int c, std::span<const double> phi, double s, std::span<const complex> z) const {
        require(static_cast<int>(phi.size()) == n_ && static_cast<int>(z.size()) == m_,
                "CylinderFunction::value: wrong argument dimensions");
        require(std::abs(s) <= grid_->T() * (1 + 1e-14), "CylinderFunction::value: s outside the grid");
        complex total{};
        for (const auto& [key, d] : data_) {
            if (key.c != c) continue;
            double th = 0.0;
            for (int i = 0; i < n_; ++i) th += key.k[i] * phi[i];
            complex zp(1.0, 0.0);
            for (int j = 0; j < m_; ++j) zp *= std::pow(z[j], key.alpha[j]);
            total += zp * complex(std::cos(th), std::sin(th)) * entry_value(d, s);
        }
        return total;
    }
    [[nodiscard]] complex value(std::span<const double> phi, double s) const {
        std::vector<complex> z(static_cast<std::size_t>(m_));
        return value(0, phi, s, z);
    }

    /// Majorant norm: sum over entries of |wedge| + sup_s weight(s) |mean + tail(s)|,
    /// weight = chi in the wedge class and 1 otherwise.
    [[nodiscard]] double norm() const {
        double total = 0.0;
        for (const auto& [key, d] : data_) total += entry_norm(d);
        return total;
    }
    [[nodiscard]] double entry_norm(const ModeData& d) const {
        double sup = 0.0;
        for (std::size_t i = 0; i < grid_->size(); ++i) {
            double w = wedge_class_ ? chi(grid_->node(i)) : 1.0;
            complex v = d.mean + (d.tail.empty() ? complex{} : d.tail[i]);
            sup = std::max(sup, w * std::abs(v));
        }
        return std::abs(d.wedge) + sup;
    }

    /// Largest |tail(-T)| / sup |tail| over entries; small for the vanishing-at-(-inf) class.
    [[nodiscard]] double left_decay_defect() const {
        double worst = 0.0;
        for (const auto& [key, d] : data_) {
            if (d.tail.empty()) continue;
            double sup = 0.0;
            for (complex v : d.tail) sup = std::max(sup, std::abs(v));
            if (sup > 0.0) worst = std::max(worst, std::abs(d.tail.front()) / sup);
        }
        return worst;
    }

    CylinderFunction& operator+=(const CylinderFunction& o) { return axpy(complex(1.0, 0.0), o); }
    CylinderFunction& operator-=(const CylinderFunction& o) { return axpy(complex(-1.0, 0.0), o); }
    CylinderFunction& operator*=(complex a) {
        for (auto& [key, d] : data_) {
            d.wedge *= a;
            d.mean *= a;
            for (auto& v : d.tail) v *= a;
        }
        return *this;
    }

    /// this += a * o
    CylinderFunction& axpy(complex a, const CylinderFunction& o) {
        check_compatible(o);
        wedge_class_ = wedge_class_ || o.wedge_class_;
        for (const auto& [key, src] : o.data_) {
            ModeData& d = data_[key];
            d.wedge += a * src.wedge;
            d.mean += a * src.mean;
            if (!src.tail.empty()) {
                if (d.tail.empty()) d.tail.assign(grid_->size(), complex{});
                for (std::size_t i = 0; i < d.tail.size(); ++i) d.tail[i] += a * src.tail[i];
            }
        }
        return *this;
    }

    friend CylinderFunction operator+(CylinderFunction a, const CylinderFunction& b) { return a += b; }
    friend CylinderFunction operator-(CylinderFunction a, const CylinderFunction& b) { return a -= b; }
    friend CylinderFunction operator*(complex a, CylinderFunction b) { return b *= a; }

    [[nodiscard]] CylinderFunction zero_like(int components = -1) const {
        return CylinderFunction(grid_, n_, m_, components < 0 ? components_ : components, false);
    }

    [[nodiscard]] CylinderFunction derivative_phi(int i) const {
        require(i >= 0 && i < n_, "derivative_phi: index out of range");
        CylinderFunction r = zero_like();
        r.wedge_class_ = wedge_class_;
        for (const auto& [key, d] : data_) {
            if (key.k[i] == 0) continue;
            ModeData& t = r.data_[key];
            t = d;
            complex f(0.0, key.k[i]);
            t.wedge *= f;
            t.mean *= f;
            for (auto& v : t.tail) v *= f;
        }
        return r;
    }

    /// d/ds; wedge entries use d(1/chi)/ds = -(1 + chi w)/chi.
    [[nodiscard]] CylinderFunction derivative_s() const {
        CylinderFunction r = zero_like();
        r.wedge_class_ = wedge_class_;
        for (const auto& [key, d] : data_) {
            ModeData t;
            if (!d.tail.empty()) t.tail = grid_->derivative(d.tail);
            if (d.wedge != complex{}) {
                t.wedge = -d.wedge;
                if (t.tail.empty()) t.tail.assign(grid_->size(), complex{});
                for (std::size_t i = 0; i < t.tail.size(); ++i) t.tail[i] -= chart_w(grid_->node(i)) * d.wedge;
            }
            if (!t.is_zero()) r.data_[key] = std::move(t);
        }
        return r;
    }

    [[nodiscard]] CylinderFunction derivative_z(int j) const {
        require(j >= 0 && j < m_, "derivative_z: index out of range");
        CylinderFunction r = zero_like();
        r.wedge_class_ = wedge_class_;
        for (const auto& [key, d] : data_) {
            if (key.alpha[j] == 0) continue;
            ModeKey nk = key;
            --nk.alpha[j];
            ModeData t = d;
            double f = key.alpha[j];
            t.wedge *= f;
            t.mean *= f;
            for (auto& v : t.tail) v *= f;
            r.data_[nk] = std::move(t);
        }
        return r;
    }

    /// Scalar function holding component c.
    [[nodiscard]] CylinderFunction component(int c) const {
        require(c >= 0 && c < components_, "component: index out of range");
        CylinderFunction r(grid_, n_, m_, 1, wedge_class_);
        for (const auto& [key, d] : data_)
            if (key.c == c) r.data_[{0, key.alpha, key.k}] = d;
        return r;
    }

    static CylinderFunction stack(const std::vector<CylinderFunction>& parts) {
        require(!parts.empty(), "stack: nothing to stack");
        CylinderFunction r(parts[0].grid_, parts[0].n_, parts[0].m_, static_cast<int>(parts.size()), false);
        for (std::size_t c = 0; c < parts.size(); ++c) {
            r.check_compatible(parts[c]);
            require(parts[c].components_ == 1, "stack: parts must be scalar");
            r.wedge_class_ = r.wedge_class_ || parts[c].wedge_class_;
            for (const auto& [key, d] : parts[c].data_) r.data_[{static_cast<int>(c), key.alpha, key.k}] = d;
        }
        return r;
    }

    [[nodiscard]] CylinderFunction truncated(int degree, int K) const {
        CylinderFunction r = *this;
        std::erase_if(r.data_, [&](const auto& e) {
            return l1_norm(e.first.alpha) > degree || sup_norm(e.first.k) > K;
        });
        return r;
    }

    /// Multiplies mode k by e^{-loss |k|}.
    [[nodiscard]] CylinderFunction smoothed(double loss) const {
        require(loss >= 0.0, "smoothed: loss must be non-negative");
        CylinderFunction r = *this;
        for (auto& [key, d] : r.data_) {
            double f = std::exp(-loss * sup_norm(key.k));
            d.wedge *= f;
            d.mean *= f;
            for (auto& v : d.tail) v *= f;
        }
        return r;
    }

    /// Drops entries whose norm is at most tol.
    void prune(double tol = 0.0) {
        std::erase_if(data_, [&](const auto& e) { return e.second.is_zero() || entry_norm(e.second) <= tol; });
    }

    void check_compatible(const CylinderFunction& o) const {
        require(n_ == o.n_ && m_ == o.m_ && components_ == o.components_, "CylinderFunction: dimension mismatch");
        require(grid_ == o.grid_ || *grid_ == *o.grid_, "CylinderFunction: grid mismatch");
    }

private:
    void check_key(const ModeKey& key) const {
        require(key.c >= 0 && key.c < components_, "CylinderFunction: component out of range");
        require(static_cast<int>(key.alpha.size()) == m_, "CylinderFunction: multi-index has wrong dimension");
        require(static_cast<int>(key.k.size()) == n_, "CylinderFunction: mode has wrong dimension");
        for (int a : key.alpha) require(a >= 0, "CylinderFunction: negative multi-index");
    }

    void add_mode(int c, const Lattice& alpha, const Lattice& k, complex plus, complex minus) {
        if (std::all_of(k.begin(), k.end(), [](int v) { return v == 0; })) {
            at({c, alpha, k}).mean += plus + minus;
            return;
        }
        at({c, alpha, k}).mean += plus;
        at({c, alpha, negate(k)}).mean += minus;
    }

    std::shared_ptr<const SGrid> grid_;
    int n_, m_, components_;
    bool wedge_class_;
    std::map<ModeKey, ModeData> data_;
};

/// Random real function with bounded s-constant parts and tails decaying like chi at both ends:
/// every mode with |k|_inf <= K and monomial degree <= D is filled, conjugate pairs kept consistent.
inline CylinderFunction random_cylinder_function(std::mt19937_64& rng, std::shared_ptr<const SGrid> grid, int n, int m,
                                                 int components, int K, int D, bool wedge) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CylinderFunction f(grid, n, m, components, wedge);
    auto positive = [](const Lattice& k) {
        for (int v : k)
            if (v != 0) return v > 0;
        return true;  // k = 0
    };
    for (int c = 0; c < components; ++c)
        for (int d = 0; d <= D; ++d)
            for (const auto& alpha : monomials_of_degree(m, d))
                for (const auto& k : lattice_box(n, K)) {
                    if (!positive(k)) continue;
                    const bool real = std::all_of(k.begin(), k.end(), [](int v) { return v == 0; });
                    auto draw = [&] { return real ? complex(u(rng), 0.0) : complex(u(rng), u(rng)); };
                    complex mean = draw(), a = draw(), b = draw(), w = draw();
                    double shift = u(rng);
                    for (const Lattice& kk : {k, negate(k)}) {
                        if (real && kk != k) continue;
                        auto cj = [&](complex z) { return kk == k ? z : std::conj(z); };
                        ModeKey key{c, alpha, kk};
                        f.set_mean(key, cj(mean));
                        f.set_tail_fn(key, [&](double s) { return cj(a * chi(s - shift) + b * chi(s) * std::tanh(s)); });
                        if (wedge) f.set_wedge(key, cj(w));
                    }
                }
    return f;
}

} // namespace sepsplit
