#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <exception>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace sepsplit {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

using complex = std::complex<double>;

/// Integer lattice point (k in Z^n or a multi-index in Z_+^m).
using Lattice = std::vector<int>;

enum class ErrorKind { precondition, numerical, config, io };

/// Base of every library error; the kind drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class PreconditionError : public Error {
public:
    explicit PreconditionError(const std::string& what) : Error(ErrorKind::precondition, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw PreconditionError(what);
}

inline int sup_norm(const Lattice& k) {
    int r = 0;
    for (int v : k) r = std::max(r, std::abs(v));
    return r;
}

inline int l1_norm(const Lattice& k) {
    int r = 0;
    for (int v : k) r += std::abs(v);
    return r;
}

inline double dot(const Lattice& k, const std::vector<double>& w) {
    double r = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) r += k[i] * w[i];
    return r;
}

inline Lattice negate(Lattice k) {
    for (int& v : k) v = -v;
    return k;
}

inline std::string to_string(const Lattice& k) {
    std::string s = "(";
    for (std::size_t i = 0; i < k.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(k[i]);
    }
    return s + ")";
}

/// All k in Z^n with |k|_inf <= K, in lexicographic order.
inline std::vector<Lattice> lattice_box(int n, int K) {
    std::vector<Lattice> out;
    if (n == 0) {
        out.emplace_back();
        return out;
    }
    Lattice k(n, -K);
    while (true) {
        out.push_back(k);
        int i = n - 1;
        while (i >= 0 && k[i] == K) {
            k[i] = -K;
            --i;
        }
        if (i < 0) break;
        ++k[i];
    }
    return out;
}

/// Multi-indices alpha in Z_+^m with |alpha|_1 == degree, lexicographically descending.
inline std::vector<Lattice> monomials_of_degree(int m, int degree) {
    std::vector<Lattice> out;
    if (m == 0) {
        if (degree == 0) out.emplace_back();
        return out;
    }
    Lattice a(m, 0);
    auto rec = [&](auto&& self, int pos, int left) -> void {
        if (pos == m - 1) {
            a[pos] = left;
            out.push_back(a);
            return;
        }
        for (int v = left; v >= 0; --v) {
            a[pos] = v;
            self(self, pos + 1, left - v);
        }
    };
    rec(rec, 0, degree);
    return out;
}

inline double wrap_angle(double a, double period) {
    double r = std::fmod(a, period);
    if (r < 0) r += period;
    return r;
}

/// Fixed 17-significant-digit formatting used for every emitted number.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Runs f(i) for i in [0, count). Results must be written to per-index slots so
/// assembly order does not depend on scheduling.
template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& f) {
    if (threads <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) f(i);
        return;
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < count; i += threads) f(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace sepsplit
