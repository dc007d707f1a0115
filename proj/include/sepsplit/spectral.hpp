#pragma once

// Piecewise Chebyshev-Lobatto grid on [-T, T]: spectral accuracy on each
// panel, shared nodes at panel boundaries.

#include <Eigen/Dense>

#include "common.hpp"

namespace sepsplit {

class SGrid {
public:
    SGrid(double T, int panels, int order) : T_(T), panels_(panels), order_(order) {
        require(T > 0.0, "SGrid: T must be positive");
        require(panels >= 1 && order >= 2, "SGrid: need at least one panel of order >= 2");
        // reference nodes on [-1, 1], ascending, with barycentric weights
        ref_.resize(order + 1);
        bw_.resize(order + 1);
        for (int j = 0; j <= order; ++j) {
            ref_[j] = -std::cos(pi * j / order);
            bw_[j] = ((j % 2) ? -1.0 : 1.0) * ((j == 0 || j == order) ? 0.5 : 1.0);
        }
        ref_[order / 2] = (order % 2 == 0) ? 0.0 : ref_[order / 2];
        dref_ = Eigen::MatrixXd::Zero(order + 1, order + 1);
        for (int i = 0; i <= order; ++i) {
            double diag = 0.0;
            for (int j = 0; j <= order; ++j) {
                if (i == j) continue;
                dref_(i, j) = (bw_[j] / bw_[i]) / (ref_[i] - ref_[j]);
                diag -= dref_(i, j);
            }
            dref_(i, i) = diag;
        }
        half_ = T_ / panels_;
        nodes_.resize(static_cast<std::size_t>(panels * order + 1));
        for (int p = 0; p < panels; ++p)
            for (int j = 0; j <= order; ++j) nodes_[p * order + j] = center(p) + half_ * ref_[j];
        nodes_.front() = -T_;
        nodes_.back() = T_;
        dpanel_ = dref_ / half_;
    }

    /// Grid over [-t_factor / lambda0, t_factor / lambda0] with panels of width about `width`.
    static SGrid for_exponent(double lambda0, double t_factor = 15.0, double width = 1.0, int order = 20) {
        require(lambda0 > 0.0, "SGrid: lambda0 must be positive");
        double T = t_factor / lambda0;
        int panels = std::max(1, static_cast<int>(std::ceil(2.0 * T / width)));
        return SGrid(T, panels, order);
    }

    [[nodiscard]] double T() const { return T_; }
    [[nodiscard]] int panels() const { return panels_; }
    [[nodiscard]] int order() const { return order_; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const std::vector<double>& nodes() const { return nodes_; }
    [[nodiscard]] double node(std::size_t i) const { return nodes_[i]; }
    [[nodiscard]] std::size_t panel_start(int p) const { return static_cast<std::size_t>(p * order_); }
    /// Differentiation matrix on one panel (nodes panel_start(p) .. panel_start(p) + order).
    [[nodiscard]] const Eigen::MatrixXd& panel_diff() const { return dpanel_; }

    [[nodiscard]] int panel_of(double s) const {
        int p = static_cast<int>(std::floor((s + T_) / (2.0 * half_)));
        return std::clamp(p, 0, panels_ - 1);
    }

    /// Derivative of the piecewise interpolant at the nodes; shared nodes take the mean of both sides.
    template <class V>
    [[nodiscard]] std::vector<V> derivative(const std::vector<V>& f) const {
        std::vector<V> d(size(), V{});
        std::vector<int> count(size(), 0);
        for (int p = 0; p < panels_; ++p) {
            std::size_t s0 = panel_start(p);
            for (int i = 0; i <= order_; ++i) {
                V acc{};
                for (int j = 0; j <= order_; ++j) acc += dpanel_(i, j) * f[s0 + j];
                d[s0 + i] += acc;
                ++count[s0 + i];
            }
        }
        for (std::size_t i = 0; i < size(); ++i) d[i] /= static_cast<double>(count[i]);
        return d;
    }

    /// Value of the interpolant of nodal data f at s in [-T, T].
    template <class V>
    [[nodiscard]] V interpolate(const std::vector<V>& f, double s) const {
        int p = panel_of(s);
        std::size_t s0 = panel_start(p);
        double x = (s - center(p)) / half_;
        V num{};
        double den = 0.0;
        for (int j = 0; j <= order_; ++j) {
            double dx = x - ref_[j];
            if (dx == 0.0) return f[s0 + j];
            double w = bw_[j] / dx;
            num += w * f[s0 + j];
            den += w;
        }
        return num / den;
    }

    /// Derivative of the interpolant at s, from the panel containing s.
    template <class V>
    [[nodiscard]] V interpolate_derivative(const std::vector<V>& f, double s) const {
        int p = panel_of(s);
        std::size_t s0 = panel_start(p);
        std::vector<V> local(static_cast<std::size_t>(order_ + 1), V{});
        for (int i = 0; i <= order_; ++i)
            for (int j = 0; j <= order_; ++j) local[i] += dpanel_(i, j) * f[s0 + j];
        double x = (s - center(p)) / half_;
        V num{};
        double den = 0.0;
        for (int j = 0; j <= order_; ++j) {
            double dx = x - ref_[j];
            if (dx == 0.0) return local[j];
            double w = bw_[j] / dx;
            num += w * local[j];
            den += w;
        }
        return num / den;
    }

    /// Midpoints between consecutive nodes: off-grid points for residual checks.
    [[nodiscard]] std::vector<double> check_points() const {
        std::vector<double> c;
        c.reserve(size() - 1);
        for (std::size_t i = 0; i + 1 < size(); ++i) c.push_back(0.5 * (nodes_[i] + nodes_[i + 1]));
        return c;
    }

    bool operator==(const SGrid& o) const { return T_ == o.T_ && panels_ == o.panels_ && order_ == o.order_; }

private:
    [[nodiscard]] double center(int p) const { return -T_ + (2 * p + 1) * half_; }

    double T_;
    int panels_;
    int order_;
    double half_ = 1.0;
    std::vector<double> ref_, bw_, nodes_;
    Eigen::MatrixXd dref_, dpanel_;
};

} // namespace sepsplit
