#pragma once

#include <array>
#include <span>

#include <boost/numeric/odeint.hpp>

#include "common.hpp"

namespace sepsplit {

/// Integrates an ODE with an adaptive Runge-Kutta-Fehlberg 7(8) stepper and
/// returns the state at every requested time. Times must be monotone; a
/// decreasing list integrates backward.
template <class State, class System>
std::vector<State> integrate_at_times(System&& system, State start, std::span<const double> times, double tol) {
    namespace odeint = boost::numeric::odeint;
    std::vector<State> out;
    if (times.empty()) return out;
    out.reserve(times.size());
    const bool backward = times.size() > 1 && times.back() < times.front();
    double dt = backward ? -1e-3 : 1e-3;
    double last_t = times.front();
    auto stepper = odeint::make_controlled<odeint::runge_kutta_fehlberg78<State>>(tol, tol);
    auto observer = [&](const State& x, double t) {
        for (double v : x)
            if (!std::isfinite(v)) throw NumericalError("ODE solution became non-finite at t = " + format_double(t));
        out.push_back(x);
        last_t = t;
    };
    try {
        odeint::integrate_times(stepper, std::forward<System>(system), start, times.begin(), times.end(), dt,
                                observer, odeint::max_step_checker(1000000));
    } catch (const NumericalError&) {
        throw;
    } catch (const std::exception& e) {
        throw NumericalError(std::string("adaptive integration failed after t = ") + format_double(last_t) + ": " +
                             e.what());
    }
    return out;
}

} // namespace sepsplit
