#pragma once

// Flow integration: single fields, subunit paths under piecewise-constant
// control laws, quadruple commutator defects, and the Gronwall bound.
//
// Fixed-step classical RK4 throughout. The right-hand sides are only
// locally Lipschitz (a.e. differentiable), so adaptive error control is
// pointless; kink crossings are handled by step refinement in the tests.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "orbitlab/field_family.hpp"

namespace orbitlab {

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A vector field given by an evaluation callback.
struct VectorField {
    int n = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eval;

    Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return eval(x); }
};

inline VectorField family_field(const FieldFamily& family, int j) {
    return {family.dimension(),
            [&family, j](const Eigen::VectorXd& x) { return family.field_value(j, x); }};
}

inline VectorField negated(const VectorField& v) {
    return {v.n, [f = v.eval](const Eigen::VectorXd& x) { return (-f(x)).eval(); }};
}

inline VectorField constant_vector_field(Eigen::VectorXd g) {
    const int n = static_cast<int>(g.size());
    return {n, [g = std::move(g)](const Eigen::VectorXd&) { return g; }};
}

/// Frozen combination sum_j u_j Y_j of the family columns.
inline VectorField frozen_combination(const FieldFamily& family, Eigen::VectorXd u) {
    if (u.size() != family.count()) throw std::invalid_argument("control dimension mismatch");
    return {family.dimension(), [&family, u = std::move(u)](const Eigen::VectorXd& x) {
                return (family.evaluate(x).Y * u).eval();
            }};
}

/// Piecewise-constant control law on [0, T] with strictly increasing
/// breakpoints; value i applies on [t_i, t_{i+1}).
struct ControlLaw {
    std::vector<double> breakpoints;        // size m+1, first must be 0
    std::vector<Eigen::VectorXd> values;    // size m

    ControlLaw() = default;
    ControlLaw(std::vector<double> bp, std::vector<Eigen::VectorXd> vals)
        : breakpoints(std::move(bp)), values(std::move(vals)) {
        validate();
    }

    static ControlLaw constant(Eigen::VectorXd u, double T) {
        return ControlLaw({0.0, T}, {std::move(u)});
    }

    void validate() const {
        if (breakpoints.size() != values.size() + 1 || values.empty())
            throw std::invalid_argument("control law needs m+1 breakpoints for m values");
        if (breakpoints.front() != 0.0)
            throw std::invalid_argument("control law must start at t = 0");
        for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
            if (!(breakpoints[i] < breakpoints[i + 1]))
                throw std::invalid_argument("control breakpoints must increase strictly");
    }

    double duration() const { return breakpoints.empty() ? 0.0 : breakpoints.back(); }

    /// Largest Euclidean control norm; subunit laws have bound <= 1.
    double sup_norm() const {
        double b = 0.0;
        for (const auto& u : values) b = std::max(b, u.norm());
        return b;
    }

    bool is_subunit(double slack = 1e-12) const { return sup_norm() <= 1.0 + slack; }

    const Eigen::VectorXd& value_at(double t) const {
        for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
            if (t < breakpoints[i + 1]) return values[i];
        return values.back();
    }

    /// Time-reversed law with negated controls: runs the path backwards.
    ControlLaw reversed() const {
        const double T = duration();
        std::vector<double> bp;
        std::vector<Eigen::VectorXd> vals;
        bp.push_back(0.0);
        for (std::size_t i = breakpoints.size() - 1; i-- > 0;) {
            bp.push_back(T - breakpoints[i]);
            vals.push_back(-values[i]);
        }
        return ControlLaw(std::move(bp), std::move(vals));
    }

    /// This law followed by `next` (breakpoints shifted by this duration).
    ControlLaw then(const ControlLaw& next) const {
        const double T = duration();
        std::vector<double> bp = breakpoints;
        std::vector<Eigen::VectorXd> vals = values;
        for (std::size_t i = 1; i < next.breakpoints.size(); ++i)
            bp.push_back(T + next.breakpoints[i]);
        vals.insert(vals.end(), next.values.begin(), next.values.end());
        return ControlLaw(std::move(bp), std::move(vals));
    }
};

/// Time-sampled trajectory with its control law and integrator metadata.
struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
    ControlLaw law;
    double step = 0.0;
    const char* method = "rk4";

    const Eigen::VectorXd& endpoint() const { return states.back(); }

    /// d(x, gamma(T)) <= T * sup|u| by the subunit definition.
    double d_budget() const { return law.duration() * law.sup_norm(); }

    /// CSV columns: t, x1..xn, u1..uq.
    void write_csv(std::ostream& out) const {
        const int n = static_cast<int>(states.front().size());
        const int q = static_cast<int>(law.values.front().size());
        out << "t";
        for (int i = 1; i <= n; ++i) out << ",x" << i;
        for (int j = 1; j <= q; ++j) out << ",u" << j;
        out << "\n";
        out.precision(17);
        for (std::size_t i = 0; i < times.size(); ++i) {
            out << times[i];
            for (int a = 0; a < n; ++a) out << ',' << states[i][a];
            const Eigen::VectorXd& u = law.value_at(std::min(times[i], law.duration() * (1 - 1e-15)));
            for (int j = 0; j < q; ++j) out << ',' << u[j];
            out << "\n";
        }
    }
};

namespace detail {

inline constexpr double kDivergenceGuard = 1e6;

inline Eigen::VectorXd rk4_step(const VectorField& f, const Eigen::VectorXd& x, double h) {
    const Eigen::VectorXd k1 = f(x);
    const Eigen::VectorXd k2 = f(x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = f(x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = f(x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline void check_guard(const Eigen::VectorXd& x) {
    if (!x.allFinite() || x.norm() > kDivergenceGuard)
        throw DivergenceError("flow diverged: state norm exceeded 1e6");
}

}  // namespace detail

/// Fixed-step RK4 flow of a single field; negative t integrates the negated
/// field forward. Every integrator step is recorded.
inline Trajectory integrate_field(const VectorField& field, const Eigen::VectorXd& x0, double t,
                                  double h) {
    if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
    if (!std::isfinite(t)) throw std::invalid_argument("time horizon must be finite");
    Trajectory traj;
    const double span = std::abs(t);
    const int steps = span == 0.0 ? 0 : std::max(1, static_cast<int>(std::ceil(span / h)));
    const double dt = steps == 0 ? 0.0 : t / steps;
    traj.step = std::abs(dt);
    Eigen::VectorXd u0 = Eigen::VectorXd::Zero(1);
    u0[0] = t < 0 ? -1.0 : 1.0;
    traj.law = ControlLaw::constant(u0, std::max(span, 1e-300));
    traj.times.reserve(static_cast<std::size_t>(steps) + 1);
    traj.states.reserve(static_cast<std::size_t>(steps) + 1);
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    Eigen::VectorXd x = x0;
    for (int i = 1; i <= steps; ++i) {
        x = detail::rk4_step(field, x, dt);
        detail::check_guard(x);
        traj.times.push_back(i * std::abs(dt));
        traj.states.push_back(x);
    }
    return traj;
}

/// RK4 integration of the subunit ODE dgamma/dt = sum_j u_j(t) Y_j(gamma)
/// across all control intervals; steps never straddle a breakpoint.
inline Trajectory integrate_subunit(const FieldFamily& family, const ControlLaw& law,
                                    const Eigen::VectorXd& x0, double h,
                                    bool require_subunit = true) {
    law.validate();
    if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
    if (require_subunit && !law.is_subunit())
        throw std::invalid_argument("control law exceeds the subunit bound |u| <= 1");
    Trajectory traj;
    traj.law = law;
    traj.step = h;
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    Eigen::VectorXd x = x0;
    double t = 0.0;
    for (std::size_t seg = 0; seg < law.values.size(); ++seg) {
        const double seg_len = law.breakpoints[seg + 1] - law.breakpoints[seg];
        const VectorField f = frozen_combination(family, law.values[seg]);
        // the epsilon keeps seg_len == k*h from rounding up to k+1 steps
        const int steps =
            std::max(1, static_cast<int>(std::ceil(seg_len / h * (1.0 - 1e-12))));
        const double dt = seg_len / steps;
        for (int i = 0; i < steps; ++i) {
            x = detail::rk4_step(f, x, dt);
            detail::check_guard(x);
            t += dt;
            traj.times.push_back(t);
            traj.states.push_back(x);
        }
    }
    return traj;
}

/// e^{-t V_j} e^{-s V_k} e^{t V_j} e^{s V_k} x - x  (rightmost flow first).
/// Vanishes exactly when the flows commute.
inline Eigen::VectorXd quadruple_defect(const VectorField& Vj, const VectorField& Vk, double t,
                                        double s, const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd y = integrate_field(Vk, x, s, h).endpoint();
    y = integrate_field(Vj, y, t, h).endpoint();
    y = integrate_field(Vk, y, -s, h).endpoint();
    y = integrate_field(Vj, y, -t, h).endpoint();
    return y - x;
}

/// Gronwall bound (a/b)(e^{bt} - 1) for f' <= a + b f with f(0) = 0.
inline double gronwall_bound(double a, double b, double t) {
    if (a < 0.0) throw std::invalid_argument("gronwall_bound needs a >= 0");
    if (!(b > 0.0)) throw std::invalid_argument("gronwall_bound needs b > 0");
    if (t < 0.0) throw std::invalid_argument("gronwall_bound needs t >= 0");
    return (a / b) * std::expm1(b * t);
}

/// Default integrator step for a horizon T.
inline double default_step(double T) { return 1e-3 * std::max(1.0, std::abs(T)); }

}  // namespace orbitlab
