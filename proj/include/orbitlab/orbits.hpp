#pragma once

// Orbit-level verification: rank stability along subunit paths with the
// Gronwall-type bound, single-wedge drift, breadth-first orbit sampling
// with control-law witnesses, rank constancy, and Carnot-Caratheodory
// distance upper bounds by control search.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "orbitlab/flows.hpp"
#include "orbitlab/multivector.hpp"
#include "orbitlab/sampling.hpp"

namespace orbitlab {

class PreconditionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
    return splitmix64(splitmix64(splitmix64(seed ^ a) ^ b) ^ c);
}

/// Endpoint of the m-segment equal-duration subunit law, allocation-light.
inline Eigen::VectorXd subunit_endpoint(const FieldFamily& family,
                                        const std::vector<Eigen::VectorXd>& controls, double T,
                                        const Eigen::VectorXd& x0, int steps_per_segment) {
    const int n = family.dimension();
    Eigen::VectorXd x = x0, k1(n), k2(n), k3(n), k4(n), tmp(n);
    const double dt = T / (static_cast<double>(controls.size()) * steps_per_segment);
    for (const auto& u : controls) {
        for (int s = 0; s < steps_per_segment; ++s) {
            family.combination_into(u, x, k1);
            tmp = x + 0.5 * dt * k1;
            family.combination_into(u, tmp, k2);
            tmp = x + 0.5 * dt * k2;
            family.combination_into(u, tmp, k3);
            tmp = x + dt * k3;
            family.combination_into(u, tmp, k4);
            x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!x.allFinite() || x.norm() > kDivergenceGuard)
                throw DivergenceError("flow diverged during control search");
        }
    }
    return x;
}

}  // namespace detail

/// One sampled point of the Gronwall drift curve.
struct DriftSample {
    double t = 0.0;
    double drift = 0.0;  // |Lambda_p(gamma(t)) - Lambda_p(x)|
};

struct RankStabilityRecord {
    Eigen::VectorXd x;
    int p = 0;
    double lambda_norm = 0.0;                    // |Lambda_p(x)|
    std::vector<std::vector<DriftSample>> curves;  // one per law
    bool zero_case = false;
    double zero_tol = 0.0;
    double sup_drift = 0.0;
    double c_hat = 0.0;    // smallest constant validating the bound
    bool c_found = false;  // a finite c_hat <= 1e3 exists
    bool pass = false;
};

namespace detail {

/// Does the bound drift <= a (e^{Ct} - 1) hold on t in [0, 1/C] for every
/// recorded sample? Monotone in C, so bisection applies.
inline bool gronwall_bound_holds(const std::vector<std::vector<DriftSample>>& curves, double a,
                                 double C) {
    const double horizon = 1.0 / C;
    for (const auto& curve : curves)
        for (const auto& s : curve) {
            if (s.t > horizon) continue;
            if (s.drift > a * std::expm1(C * s.t) + 1e-12) return false;
        }
    return true;
}

}  // namespace detail

/// Empirical check of the rank-stability bound
/// |Lambda_p(gamma(t)) - Lambda_p(x)| <= |Lambda_p(x)| (e^{Ct} - 1)
/// across a set of subunit laws, fitting the smallest admissible C by
/// bisection over [1e-3, 1e3]. A zero base norm switches to the
/// zero-propagation check (the mechanism behind rank constancy).
inline RankStabilityRecord rank_stability_audit(const FieldFamily& family,
                                                const Eigen::VectorXd& x,
                                                const std::vector<ControlLaw>& laws, int p,
                                                double h) {
    RankStabilityRecord rec;
    rec.x = x;
    rec.p = p;
    const PointFrame base = family.evaluate(x);
    const Eigen::MatrixXd lam0 = lambda_p(base, p).minors;
    rec.lambda_norm = lam0.norm();
    rec.zero_tol = 1e-8 * std::max(1.0, std::pow(base.Y.norm(), p));
    rec.zero_case = rec.lambda_norm <= rec.zero_tol;

    for (const auto& law : laws) {
        const Trajectory traj = integrate_subunit(family, law, x, h);
        std::vector<DriftSample> curve;
        curve.reserve(traj.times.size());
        for (std::size_t i = 0; i < traj.times.size(); ++i) {
            PointFrame f;
            f.x = traj.states[i];
            f.Y = family.evaluate(traj.states[i]).Y;
            const double drift = (lambda_p(f, p).minors - lam0).norm();
            curve.push_back({traj.times[i], drift});
            rec.sup_drift = std::max(rec.sup_drift, drift);
        }
        rec.curves.push_back(std::move(curve));
    }

    if (rec.zero_case) {
        rec.pass = rec.sup_drift <= rec.zero_tol;
        rec.c_found = rec.pass;
        rec.c_hat = 0.0;
        return rec;
    }

    double lo = 1e-3, hi = 1e3;
    if (!detail::gronwall_bound_holds(rec.curves, rec.lambda_norm, hi)) {
        rec.c_found = false;
        rec.pass = false;
        rec.c_hat = std::numeric_limits<double>::infinity();
        return rec;
    }
    if (detail::gronwall_bound_holds(rec.curves, rec.lambda_norm, lo)) {
        rec.c_hat = lo;
    } else {
        for (int it = 0; it < 60; ++it) {
            const double mid = std::sqrt(lo * hi);
            if (detail::gronwall_bound_holds(rec.curves, rec.lambda_norm, mid))
                hi = mid;
            else
                lo = mid;
        }
        rec.c_hat = hi;
    }
    rec.c_found = true;
    rec.pass = true;
    return rec;
}

struct WedgeDriftRecord {
    IndexTuple I;
    double eta = 0.0;
    double wedge_norm_base = 0.0;  // |Y_I(x)|
    std::vector<DriftSample> curve;
    double c_hat = 0.0;     // Gronwall constant fitted on the same law
    double c_linear = 0.0;  // smallest c with drift <= c (t/eta) |Y_I(x)|
    bool pass = false;
};

/// Drift of a single wedge Y_I along one subunit path under the
/// eta-maximality hypothesis |Y_I(x)| > eta max_J |Y_J(x)|.
inline WedgeDriftRecord single_wedge_drift(const FieldFamily& family, const Eigen::VectorXd& x,
                                           const IndexTuple& I, const ControlLaw& law, double eta,
                                           double h) {
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("eta must lie in (0,1)");
    const int p = static_cast<int>(I.size());
    const PointFrame base = family.evaluate(x);
    WedgeDriftRecord rec;
    rec.I = I;
    rec.eta = eta;
    double max_wedge = 0.0;
    for (const auto& J : index_sets(p, family.count()))
        max_wedge = std::max(max_wedge, wedge_norm(base, J));
    rec.wedge_norm_base = wedge_norm(base, I);
    if (!(rec.wedge_norm_base > eta * max_wedge))
        throw PreconditionError("eta-maximality hypothesis fails at the base point");

    const RankStabilityRecord stab = rank_stability_audit(family, x, {law}, p, h);
    rec.c_hat = stab.c_hat;

    const Eigen::MatrixXd base_wedge = lambda_single(base, I).minors;
    const Trajectory traj = integrate_subunit(family, law, x, h);
    const double horizon = stab.c_found && stab.c_hat > 0.0 ? 1.0 / stab.c_hat
                                                            : std::numeric_limits<double>::infinity();
    rec.c_linear = 0.0;
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
        PointFrame f;
        f.x = traj.states[i];
        f.Y = family.evaluate(traj.states[i]).Y;
        const double drift = (lambda_single(f, I).minors - base_wedge).norm();
        rec.curve.push_back({traj.times[i], drift});
        const double t = traj.times[i];
        if (t > 0.0 && t <= horizon)
            rec.c_linear = std::max(rec.c_linear, drift * eta / (t * rec.wedge_norm_base));
    }
    rec.pass = std::isfinite(rec.c_linear);
    return rec;
}

struct OrbitPoint {
    Eigen::VectorXd x;
    ControlLaw witness;   // subunit law re-integrating from the seed to x
    double d_upper = 0.0; // witness budget T * sup|u|
    int rank = 0;
};

struct OrbitSample {
    Eigen::VectorXd seed_point;
    std::vector<OrbitPoint> points;  // points[0] is the seed itself
    double h_mov = 0.0;
    double step = 0.0;  // integrator step used for the moves
    int depth = 0;
    int branching = 0;
    std::uint64_t seed = 0;
    double rank_tol = 0.0;
};

/// Breadth-first sample of the orbit through x0: per frontier point the
/// moves are the 2q primitive flows e^{+-h_mov Y_j} plus random-direction
/// subunit segments, deduplicated on a spatial grid of pitch h_mov/4.
inline OrbitSample orbit_sample(const FieldFamily& family, const Eigen::VectorXd& x0,
                                double h_mov, int depth, int branching, std::uint64_t seed,
                                double rank_tol = 1e-8, double integrator_step = 0.0) {
    if (!(h_mov > 0.0) || depth < 1) throw std::invalid_argument("orbit sampling needs positive budget");
    const int q = family.count();
    if (branching < 2 * q) branching = 2 * q;
    OrbitSample sample;
    sample.seed_point = x0;
    sample.h_mov = h_mov;
    sample.step = integrator_step > 0.0 ? integrator_step : h_mov / 16.0;
    sample.depth = depth;
    sample.branching = branching;
    sample.seed = seed;
    sample.rank_tol = rank_tol;

    const double resolution = h_mov / 4.0;
    std::map<std::vector<long long>, bool> occupied;
    auto cell_of = [&](const Eigen::VectorXd& x) {
        std::vector<long long> cell(static_cast<std::size_t>(x.size()));
        for (Eigen::Index i = 0; i < x.size(); ++i)
            cell[static_cast<std::size_t>(i)] = static_cast<long long>(std::floor(x[i] / resolution));
        return cell;
    };

    auto rank_at = [&](const Eigen::VectorXd& x) {
        return pointwise_rank(family.evaluate(x), rank_tol);
    };

    OrbitPoint seed_pt;
    seed_pt.x = x0;
    seed_pt.witness = ControlLaw();  // empty: zero-length path
    seed_pt.d_upper = 0.0;
    seed_pt.rank = rank_at(x0);
    sample.points.push_back(seed_pt);
    occupied[cell_of(x0)] = true;

    std::vector<std::size_t> frontier = {0};
    for (int level = 0; level < depth; ++level) {
        std::vector<std::size_t> next;
        for (std::size_t fi = 0; fi < frontier.size(); ++fi) {
            const std::size_t node = frontier[fi];
            for (int branch = 0; branch < branching; ++branch) {
                Eigen::VectorXd u = Eigen::VectorXd::Zero(q);
                if (branch < 2 * q) {
                    u[branch / 2] = branch % 2 == 0 ? 1.0 : -1.0;
                } else {
                    std::mt19937_64 rng(detail::mix_seed(
                        seed, static_cast<std::uint64_t>(level),
                        static_cast<std::uint64_t>(node), static_cast<std::uint64_t>(branch)));
                    u = random_unit_vector(rng, q);
                }
                const ControlLaw move = ControlLaw::constant(u, h_mov);
                Eigen::VectorXd endpoint;
                try {
                    endpoint = integrate_subunit(family, move, sample.points[node].x,
                                                 sample.step)
                                   .endpoint();
                } catch (const DivergenceError&) {
                    continue;
                }
                const auto cell = cell_of(endpoint);
                if (occupied.contains(cell)) continue;
                occupied[cell] = true;
                OrbitPoint pt;
                pt.x = endpoint;
                pt.witness = sample.points[node].witness.values.empty()
                                 ? move
                                 : sample.points[node].witness.then(move);
                pt.d_upper = pt.witness.duration() * pt.witness.sup_norm();
                pt.rank = rank_at(endpoint);
                sample.points.push_back(std::move(pt));
                next.push_back(sample.points.size() - 1);
            }
        }
        frontier = std::move(next);
        if (frontier.empty()) break;
    }
    return sample;
}

struct RankConstancyReport {
    std::map<int, int> histogram;
    int modal_rank = 0;
    bool pass = false;
};

/// Rank constancy across an orbit sample cloud (the Corollary check).
inline RankConstancyReport rank_constancy_audit(const FieldFamily& family,
                                                const OrbitSample& sample, double tol_rel) {
    if (sample.points.empty()) throw std::invalid_argument("empty orbit sample");
    RankConstancyReport report;
    for (const auto& pt : sample.points)
        ++report.histogram[pointwise_rank(family.evaluate(pt.x), tol_rel)];
    int best_count = 0;
    for (const auto& [rank, count] : report.histogram)
        if (count > best_count) {
            best_count = count;
            report.modal_rank = rank;
        }
    report.pass = report.histogram.size() == 1;
    return report;
}

struct CcResult {
    bool reached = false;
    double d_hat = std::numeric_limits<double>::infinity();  // T + endpoint penalty
    double T = 0.0;
    double penalty = std::numeric_limits<double>::infinity();
    std::optional<ControlLaw> witness;
    int restarts_used = 0;
};

/// Upper bound on the control distance d(x, y) by random-restart cyclic
/// coordinate descent over m-segment piecewise-constant subunit controls,
/// followed by horizon shrinking. Acceptance requires endpoint penalty
/// <= penalty_tol; the reported d_hat = T + penalty biases to the sound
/// side. Warm-start laws (e.g. concatenated witnesses) join the restarts.
inline CcResult cc_distance_upper(const FieldFamily& family, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& y, int segments, int restarts,
                                  std::uint64_t seed, double h,
                                  const std::vector<ControlLaw>& warm_starts = {},
                                  double penalty_tol = 1e-4) {
    if (segments < 1) throw std::invalid_argument("need at least one control segment");
    const int q = family.count();
    CcResult best;

    if ((x - y).norm() <= 1e-12) {
        best.reached = true;
        best.d_hat = 0.0;
        best.T = 0.0;
        best.penalty = 0.0;
        return best;
    }

    // local speed scale for the initial horizon guess
    double speed = 1e-6;
    for (const Eigen::VectorXd& probe : {x, y, Eigen::VectorXd(0.5 * (x + y))}) {
        try {
            const Eigen::MatrixXd Y = family.evaluate(probe).Y;
            for (int j = 0; j < q; ++j) speed = std::max(speed, Y.col(j).norm());
        } catch (const EvalError&) {
        }
    }
    const double T0 = (x - y).norm() / speed;

    auto clamp_ball = [](Eigen::VectorXd& u) {
        const double nrm = u.norm();
        if (nrm > 1.0) u /= nrm;
    };

    auto endpoint_penalty = [&](const std::vector<Eigen::VectorXd>& controls, double T) {
        const int steps = std::clamp(
            static_cast<int>(std::ceil(T / (static_cast<double>(controls.size()) * h) / 4.0)), 8,
            4000);
        try {
            return (detail::subunit_endpoint(family, controls, T, x, steps) - y).norm();
        } catch (const DivergenceError&) {
            return std::numeric_limits<double>::infinity();
        } catch (const EvalError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    // cyclic coordinate descent on the controls at a fixed horizon; the
    // geometric step schedule reaches the control resolution the endpoint
    // tolerance demands
    auto descend = [&](std::vector<Eigen::VectorXd>& controls, double T, double& penalty) {
        const double floor_step =
            std::max(1e-6, 0.05 * penalty_tol / std::max(1.0, T * speed));
        for (double step = 0.4; step >= floor_step; step /= 3.0) {
            bool improved = true;
            int guard = 0;
            while (improved && guard++ < 3) {
                improved = false;
                for (auto& u : controls)
                    for (int c = 0; c < q; ++c)
                        for (const double delta : {step, -step}) {
                            Eigen::VectorXd trial = u;
                            trial[c] += delta;
                            clamp_ball(trial);
                            std::swap(u, trial);
                            const double p = endpoint_penalty(controls, T);
                            if (p < penalty) {
                                penalty = p;
                                improved = true;
                            } else {
                                std::swap(u, trial);
                            }
                        }
                if (penalty <= 0.25 * penalty_tol) return;
            }
        }
    };

    auto record = [&](const std::vector<Eigen::VectorXd>& controls, double T, double penalty,
                      int restart) {
        if (penalty > penalty_tol) return;
        const double d = T + penalty;
        if (d < best.d_hat) {
            best.reached = true;
            best.d_hat = d;
            best.T = T;
            best.penalty = penalty;
            std::vector<double> bp(static_cast<std::size_t>(segments) + 1);
            for (int i = 0; i <= segments; ++i)
                bp[static_cast<std::size_t>(i)] = T * i / segments;
            best.witness = ControlLaw(bp, controls);
            best.restarts_used = restart + 1;
        }
    };

    auto run_restart = [&](std::vector<Eigen::VectorXd> controls, double T, int restart) {
        double penalty = endpoint_penalty(controls, T);
        // grow the horizon until the target is reachable
        for (int grow = 0; grow < 14 && penalty > penalty_tol; ++grow) {
            descend(controls, T, penalty);
            if (penalty <= penalty_tol) break;
            if (best.reached && T > 4.0 * best.T) return;  // another restart already did better
            T *= 1.5;
            penalty = endpoint_penalty(controls, T);
        }
        if (penalty > penalty_tol) return;
        record(controls, T, penalty, restart);
        // shrink the horizon while the target stays reachable
        double shrink = 0.2;
        auto kept = controls;
        while (shrink > 1e-4) {
            const double T2 = T * (1.0 - shrink);
            auto trial = kept;
            double p2 = endpoint_penalty(trial, T2);
            descend(trial, T2, p2);
            if (p2 <= penalty_tol) {
                T = T2;
                kept = trial;
                record(kept, T, p2, restart);
            } else {
                shrink *= 0.5;
            }
        }
    };

    int restart_index = 0;
    // informed start: least-squares control toward the target
    {
        std::vector<Eigen::VectorXd> controls(static_cast<std::size_t>(segments));
        Eigen::VectorXd u0;
        try {
            const Eigen::MatrixXd Y = family.evaluate(x).Y;
            u0 = Y.completeOrthogonalDecomposition().solve(((y - x) / T0).eval());
        } catch (const EvalError&) {
            u0 = Eigen::VectorXd::Zero(q);
        }
        clamp_ball(u0);
        for (auto& u : controls) u = u0;
        run_restart(std::move(controls), T0, restart_index++);
    }
    // warm starts from caller-provided witness laws
    for (const auto& law : warm_starts) {
        if (static_cast<int>(law.values.front().size()) != q) continue;
        std::vector<Eigen::VectorXd> controls(static_cast<std::size_t>(segments));
        const double T = std::max(law.duration(), 1e-9);
        for (int i = 0; i < segments; ++i) {
            const double t = T * (i + 0.5) / segments;
            controls[static_cast<std::size_t>(i)] = law.value_at(t);
            clamp_ball(controls[static_cast<std::size_t>(i)]);
        }
        run_restart(std::move(controls), T, restart_index++);
    }
    // random restarts
    for (int r = 0; r < restarts; ++r) {
        std::mt19937_64 rng(detail::mix_seed(seed, 0xccULL, static_cast<std::uint64_t>(r), 0));
        std::vector<Eigen::VectorXd> controls(static_cast<std::size_t>(segments));
        for (auto& u : controls) u = random_in_unit_ball(rng, q);
        std::uniform_real_distribution<double> scale(0.8, 2.0);
        run_restart(std::move(controls), T0 * scale(rng), restart_index++);
    }

    // re-verify the winner at the caller's integrator resolution
    if (best.reached && best.witness) {
        const Trajectory fine = integrate_subunit(family, *best.witness, x, h);
        best.penalty = (fine.endpoint() - y).norm();
        best.d_hat = best.T + best.penalty;
        best.reached = best.penalty <= 2.0 * penalty_tol;
    }
    return best;
}

}  // namespace orbitlab
