#pragma once

// Exponential-map charts: basis selection (columns I, coordinate rows K),
// the beta matrix field normalizing the V_j fields to identity K-components,
// the chart map Phi(u) = time-1 flow of sum u_j V_j from x0, and the
// tangency / span / slice / commutativity diagnostics.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "orbitlab/flows.hpp"
#include "orbitlab/multivector.hpp"
#include "orbitlab/orbits.hpp"
#include "orbitlab/sampling.hpp"

namespace orbitlab {

class DegeneratePointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShrinkRadiusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kBlockCondBound = 1e6;

/// Basis choice at x0: grade p, columns I maximizing |Y_I| (ties
/// lexicographic), rows K maximizing |Y_I^K| for that I.
struct ChartBasis {
    Eigen::VectorXd x0;
    int p = 0;
    IndexTuple I;
    IndexTuple K;
    double eta_quality = 0.0;  // |Y_I^K| / |Y_I|: share of the wedge norm in the block
    double block_cond = 0.0;   // condition number of the K x I block at x0
};

namespace detail {

inline Eigen::MatrixXd chart_block(const FieldFamily& family, const ChartBasis& basis,
                                   const Eigen::VectorXd& x) {
    const PointFrame frame = family.evaluate(x);
    Eigen::MatrixXd G(basis.p, basis.p);
    for (int l = 0; l < basis.p; ++l)
        for (int k = 0; k < basis.p; ++k)
            G(l, k) = frame.Y(basis.K[static_cast<std::size_t>(l)] - 1,
                              basis.I[static_cast<std::size_t>(k)] - 1);
    return G;
}

inline double cond_of(const Eigen::MatrixXd& G) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
    const double smin = svd.singularValues().minCoeff();
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return svd.singularValues().maxCoeff() / smin;
}

}  // namespace detail

/// Selects (p, I, K) at x0. forced_p overrides the pointwise rank (used by
/// the negative controls that chart a sub-span on purpose).
inline ChartBasis select_basis(const FieldFamily& family, const Eigen::VectorXd& x0,
                               double tol_rel = 1e-8, int forced_p = 0) {
    const PointFrame frame = family.evaluate(x0);
    const int p = forced_p > 0 ? forced_p : pointwise_rank(frame, tol_rel);
    if (p < 1)
        throw DegeneratePointError("pointwise rank is 0: the orbit is locally the point itself");
    ChartBasis basis;
    basis.x0 = x0;
    basis.p = p;
    double best_norm = -1.0;
    for (const auto& I : index_sets(p, family.count())) {
        const double nrm = wedge_norm(frame, I);
        if (nrm > best_norm) {  // strict: ties keep the lexicographically first
            best_norm = nrm;
            basis.I = I;
        }
    }
    if (best_norm <= 0.0) throw DegeneratePointError("all wedges vanish at the base point");
    double best_minor = -1.0;
    for (const auto& K : index_sets(p, family.dimension())) {
        const double m = std::abs(minor_det(frame.Y, K, basis.I));
        if (m > best_minor) {
            best_minor = m;
            basis.K = K;
        }
    }
    basis.eta_quality = best_minor / best_norm;
    basis.block_cond = detail::cond_of(detail::chart_block(family, basis, x0));
    if (!(basis.block_cond <= kBlockCondBound))
        throw DegeneratePointError("coordinate block is numerically singular at the base point");
    return basis;
}

/// The normalized frame V_l = sum_k beta_l^k Y_{i_k} with identity
/// K-components: beta(x) is the inverse transpose of the K x I block.
class VFrame {
public:
    VFrame(const FieldFamily& family, ChartBasis basis)
        : family_(&family), basis_(std::move(basis)) {}

    const ChartBasis& basis() const { return basis_; }

    /// beta(x): p x p with sum_k beta_i^k g_{i_k}^{K_l} = delta_i^l.
    Eigen::MatrixXd beta(const Eigen::VectorXd& x) const {
        const Eigen::MatrixXd G = detail::chart_block(*family_, basis_, x);
        if (!(detail::cond_of(G) <= kBlockCondBound))
            throw ShrinkRadiusError("coordinate block degenerated inside the chart radius");
        return G.transpose().partialPivLu().solve(
            Eigen::MatrixXd::Identity(basis_.p, basis_.p));
    }

    /// n x p matrix of the V_l values at x (column l = V_l).
    Eigen::MatrixXd values(const Eigen::VectorXd& x) const {
        const PointFrame frame = family_->evaluate(x);
        Eigen::MatrixXd A(family_->dimension(), basis_.p);
        for (int k = 0; k < basis_.p; ++k)
            A.col(k) = frame.Y.col(basis_.I[static_cast<std::size_t>(k)] - 1);
        return A * beta(x).transpose();
    }

    /// max |(beta G^T - I)_{il}| at x.
    double beta_defect(const Eigen::VectorXd& x) const {
        const Eigen::MatrixXd G = detail::chart_block(*family_, basis_, x);
        const Eigen::MatrixXd B = beta(x);
        return (B * G.transpose() - Eigen::MatrixXd::Identity(basis_.p, basis_.p))
            .cwiseAbs()
            .maxCoeff();
    }

    /// V_l as a flowable field.
    VectorField field(int l) const {
        return {family_->dimension(), [this, l](const Eigen::VectorXd& x) {
                    return values(x).col(l).eval();
                }};
    }

    /// Frozen combination sum_l u_l V_l.
    VectorField frozen(Eigen::VectorXd u) const {
        return {family_->dimension(), [this, u = std::move(u)](const Eigen::VectorXd& x) {
                    return (values(x) * u).eval();
                }};
    }

private:
    const FieldFamily* family_;
    ChartBasis basis_;
};

inline std::vector<VectorField> v_fields(const FieldFamily& family, const ChartBasis& basis) {
    VFrame frame(family, basis);
    std::vector<VectorField> out;
    for (int l = 0; l < basis.p; ++l) {
        // each field owns its frame copy so the closures stay self-contained
        out.push_back(VectorField{
            family.dimension(), [frame, l](const Eigen::VectorXd& x) {
                return frame.values(x).col(l).eval();
            }});
    }
    return out;
}

/// Phi(u) = time-1 flow of the frozen field sum_j u_j V_j from x0.
inline Eigen::VectorXd chart_map(const FieldFamily& family, const ChartBasis& basis,
                                 const Eigen::VectorXd& u, double h) {
    if (u.size() != basis.p) throw std::invalid_argument("chart parameter dimension mismatch");
    VFrame frame(family, basis);
    if (u.norm() == 0.0) return basis.x0;
    return integrate_field(frame.frozen(u), basis.x0, 1.0, h).endpoint();
}

/// A built chart: basis, radius, map, and the sampled Jacobian machinery.
class Chart {
public:
    Chart(const FieldFamily& family, ChartBasis basis, double delta, double h)
        : family_(&family), frame_(family, basis), delta_(delta), h_(h) {}

    const ChartBasis& basis() const { return frame_.basis(); }
    const VFrame& v_frame() const { return frame_; }
    double delta() const { return delta_; }
    double step() const { return h_; }
    int p() const { return frame_.basis().p; }
    const Eigen::VectorXd& x0() const { return frame_.basis().x0; }

    Eigen::VectorXd map(const Eigen::VectorXd& u) const {
        if (!(u.norm() < delta_ * (1.0 + 1e-9)))
            throw std::invalid_argument("chart parameter outside B(0, delta)");
        if (u.norm() == 0.0) return x0();
        return integrate_field(frame_.frozen(u), x0(), 1.0, h_).endpoint();
    }

    /// Central-difference Jacobian of Phi at u (n x p).
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& u, double h_fd = 1e-5) const {
        Eigen::MatrixXd J(family_->dimension(), p());
        for (int k = 0; k < p(); ++k) {
            Eigen::VectorXd up = u, um = u;
            up[k] += h_fd;
            um[k] -= h_fd;
            J.col(k) = (map_unchecked(up) - map_unchecked(um)) / (2.0 * h_fd);
        }
        return J;
    }

    Eigen::VectorXd map_unchecked(const Eigen::VectorXd& u) const {
        if (u.norm() == 0.0) return x0();
        return integrate_field(frame_.frozen(u), x0(), 1.0, h_).endpoint();
    }

private:
    const FieldFamily* family_;
    VFrame frame_;
    double delta_;
    double h_;
};

struct ChartOptions {
    double tol_rel = 1e-8;
    int forced_p = 0;              // 0: use the pointwise rank
    double delta_override = 0.0;   // 0: adaptive choice
    double h = 1e-3;               // integrator step for Phi
    double ray_cap = 1.0;          // furthest probed chart-ray parameter
};

/// Builds the chart at x0. The radius starts at half the distance over
/// which the block condition stays below 1e6 along the 2p coordinate rays,
/// then halves (floor 1e-3) until the quick beta/injectivity audits pass.
inline Chart build_chart(const FieldFamily& family, const Eigen::VectorXd& x0,
                         const ChartOptions& opts = {}) {
    const ChartBasis basis = select_basis(family, x0, opts.tol_rel, opts.forced_p);
    VFrame frame(family, basis);

    double delta = opts.delta_override;
    if (delta <= 0.0) {
        double admissible = opts.ray_cap;
        for (int l = 0; l < basis.p; ++l)
            for (const double sign : {1.0, -1.0}) {
                double reach = 0.0;
                for (double t = 0.05; t <= opts.ray_cap + 1e-12; t += 0.05) {
                    Eigen::VectorXd u = Eigen::VectorXd::Zero(basis.p);
                    u[l] = sign * t;
                    try {
                        const Eigen::VectorXd x = chart_map(family, basis, u, opts.h);
                        if (!(detail::cond_of(detail::chart_block(family, basis, x)) <=
                              kBlockCondBound))
                            break;
                    } catch (const std::runtime_error&) {
                        break;
                    }
                    reach = t;
                }
                admissible = std::min(admissible, reach);
            }
        delta = std::max(0.5 * admissible, 1e-3);
    }

    for (int attempt = 0; attempt < 8; ++attempt) {
        Chart chart(family, basis, delta, opts.h);
        bool ok = true;
        // beta identity at a few chart points
        HaltonSampler sampler(basis.p, 7);
        for (int s = 0; s < 5 && ok; ++s) {
            Eigen::VectorXd u = sampler.next01();
            u = (2.0 * u.array() - 1.0).matrix() * (0.7 * delta / std::sqrt(double(basis.p)));
            try {
                ok = frame.beta_defect(chart.map_unchecked(u)) <= 1e-9;
            } catch (const std::runtime_error&) {
                ok = false;
            }
        }
        // coarse injectivity along the coordinate rays
        for (int l = 0; l < basis.p && ok; ++l) {
            Eigen::VectorXd a = Eigen::VectorXd::Zero(basis.p), b = a;
            a[l] = 0.9 * delta;
            b[l] = -0.9 * delta;
            try {
                ok = (chart.map_unchecked(a) - chart.map_unchecked(b)).norm() >=
                     0.5 * (a - b).norm();
            } catch (const std::runtime_error&) {
                ok = false;
            }
        }
        if (ok) return chart;
        if (delta <= 1e-3) break;
        delta = std::max(0.5 * delta, 1e-3);
    }
    return Chart(family, basis, delta, opts.h);
}

/// Max over sampled u of |central-diff dPhi/du_k - V_k(Phi(u))|.
inline double tangency_audit(const FieldFamily& family, const Chart& chart, int samples,
                             double h_fd, std::uint64_t seed = 5) {
    HaltonSampler sampler(chart.p(), seed);
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        Eigen::VectorXd u = sampler.next01();
        u = (2.0 * u.array() - 1.0).matrix() *
            (0.85 * chart.delta() / std::sqrt(double(chart.p())));
        const Eigen::MatrixXd J = chart.jacobian(u, h_fd);
        const Eigen::MatrixXd V = chart.v_frame().values(chart.map_unchecked(u));
        worst = std::max(worst, (J - V).cwiseAbs().maxCoeff());
    }
    return worst;
}

/// Rank of the augmented frame [V | Y] must equal p at sampled chart
/// points: the V span agrees with the full family span on the chart.
inline bool span_agreement_audit(const FieldFamily& family, const Chart& chart, int samples,
                                 double tol_rel = 1e-8, std::uint64_t seed = 6) {
    HaltonSampler sampler(chart.p(), seed);
    for (int s = 0; s < samples; ++s) {
        Eigen::VectorXd u = sampler.next01();
        u = (2.0 * u.array() - 1.0).matrix() *
            (0.85 * chart.delta() / std::sqrt(double(chart.p())));
        const Eigen::VectorXd x = chart.map_unchecked(u);
        PointFrame augmented;
        augmented.x = x;
        augmented.Y.resize(family.dimension(), chart.p() + family.count());
        augmented.Y.leftCols(chart.p()) = chart.v_frame().values(x);
        augmented.Y.rightCols(family.count()) = family.evaluate(x).Y;
        if (pointwise_rank(augmented, tol_rel) != chart.p()) return false;
    }
    return true;
}

struct SliceAuditResult {
    double max_residual = 0.0;
    int probes_run = 0;
    int inconclusive = 0;  // projections that left B(0, delta)
};

/// Probes B_d(y, sigma) subset Phi(B(0, delta)): integrates subunit paths
/// of budget sigma from chart points, inverts through the K-coordinate
/// projection (plus damped fixed-point polish), and reports the largest
/// distance from a probe endpoint to its recovered chart point.
inline SliceAuditResult slice_audit(const FieldFamily& family, const Chart& chart, double sigma,
                                    int probes, std::uint64_t seed, double h) {
    if (!(sigma > 0.0) || !(sigma < chart.delta()))
        throw std::invalid_argument("slice audit needs 0 < sigma < delta");
    const int q = family.count();
    const int p = chart.p();

    // local speed bound shrinks the start ball so projections stay inside
    double speed = 0.0;
    {
        const Eigen::MatrixXd Y = family.evaluate(chart.x0()).Y;
        for (int j = 0; j < q; ++j) speed = std::max(speed, Y.col(j).norm());
    }
    const double margin = sigma * std::max(1.0, 1.5 * speed);
    const double r0 = std::max(std::min(0.5 * chart.delta(), chart.delta() - margin),
                               0.25 * chart.delta());

    SliceAuditResult result;
    HaltonSampler upts(p, seed);
    std::mt19937_64 rng(seed ^ 0x51eceULL);

    auto invert_and_measure = [&](const Eigen::VectorXd& z) {
        Eigen::VectorXd u(p);
        for (int l = 0; l < p; ++l)
            u[l] = z[chart.basis().K[static_cast<std::size_t>(l)] - 1] -
                   chart.x0()[chart.basis().K[static_cast<std::size_t>(l)] - 1];
        if (!(u.norm() < chart.delta())) {
            ++result.inconclusive;
            return;
        }
        // damped fixed-point corrections on the K-coordinates
        Eigen::VectorXd image = chart.map_unchecked(u);
        for (int it = 0; it < 20; ++it) {
            Eigen::VectorXd gap(p);
            for (int l = 0; l < p; ++l)
                gap[l] = z[chart.basis().K[static_cast<std::size_t>(l)] - 1] -
                         image[chart.basis().K[static_cast<std::size_t>(l)] - 1];
            if (gap.norm() <= 1e-12) break;
            u += 0.7 * gap;
            if (!(u.norm() < chart.delta())) {
                ++result.inconclusive;
                return;
            }
            image = chart.map_unchecked(u);
        }
        result.max_residual = std::max(result.max_residual, (z - image).norm());
    };

    for (int probe = 0; probe < probes; ++probe) {
        // start point: axis extremes first, then Halton fill
        Eigen::VectorXd u0(p);
        if (probe < 2 * p) {
            u0.setZero();
            u0[probe / 2] = (probe % 2 == 0 ? 1.0 : -1.0) * 0.99 * r0;
        } else {
            u0 = upts.next01();
            u0 = (2.0 * u0.array() - 1.0).matrix() * (r0 / std::sqrt(double(p)));
        }
        const Eigen::VectorXd start = chart.map_unchecked(u0);

        // probe law: axis controls first, then random-segment laws
        ControlLaw law;
        const int axis_cycle = probe % (2 * q + 2);
        if (axis_cycle < 2 * q) {
            Eigen::VectorXd u = Eigen::VectorXd::Zero(q);
            u[axis_cycle / 2] = axis_cycle % 2 == 0 ? 1.0 : -1.0;
            law = ControlLaw::constant(u, sigma);
        } else {
            std::vector<double> bp = {0.0, sigma / 3.0, 2.0 * sigma / 3.0, sigma};
            std::vector<Eigen::VectorXd> vals = {random_in_unit_ball(rng, q),
                                                 random_in_unit_ball(rng, q),
                                                 random_in_unit_ball(rng, q)};
            law = ControlLaw(std::move(bp), std::move(vals));
        }
        ++result.probes_run;
        try {
            invert_and_measure(integrate_subunit(family, law, start, h).endpoint());
        } catch (const DivergenceError&) {
            ++result.inconclusive;
        }
    }
    return result;
}

/// Largest quadruple-flow defect |e^{-tV_j}e^{-sV_k}e^{tV_j}e^{sV_k}x - x|
/// over the V-field pairs at a chart point, normalized by |ts|.
inline double quadruple_defect_audit(const Chart& chart, const Eigen::VectorXd& x, double t,
                                     double s, double h) {
    double worst = 0.0;
    for (int j = 0; j < chart.p(); ++j)
        for (int k = j + 1; k < chart.p(); ++k) {
            const Eigen::VectorXd d =
                quadruple_defect(chart.v_frame().field(j), chart.v_frame().field(k), t, s, x, h);
            worst = std::max(worst, d.norm());
        }
    return worst;
}

/// Lipschitz constant of the sampled Jacobian over parameter pairs: the
/// C^{1,1} sanity statistic reported per chart.
inline double jacobian_lipschitz_estimate(const Chart& chart, int samples, double h_fd = 1e-5,
                                          std::uint64_t seed = 8) {
    HaltonSampler sampler(chart.p(), seed);
    std::vector<Eigen::VectorXd> us;
    std::vector<Eigen::MatrixXd> jacs;
    for (int s = 0; s < samples; ++s) {
        Eigen::VectorXd u = sampler.next01();
        u = (2.0 * u.array() - 1.0).matrix() *
            (0.8 * chart.delta() / std::sqrt(double(chart.p())));
        us.push_back(u);
        jacs.push_back(chart.jacobian(u, h_fd));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < us.size(); ++i)
        for (std::size_t j = i + 1; j < us.size(); ++j) {
            const double du = (us[i] - us[j]).norm();
            if (du < 1e-6) continue;
            worst = std::max(worst, (jacs[i] - jacs[j]).norm() / du);
        }
    return worst;
}

/// Injectivity margin: min over grid pairs of image distance / parameter
/// distance (the immersion check at desk scale).
inline double injectivity_margin(const Chart& chart, int per_axis = 10) {
    std::vector<Eigen::VectorXd> grid;
    const int p = chart.p();
    std::vector<int> idx(static_cast<std::size_t>(p), 0);
    for (;;) {
        Eigen::VectorXd u(p);
        for (int d = 0; d < p; ++d)
            u[d] = (-1.0 + 2.0 * idx[static_cast<std::size_t>(d)] / (per_axis - 1.0)) *
                   chart.delta() * 0.9 / std::sqrt(double(p));
        grid.push_back(u);
        int d = 0;
        while (d < p && ++idx[static_cast<std::size_t>(d)] == per_axis) {
            idx[static_cast<std::size_t>(d)] = 0;
            ++d;
        }
        if (d == p) break;
    }
    std::vector<Eigen::VectorXd> images;
    images.reserve(grid.size());
    for (const auto& u : grid) images.push_back(chart.map_unchecked(u));
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i)
        for (std::size_t j = i + 1; j < grid.size(); ++j)
            margin = std::min(margin,
                              (images[i] - images[j]).norm() / (grid[i] - grid[j]).norm());
    return margin;
}

}  // namespace orbitlab
