#pragma once

// Almost-everywhere commutators, least-norm structure coefficients through
// the regularized pseudoinverse limit (delta I + Y^T Y)^{-1} Y^T b as
// delta -> 0, and the quantitative involutivity audit over a box.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "orbitlab/field_family.hpp"
#include "orbitlab/multivector.hpp"
#include "orbitlab/sampling.hpp"

namespace orbitlab {

/// Point where the frame and every a.e. Jacobian evaluate finite: kink loci
/// get the standard jitter, and essential singularities of the derivative
/// formulas (0 * inf at underflow scale, e.g. e^{-1/x1^2} on the x2-axis)
/// are escaped by growing nudges before giving up.
inline Eigen::VectorXd audit_point(const FieldFamily& family, const Eigen::VectorXd& x) {
    Eigen::VectorXd y = family.jitter_off_kinks(x);
    double nudge = 1e-9;
    for (int attempt = 0; attempt < 4; ++attempt) {
        try {
            family.evaluate(y);
            for (int j = 0; j < family.count(); ++j) family.jacobian_ae(j, y);
            return y;
        } catch (const EvalError&) {
            y = y.array() + nudge;
            nudge *= 1e3;
        }
    }
    return y;  // still hazardous: let the caller's evaluation report it
}

inline Eigen::VectorXd commutator_at(const FieldFamily& family, int j, int k,
                                     const Eigen::VectorXd& y) {
    return family.jacobian_ae(k, y) * family.field_value(j, y) -
           family.jacobian_ae(j, y) * family.field_value(k, y);
}

/// [Y_j, Y_k]_x = Jac(g_k)(x) g_j(x) - Jac(g_j)(x) g_k(x), evaluated with
/// the a.e. derivative ASTs. Points on a kink locus are jittered first.
inline Eigen::VectorXd commutator(const FieldFamily& family, int j, int k,
                                  const Eigen::VectorXd& x) {
    return commutator_at(family, j, k, audit_point(family, x));
}

inline std::vector<double> default_delta_ladder() { return {1e-4, 1e-6, 1e-8, 1e-10}; }

/// Ladder extended far enough to resolve frames scaled like exp(-1/x^2);
/// the walk stops early once the extrapolations settle.
inline std::vector<double> extended_delta_ladder() {
    std::vector<double> ladder;
    for (double d = 1e-4; d >= 1e-100; d *= 1e-2) ladder.push_back(d);
    return ladder;
}

struct PinvResult {
    Eigen::VectorXd c;
    double delta_achieved = 0.0;
    bool converged = false;
    double residual = 0.0;           // |Y c - b|
    Eigen::VectorXd last_iterate;    // raw ladder iterates, for diagnostics
    Eigen::VectorXd prev_iterate;
};

/// Least-norm least-squares solution via the delta-ladder limit.
///
/// Walks the ladder top-down, Richardson-extrapolating consecutive raw
/// iterates (the iterates are geometric in delta per singular direction, so
/// one extrapolation removes the O(delta) bias). The limit formula is
/// semiconvergent in floating point: deep rungs amplify rounding noise on
/// rank-deficient input, while frames with exponentially small columns only
/// reveal their coefficients deep down. The walk therefore covers the whole
/// ladder and keeps the extrapolation with the smallest residual, breaking
/// ties toward the shallowest rung whose successor agreed to 1e-9 relative
/// (residual near a least-squares minimizer is quadratically flat, so noise
/// cannot fake a strict improvement). converged reports whether the
/// returned candidate passed that agreement test.
inline PinvResult pinv_least_norm(const Eigen::MatrixXd& Y, const Eigen::VectorXd& b,
                                  const std::vector<double>& ladder = default_delta_ladder()) {
    if (Y.rows() != b.size()) throw std::invalid_argument("matrix/vector dimension mismatch");
    if (ladder.empty()) throw std::invalid_argument("delta ladder must be nonempty");
    for (std::size_t i = 0; i + 1 < ladder.size(); ++i)
        if (!(ladder[i] > ladder[i + 1]) || !(ladder[i + 1] > 0.0))
            throw std::invalid_argument("delta ladder must decrease strictly through positives");

    const Eigen::Index q = Y.cols();
    const Eigen::MatrixXd gram = Y.transpose() * Y;
    const Eigen::VectorXd rhs = Y.transpose() * b;
    const double conv_tol = 1e-9;
    const double res_fuzz = 1e-9 * b.norm();

    PinvResult out;
    auto residual_of = [&](const Eigen::VectorXd& c) { return (Y * c - b).norm(); };

    bool have_best = false;
    Eigen::VectorXd best_c;
    double best_res = std::numeric_limits<double>::infinity();
    double best_delta = ladder.front();
    bool best_settled = false;
    auto offer = [&](const Eigen::VectorXd& cand, double delta, bool settled) {
        const double res = residual_of(cand);
        const bool wins = !have_best || res < best_res - res_fuzz ||
                          (res <= best_res + res_fuzz && settled && !best_settled);
        if (wins) {
            have_best = true;
            best_c = cand;
            best_res = res;
            best_delta = delta;
            best_settled = settled;
        }
    };

    Eigen::VectorXd prev_raw, prev_extrap;
    Eigen::MatrixXd prev_system;
    double prev_delta = 0.0;
    bool have_raw = false, have_extrap = false;

    for (const double delta : ladder) {
        Eigen::MatrixXd system = gram;
        system.diagonal().array() += delta;
        if (have_raw && system == prev_system) break;  // delta fully absorbed by rounding
        const Eigen::VectorXd c = system.ldlt().solve(rhs);
        if (!c.allFinite()) break;
        out.prev_iterate = have_raw ? prev_raw : c;
        out.last_iterate = c;
        if (have_raw) {
            const double ratio = prev_delta / delta;
            const Eigen::VectorXd extrap = (ratio * c - prev_raw) / (ratio - 1.0);
            if (extrap.allFinite()) {
                const bool settled =
                    have_extrap &&
                    (extrap - prev_extrap).norm() <= conv_tol * std::max(1.0, extrap.norm());
                offer(extrap, delta, settled);
                prev_extrap = extrap;
                have_extrap = true;
            }
        }
        prev_raw = c;
        prev_system = std::move(system);
        prev_delta = delta;
        have_raw = true;
    }

    if (!have_best && have_raw) offer(prev_raw, prev_delta, false);  // one-rung ladder
    out.c = have_best ? best_c : Eigen::VectorXd::Zero(q);
    out.delta_achieved = best_delta;
    out.converged = best_settled;
    out.residual = have_best ? best_res : b.norm();
    return out;
}

/// Least-norm structure coefficients of [Y_j, Y_k]_x in the frame columns.
struct StructureCoefficients {
    Eigen::VectorXd x;        // evaluation point (after kink jitter)
    int j = 0, k = 0;         // 1-based pair
    Eigen::VectorXd c;
    double residual = 0.0;    // |Y_x c - [Y_j, Y_k]_x|
    std::vector<double> delta_ladder;
    double delta_achieved = 0.0;
    bool converged = false;
};

inline StructureCoefficients structure_coefficients(
    const FieldFamily& family, int j, int k, const Eigen::VectorXd& x,
    const std::vector<double>& ladder = extended_delta_ladder()) {
    if (j < 1 || k < 1 || j > family.count() || k > family.count())
        throw std::invalid_argument("field pair out of range");
    StructureCoefficients out;
    out.x = audit_point(family, x);
    out.j = j;
    out.k = k;
    out.delta_ladder = ladder;
    const Eigen::MatrixXd Y = family.evaluate(out.x).Y;
    const Eigen::VectorXd b = commutator_at(family, j - 1, k - 1, out.x);
    const PinvResult sol = pinv_least_norm(Y, b, ladder);
    out.c = sol.c;
    out.residual = sol.residual;
    out.delta_achieved = sol.delta_achieved;
    out.converged = sol.converged;
    return out;
}

struct InvolutivityFlag {
    Eigen::VectorXd x;
    int j = 0, k = 0;
    double coeff_norm = 0.0;
    double residual = 0.0;
};

/// Audit record for one pair (j,k): running sup of |c| and residual plus
/// the sample where the sup was attained.
struct PairAudit {
    int j = 0, k = 0;
    double sup_coeff_norm = 0.0;
    double sup_residual = 0.0;
    Eigen::VectorXd argmax_coeff;
};

struct InvolutivityReport {
    Box box;
    int samples = 0;
    std::uint64_t seed = 0;
    double coeff_threshold = 0.0;
    double residual_tol = 0.0;
    std::vector<PairAudit> pairs;
    std::vector<InvolutivityFlag> flags;
    bool pass = false;

    double sup_coeff_norm() const {
        double s = 0.0;
        for (const auto& p : pairs) s = std::max(s, p.sup_coeff_norm);
        return s;
    }
    double sup_residual() const {
        double s = 0.0;
        for (const auto& p : pairs) s = std::max(s, p.sup_residual);
        return s;
    }
};

/// Deterministic low-discrepancy audit of the finite-type condition on a
/// box. The empirical sup of |c_{jk}| is a lower estimate of any admissible
/// C_Omega; the verdict only flags it against the caller's threshold.
inline InvolutivityReport domain_audit(const FieldFamily& family, const Box& box, int samples,
                                       std::uint64_t seed, double coeff_threshold,
                                       double residual_tol,
                                       const std::vector<double>& ladder =
                                           extended_delta_ladder()) {
    if (samples < 1) throw std::invalid_argument("audit needs at least one sample");
    if (box.dimension() != family.dimension())
        throw std::invalid_argument("box dimension mismatch");
    InvolutivityReport report;
    report.box = box;
    report.samples = samples;
    report.seed = seed;
    report.coeff_threshold = coeff_threshold;
    report.residual_tol = residual_tol;
    for (int j = 1; j <= family.count(); ++j)
        for (int k = j + 1; k <= family.count(); ++k) {
            PairAudit pa;
            pa.j = j;
            pa.k = k;
            pa.argmax_coeff = Eigen::VectorXd::Zero(family.dimension());
            report.pairs.push_back(std::move(pa));
        }

    HaltonSampler sampler(family.dimension(), seed);
    for (int s = 0; s < samples; ++s) {
        const Eigen::VectorXd x = sampler.next_in(box);
        std::size_t pair_idx = 0;
        for (int j = 1; j <= family.count(); ++j)
            for (int k = j + 1; k <= family.count(); ++k, ++pair_idx) {
                const StructureCoefficients sc = structure_coefficients(family, j, k, x, ladder);
                PairAudit& pa = report.pairs[pair_idx];
                const double cn = sc.c.norm();
                if (cn > pa.sup_coeff_norm) {
                    pa.sup_coeff_norm = cn;
                    pa.argmax_coeff = sc.x;
                }
                pa.sup_residual = std::max(pa.sup_residual, sc.residual);
                if (cn > coeff_threshold || sc.residual > residual_tol)
                    report.flags.push_back({sc.x, j, k, cn, sc.residual});
            }
    }
    report.pass = report.flags.empty();
    return report;
}

}  // namespace orbitlab
