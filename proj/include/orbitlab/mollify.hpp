#pragma once

// Euclidean mollification of field coefficients on a midpoint quadrature
// grid over the unit ball, plus the numerical audits built on it: the
// Friedrichs-type commutator residual, the mollified structure-equation
// residual, and the wedge-derivative identity check.
//
// The discrete mollified coefficient is the quadrature sum
//   g^(sigma)(x) = sum_i w_i chi(y_i) g(x - sigma y_i),
// and its Jacobian differentiates g under the sum with the a.e. derivative
// ASTs, which is the exact derivative of the discrete object away from the
// (measure-zero) node hits of kink loci. The kernel-gradient route
// (1/sigma) sum_i w_i grad-chi(y_i) g(x - sigma y_i) is kept for callables
// without derivatives and as a cross-check.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "orbitlab/field_family.hpp"
#include "orbitlab/involutivity.hpp"
#include "orbitlab/multivector.hpp"

namespace orbitlab {

/// Bump kernel chi(y) = c_n exp(-1/(1-|y|^2)) on |y| < 1, discretized on a
/// tensor midpoint grid clipped to the ball and normalized to unit mass.
struct MollifierKernel {
    int n = 0;
    Eigen::MatrixXd nodes;   // n x m
    Eigen::VectorXd wchi;    // w_i * chi(y_i), sums to exactly 1
    Eigen::MatrixXd wgrad;   // n x m: w_i * grad chi(y_i), same normalization

    static MollifierKernel build(int n, int pts_per_axis = 17) {
        if (n < 1 || n > 3)
            throw std::invalid_argument("mollifier quadrature supports n in 1..3");
        if (pts_per_axis < 3) throw std::invalid_argument("need at least 3 points per axis");
        MollifierKernel k;
        k.n = n;
        const double spacing = 2.0 / pts_per_axis;
        const double cell = std::pow(spacing, n);
        std::vector<Eigen::VectorXd> pts;
        std::vector<double> chi, norm2;
        Eigen::VectorXd y(n);
        std::vector<int> idx(static_cast<std::size_t>(n), 0);
        for (;;) {
            for (int d = 0; d < n; ++d)
                y[d] = -1.0 + (idx[static_cast<std::size_t>(d)] + 0.5) * spacing;
            const double r2 = y.squaredNorm();
            if (r2 < 1.0) {
                const double c = std::exp(-1.0 / (1.0 - r2));
                if (c > 0.0) {
                    pts.push_back(y);
                    chi.push_back(c);
                    norm2.push_back(r2);
                }
            }
            int d = 0;
            while (d < n && ++idx[static_cast<std::size_t>(d)] == pts_per_axis) {
                idx[static_cast<std::size_t>(d)] = 0;
                ++d;
            }
            if (d == n) break;
        }
        const auto m = static_cast<Eigen::Index>(pts.size());
        k.nodes.resize(n, m);
        k.wchi.resize(m);
        k.wgrad.resize(n, m);
        double mass = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) mass += cell * chi[static_cast<std::size_t>(i)];
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto s = static_cast<std::size_t>(i);
            k.nodes.col(i) = pts[s];
            k.wchi[i] = cell * chi[s] / mass;
            const double denom = 1.0 - norm2[s];
            k.wgrad.col(i) = k.wchi[i] * (-2.0 / (denom * denom)) * pts[s];
        }
        return k;
    }

    double mass() const { return wchi.sum(); }
};

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

/// f^(sigma)(x) for a generic callable.
inline double mollify_scalar(const ScalarFn& f, double sigma, const Eigen::VectorXd& x,
                             const MollifierKernel& kernel) {
    if (!(sigma > 0.0)) throw std::invalid_argument("mollification radius must be positive");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < kernel.wchi.size(); ++i)
        acc += kernel.wchi[i] * f(x - sigma * kernel.nodes.col(i));
    return acc;
}

inline double mollify_scalar(const Expression& f, double sigma, const Eigen::VectorXd& x,
                             const MollifierKernel& kernel) {
    return mollify_scalar(
        [&f](const Eigen::VectorXd& y) {
            return f.evaluate(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
        },
        sigma, x, kernel);
}

/// Kernel-gradient route for the gradient of f^(sigma); needs no derivative
/// of f.
inline Eigen::VectorXd mollify_grad_kernel(const ScalarFn& f, double sigma,
                                           const Eigen::VectorXd& x,
                                           const MollifierKernel& kernel) {
    if (!(sigma > 0.0)) throw std::invalid_argument("mollification radius must be positive");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(kernel.n);
    for (Eigen::Index i = 0; i < kernel.wchi.size(); ++i)
        acc += kernel.wgrad.col(i) * f(x - sigma * kernel.nodes.col(i));
    return acc / sigma;
}

/// Smooth vector field interface: value and Jacobian callbacks.
struct SmoothField {
    int n = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> value;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
};

/// Mollified family member Y_j^(sigma) = g_j^(sigma) . grad.
class MollifiedFamily {
public:
    MollifiedFamily(const FieldFamily& base, double sigma, MollifierKernel kernel)
        : base_(&base), sigma_(sigma), kernel_(std::move(kernel)) {
        if (!(sigma > 0.0)) throw std::invalid_argument("mollification radius must be positive");
        if (kernel_.n != base.dimension())
            throw std::invalid_argument("kernel dimension mismatch");
    }

    const FieldFamily& base() const { return *base_; }
    double sigma() const { return sigma_; }
    const MollifierKernel& kernel() const { return kernel_; }

    Eigen::VectorXd field_value(int j, const Eigen::VectorXd& x) const {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(base_->dimension());
        for (Eigen::Index i = 0; i < kernel_.wchi.size(); ++i)
            g += kernel_.wchi[i] * base_->field_value(j, x - sigma_ * kernel_.nodes.col(i));
        return g;
    }

    /// Exact Jacobian of the discrete mollified coefficients (differentiates
    /// the a.e. ASTs under the quadrature sum).
    Eigen::MatrixXd jacobian(int j, const Eigen::VectorXd& x) const {
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(base_->dimension(), base_->dimension());
        for (Eigen::Index i = 0; i < kernel_.wchi.size(); ++i) {
            const Eigen::VectorXd z = base_->jitter_off_kinks(x - sigma_ * kernel_.nodes.col(i));
            J += kernel_.wchi[i] * base_->jacobian_ae(j, z);
        }
        return J;
    }

    SmoothField field(int j) const {
        return {base_->dimension(),
                [this, j](const Eigen::VectorXd& x) { return field_value(j, x); },
                [this, j](const Eigen::VectorXd& x) { return jacobian(j, x); }};
    }

    /// [Y_j^(sigma), Y_k^(sigma)]_x from the mollified values and Jacobians.
    Eigen::VectorXd commutator(int j, int k, const Eigen::VectorXd& x) const {
        return jacobian(k, x) * field_value(j, x) - jacobian(j, x) * field_value(k, x);
    }

private:
    const FieldFamily* base_;
    double sigma_;
    MollifierKernel kernel_;
};

inline SmoothField analytic_field(const FieldFamily& family, int j) {
    return {family.dimension(),
            [&family, j](const Eigen::VectorXd& x) { return family.field_value(j, x); },
            [&family, j](const Eigen::VectorXd& x) { return family.jacobian_ae(j, x); }};
}

inline SmoothField constant_smooth_field(Eigen::VectorXd g) {
    const int n = static_cast<int>(g.size());
    return {n, [g](const Eigen::VectorXd&) { return g; },
            [n](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(n, n).eval(); }};
}

inline Eigen::VectorXd smooth_commutator(const SmoothField& a, const SmoothField& b,
                                         const Eigen::VectorXd& x) {
    return b.jacobian(x) * a.value(x) - a.jacobian(x) * b.value(x);
}

/// b_jk^sigma(x) = ([Y_j^s, Y_k^s]_x - ([Y_j, Y_k])^(sigma)(x)) / sigma.
/// The Friedrichs estimate asserts this stays bounded as sigma -> 0.
inline Eigen::VectorXd friedrichs_residual(const FieldFamily& family, int j, int k, double sigma,
                                           const Eigen::VectorXd& x,
                                           const MollifierKernel& kernel) {
    const MollifiedFamily mf(family, sigma, kernel);
    const Eigen::VectorXd smooth = mf.commutator(j, k, x);
    Eigen::VectorXd rough = Eigen::VectorXd::Zero(family.dimension());
    for (Eigen::Index i = 0; i < kernel.wchi.size(); ++i)
        rough += kernel.wchi[i] * orbitlab::commutator(family, j, k, x - sigma * kernel.nodes.col(i));
    return (smooth - rough) / sigma;
}

using CoefficientField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Structure-coefficient field x -> c_jk(x) backed by the least-norm solve.
inline CoefficientField structure_coefficient_field(const FieldFamily& family, int j, int k) {
    return [&family, j, k](const Eigen::VectorXd& x) {
        return structure_coefficients(family, j, k, x).c;
    };
}

/// Residual of the mollified structure equation, divided by sigma:
///   ([Y_j^s, Y_k^s]_x - sum_i (c_jk^i)^(sigma)(x) Y_i^s(x)) / sigma.
inline Eigen::VectorXd mollified_structure_residual(const FieldFamily& family,
                                                    const CoefficientField& coeffs, int j, int k,
                                                    double sigma, const Eigen::VectorXd& x,
                                                    const MollifierKernel& kernel) {
    const MollifiedFamily mf(family, sigma, kernel);
    Eigen::VectorXd lhs = mf.commutator(j, k, x);
    Eigen::VectorXd csigma = Eigen::VectorXd::Zero(family.count());
    for (Eigen::Index i = 0; i < kernel.wchi.size(); ++i)
        csigma += kernel.wchi[i] * coeffs(x - sigma * kernel.nodes.col(i));
    for (int i = 0; i < family.count(); ++i) lhs -= csigma[i] * mf.field_value(i, x);
    return lhs / sigma;
}

/// Defect of the wedge-derivative identity for smooth fields:
/// X(dx^K(U_1..U_p)) equals the commutator sum plus the coefficient-
/// derivative sum. The left side is a central finite difference along the
/// frozen direction X(x).
inline double wedge_derivative_identity_check(const std::vector<SmoothField>& U,
                                              const SmoothField& X, const IndexTuple& K,
                                              const Eigen::VectorXd& x, double h_fd = 1e-5) {
    const int p = static_cast<int>(U.size());
    if (static_cast<int>(K.size()) != p)
        throw std::invalid_argument("row tuple grade must match the number of fields");
    const int n = static_cast<int>(x.size());

    auto frame_at = [&](const Eigen::VectorXd& y) {
        Eigen::MatrixXd M(n, p);
        for (int c = 0; c < p; ++c) M.col(c) = U[static_cast<std::size_t>(c)].value(y);
        return M;
    };
    IndexTuple all_cols(static_cast<std::size_t>(p));
    for (int c = 0; c < p; ++c) all_cols[static_cast<std::size_t>(c)] = c + 1;
    auto phi = [&](const Eigen::VectorXd& y) {
        return minor_det(frame_at(y), std::vector<int>(K.begin(), K.end()), all_cols);
    };

    const Eigen::VectorXd dir = X.value(x);
    const double lhs = (phi(x + h_fd * dir) - phi(x - h_fd * dir)) / (2.0 * h_fd);

    double rhs = 0.0;
    const Eigen::MatrixXd frame = frame_at(x);
    // commutator sum
    for (int a = 0; a < p; ++a) {
        Eigen::MatrixXd M = frame;
        M.col(a) = smooth_commutator(X, U[static_cast<std::size_t>(a)], x);
        rhs += minor_det(M, std::vector<int>(K.begin(), K.end()), all_cols);
    }
    // coefficient-derivative sum over row substitutions
    const Eigen::MatrixXd JX = X.jacobian(x);
    for (int gamma = 1; gamma <= n; ++gamma)
        for (int beta = 0; beta < p; ++beta) {
            std::vector<int> rows(K.begin(), K.end());
            rows[static_cast<std::size_t>(beta)] = gamma;
            const double df = JX(K[static_cast<std::size_t>(beta)] - 1, gamma - 1);
            rhs += df * minor_det(frame, rows, all_cols);
        }
    return std::abs(lhs - rhs);
}

/// sigma-ladder boundedness audit of the Friedrichs residual over a box:
/// per sigma the statistic is max |b_jk^sigma| over a deterministic sample.
/// "bounded" means ladder max/min <= 4 or the values decrease as sigma does
/// (pure O(sigma) residuals sit exactly at ratio sigma_max/sigma_min).
struct LadderAudit {
    std::vector<double> sigmas;
    std::vector<double> values;
    bool bounded = false;
    double ratio = 0.0;
};

inline std::vector<double> default_sigma_ladder(const Box& box) {
    const double scale = 0.5 * (box.hi - box.lo).maxCoeff();
    return {0.1 * scale, 0.05 * scale, 0.025 * scale};
}

inline LadderAudit friedrichs_ladder_audit(
    const FieldFamily& family, int j, int k, const Box& box, int samples, std::uint64_t seed,
    std::vector<double> sigmas = {},
    const CoefficientField& coeffs = nullptr) {
    if (sigmas.empty()) sigmas = default_sigma_ladder(box);
    LadderAudit audit;
    audit.sigmas = sigmas;
    const MollifierKernel kernel = MollifierKernel::build(family.dimension());
    for (const double sigma : sigmas) {
        HaltonSampler sampler(family.dimension(), seed);
        double worst = 0.0;
        for (int s = 0; s < samples; ++s) {
            const Eigen::VectorXd x = sampler.next_in(box);
            const Eigen::VectorXd r =
                coeffs ? mollified_structure_residual(family, coeffs, j, k, sigma, x, kernel)
                       : friedrichs_residual(family, j, k, sigma, x, kernel);
            worst = std::max(worst, r.norm());
        }
        audit.values.push_back(worst);
    }
    const double vmax = *std::max_element(audit.values.begin(), audit.values.end());
    const double vmin = *std::min_element(audit.values.begin(), audit.values.end());
    audit.ratio = vmin > 0.0 ? vmax / vmin : (vmax > 0.0 ? std::numeric_limits<double>::infinity()
                                                         : 1.0);
    bool decreasing = true;
    for (std::size_t i = 0; i + 1 < audit.values.size(); ++i)
        if (audit.values[i] < audit.values[i + 1]) decreasing = false;
    audit.bounded = vmax <= 1e-12 || audit.ratio <= 4.0 || decreasing;
    return audit;
}

}  // namespace orbitlab
