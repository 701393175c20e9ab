#pragma once

// Families of locally Lipschitz vector fields Y_j = g_j . grad with
// componentwise expression coefficients and formal a.e. Jacobians.

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "orbitlab/expression.hpp"
#include "orbitlab/sampling.hpp"

namespace orbitlab {

/// The frame matrix Y_x = [Y_{1,x}, ..., Y_{q,x}] at a point (n x q).
struct PointFrame {
    Eigen::VectorXd x;
    Eigen::MatrixXd Y;

    int dimension() const { return static_cast<int>(Y.rows()); }
    int count() const { return static_cast<int>(Y.cols()); }
};

/// Immutable family of q locally Lipschitz vector fields on R^n.
/// All evaluation is pure; instances are safe to share across workers.
class FieldFamily {
public:
    FieldFamily(int n, std::vector<std::vector<Expression>> components, std::string name = "")
        : n_(n), components_(std::move(components)), name_(std::move(name)) {
        if (n_ < 1) throw std::invalid_argument("dimension must be positive");
        q_ = static_cast<int>(components_.size());
        if (q_ < 1) throw std::invalid_argument("family needs at least one field");
        for (const auto& field : components_) {
            if (static_cast<int>(field.size()) != n_)
                throw std::invalid_argument("field component count must equal the dimension");
            for (const auto& comp : field)
                if (comp.max_variable() > n_)
                    throw std::invalid_argument(
                        "component '" + comp.to_string() + "' references x" +
                        std::to_string(comp.max_variable()) + " beyond dimension " +
                        std::to_string(n_));
        }
        derivatives_.resize(components_.size());
        for (std::size_t j = 0; j < components_.size(); ++j) {
            derivatives_[j].resize(components_[j].size());
            for (std::size_t a = 0; a < components_[j].size(); ++a) {
                derivatives_[j][a].reserve(n_);
                for (int b = 1; b <= n_; ++b)
                    derivatives_[j][a].push_back(components_[j][a].derivative(b));
            }
        }
    }

    static FieldFamily parse(int n, const std::vector<std::vector<std::string>>& texts,
                             std::string name = "") {
        std::vector<std::vector<Expression>> comps;
        comps.reserve(texts.size());
        for (const auto& field : texts) {
            std::vector<Expression> row;
            row.reserve(field.size());
            for (const auto& text : field) row.push_back(Expression::parse(text));
            comps.push_back(std::move(row));
        }
        return FieldFamily(n, std::move(comps), std::move(name));
    }

    int dimension() const { return n_; }
    int count() const { return q_; }
    const std::string& name() const { return name_; }
    const Expression& component(int j, int alpha) const {
        return components_[static_cast<std::size_t>(j)][static_cast<std::size_t>(alpha)];
    }

    /// Column j of the frame: g_j(x).
    Eigen::VectorXd field_value(int j, const Eigen::VectorXd& x) const {
        check_indices(j, x);
        Eigen::VectorXd g(n_);
        for (int a = 0; a < n_; ++a) g[a] = eval_component(j, a, x);
        return g;
    }

    /// out = sum_j u_j g_j(x) without temporaries; the hot path of the
    /// subunit integrators.
    void combination_into(const Eigen::VectorXd& u, const Eigen::VectorXd& x,
                          Eigen::VectorXd& out) const {
        const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        out.setZero();
        for (int j = 0; j < q_; ++j) {
            const double uj = u[j];
            if (uj == 0.0) continue;
            for (int a = 0; a < n_; ++a) {
                const double v =
                    components_[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)](xs);
                if (!std::isfinite(v))
                    throw EvalError("non-finite value of field " + std::to_string(j + 1) +
                                    " component " + std::to_string(a + 1));
                out[a] += uj * v;
            }
        }
    }

    PointFrame evaluate(const Eigen::VectorXd& x) const {
        PointFrame frame;
        frame.x = x;
        frame.Y.resize(n_, q_);
        for (int j = 0; j < q_; ++j) frame.Y.col(j) = field_value(j, x);
        return frame;
    }

    /// a.e. Jacobian of g_j: entry (alpha, beta) = d g_j^alpha / d x^beta.
    Eigen::MatrixXd jacobian_ae(int j, const Eigen::VectorXd& x) const {
        check_indices(j, x);
        Eigen::MatrixXd J(n_, n_);
        const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        for (int a = 0; a < n_; ++a)
            for (int b = 0; b < n_; ++b) {
                const Expression& d =
                    derivatives_[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)]
                                [static_cast<std::size_t>(b)];
                const double v = d(xs);
                if (!std::isfinite(v))
                    throw EvalError("non-finite a.e. derivative of field " + std::to_string(j + 1) +
                                    " component " + std::to_string(a + 1) + " w.r.t. x" +
                                    std::to_string(b + 1));
                J(a, b) = v;
            }
        return J;
    }

    /// Distance from x to the nearest kink argument across the family.
    double kink_distance(const Eigen::VectorXd& x) const {
        const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& field : components_)
            for (const auto& comp : field) best = std::min(best, comp.kink_distance(xs));
        return best;
    }

    /// Nudge a point off a kink locus so the a.e. formulas apply.
    Eigen::VectorXd jitter_off_kinks(const Eigen::VectorXd& x, double jitter = 1e-9) const {
        if (kink_distance(x) > jitter) return x;
        Eigen::VectorXd y = x.array() + jitter;
        return y;
    }

    /// Sampled Lipschitz estimate per field: max over pairs of
    /// |g_j(x)-g_j(y)| / |x-y|. Half the pairs are box-uniform, half are
    /// short-offset pairs, so both global and local slopes get probed.
    std::vector<double> lipschitz_estimate(const Box& box, int samples,
                                           std::uint64_t seed) const {
        if (box.dimension() != n_) throw std::invalid_argument("box dimension mismatch");
        if (samples < 1) throw std::invalid_argument("need at least one sample pair");
        std::mt19937_64 rng(seed);
        std::vector<double> best(static_cast<std::size_t>(q_), 0.0);
        const double short_step = 1e-3 * std::max(1.0, box.diameter());
        for (int s = 0; s < samples; ++s) {
            const Eigen::VectorXd a = uniform_in_box(rng, box);
            Eigen::VectorXd b;
            if (s % 2 == 0) {
                b = uniform_in_box(rng, box);
            } else {
                b = a + short_step * random_unit_vector(rng, n_);
                for (int i = 0; i < n_; ++i) b[i] = std::clamp(b[i], box.lo[i], box.hi[i]);
            }
            const double dist = (a - b).norm();
            if (dist < 1e-12) continue;
            for (int j = 0; j < q_; ++j) {
                const double slope = (field_value(j, a) - field_value(j, b)).norm() / dist;
                best[static_cast<std::size_t>(j)] =
                    std::max(best[static_cast<std::size_t>(j)], slope);
            }
        }
        return best;
    }

private:
    int n_;
    int q_;
    std::vector<std::vector<Expression>> components_;                // [j][alpha]
    std::vector<std::vector<std::vector<Expression>>> derivatives_;  // [j][alpha][beta]
    std::string name_;

    void check_indices(int j, const Eigen::VectorXd& x) const {
        if (j < 0 || j >= q_) throw std::invalid_argument("field index out of range");
        if (x.size() != n_) throw std::invalid_argument("point dimension mismatch");
    }

    double eval_component(int j, int a, const Eigen::VectorXd& x) const {
        const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        const double v =
            components_[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)](xs);
        if (!std::isfinite(v))
            throw EvalError("non-finite value of field " + std::to_string(j + 1) +
                            " component " + std::to_string(a + 1) + " ('" +
                            components_[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)]
                                .to_string() +
                            "')");
        return v;
    }
};

}  // namespace orbitlab
