#pragma once

// Seeded sampling helpers: axis-aligned boxes, uniform draws, and a
// digit-scrambled Halton sequence for low-discrepancy domain audits.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace orbitlab {

struct Box {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    Box() = default;
    Box(Eigen::VectorXd l, Eigen::VectorXd h) : lo(std::move(l)), hi(std::move(h)) {
        if (lo.size() != hi.size()) throw std::invalid_argument("box bounds dimension mismatch");
        for (Eigen::Index i = 0; i < lo.size(); ++i)
            if (!(lo[i] < hi[i])) throw std::invalid_argument("degenerate box");
    }
    static Box cube(int n, double lo, double hi) {
        return Box(Eigen::VectorXd::Constant(n, lo), Eigen::VectorXd::Constant(n, hi));
    }
    int dimension() const { return static_cast<int>(lo.size()); }
    double diameter() const { return (hi - lo).norm(); }
    Eigen::VectorXd map01(const Eigen::VectorXd& u) const {
        return lo.array() + u.array() * (hi - lo).array();
    }
    bool contains(const Eigen::VectorXd& x, double slack = 0.0) const {
        for (Eigen::Index i = 0; i < lo.size(); ++i)
            if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
        return true;
    }
};

inline Eigen::VectorXd uniform_in_box(std::mt19937_64& rng, const Box& box) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd u(box.dimension());
    for (int i = 0; i < box.dimension(); ++i) u[i] = dist(rng);
    return box.map01(u);
}

inline Eigen::VectorXd random_unit_vector(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd v(n);
    do {
        for (int i = 0; i < n; ++i) v[i] = g(rng);
    } while (v.norm() < 1e-12);
    return v / v.norm();
}

/// Vector drawn uniformly from the closed unit ball in R^n.
inline Eigen::VectorXd random_in_unit_ball(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    const double r = std::pow(dist(rng), 1.0 / n);
    return r * random_unit_vector(rng, n);
}

/// Halton sequence with per-dimension seeded digit scrambling.
class HaltonSampler {
public:
    HaltonSampler(int dim, std::uint64_t seed) : dim_(dim) {
        static constexpr int primes[] = {2,  3,  5,  7,  11, 13, 17, 19,
                                         23, 29, 31, 37, 41, 43, 47, 53};
        if (dim < 1 || dim > 16) throw std::invalid_argument("HaltonSampler supports 1..16 dims");
        std::mt19937_64 rng(seed);
        perms_.resize(dim);
        bases_.resize(dim);
        for (int d = 0; d < dim; ++d) {
            bases_[d] = primes[d];
            perms_[d].resize(bases_[d]);
            std::iota(perms_[d].begin(), perms_[d].end(), 0);
            // keep 0 fixed so 0.0 never maps into the sequence tail
            std::shuffle(perms_[d].begin() + 1, perms_[d].end(), rng);
        }
    }

    Eigen::VectorXd next01() {
        ++index_;
        Eigen::VectorXd u(dim_);
        for (int d = 0; d < dim_; ++d) u[d] = radical_inverse(index_, d);
        return u;
    }

    Eigen::VectorXd next_in(const Box& box) { return box.map01(next01()); }

private:
    int dim_;
    std::uint64_t index_ = 0;
    std::vector<int> bases_;
    std::vector<std::vector<int>> perms_;

    double radical_inverse(std::uint64_t i, int d) const {
        const int b = bases_[d];
        double inv = 1.0 / b, f = inv, r = 0.0;
        while (i > 0) {
            r += f * perms_[d][i % b];
            i /= b;
            f *= inv;
        }
        return r;
    }
};

}  // namespace orbitlab
