#pragma once

// Exterior-algebra machinery at desk scale: index tuples, p x p minors of a
// point frame, the rank functional Lambda_p, interior substitution, and the
// Cramer solve for coefficients of a vector lying in a wedge basis span.

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "orbitlab/field_family.hpp"

namespace orbitlab {

class DegenerateBasisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Strictly increasing 1-based index tuple.
using IndexTuple = std::vector<int>;

/// All I = (i_1 < ... < i_p) with entries in 1..mu, lexicographic.
/// p > mu yields the empty sequence.
inline std::vector<IndexTuple> index_sets(int p, int mu) {
    if (p < 1) throw std::invalid_argument("grade must be >= 1");
    std::vector<IndexTuple> out;
    if (p > mu) return out;
    IndexTuple current(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) current[static_cast<std::size_t>(i)] = i + 1;
    for (;;) {
        out.push_back(current);
        int slot = p - 1;
        while (slot >= 0 && current[static_cast<std::size_t>(slot)] == mu - (p - 1 - slot)) --slot;
        if (slot < 0) break;
        ++current[static_cast<std::size_t>(slot)];
        for (int i = slot + 1; i < p; ++i)
            current[static_cast<std::size_t>(i)] = current[static_cast<std::size_t>(i - 1)] + 1;
    }
    return out;
}

/// Determinant by Gaussian elimination with partial pivoting (destructive).
inline double det_partial_pivot(Eigen::MatrixXd a) {
    const Eigen::Index m = a.rows();
    double det = 1.0;
    for (Eigen::Index k = 0; k < m; ++k) {
        Eigen::Index piv = k;
        for (Eigen::Index r = k + 1; r < m; ++r)
            if (std::abs(a(r, k)) > std::abs(a(piv, k))) piv = r;
        if (a(piv, k) == 0.0) return 0.0;
        if (piv != k) {
            a.row(piv).swap(a.row(k));
            det = -det;
        }
        det *= a(k, k);
        for (Eigen::Index r = k + 1; r < m; ++r) {
            const double factor = a(r, k) / a(k, k);
            a.row(r).tail(m - k) -= factor * a.row(k).tail(m - k);
        }
    }
    return det;
}

/// Minor with rows taken in the listed order (repeats allowed, sign matters)
/// and columns given by the strictly increasing tuple J.
inline double minor_det(const Eigen::MatrixXd& Y, const std::vector<int>& rows,
                        const IndexTuple& cols) {
    const int p = static_cast<int>(rows.size());
    Eigen::MatrixXd sub(p, p);
    for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c)
            sub(r, c) = Y(rows[static_cast<std::size_t>(r)] - 1,
                          cols[static_cast<std::size_t>(c)] - 1);
    return det_partial_pivot(std::move(sub));
}

/// All minors Y_J^K of a frame for one grade p, indexed by column tuples
/// J in I(p,q) and row tuples K in I(p,n). Norm^2 = sum of squared minors.
struct WedgeSpectrum {
    int p = 0;
    std::vector<IndexTuple> col_sets;  // J
    std::vector<IndexTuple> row_sets;  // K
    Eigen::MatrixXd minors;            // (J index, K index)

    double norm() const { return minors.norm(); }

    double minor(const IndexTuple& J, const IndexTuple& K) const {
        for (std::size_t a = 0; a < col_sets.size(); ++a)
            if (col_sets[a] == J)
                for (std::size_t b = 0; b < row_sets.size(); ++b)
                    if (row_sets[b] == K)
                        return minors(static_cast<Eigen::Index>(a),
                                      static_cast<Eigen::Index>(b));
        throw std::invalid_argument("index tuple not present in spectrum");
    }
};

/// Lambda_p(x): the vector of all p x p minors of the frame.
inline WedgeSpectrum lambda_p(const PointFrame& frame, int p) {
    const int n = frame.dimension(), q = frame.count();
    if (p < 1 || p > std::min(n, q))
        throw std::invalid_argument("grade out of range for frame");
    WedgeSpectrum spec;
    spec.p = p;
    spec.col_sets = index_sets(p, q);
    spec.row_sets = index_sets(p, n);
    spec.minors.resize(static_cast<Eigen::Index>(spec.col_sets.size()),
                       static_cast<Eigen::Index>(spec.row_sets.size()));
    for (std::size_t a = 0; a < spec.col_sets.size(); ++a)
        for (std::size_t b = 0; b < spec.row_sets.size(); ++b)
            spec.minors(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                minor_det(frame.Y, spec.row_sets[b], spec.col_sets[a]);
    return spec;
}

/// |Y_I| for a single column tuple: root sum of squares over K in I(p,n).
inline double wedge_norm(const PointFrame& frame, const IndexTuple& I) {
    const int p = static_cast<int>(I.size());
    double sum = 0.0;
    for (const auto& K : index_sets(p, frame.dimension())) {
        const double m = minor_det(frame.Y, K, I);
        sum += m * m;
    }
    return std::sqrt(sum);
}

/// Largest p with |Lambda_p| above the scale-aware tolerance; 0 when even
/// single columns fall below it.
inline int pointwise_rank(const PointFrame& frame, double tol_rel = 1e-8) {
    if (!(tol_rel > 0.0 && tol_rel < 1.0)) throw std::invalid_argument("tol_rel must be in (0,1)");
    const double scale = frame.Y.norm();
    int rank = 0;
    const int pmax = std::min(frame.dimension(), frame.count());
    double scale_pow = 1.0;
    for (int p = 1; p <= pmax; ++p) {
        scale_pow *= scale;
        if (lambda_p(frame, p).norm() > tol_rel * std::max(1.0, scale_pow))
            rank = p;
        else
            break;
    }
    return rank;
}

/// iota^k(W) Y_I: the minors of the frame with column i_k replaced by W.
/// The spectrum carries the single column tuple I.
inline WedgeSpectrum interior_substitute(const IndexTuple& I, int k, const Eigen::VectorXd& W,
                                         const PointFrame& frame) {
    const int p = static_cast<int>(I.size());
    if (k < 1 || k > p) throw std::invalid_argument("substitution slot out of range");
    if (W.size() != frame.dimension()) throw std::invalid_argument("vector dimension mismatch");
    Eigen::MatrixXd cols(frame.dimension(), p);
    for (int c = 0; c < p; ++c)
        cols.col(c) = frame.Y.col(I[static_cast<std::size_t>(c)] - 1);
    cols.col(k - 1) = W;

    WedgeSpectrum spec;
    spec.p = p;
    spec.col_sets = {I};
    spec.row_sets = index_sets(p, frame.dimension());
    spec.minors.resize(1, static_cast<Eigen::Index>(spec.row_sets.size()));
    IndexTuple all_cols(static_cast<std::size_t>(p));
    for (int c = 0; c < p; ++c) all_cols[static_cast<std::size_t>(c)] = c + 1;
    for (std::size_t b = 0; b < spec.row_sets.size(); ++b)
        spec.minors(0, static_cast<Eigen::Index>(b)) =
            minor_det(cols, spec.row_sets[b], all_cols);
    return spec;
}

/// Spectrum restricted to a single column tuple.
inline WedgeSpectrum lambda_single(const PointFrame& frame, const IndexTuple& I) {
    const int p = static_cast<int>(I.size());
    WedgeSpectrum spec;
    spec.p = p;
    spec.col_sets = {I};
    spec.row_sets = index_sets(p, frame.dimension());
    spec.minors.resize(1, static_cast<Eigen::Index>(spec.row_sets.size()));
    for (std::size_t b = 0; b < spec.row_sets.size(); ++b)
        spec.minors(0, static_cast<Eigen::Index>(b)) = minor_det(frame.Y, spec.row_sets[b], I);
    return spec;
}

struct CramerSolution {
    Eigen::VectorXd xi;
    double residual = 0.0;  // |sum xi^k Y_{i_k} - W|
};

/// xi^k = <Y_I, iota^k(W) Y_I> / |Y_I|^2, the unique coefficients when W
/// lies in span{Y_{i_1}, ..., Y_{i_p}} and |Y_I| != 0.
inline CramerSolution cramer_solve(const IndexTuple& I, const Eigen::VectorXd& W,
                                   const PointFrame& frame) {
    const int p = static_cast<int>(I.size());
    const WedgeSpectrum base = lambda_single(frame, I);
    const double denom = base.minors.squaredNorm();
    if (std::sqrt(denom) < 1e-12)
        throw DegenerateBasisError("wedge norm |Y_I| below 1e-12; basis degenerate");
    CramerSolution sol;
    sol.xi.resize(p);
    for (int k = 1; k <= p; ++k) {
        const WedgeSpectrum sub = interior_substitute(I, k, W, frame);
        sol.xi[k - 1] = (base.minors.row(0).dot(sub.minors.row(0))) / denom;
    }
    Eigen::VectorXd rec = Eigen::VectorXd::Zero(frame.dimension());
    for (int k = 0; k < p; ++k) rec += sol.xi[k] * frame.Y.col(I[static_cast<std::size_t>(k)] - 1);
    sol.residual = (rec - W).norm();
    return sol;
}

}  // namespace orbitlab
