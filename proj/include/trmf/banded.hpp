#pragma once

#include "trmf/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace trmf {

/**
 * Symmetric positive definite band matrix with half-bandwidth `bandwidth`,
 * stored as the lower band: band(i, k) holds A(i, i - k) for k = 0..bandwidth.
 *
 * factorize() overwrites the band with its Cholesky factor L (A = L L^T) in
 * O(n * bandwidth^2); solve() then runs in O(n * bandwidth).
 */
class BandedSpdMatrix {
public:
    BandedSpdMatrix(Eigen::Index size, Eigen::Index bandwidth)
        : band_(Eigen::MatrixXd::Zero(size, bandwidth + 1)), bandwidth_(bandwidth) {}

    Eigen::Index size() const { return band_.rows(); }
    Eigen::Index bandwidth() const { return bandwidth_; }

    /// Adds v to A(i, j) (and by symmetry A(j, i)). Requires |i - j| <= bandwidth.
    void add(Eigen::Index i, Eigen::Index j, double v) {
        if (i < j) std::swap(i, j);
        band_(i, i - j) += v;
    }

    void add_diagonal(Eigen::Index i, double v) { band_(i, 0) += v; }

    double at(Eigen::Index i, Eigen::Index j) const {
        if (i < j) std::swap(i, j);
        return i - j > bandwidth_ ? 0.0 : band_(i, i - j);
    }

    /// Returns false when a non-positive pivot shows the matrix is not SPD.
    bool factorize() {
        const Eigen::Index n = size();
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index lo = std::max<Eigen::Index>(0, i - bandwidth_);
            for (Eigen::Index j = lo; j <= i; ++j) {
                double s = band_(i, i - j);
                const Eigen::Index klo = std::max<Eigen::Index>(lo, j - bandwidth_);
                for (Eigen::Index k = klo; k < j; ++k) s -= band_(i, i - k) * band_(j, j - k);
                if (j == i) {
                    if (!(s > 0.0) || !std::isfinite(s)) return false;
                    band_(i, 0) = std::sqrt(s);
                } else {
                    band_(i, i - j) = s / band_(j, 0);
                }
            }
        }
        factored_ = true;
        return true;
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        if (!factored_) throw NumericalError("banded solve before factorization");
        const Eigen::Index n = size();
        Eigen::VectorXd z = rhs;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index lo = std::max<Eigen::Index>(0, i - bandwidth_);
            for (Eigen::Index k = lo; k < i; ++k) z(i) -= band_(i, i - k) * z(k);
            z(i) /= band_(i, 0);
        }
        for (Eigen::Index i = n - 1; i >= 0; --i) {
            const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + bandwidth_);
            for (Eigen::Index k = i + 1; k <= hi; ++k) z(i) -= band_(k, k - i) * z(k);
            z(i) /= band_(i, 0);
        }
        return z;
    }

    /// Dense copy of the (unfactored) matrix; intended for tests.
    Eigen::MatrixXd to_dense() const {
        const Eigen::Index n = size();
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index k = 0; k <= std::min(bandwidth_, i); ++k) {
                a(i, i - k) = band_(i, k);
                a(i - k, i) = band_(i, k);
            }
        }
        return a;
    }

private:
    Eigen::MatrixXd band_;
    Eigen::Index bandwidth_;
    bool factored_ = false;
};

} // namespace trmf
