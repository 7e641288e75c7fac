#pragma once

#include "lw2g/subspace.hpp"

#include <random>

namespace lw2g::testing {

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = n(rng);
        }
    }
    return m;
}

inline Vec random_vector(Eigen::Index n, std::mt19937_64& rng) { return random_matrix(n, 1, rng); }

/// Orthonormal basis of a random k-dimensional subspace of R^d.
inline Basis random_basis(Eigen::Index d, Eigen::Index k, std::mt19937_64& rng) {
    if (k == 0) {
        return Basis::empty(d);
    }
    Eigen::HouseholderQR<Mat> qr(random_matrix(d, k, rng));
    return Basis(qr.householderQ() * Mat::Identity(d, k));
}

/// Orthogonal projector onto the column span of an arbitrary full-rank
/// matrix, from the normal equations: A (A^T A)^{-1} A^T.
inline Mat gram_projector(const Mat& a) {
    return a * (a.transpose() * a).ldlt().solve(a.transpose());
}

/// n x d matrix with prescribed singular values along random orthonormal directions.
inline Mat matrix_with_spectrum(Eigen::Index n, Eigen::Index d, const Vec& s, std::mt19937_64& rng) {
    const Eigen::Index k = s.size();
    Eigen::HouseholderQR<Mat> qu(random_matrix(n, k, rng));
    Eigen::HouseholderQR<Mat> qv(random_matrix(d, k, rng));
    const Mat u = qu.householderQ() * Mat::Identity(n, k);
    const Mat v = qv.householderQ() * Mat::Identity(d, k);
    return u * s.asDiagonal() * v.transpose();
}

}  // namespace lw2g::testing
