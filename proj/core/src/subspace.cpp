#include "lw2g/subspace.hpp"

#include "lw2g/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lw2g {

namespace {

// Deterministic sign: first non-negligible component of each column positive.
void canonicalize_signs(Mat& columns) {
    for (Eigen::Index c = 0; c < columns.cols(); ++c) {
        const double scale = columns.col(c).cwiseAbs().maxCoeff();
        for (Eigen::Index r = 0; r < columns.rows(); ++r) {
            if (std::abs(columns(r, c)) > 1e-12 * scale) {
                if (columns(r, c) < 0.0) {
                    columns.col(c) *= -1.0;
                }
                break;
            }
        }
    }
}

bool all_finite(const Mat& m) { return m.allFinite(); }

// Left singular vectors and singular values of rows^T, i.e. the column space
// spanned by the samples. JacobiSVD is deterministic for identical input.
struct ColumnSvd {
    Mat u;
    Vec s;
};

ColumnSvd column_svd(const Mat& rows) {
    Eigen::JacobiSVD<Mat> svd(rows.transpose(), Eigen::ComputeThinU);
    return {svd.matrixU(), svd.singularValues()};
}

Eigen::Index numerical_rank(const Vec& s, double reference_norm, Eigen::Index n, Eigen::Index d) {
    const double tol = reference_norm * static_cast<double>(std::max(n, d)) *
                       std::numeric_limits<double>::epsilon();
    Eigen::Index r = 0;
    while (r < s.size() && s(r) > tol) {
        ++r;
    }
    return r;
}

}  // namespace

Basis Basis::empty(Eigen::Index dim, std::string label) {
    return Basis(Mat(dim, 0), std::move(label));
}

Basis::Basis(Mat columns, std::string label) : columns_(std::move(columns)), label_(std::move(label)) {
    require(columns_.cols() <= columns_.rows(), "basis has more columns than its dimension");
    require(all_finite(columns_), "basis contains non-finite entries");
    require(orthonormality_error() <= kOrthonormalTol, "basis columns are not orthonormal");
}

double Basis::orthonormality_error() const {
    if (columns_.cols() == 0) {
        return 0.0;
    }
    const Mat gram = columns_.transpose() * columns_;
    return (gram - Mat::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

RepresentationMatrix::RepresentationMatrix(Mat r, int t, EncoderMode m)
    : rows(std::move(r)), task(t), mode(m) {
    require(rows.rows() >= 1 && rows.cols() >= 1, "representation matrix must be non-empty");
    require(all_finite(rows), "representation matrix contains non-finite entries");
}

double HfcValue::degrees() const noexcept { return angle * 180.0 / std::numbers::pi; }

Vec project(const Vec& v, const Basis& basis) {
    require(v.size() == basis.dim(), "project: vector dimension does not match basis");
    if (basis.is_empty()) {
        return Vec::Zero(v.size());
    }
    const Mat& b = basis.columns();
    return b * (b.transpose() * v);
}

Vec project_complement(const Vec& v, const Basis& basis) {
    return v - project(v, basis);
}

HfcValue hfc(const Vec& g, const Vec& g_proj) {
    require(g.size() == g_proj.size(), "hfc: dimension mismatch");
    const double gn = g.norm();
    require(gn > 0.0, "hfc: gradient has zero norm");
    const double pn = g_proj.norm();
    if (pn == 0.0) {
        return {std::numbers::pi / 2.0, gn};
    }
    const double cosine = std::clamp(g.dot(g_proj) / (gn * pn), -1.0, 1.0);
    return {std::acos(cosine), gn};
}

Eigen::Index energy_cutoff(const Vec& singular_values, double base, double total, double eps) {
    const double target = eps * total * (1.0 - kEnergySlack);
    double acc = base;
    if (acc >= target) {
        return 0;
    }
    for (Eigen::Index k = 0; k < singular_values.size(); ++k) {
        acc += singular_values(k) * singular_values(k);
        if (acc >= target) {
            return k + 1;
        }
    }
    return singular_values.size();
}

Basis k_rank_basis(const RepresentationMatrix& R, double eps) {
    require(eps > 0.0 && eps <= 1.0, "k_rank_basis: eps must lie in (0, 1]");
    const double total = R.rows.squaredNorm();
    if (total == 0.0) {
        throw DegenerateError("degenerate representation matrix");
    }
    const ColumnSvd svd = column_svd(R.rows);
    const Eigen::Index r = numerical_rank(svd.s, svd.s(0), R.rows.rows(), R.rows.cols());
    const Eigen::Index k = std::max<Eigen::Index>(1, energy_cutoff(svd.s.head(r), 0.0, total, eps));
    Mat cols = svd.u.leftCols(k);
    canonicalize_signs(cols);
    return Basis(std::move(cols));
}

Basis extend_basis(const Basis& old, const RepresentationMatrix& R, double eps) {
    require(eps > 0.0 && eps <= 1.0, "extend_basis: eps must lie in (0, 1]");
    require(R.rows.cols() == old.dim(), "extend_basis: representation dimension does not match basis");
    const double total = R.rows.squaredNorm();
    if (total == 0.0) {
        throw DegenerateError("degenerate representation matrix");
    }
    const Eigen::Index d = old.dim();
    if (old.rank() == d) {
        return old;
    }

    Mat projected = Mat::Zero(R.rows.rows(), d);
    if (!old.is_empty()) {
        projected = R.rows * old.columns() * old.columns().transpose();
    }
    const Mat residual = R.rows - projected;
    const double base = projected.squaredNorm();

    const ColumnSvd svd = column_svd(residual);
    const Eigen::Index r = numerical_rank(svd.s, std::sqrt(total), R.rows.rows(), d);
    Eigen::Index h = energy_cutoff(svd.s.head(r), base, total, eps);
    h = std::min(h, d - old.rank());
    if (h == 0) {
        return old;
    }

    Mat candidates = svd.u.leftCols(h);
    canonicalize_signs(candidates);

    // Two Gram-Schmidt passes against the old columns and accepted new ones.
    Mat joined(d, old.rank() + h);
    joined.leftCols(old.rank()) = old.columns();
    Eigen::Index accepted = old.rank();
    for (Eigen::Index c = 0; c < h; ++c) {
        Vec v = candidates.col(c);
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index j = 0; j < accepted; ++j) {
                v -= joined.col(j).dot(v) * joined.col(j);
            }
        }
        const double n = v.norm();
        if (n < 1e-10) {
            continue;
        }
        joined.col(accepted++) = v / n;
    }
    return Basis(joined.leftCols(accepted), old.label());
}

}  // namespace lw2g
