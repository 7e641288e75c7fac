#pragma once

// Projection algebra over stored feature spaces.
//
// A Basis holds orthonormal columns in R^d. Every projection here uses the
// column-vector convention: project(v, B) = B B^T v.

#include <Eigen/Dense>

#include <string>

namespace lw2g {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kOrthonormalTol = 1e-8;

class Basis {
public:
    /// Zero-column basis in R^dim (spans {0}).
    static Basis empty(Eigen::Index dim, std::string label = {});

    /// Validates orthonormality (within kOrthonormalTol) and rank <= dim.
    Basis(Mat columns, std::string label = {});

    Eigen::Index dim() const noexcept { return columns_.rows(); }
    Eigen::Index rank() const noexcept { return columns_.cols(); }
    bool is_empty() const noexcept { return columns_.cols() == 0; }

    const Mat& columns() const noexcept { return columns_; }
    const std::string& label() const noexcept { return label_; }
    void set_label(std::string label) { label_ = std::move(label); }

    /// Largest |<b_i, b_j> - delta_ij| over all column pairs.
    double orthonormality_error() const;

private:
    Mat columns_;
    std::string label_;
};

enum class EncoderMode { kPrompted, kQuery };

/// Sample representations stacked as rows (n x d).
struct RepresentationMatrix {
    Mat rows;
    int task = -1;
    EncoderMode mode = EncoderMode::kQuery;

    RepresentationMatrix(Mat rows, int task = -1, EncoderMode mode = EncoderMode::kQuery);
};

/// Hindrance of an update direction: angle (radians) between a gradient and
/// the direction that actually gets applied.
struct HfcValue {
    double angle = 0.0;
    double grad_norm = 0.0;

    double degrees() const noexcept;
};

Vec project(const Vec& v, const Basis& basis);
Vec project_complement(const Vec& v, const Basis& basis);

/// Angle between g and g_proj, cosine clamped to [-1, 1]. A zero g_proj
/// yields pi/2. Throws ContractError when ||g|| == 0.
HfcValue hfc(const Vec& g, const Vec& g_proj);

/// Minimal k such that the top-k singular energy of R reaches eps of the
/// total, returning the first k left singular vectors of R^T.
Basis k_rank_basis(const RepresentationMatrix& R, double eps);

/// Number of leading squared singular values (sorted descending) needed so
/// that `base + sum_{i<k} s_i^2 >= eps * total`. Shared by k_rank_basis and
/// extend_basis so both use the same slack.
Eigen::Index energy_cutoff(const Vec& singular_values, double base, double total, double eps);

/// Deflate R by `old`, then append the minimal number of residual singular
/// directions so that ||R_proj||^2 + ||R_hat_h||^2 >= eps ||R||^2.
Basis extend_basis(const Basis& old, const RepresentationMatrix& R, double eps);

/// Relative slack applied to the energy criterion to absorb rounding at the
/// boundary (eps = 1 or exact ties like 4/5 >= 0.8).
inline constexpr double kEnergySlack = 1e-10;

}  // namespace lw2g
