#include "lw2g/errors.hpp"
#include "lw2g/subspace.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace lw2g;
using namespace lw2g::testing;

TEST(Basis, EmptyBasisProjectsToZero) {
    const Basis b = Basis::empty(5);
    const Vec v = Vec::LinSpaced(5, 1.0, 5.0);
    EXPECT_TRUE(b.is_empty());
    EXPECT_EQ(project(v, b).norm(), 0.0);
    EXPECT_EQ((project_complement(v, b) - v).norm(), 0.0);
}

TEST(Basis, RejectsNonOrthonormalColumns) {
    Mat m(3, 2);
    m << 1, 1, 0, 1, 0, 0;
    EXPECT_THROW(Basis{m}, ContractError);
    EXPECT_THROW(Basis{Mat::Identity(2, 3)}, ContractError);
}

TEST(Project, CoordinateAxes) {
    const Basis b(Mat::Identity(3, 2));
    const Vec v = (Vec(3) << 3, 4, 5).finished();
    EXPECT_TRUE(project(v, b).isApprox((Vec(3) << 3, 4, 0).finished()));
    EXPECT_TRUE(project_complement(v, b).isApprox((Vec(3) << 0, 0, 5).finished()));
}

TEST(Project, MatchesNormalEquationProjector) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index d = 3 + trial % 20;
        const Eigen::Index k = 1 + trial % (d - 1);
        const Mat spanning = random_matrix(d, k, rng);
        Eigen::HouseholderQR<Mat> qr(spanning);
        const Basis b(qr.householderQ() * Mat::Identity(d, k));
        const Vec v = random_vector(d, rng);
        const Vec expected = gram_projector(spanning) * v;
        EXPECT_LT((project(v, b) - expected).norm(), 1e-10 * (1.0 + v.norm()));
    }
}

TEST(Project, DimensionMismatchThrows) {
    const Basis b(Mat::Identity(4, 2));
    EXPECT_THROW(project(Vec::Ones(3), b), ContractError);
}

TEST(Hfc, PerpendicularProjectionIsRightAngle) {
    const Vec g = (Vec(2) << 1, 0).finished();
    EXPECT_DOUBLE_EQ(hfc(g, Vec::Zero(2)).angle, std::numbers::pi / 2);
}

TEST(Hfc, UnchangedGradientIsZeroAngle) {
    const Vec g = (Vec(3) << 1, -2, 2).finished();
    const HfcValue h = hfc(g, g);
    EXPECT_NEAR(h.angle, 0.0, 1e-7);
    EXPECT_DOUBLE_EQ(h.grad_norm, 3.0);
}

TEST(Hfc, FortyFiveDegrees) {
    const Vec g = (Vec(2) << 1, 1).finished();
    const Basis b(Mat::Identity(2, 1));
    EXPECT_NEAR(hfc(g, project_complement(g, b)).degrees(), 45.0, 1e-12);
}

TEST(Hfc, ZeroGradientThrows) { EXPECT_THROW(hfc(Vec::Zero(3), Vec::Ones(3)), ContractError); }

TEST(Hfc, MatchesEnergySplitOracle) {
    // For g_perp = Proj_{S^perp}(g), the angle satisfies tan = ||Proj_S g|| / ||g_perp||.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const Eigen::Index d = 4 + trial % 30;
        const Basis b = random_basis(d, 1 + trial % (d - 1), rng);
        const Vec g = random_vector(d, rng);
        const double expected = std::atan2(project(g, b).norm(), project_complement(g, b).norm());
        EXPECT_NEAR(hfc(g, project_complement(g, b)).angle, expected, 1e-9);
    }
}

TEST(KRank, ExampleSpectrum) {
    std::mt19937_64 rng(3);
    const Mat r = matrix_with_spectrum(20, 6, (Vec(3) << 3, 1, 1).finished(), rng);
    // energies 9, 1, 1 of 11: eps 0.8 needs 1, eps 0.9 needs 2, eps 1 needs 3
    EXPECT_EQ(k_rank_basis(RepresentationMatrix(r), 0.8).rank(), 1);
    EXPECT_EQ(k_rank_basis(RepresentationMatrix(r), 0.9).rank(), 2);
    EXPECT_EQ(k_rank_basis(RepresentationMatrix(r), 1.0).rank(), 3);
}

TEST(KRank, ExactBoundary) {
    std::mt19937_64 rng(4);
    // energies 4 and 1: exactly 0.8 with one direction
    const Mat r = matrix_with_spectrum(10, 5, (Vec(2) << 2, 1).finished(), rng);
    EXPECT_EQ(k_rank_basis(RepresentationMatrix(r), 0.8).rank(), 1);
}

TEST(KRank, RankOneMatrix) {
    std::mt19937_64 rng(8);
    const Vec u = random_vector(12, rng);
    const Vec v = random_vector(7, rng);
    const Basis b = k_rank_basis(RepresentationMatrix(u * v.transpose()), 1.0);
    ASSERT_EQ(b.rank(), 1);
    EXPECT_NEAR(std::abs(b.columns().col(0).dot(v.normalized())), 1.0, 1e-12);
}

TEST(KRank, ZeroMatrixIsDegenerate) {
    EXPECT_THROW(k_rank_basis(RepresentationMatrix(Mat::Zero(4, 3)), 0.9), DegenerateError);
}

TEST(KRank, NonFiniteRowsRejected) {
    Mat r = Mat::Ones(3, 3);
    r(1, 1) = std::nan("");
    EXPECT_THROW(RepresentationMatrix{r}, ContractError);
}

TEST(KRank, DeterministicSigns) {
    std::mt19937_64 rng(9);
    const Mat r = random_matrix(30, 8, rng);
    const Basis a = k_rank_basis(RepresentationMatrix(r), 0.9);
    const Basis b = k_rank_basis(RepresentationMatrix(r), 0.9);
    EXPECT_EQ((a.columns() - b.columns()).norm(), 0.0);
}

TEST(KRank, SpansLeadingRightSingularVectors) {
    // Oracle: a different SVD algorithm (divide and conquer) on the same matrix.
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index d = 4 + trial % 12;
        const Vec s = Vec::LinSpaced(d, static_cast<double>(2 * d), 1.0);
        const Mat r = matrix_with_spectrum(3 * d, d, s, rng);
        const Basis b = k_rank_basis(RepresentationMatrix(r), 0.7);
        Eigen::BDCSVD<Mat> svd(r, Eigen::ComputeThinV);
        const Mat v = svd.matrixV().leftCols(b.rank());
        EXPECT_LT((b.columns() * b.columns().transpose() - v * v.transpose()).norm(), 1e-8);
    }
}

TEST(ExtendBasis, ContainedRowsLeaveBasisUnchanged) {
    std::mt19937_64 rng(12);
    const Basis old = random_basis(8, 3, rng);
    const Mat r = random_matrix(20, 3, rng) * old.columns().transpose();
    const Basis out = extend_basis(old, RepresentationMatrix(r), 0.99);
    EXPECT_EQ(out.rank(), 3);
    EXPECT_EQ((out.columns() - old.columns()).norm(), 0.0);
}

TEST(ExtendBasis, OrthogonalEnergyAddsDirections) {
    Mat r = Mat::Zero(4, 4);
    r(0, 0) = 1.0;
    r(1, 1) = 1.0;
    r(2, 2) = 1.0;
    const Basis old(Mat::Identity(4, 1));
    const Basis out = extend_basis(old, RepresentationMatrix(r), 1.0);
    EXPECT_EQ(out.rank(), 3);
    EXPECT_EQ(out.columns().col(0), old.columns().col(0));
    EXPECT_LT(out.orthonormality_error(), kOrthonormalTol);
}

TEST(ExtendBasis, FullBasisUnchanged) {
    std::mt19937_64 rng(13);
    const Basis full = random_basis(5, 5, rng);
    EXPECT_EQ(extend_basis(full, RepresentationMatrix(random_matrix(6, 5, rng)), 1.0).rank(), 5);
}

TEST(ExtendBasis, DimensionMismatchThrows) {
    std::mt19937_64 rng(14);
    EXPECT_THROW(extend_basis(random_basis(5, 2, rng), RepresentationMatrix(random_matrix(4, 6, rng)), 0.9),
                 ContractError);
}

TEST(ExtendBasis, EnergyCriterionAndMinimality) {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index d = 6 + trial % 10;
        const Basis old = random_basis(d, trial % 4, rng);
        const Mat r = random_matrix(2 * d, d, rng);
        const double eps = 0.5 + 0.45 * ((trial * 37) % 100) / 100.0;
        const Basis out = extend_basis(old, RepresentationMatrix(r), eps);
        const double total = r.squaredNorm();
        const double captured = (r * out.columns()).squaredNorm();
        EXPECT_GE(captured, eps * total * (1.0 - 1e-9));
        if (out.rank() > old.rank()) {
            // Dropping the last added direction must fall short.
            const Mat fewer = out.columns().leftCols(out.rank() - 1);
            EXPECT_LT((r * fewer).squaredNorm(), eps * total);
        }
        EXPECT_LT(out.orthonormality_error(), kOrthonormalTol);
    }
}
