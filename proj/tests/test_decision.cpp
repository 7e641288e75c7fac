#include "lw2g/decision.hpp"
#include "lw2g/errors.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

using namespace lw2g;
using namespace lw2g::testing;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

HindranceRecord rec(int id, double old_deg, double pre_deg) {
    HfcValue o;
    o.angle = old_deg * kDeg;
    HfcValue p;
    p.angle = pre_deg * kDeg;
    return HindranceRecord::make(id, o, p);
}

LayerBases random_layers(int blocks, int d, int k, std::mt19937_64& rng) {
    LayerBases out;
    for (int b = 0; b < blocks; ++b) {
        out.push_back(random_basis(d, k, rng));
    }
    return out;
}

GradientVector random_gradient(int blocks, int len, int d, std::mt19937_64& rng) {
    return GradientVector(random_vector(static_cast<Eigen::Index>(blocks) * len * d + d, rng), blocks, len, d);
}

}  // namespace

TEST(Decide, SingleRecordSigns) {
    EXPECT_TRUE(decide({rec(0, 10, 5)}).grow());
    const GrowDecision d = decide({rec(0, 5, 10)});
    EXPECT_FALSE(d.grow());
    EXPECT_EQ(d.target, 0);
}

TEST(Decide, ZeroZReuses) {
    const GrowDecision d = decide({rec(0, 7, 7)});
    EXPECT_FALSE(d.grow());
    EXPECT_EQ(d.target, 0);
}

TEST(Decide, ReusesMinimumZ) {
    const GrowDecision d = decide({rec(0, 9, 8), rec(1, 5, 9), rec(2, 8, 9)});
    EXPECT_FALSE(d.grow());
    EXPECT_EQ(d.target, 1);
}

TEST(Decide, TiesGoToLowestId) {
    const GrowDecision d = decide({rec(2, 5, 7), rec(1, 5, 7), rec(3, 5, 7), rec(0, 6, 7)});
    EXPECT_EQ(d.target, 1);
}

TEST(Decide, EmptyThrows) { EXPECT_THROW(decide({}), ContractError); }

TEST(Decide, ShiftingBothAnglesKeepsDecision) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> angle(1.0, 40.0);
    std::uniform_real_distribution<double> shift(-0.9, 40.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<HindranceRecord> a;
        std::vector<HindranceRecord> b;
        for (int s = 0; s < 1 + trial % 5; ++s) {
            const double o = angle(rng);
            const double p = angle(rng);
            const double c = shift(rng);
            a.push_back(rec(s, o, p));
            b.push_back(rec(s, o + c, p + c));
        }
        const GrowDecision da = decide(a);
        const GrowDecision db = decide(b);
        EXPECT_EQ(da.grow(), db.grow());
        EXPECT_EQ(da.target, db.target);
    }
}

TEST(LayerProjection, BlockwiseAndKeyUntouched) {
    std::mt19937_64 rng(2);
    const LayerBases bases = random_layers(2, 5, 2, rng);
    const GradientVector g = random_gradient(2, 3, 5, rng);
    const GradientVector p = project_layers(g, bases);
    const GradientVector c = project_complement_layers(g, bases);
    EXPECT_LT((p.flat() + c.flat() - g.flat()).norm(), 1e-12);
    EXPECT_EQ(p.key().norm(), 0.0);
    EXPECT_EQ(c.key(), g.key());
    for (int slot = 0; slot < 2; ++slot) {
        const Mat& b = bases[static_cast<std::size_t>(slot)].columns();
        const Mat expected = g.block(slot) * b * b.transpose();
        EXPECT_LT((p.block(slot) - expected).norm(), 1e-12);
        EXPECT_LT((c.block(slot) * b).norm(), 1e-12);
    }
}

TEST(LayerProjection, WrongLayerCountThrows) {
    std::mt19937_64 rng(3);
    const GradientVector g = random_gradient(2, 3, 5, rng);
    EXPECT_THROW(project_layers(g, random_layers(1, 5, 2, rng)), ContractError);
    EXPECT_THROW(project_layers(g, random_layers(2, 6, 2, rng)), ContractError);
}

TEST(Hindrance, ZeroGradientIsDegenerate) {
    std::mt19937_64 rng(4);
    const GradientVector g(2, 3, 5);
    EXPECT_THROW(hindrance_from_gradient(g, random_layers(2, 5, 2, rng)), DegenerateError);
}

TEST(Hindrance, EmptySpaceHasNoHindrance) {
    std::mt19937_64 rng(5);
    const GradientVector g = random_gradient(2, 3, 5, rng);
    EXPECT_NEAR(hindrance_from_gradient(g, random_layers(2, 5, 0, rng)).angle, 0.0, 1e-7);
}

TEST(Cpk, PhiOneIsIdentity) {
    std::mt19937_64 rng(6);
    const GradientVector g = random_gradient(2, 3, 5, rng);
    const GradientVector out = apply_cpk(g, {1.0, random_layers(2, 5, 3, rng)});
    EXPECT_TRUE((out.flat().array() == g.flat().array()).all());
}

TEST(Cpk, PhiZeroRemovesPretrainedComponent) {
    std::mt19937_64 rng(7);
    const LayerBases pre = random_layers(2, 5, 3, rng);
    const GradientVector out = apply_cpk(random_gradient(2, 3, 5, rng), {0.0, pre});
    EXPECT_LT(project_layers(out, pre).flat().norm(), 1e-8);
}

TEST(Cpk, HalfStepOnAxis) {
    GradientVector g(1, 1, 2);
    g.set_block(0, (Mat(1, 2) << 1, 1).finished());
    const GradientVector out = apply_cpk(g, {0.5, {Basis(Mat::Identity(2, 1))}});
    EXPECT_DOUBLE_EQ(out.block(0)(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(out.block(0)(0, 1), 1.0);
}

TEST(Cpk, NeverIncreasesNorm) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const LayerBases pre = random_layers(2, 6, trial % 6, rng);
        const GradientVector g = random_gradient(2, 2, 6, rng);
        for (double phi : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            EXPECT_LE(apply_cpk(g, {phi, pre}).flat().norm(), g.flat().norm() * (1 + 1e-15));
        }
    }
}

TEST(Cpk, PhiOutOfRangeThrows) {
    std::mt19937_64 rng(9);
    EXPECT_THROW(apply_cpk(random_gradient(1, 1, 3, rng), {1.5, random_layers(1, 3, 1, rng)}), ContractError);
}

TEST(Fft, ParallelBeatsOrthogonal) {
    GradientVector g(1, 1, 3);
    g.set_block(0, (Mat(1, 3) << 1, 0, 0).finished());
    const LayerBases a{Basis(Mat::Identity(3, 1))};
    Mat e2 = Mat::Zero(3, 1);
    e2(1, 0) = 1.0;
    const LayerBases b{Basis(e2)};
    const std::vector<TransferCandidate> cands{{1, g, &b}, {0, g, &a}};
    EXPECT_EQ(select_fft_sets(cands, 1), std::vector<int>{0});
    EXPECT_TRUE(select_fft_sets(cands, 0).empty());
    EXPECT_THROW(select_fft_sets(cands, 3), ContractError);
}

TEST(Fft, RankingMatchesBruteForce) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 2 + trial % 5;
        std::vector<LayerBases> spaces;
        std::vector<TransferCandidate> cands;
        spaces.reserve(static_cast<std::size_t>(n));
        for (int s = 0; s < n; ++s) {
            spaces.push_back(random_layers(2, 6, 1 + s % 4, rng));
        }
        std::vector<std::pair<double, int>> oracle;
        for (int s = 0; s < n; ++s) {
            const GradientVector g = random_gradient(2, 2, 6, rng);
            cands.push_back({s, g, &spaces[static_cast<std::size_t>(s)]});
            // ||Proj g||^2 summed block by block through explicit projector matrices.
            double in = 0.0;
            for (int slot = 0; slot < 2; ++slot) {
                const Mat& b = spaces[static_cast<std::size_t>(s)][static_cast<std::size_t>(slot)].columns();
                const Mat projector = b * b.transpose();
                in += (g.block(slot) * projector).squaredNorm();
            }
            oracle.emplace_back(std::sqrt(in) / g.flat().norm(), s);
        }
        std::stable_sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
        const std::vector<int> got = select_fft_sets(cands, n);
        for (int i = 0; i < n; ++i) {
            EXPECT_EQ(got[static_cast<std::size_t>(i)], oracle[static_cast<std::size_t>(i)].second);
        }
    }
}

TEST(Fft, AngleScoreIsAvailable) {
    GradientVector g(1, 1, 2);
    g.set_block(0, (Mat(1, 2) << 1, 1).finished());
    const LayerBases a{Basis(Mat::Identity(2, 1))};
    const TransferCandidate c{0, g, &a};
    // Key coordinates are zero here, so the angle to the projection is 45 degrees.
    EXPECT_NEAR(transfer_score(c, TransferScore::kAngleToProjection), std::numbers::pi / 4, 1e-12);
    EXPECT_NEAR(transfer_score(c, TransferScore::kProjectionFraction), std::sqrt(0.5), 1e-12);
}

TEST(DynamicThreshold, EqualsHindranceOfProbeGradient) {
    EncoderConfig cfg;
    cfg.input_dim = 12;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.prompt_len = 3;
    cfg.n_patches = 3;
    cfg.mlp_hidden = 16;
    cfg.seed = 4;
    const FrozenBackbone backbone(cfg);
    std::mt19937_64 rng(11);
    ClassifierHead head(cfg.d_model);
    head.add_classes(4, rng);
    const Mat samples = random_matrix(20, cfg.input_dim, rng);
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        labels.push_back(2 + i % 2);
    }
    const PromptSet set = PromptSet::random(cfg, 0, rng);
    const ProbeBatch probe{&backbone, &head, &samples, labels, ClassMask::range(2, 2, 4), 8};
    const LayerBases pre = build_pre_space(backbone, samples, 0.9);
    const HfcValue direct = hindrance_from_gradient(probe_gradient(probe, set), pre);
    const HfcValue threshold = dynamic_threshold(probe, set, pre);
    EXPECT_EQ(direct.angle, threshold.angle);
    EXPECT_EQ(dynamic_threshold(probe, set, 0.9).angle, threshold.angle);
}
