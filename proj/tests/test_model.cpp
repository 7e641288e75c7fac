#include "lw2g/decision.hpp"
#include "lw2g/errors.hpp"
#include "lw2g/model.hpp"
#include "lw2g/trainer.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace lw2g;
using namespace lw2g::testing;

namespace {

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.input_dim = 12;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.prompt_len = 3;
    cfg.n_patches = 3;
    cfg.mlp_hidden = 16;
    cfg.seed = 21;
    return cfg;
}

struct Fixture {
    EncoderConfig cfg = small_config();
    FrozenBackbone backbone{cfg};
    ClassifierHead head{cfg.d_model};
    PromptSet set;
    Mat batch;
    std::vector<int> labels{0, 2, 1, 2, 0};
    ClassMask mask = ClassMask::all(3);

    explicit Fixture(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        head.add_classes(3, rng);
        head.weight() = random_matrix(3, cfg.d_model, rng);
        set = PromptSet::random(cfg, 0, rng);
        batch = random_matrix(5, cfg.input_dim, rng);
    }
};

// Central differences on each selected flat coordinate of the set.
void check_gradient(const Fixture& f, const FrozenPrompts* frozen, const LossOptions& opts, const Mat* queries) {
    const GradientVector g = grad_prompts(f.backbone, f.head, f.set, frozen, f.batch, f.labels, f.mask, opts, queries);
    const double h = 1e-5;
    std::mt19937_64 rng(99);
    for (int slot = 0; slot < f.cfg.n_prompted(); ++slot) {
        std::uniform_int_distribution<Eigen::Index> pick(0, f.cfg.prompt_len * f.cfg.d_model - 1);
        for (int k = 0; k < 24; ++k) {
            const Eigen::Index idx = pick(rng);
            const Eigen::Index r = idx / f.cfg.d_model;
            const Eigen::Index c = idx % f.cfg.d_model;
            PromptSet plus = f.set;
            PromptSet minus = f.set;
            plus.prompts[static_cast<std::size_t>(slot)](r, c) += h;
            minus.prompts[static_cast<std::size_t>(slot)](r, c) -= h;
            const double numeric =
                (batch_loss(f.backbone, f.head, plus, frozen, f.batch, f.labels, f.mask, opts, queries) -
                 batch_loss(f.backbone, f.head, minus, frozen, f.batch, f.labels, f.mask, opts, queries)) /
                (2 * h);
            const double analytic = g.block(slot)(r, c);
            const double tol = std::max(1e-3 * std::max(std::abs(analytic), std::abs(numeric)), 1e-5);
            EXPECT_NEAR(analytic, numeric, tol) << "slot " << slot << " row " << r << " col " << c;
        }
    }
    for (Eigen::Index c = 0; c < f.cfg.d_model; ++c) {
        PromptSet plus = f.set;
        PromptSet minus = f.set;
        plus.key(c) += h;
        minus.key(c) -= h;
        const double numeric = (batch_loss(f.backbone, f.head, plus, frozen, f.batch, f.labels, f.mask, opts, queries) -
                                batch_loss(f.backbone, f.head, minus, frozen, f.batch, f.labels, f.mask, opts, queries)) /
                               (2 * h);
        const double tol = std::max(1e-3 * std::abs(numeric), 1e-5);
        EXPECT_NEAR(g.key()(c), numeric, tol) << "key " << c;
    }
}

}  // namespace

TEST(Encoder, RejectsBadConfig) {
    EncoderConfig cfg = small_config();
    cfg.n_heads = 3;
    EXPECT_THROW(cfg.validate(), ContractError);
    cfg = small_config();
    cfg.prompted_blocks = {0, 5};
    EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(Encoder, MaskedClassesNeverWin) {
    const Fixture f(1);
    const Mat logits = forward_prompted(f.backbone, f.head, f.set, nullptr, f.batch, ClassMask::range(1, 1, 3));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        EXPECT_EQ(logits(i, 0), -std::numeric_limits<double>::infinity());
        EXPECT_EQ(logits(i, 2), -std::numeric_limits<double>::infinity());
        EXPECT_TRUE(std::isfinite(logits(i, 1)));
    }
}

TEST(Encoder, EmptyBatchThrows) {
    const Fixture f(2);
    const Mat empty(0, f.cfg.input_dim);
    EXPECT_THROW(forward_prompted(f.backbone, f.head, f.set, nullptr, empty, f.mask), ContractError);
    EXPECT_THROW(grad_prompts(f.backbone, f.head, f.set, nullptr, empty, {}, f.mask), ContractError);
}

TEST(Encoder, PromptsChangeTheOutput) {
    const Fixture f(3);
    std::mt19937_64 rng(4);
    const PromptSet other = PromptSet::random(f.cfg, 1, rng);
    const Mat a = forward_prompted(f.backbone, f.head, f.set, nullptr, f.batch, f.mask);
    const Mat b = forward_prompted(f.backbone, f.head, other, nullptr, f.batch, f.mask);
    EXPECT_GT((a - b).norm(), 1e-6);
}

TEST(Gradient, PlainForwardMatchesFiniteDifferences) {
    const Fixture f(5);
    check_gradient(f, nullptr, {}, nullptr);
}

TEST(Gradient, ComposedForwardMatchesFiniteDifferences) {
    const Fixture f(6);
    std::mt19937_64 rng(7);
    const PromptSet old = PromptSet::random(f.cfg, 1, rng);
    const PromptSet* reused[] = {&old};
    const FrozenPrompts frozen = freeze_prompts(reused);
    check_gradient(f, &frozen, {}, nullptr);
}

TEST(Gradient, KeyPullTermMatchesFiniteDifferences) {
    const Fixture f(8);
    const Mat queries = forward_query(f.backbone, f.batch);
    check_gradient(f, nullptr, {0.7, false}, &queries);
}

TEST(Gradient, KeyPullClosedForm) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec k = random_vector(6, rng);
        const Vec q = random_vector(6, rng);
        const Vec g = key_pull_gradient(k, q);
        for (Eigen::Index c = 0; c < 6; ++c) {
            Vec kp = k;
            Vec km = k;
            kp(c) += 1e-6;
            km(c) -= 1e-6;
            EXPECT_NEAR(g(c), (key_pull_loss(kp, q) - key_pull_loss(km, q)) / 2e-6, 1e-7);
        }
    }
    const Vec q = Vec::Ones(4);
    EXPECT_NEAR(key_pull_loss(2.0 * q, q), 0.0, 1e-15);
    EXPECT_LT(key_pull_gradient(2.0 * q, q).norm(), 1e-15);
}

TEST(Gradient, CrossEntropyHasNoKeyComponent) {
    const Fixture f(10);
    const GradientVector g = grad_prompts(f.backbone, f.head, f.set, nullptr, f.batch, f.labels, f.mask);
    EXPECT_EQ(g.key().norm(), 0.0);
    EXPECT_GT(g.prompt_part().norm(), 0.0);
}

TEST(Gradient, SaturatedSingleClassGivesNearZeroGradient) {
    const Fixture f(11);
    const std::vector<int> labels(5, 1);
    const GradientVector g =
        grad_prompts(f.backbone, f.head, f.set, nullptr, f.batch, labels, ClassMask::range(1, 1, 3));
    EXPECT_LT(g.flat().norm(), 1e-12);
}

TEST(Gradient, HeadGradientOnlyOnAllowedRows) {
    const Fixture f(12);
    const std::vector<int> labels{1, 2, 1, 2, 1};
    const BatchGradient bg = backward_prompted(f.backbone, f.head, f.set, nullptr, f.batch, labels,
                                               ClassMask::range(1, 2, 3), {0.0, true});
    EXPECT_EQ(bg.head_weight.row(0).norm(), 0.0);
    EXPECT_GT(bg.head_weight.row(1).norm(), 0.0);
    // Finite difference on one head weight.
    ClassifierHead plus = f.head;
    ClassifierHead minus = f.head;
    plus.weight()(2, 3) += 1e-5;
    minus.weight()(2, 3) -= 1e-5;
    const ClassMask mask = ClassMask::range(1, 2, 3);
    const double numeric = (batch_loss(f.backbone, plus, f.set, nullptr, f.batch, labels, mask) -
                            batch_loss(f.backbone, minus, f.set, nullptr, f.batch, labels, mask)) /
                           2e-5;
    EXPECT_NEAR(bg.head_weight(2, 3), numeric, 1e-6);
}

TEST(Gradient, LabelOutsideMaskThrows) {
    const Fixture f(13);
    EXPECT_THROW(grad_prompts(f.backbone, f.head, f.set, nullptr, f.batch, f.labels, ClassMask::range(0, 1, 3)),
                 ContractError);
}

TEST(FrozenPrompts, ParticipateInForwardButStayFixed) {
    Fixture f(14);
    std::mt19937_64 rng(15);
    const PromptSet old = PromptSet::random(f.cfg, 1, rng);
    const PromptSet* reused[] = {&old};
    const FrozenPrompts frozen = freeze_prompts(reused);
    const FrozenPrompts before = frozen;
    const PromptSet old_before = old;

    const Mat with = forward_prompted(f.backbone, f.head, f.set, &frozen, f.batch, f.mask);
    const Mat without = forward_prompted(f.backbone, f.head, f.set, nullptr, f.batch, f.mask);
    EXPECT_GT((with - without).norm(), 1e-8);

    const std::vector<Mat> active_before = f.set.prompts;
    for (int step = 0; step < 3; ++step) {
        const GradientVector g = grad_prompts(f.backbone, f.head, f.set, &frozen, f.batch, f.labels, f.mask);
        orthogonal_step(f.set, g, {}, 0.1);
    }
    for (std::size_t b = 0; b < frozen.tokens.size(); ++b) {
        EXPECT_TRUE((frozen.tokens[b].array() == before.tokens[b].array()).all());
        EXPECT_TRUE((old.prompts[b].array() == old_before.prompts[b].array()).all());
        EXPECT_GT((f.set.prompts[b] - active_before[b]).norm(), 0.0);
    }
}

TEST(Backbone, FingerprintStableAcrossTraining) {
    ExperimentSpec spec;
    spec.stream.n_tasks = 2;
    spec.stream.samples_per_class = 10;
    spec.stream.dim = 24;
    spec.stream.frame_rank = 4;
    spec.encoder.input_dim = 24;
    spec.train.epochs = 1;
    spec.train.dsub_size = 16;
    spec.train.repr_samples = 16;
    Experiment exp(make_backbone(spec), spec.train);
    const std::uint64_t before = exp.backbone().fingerprint();
    for (const TaskDataset& t : generate(spec.stream)) {
        exp.train_task(t);
    }
    EXPECT_EQ(exp.backbone().fingerprint(), before);
}

TEST(Backbone, PretrainingChangesWeightsDeterministically) {
    const EncoderConfig cfg = small_config();
    std::mt19937_64 rng(16);
    const Mat x = random_matrix(40, cfg.input_dim, rng);
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) {
        y.push_back(i % 3);
    }
    const FrozenBackbone a = pretrain_backbone(cfg, x, y, 3, {5, 0.05});
    const FrozenBackbone b = pretrain_backbone(cfg, x, y, 3, {5, 0.05});
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_NE(a.fingerprint(), FrozenBackbone(cfg).fingerprint());
}

TEST(Compose, LengthsAdd) {
    const Fixture f(17);
    std::mt19937_64 rng(18);
    const PromptSet old = PromptSet::random(f.cfg, 1, rng);
    EXPECT_EQ(compose_prompts(f.set, {}).tokens.front().rows(), f.cfg.prompt_len);
    const PromptSet* reused[] = {&old};
    const ComposedPrompts c = compose_prompts(f.set, reused);
    EXPECT_EQ(c.tokens.front().rows(), 2 * f.cfg.prompt_len);
    EXPECT_EQ(c.active_rows, f.cfg.prompt_len);
}

TEST(Compose, WidthMismatchThrows) {
    const Fixture f(19);
    PromptSet odd = f.set;
    odd.prompts[0] = Mat::Zero(2, f.cfg.d_model + 1);
    const PromptSet* reused[] = {&f.set, &odd};
    EXPECT_THROW(freeze_prompts(reused), ContractError);
}
