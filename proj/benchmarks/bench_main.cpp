#include "lw2g/decision.hpp"
#include "lw2g/model.hpp"
#include "lw2g/subspace.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace lw2g;

namespace {

Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = n(rng);
        }
    }
    return m;
}

Basis basis(Eigen::Index d, Eigen::Index k, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Mat> qr(gaussian(d, k, rng));
    return Basis(qr.householderQ() * Mat::Identity(d, k));
}

void BM_ProjectComplement(benchmark::State& state) {
    std::mt19937_64 rng(1);
    const auto d = state.range(0);
    const Basis b = basis(d, d / 2, rng);
    const Vec v = gaussian(d, 1, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(project_complement(v, b));
    }
}
BENCHMARK(BM_ProjectComplement)->Arg(32)->Arg(128)->Arg(512);

void BM_KRankBasis(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const RepresentationMatrix r(gaussian(512, state.range(0), rng));
    for (auto _ : state) {
        benchmark::DoNotOptimize(k_rank_basis(r, 0.95));
    }
}
BENCHMARK(BM_KRankBasis)->Arg(32)->Arg(64);

void BM_ExtendBasis(benchmark::State& state) {
    std::mt19937_64 rng(3);
    const Basis old = basis(32, 12, rng);
    const RepresentationMatrix r(gaussian(512, 32, rng));
    for (auto _ : state) {
        benchmark::DoNotOptimize(extend_basis(old, r, 0.95));
    }
}
BENCHMARK(BM_ExtendBasis);

void BM_PromptGradient(benchmark::State& state) {
    EncoderConfig cfg;
    const FrozenBackbone backbone(cfg);
    std::mt19937_64 rng(4);
    ClassifierHead head(cfg.d_model);
    head.add_classes(4, rng);
    const PromptSet set = PromptSet::random(cfg, 0, rng);
    const Mat batch = gaussian(state.range(0), cfg.input_dim, rng);
    std::vector<int> labels(static_cast<std::size_t>(batch.rows()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = static_cast<int>(i % 4);
    }
    const ClassMask mask = ClassMask::all(4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(grad_prompts(backbone, head, set, nullptr, batch, labels, mask));
    }
    state.SetItemsProcessed(state.iterations() * batch.rows());
}
BENCHMARK(BM_PromptGradient)->Arg(1)->Arg(32);

void BM_Hindrance(benchmark::State& state) {
    std::mt19937_64 rng(5);
    const int d = 32;
    const int len = 4;
    const LayerBases space{basis(d, 10, rng), basis(d, 14, rng)};
    const GradientVector g(gaussian(2 * len * d + d, 1, rng), 2, len, d);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hindrance_from_gradient(g, space));
    }
}
BENCHMARK(BM_Hindrance);

}  // namespace

BENCHMARK_MAIN();
