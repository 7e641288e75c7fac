#include "lw2g/decision.hpp"

#include "lw2g/errors.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>

namespace lw2g {

namespace {

void check_layers(const GradientVector& g, const LayerBases& bases) {
    require(static_cast<int>(bases.size()) == g.n_prompted(), "one basis per prompted block is required");
    for (const Basis& b : bases) {
        require(b.dim() == g.d_model(), "basis dimension does not match the prompt width");
    }
}

}  // namespace

GradientVector project_layers(const GradientVector& g, const LayerBases& bases) {
    check_layers(g, bases);
    GradientVector out(g.n_prompted(), g.prompt_len(), g.d_model());
    for (int slot = 0; slot < g.n_prompted(); ++slot) {
        const Basis& basis = bases[static_cast<std::size_t>(slot)];
        if (basis.is_empty()) {
            continue;
        }
        // Row convention: tokens * B * B^T.
        const Mat& b = basis.columns();
        out.set_block(slot, (g.block(slot) * b) * b.transpose());
    }
    return out;
}

GradientVector project_complement_layers(const GradientVector& g, const LayerBases& bases) {
    GradientVector p = project_layers(g, bases);
    p.flat() = g.flat() - p.flat();
    return p;
}

HindranceRecord HindranceRecord::make(int set_id, HfcValue old_value, HfcValue pre_value) {
    return {set_id, old_value, pre_value, old_value.angle - pre_value.angle};
}

double HindranceRecord::z_degrees() const { return z * 180.0 / std::numbers::pi; }

GrowDecision decide(std::vector<HindranceRecord> records) {
    require(!records.empty(), "decide needs at least one hindrance record");
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& r = records[i];
        const auto& b = records[best];
        if (r.z < b.z || (r.z == b.z && r.set_id < b.set_id)) {
            best = i;
        }
    }
    GrowDecision d;
    if (records[best].z > 0.0) {
        d.kind = GrowDecision::Kind::kGrow;
    } else {
        d.kind = GrowDecision::Kind::kReuse;
        d.target = records[best].set_id;
    }
    d.records = std::move(records);
    return d;
}

void SoftConstraintConfig::validate() const {
    require(phi >= 0.0 && phi <= 1.0, "phi must lie in [0, 1]");
}

GradientVector apply_cpk(const GradientVector& g, const SoftConstraintConfig& cfg) {
    cfg.validate();
    if (cfg.phi == 1.0) {
        return g;
    }
    GradientVector p = project_layers(g, cfg.pre_space);
    p.flat() = g.flat() - (1.0 - cfg.phi) * p.flat();
    return p;
}

GradientVector probe_gradient(const ProbeBatch& probe, const PromptSet& set) {
    require(probe.backbone != nullptr && probe.head != nullptr && probe.samples != nullptr,
            "probe batch is incomplete");
    const Eigen::Index n = probe.samples->rows();
    require(n > 0, "probe subset is empty");
    require(probe.batch_size > 0, "probe batch size must be positive");
    GradientVector total = GradientVector::like(set);
    Eigen::Index batches = 0;
    for (Eigen::Index start = 0; start < n; start += probe.batch_size) {
        const Eigen::Index len = std::min<Eigen::Index>(probe.batch_size, n - start);
        const Mat batch = probe.samples->middleRows(start, len);
        const auto labels = probe.labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len));
        total.flat() += grad_prompts(*probe.backbone, *probe.head, set, nullptr, batch, labels, probe.mask).flat();
        ++batches;
    }
    total.flat() /= static_cast<double>(batches);
    return total;
}

HfcValue hindrance_from_gradient(const GradientVector& g, const LayerBases& space) {
    if (g.flat().norm() == 0.0) {
        throw DegenerateError("degenerate subset batch");
    }
    return hfc(g.flat(), project_complement_layers(g, space).flat());
}

HfcValue hindrance_for_old_set(const ProbeBatch& probe, const PromptSet& set, const LayerBases& old_space) {
    require(!old_space.empty(), "old feature space is missing");
    return hindrance_from_gradient(probe_gradient(probe, set), old_space);
}

LayerBases build_pre_space(const FrozenBackbone& backbone, const Mat& samples, double eps_pre, int task) {
    const std::vector<Mat> reps = query_representations(backbone, samples);
    LayerBases bases;
    for (std::size_t slot = 0; slot < reps.size(); ++slot) {
        Basis b = k_rank_basis(RepresentationMatrix(reps[slot], task, EncoderMode::kQuery), eps_pre);
        b.set_label("pre / task " + std::to_string(task) + " / block " +
                    std::to_string(backbone.config().prompted_blocks[slot]));
        bases.push_back(std::move(b));
    }
    return bases;
}

HfcValue dynamic_threshold(const ProbeBatch& probe, const PromptSet& set, const LayerBases& pre_space) {
    // A fresh set initialized from the old one carries none of its history.
    PromptSet clone = set;
    clone.id = -1;
    return hindrance_from_gradient(probe_gradient(probe, clone), pre_space);
}

HfcValue dynamic_threshold(const ProbeBatch& probe, const PromptSet& set, double eps_pre) {
    require(probe.backbone != nullptr && probe.samples != nullptr, "probe batch is incomplete");
    return dynamic_threshold(probe, set, build_pre_space(*probe.backbone, *probe.samples, eps_pre));
}

double transfer_score(const TransferCandidate& candidate, TransferScore score) {
    require(candidate.space != nullptr, "transfer candidate has no stored space");
    const Vec& g = candidate.gradient.flat();
    const double gn = g.norm();
    if (gn == 0.0) {
        return 0.0;
    }
    const Vec p = project_layers(candidate.gradient, *candidate.space).flat();
    switch (score) {
        case TransferScore::kProjectionFraction:
            return p.norm() / gn;
        case TransferScore::kAngleToProjection:
            return hfc(g, p).angle;
    }
    return 0.0;
}

std::vector<int> select_fft_sets(std::span<const TransferCandidate> candidates, int n, TransferScore score) {
    require(n >= 0, "transfer count must be non-negative");
    require(n <= static_cast<int>(candidates.size()), "transfer count exceeds the candidate sets");
    if (n == 0) {
        return {};
    }
    std::vector<std::pair<double, int>> scored;
    for (const auto& c : candidates) {
        scored.emplace_back(transfer_score(c, score), c.set_id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<int> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(scored[static_cast<std::size_t>(i)].second);
    }
    return out;
}

FrozenPrompts freeze_prompts(std::span<const PromptSet* const> reused) {
    FrozenPrompts out;
    if (reused.empty()) {
        return out;
    }
    const std::size_t blocks = reused.front()->prompts.size();
    for (std::size_t b = 0; b < blocks; ++b) {
        Eigen::Index rows = 0;
        Eigen::Index cols = reused.front()->prompts[b].cols();
        for (const PromptSet* s : reused) {
            require(s->prompts.size() == blocks, "reused sets disagree on block count");
            require(s->prompts[b].cols() == cols, "reused prompt widths differ");
            rows += s->prompts[b].rows();
        }
        Mat joined(rows, cols);
        Eigen::Index at = 0;
        for (const PromptSet* s : reused) {
            joined.middleRows(at, s->prompts[b].rows()) = s->prompts[b];
            at += s->prompts[b].rows();
        }
        out.tokens.push_back(std::move(joined));
    }
    return out;
}

ComposedPrompts compose_prompts(const PromptSet& active, std::span<const PromptSet* const> reused) {
    const FrozenPrompts frozen = freeze_prompts(reused);
    return compose(active, &frozen);
}

}  // namespace lw2g
