#pragma once

// Grow-or-reuse decision, soft pre-trained constraint and frozen-prompt
// transfer selection. Everything here is a pure function of its inputs.
//
// Prompt gradients are projected block-wise: every token row of the prompt
// block for prompted layer l is projected onto the basis stored for layer l.
// The key coordinates sit outside every stored space, so projecting onto a
// space zeroes them and projecting onto its complement keeps them.

#include "lw2g/model.hpp"
#include "lw2g/subspace.hpp"

#include <span>
#include <vector>

namespace lw2g {

/// One basis per prompted block.
using LayerBases = std::vector<Basis>;

GradientVector project_layers(const GradientVector& g, const LayerBases& bases);
GradientVector project_complement_layers(const GradientVector& g, const LayerBases& bases);

struct HindranceRecord {
    int set_id = -1;
    HfcValue hfc_old;
    HfcValue hfc_pre;
    double z = 0.0;  // radians

    static HindranceRecord make(int set_id, HfcValue old_value, HfcValue pre_value);
    double z_degrees() const;
};

struct GrowDecision {
    enum class Kind { kGrow, kReuse };

    Kind kind = Kind::kGrow;
    int target = -1;  // reused set id, -1 on grow
    std::vector<HindranceRecord> records;

    bool grow() const noexcept { return kind == Kind::kGrow; }
    static GrowDecision forced_grow() { return {}; }
    static GrowDecision forced_reuse(int set_id) { return {Kind::kReuse, set_id, {}}; }
};

/// Grow iff min z > 0, otherwise reuse argmin z (lowest id on ties).
GrowDecision decide(std::vector<HindranceRecord> records);

struct SoftConstraintConfig {
    double phi = 1.0;
    LayerBases pre_space;

    void validate() const;
};

/// g - (1 - phi) * Proj_pre(g).
GradientVector apply_cpk(const GradientVector& g, const SoftConstraintConfig& cfg);

/// The data a set is probed with: a subset of the incoming task.
struct ProbeBatch {
    const FrozenBackbone* backbone = nullptr;
    const ClassifierHead* head = nullptr;
    const Mat* samples = nullptr;
    std::span<const int> labels;
    ClassMask mask;
    int batch_size = 32;
};

/// Average cross-entropy gradient over ceil(n / batch_size) batches, no updates.
GradientVector probe_gradient(const ProbeBatch& probe, const PromptSet& set);

/// hfc(g, Proj_{S^perp}(g)); throws DegenerateError on a zero gradient.
HfcValue hindrance_from_gradient(const GradientVector& g, const LayerBases& space);

HfcValue hindrance_for_old_set(const ProbeBatch& probe, const PromptSet& set, const LayerBases& old_space);

/// Pre-trained space of the probe samples: promptless class tokens per
/// prompted block, reduced with k_rank_basis(eps_pre).
LayerBases build_pre_space(const FrozenBackbone& backbone, const Mat& samples, double eps_pre, int task = -1);

/// Threshold against a freshly cloned copy of `set`, using a precomputed
/// pre-trained space.
HfcValue dynamic_threshold(const ProbeBatch& probe, const PromptSet& set, const LayerBases& pre_space);
/// Same, building the pre-trained space from the probe samples first.
HfcValue dynamic_threshold(const ProbeBatch& probe, const PromptSet& set, double eps_pre);

enum class TransferScore {
    kProjectionFraction,  // ||Proj_S(g)|| / ||g||, descending
    kAngleToProjection,   // hfc(g, Proj_S(g)), descending
};

struct TransferCandidate {
    int set_id = -1;
    GradientVector gradient;
    const LayerBases* space = nullptr;
};

double transfer_score(const TransferCandidate& candidate, TransferScore score);

/// Top-n set ids by score; ties keep the lower id first.
std::vector<int> select_fft_sets(std::span<const TransferCandidate> candidates, int n,
                                 TransferScore score = TransferScore::kProjectionFraction);

/// Stop-gradient copies of the reused sets' prompts, concatenated per block.
FrozenPrompts freeze_prompts(std::span<const PromptSet* const> reused);

/// Active prompts followed by frozen copies of `reused`, per block.
ComposedPrompts compose_prompts(const PromptSet& active, std::span<const PromptSet* const> reused);

}  // namespace lw2g
