#pragma once

// Task-by-task training loop: grow-or-reuse decision, SGD on the active
// prompt set with the soft pre-trained constraint and (on reuse) the
// orthogonal condition, then the build/extend of the set's feature space.

#include "lw2g/decision.hpp"
#include "lw2g/metrics.hpp"
#include "lw2g/model.hpp"
#include "lw2g/pool.hpp"
#include "lw2g/taskstream.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lw2g {

enum class Mode { kLw2g, kGrowAlways, kSingleSet };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct TrainConfig {
    double eps_task = 0.95;
    double eps_pre = 0.95;
    double phi = 0.5;
    int n_fft = 1;
    int epochs = 20;
    int batch_size = 32;
    double lr = 0.01;
    double head_lr = 0.5;
    double key_weight = 1.0;
    double key_lr = 2.0;
    std::uint64_t seed = 0;
    Mode mode = Mode::kLw2g;

    int dsub_size = 256;
    int repr_samples = 512;
    TransferScore fft_score = TransferScore::kProjectionFraction;
    /// Forward used to collect representations when building/extending a set's space.
    EncoderMode repr_source = EncoderMode::kPrompted;

    void validate() const;
};

struct SubspaceMemory {
    std::map<int, LayerBases> old_spaces;  // set id -> per-block bases
    std::map<int, LayerBases> pre_spaces;  // task id -> per-block bases

    const LayerBases& old_space(int set_id) const;
    bool has_old(int set_id) const { return old_spaces.count(set_id) != 0; }
};

struct TaskReport {
    int task = 0;
    GrowDecision decision;
    int set_id = -1;
    std::vector<int> transfer_sets;
    double final_loss = 0.0;
    std::vector<int> basis_ranks;    // per prompted block, after the space update
    std::vector<double> drift_ratio; // per block ||Proj_old(dp)|| / ||dp||, reuse only
    std::vector<std::vector<int>> pool_after;
};

/// Parameter update -lr * Proj_{S_old^perp}(g) applied block-wise; an empty
/// `old_space` means a plain SGD step. The key takes its own step size.
void orthogonal_step(PromptSet& set, const GradientVector& g, const LayerBases& old_space, double lr,
                     double key_lr);
inline void orthogonal_step(PromptSet& set, const GradientVector& g, const LayerBases& old_space, double lr) {
    orthogonal_step(set, g, old_space, lr, lr);
}

class Experiment {
public:
    Experiment(FrozenBackbone backbone, TrainConfig config);

    TaskReport train_task(const TaskDataset& task);
    /// Fills column `after_task` of the accuracy matrix for every seen task.
    void evaluate(const std::vector<TaskDataset>& seen, int after_task);

    const FrozenBackbone& backbone() const noexcept { return backbone_; }
    const TrainConfig& config() const noexcept { return config_; }
    const ClassifierHead& head() const noexcept { return head_; }
    const PromptPool& pool() const noexcept { return pool_; }
    const SubspaceMemory& memory() const noexcept { return memory_; }
    const AccuracyMatrix& accuracy() const noexcept { return accuracy_; }
    const std::vector<TaskReport>& reports() const noexcept { return reports_; }
    int tasks_trained() const noexcept { return static_cast<int>(reports_.size()); }

    /// Accuracy on a test set with a fixed set and head mask (no retrieval).
    double accuracy_with_set(const Mat& x, const std::vector<int>& y, int set_id, const ClassMask& mask) const;

    /// Restores a saved state (snapshot loading).
    void restore(ClassifierHead head, PromptPool pool, SubspaceMemory memory, AccuracyMatrix accuracy,
                 std::vector<TaskReport> reports);

private:
    GrowDecision choose(const ProbeBatch& probe, const LayerBases& pre_space,
                        std::map<int, GradientVector>& probe_grads);
    void finalize_task_space(int set_id, const TaskDataset& task, bool grow, const LayerBases& pre_space,
                             std::mt19937_64& rng, TaskReport& report);

    FrozenBackbone backbone_;
    TrainConfig config_;
    ClassifierHead head_;
    PromptPool pool_;
    SubspaceMemory memory_;
    AccuracyMatrix accuracy_;
    std::vector<TaskReport> reports_;
};

struct PretrainSpec {
    int steps = 300;
    double lr = 0.05;
    int classes = 8;
    int samples_per_class = 40;
};

struct ExperimentSpec {
    StreamSpec stream;
    EncoderConfig encoder;
    TrainConfig train;
    PretrainSpec pretrain;

    void validate() const;
};

/// Random backbone, optionally fit on a stream disjoint from the tasks.
FrozenBackbone make_backbone(const ExperimentSpec& spec);

/// Trains every task of the stream in order, evaluating after each.
Experiment run_experiment(const ExperimentSpec& spec);
Experiment run_experiment(const ExperimentSpec& spec, const std::vector<TaskDataset>& tasks);

}  // namespace lw2g
