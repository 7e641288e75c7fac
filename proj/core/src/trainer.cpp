#include "lw2g/trainer.hpp"

#include "lw2g/errors.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace lw2g {

namespace {

std::mt19937_64 task_rng(std::uint64_t seed, int task, std::uint32_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(task), tag};
    return std::mt19937_64(seq);
}

std::vector<int> shuffled_indices(Eigen::Index n, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

Mat gather_rows(const Mat& x, std::span<const int> idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
    }
    return out;
}

std::vector<int> gather(const std::vector<int>& y, std::span<const int> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) {
        out.push_back(y[static_cast<std::size_t>(i)]);
    }
    return out;
}

int argmax_row(const Mat& logits, Eigen::Index row) {
    Eigen::Index best = 0;
    logits.row(row).maxCoeff(&best);
    return static_cast<int>(best);
}

}  // namespace

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::kLw2g:
            return "lw2g";
        case Mode::kGrowAlways:
            return "grow_always";
        case Mode::kSingleSet:
            return "single_set";
    }
    return "unknown";
}

Mode parse_mode(const std::string& text) {
    if (text == "lw2g") {
        return Mode::kLw2g;
    }
    if (text == "grow_always") {
        return Mode::kGrowAlways;
    }
    if (text == "single_set") {
        return Mode::kSingleSet;
    }
    throw ContractError("unknown mode '" + text + "' (expected lw2g, grow_always or single_set)");
}

void TrainConfig::validate() const {
    require(eps_task > 0.0 && eps_task <= 1.0, "eps_task must lie in (0, 1]");
    require(eps_pre > 0.0 && eps_pre <= 1.0, "eps_pre must lie in (0, 1]");
    require(phi >= 0.0 && phi <= 1.0, "phi must lie in [0, 1]");
    require(n_fft >= 0, "n_fft must be non-negative");
    require(epochs >= 0, "epochs must be non-negative");
    require(batch_size > 0, "batch_size must be positive");
    require(lr >= 0.0 && head_lr >= 0.0 && key_lr >= 0.0, "learning rates must be non-negative");
    require(key_weight >= 0.0, "key_weight must be non-negative");
    require(dsub_size > 0 && repr_samples > 0, "dsub_size and repr_samples must be positive");
}

const LayerBases& SubspaceMemory::old_space(int set_id) const {
    const auto it = old_spaces.find(set_id);
    require(it != old_spaces.end(), "no stored feature space for set " + std::to_string(set_id));
    return it->second;
}

void orthogonal_step(PromptSet& set, const GradientVector& g, const LayerBases& old_space, double lr,
                     double key_lr) {
    const GradientVector step = old_space.empty() ? g : project_complement_layers(g, old_space);
    require(static_cast<int>(set.prompts.size()) == step.n_prompted(), "gradient layout does not match the set");
    for (int slot = 0; slot < step.n_prompted(); ++slot) {
        set.prompts[static_cast<std::size_t>(slot)] -= lr * step.block(slot);
    }
    set.key -= key_lr * step.key();
}

Experiment::Experiment(FrozenBackbone backbone, TrainConfig config)
    : backbone_(std::move(backbone)), config_(std::move(config)), head_(backbone_.config().d_model) {
    config_.validate();
}

void Experiment::restore(ClassifierHead head, PromptPool pool, SubspaceMemory memory, AccuracyMatrix accuracy,
                         std::vector<TaskReport> reports) {
    require(head.d_model() == backbone_.config().d_model, "restored head width does not match the backbone");
    head_ = std::move(head);
    pool_ = std::move(pool);
    memory_ = std::move(memory);
    accuracy_ = std::move(accuracy);
    reports_ = std::move(reports);
}

GrowDecision Experiment::choose(const ProbeBatch& probe, const LayerBases& pre_space,
                                std::map<int, GradientVector>& probe_grads) {
    const int task = tasks_trained();
    const bool wants_transfer = config_.mode != Mode::kGrowAlways && config_.n_fft > 0;
    if (task == 0 || config_.mode == Mode::kGrowAlways) {
        if (wants_transfer) {
            for (const PromptSet& s : pool_.sets()) {
                probe_grads.emplace(s.id, probe_gradient(probe, s));
            }
        }
        return GrowDecision::forced_grow();
    }
    if (config_.mode == Mode::kSingleSet) {
        return GrowDecision::forced_reuse(0);
    }
    std::vector<HindranceRecord> records;
    for (const PromptSet& s : pool_.sets()) {
        GradientVector g = probe_gradient(probe, s);
        const HfcValue old_value = hindrance_from_gradient(g, memory_.old_space(s.id));
        // The threshold set is initialized from s, so over the same subset
        // its gradient is exactly g.
        const HfcValue pre_value = hindrance_from_gradient(g, pre_space);
        records.push_back(HindranceRecord::make(s.id, old_value, pre_value));
        probe_grads.emplace(s.id, std::move(g));
    }
    return decide(std::move(records));
}

TaskReport Experiment::train_task(const TaskDataset& task) {
    const EncoderConfig& cfg = backbone_.config();
    const int t = tasks_trained();
    require(task.task == t, "tasks must arrive in order: expected task " + std::to_string(t));
    require(task.train_x.rows() > 0 && task.test_x.rows() > 0, "task has no samples");
    require(task.train_x.cols() == cfg.input_dim, "task samples do not match the encoder input");
    require(!task.classes.empty() && task.first_class() == head_.n_classes(),
            "task classes overlap or skip earlier classes");
    for (std::size_t c = 0; c < task.classes.size(); ++c) {
        require(task.classes[c] == task.first_class() + static_cast<int>(c), "task classes must be contiguous");
    }

    std::mt19937_64 rng = task_rng(config_.seed, t, 0x7a51u);
    const int first = head_.add_classes(task.n_classes(), rng);
    const ClassMask mask = ClassMask::range(first, task.n_classes(), head_.n_classes());

    // Probe subset and the task's pre-trained space, shared by the decision and the soft constraint.
    const Eigen::Index n = task.train_x.rows();
    std::vector<int> order = shuffled_indices(n, rng);
    order.resize(static_cast<std::size_t>(std::min<Eigen::Index>(config_.dsub_size, n)));
    const Mat sub_x = gather_rows(task.train_x, order);
    const std::vector<int> sub_y = gather(task.train_y, order);
    const LayerBases pre_space = build_pre_space(backbone_, sub_x, config_.eps_pre, t);

    ProbeBatch probe{&backbone_, &head_, &sub_x, sub_y, mask, config_.batch_size};
    std::map<int, GradientVector> probe_grads;

    TaskReport report;
    report.task = t;
    report.decision = choose(probe, pre_space, probe_grads);

    int set_id = -1;
    if (report.decision.grow()) {
        PromptSet fresh = PromptSet::random(cfg, -1, rng);
        std::vector<int> transfer;
        if (config_.mode != Mode::kGrowAlways && config_.n_fft > 0 && !pool_.empty()) {
            std::vector<TransferCandidate> candidates;
            for (const PromptSet& s : pool_.sets()) {
                candidates.push_back({s.id, probe_grads.at(s.id), &memory_.old_space(s.id)});
            }
            transfer = select_fft_sets(candidates, std::min(config_.n_fft, pool_.ssp()), config_.fft_score);
        }
        set_id = pool_.add_set(std::move(fresh), t);
        std::vector<const PromptSet*> reused;
        for (int id : transfer) {
            reused.push_back(&pool_.set(id));
        }
        pool_.set_transfer(set_id, freeze_prompts(reused));
        report.transfer_sets = std::move(transfer);
    } else {
        set_id = report.decision.target;
        pool_.assign_task(set_id, t);
    }
    report.set_id = set_id;

    // Training.
    PromptSet& active = pool_.set(set_id);
    const FrozenPrompts& transfer = pool_.transfer(set_id);
    const FrozenPrompts* frozen = transfer.empty() ? nullptr : &transfer;
    const LayerBases no_space;
    const LayerBases& old_space = report.decision.grow() ? no_space : memory_.old_space(set_id);
    const bool constrain = config_.mode != Mode::kGrowAlways;
    const SoftConstraintConfig cpk{constrain ? config_.phi : 1.0, pre_space};
    const Mat queries = forward_query(backbone_, task.train_x);
    const std::vector<Mat> start = active.prompts;
    LossOptions loss_options{config_.key_weight, true};

    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        const std::vector<int> perm = shuffled_indices(n, rng);
        for (Eigen::Index s0 = 0; s0 < n; s0 += config_.batch_size) {
            const auto len = static_cast<std::size_t>(std::min<Eigen::Index>(config_.batch_size, n - s0));
            const std::span<const int> idx(perm.data() + s0, len);
            const Mat bx = gather_rows(task.train_x, idx);
            const std::vector<int> by = gather(task.train_y, idx);
            const Mat bq = gather_rows(queries, idx);
            BatchGradient bg =
                backward_prompted(backbone_, head_, active, frozen, bx, by, mask, loss_options, &bq);
            report.final_loss = bg.loss;
            const GradientVector g = apply_cpk(bg.prompt, cpk);
            orthogonal_step(active, g, old_space, config_.lr, config_.key_lr);
            head_.weight().middleRows(first, task.n_classes()) -=
                config_.head_lr * bg.head_weight.middleRows(first, task.n_classes());
            head_.bias().segment(first, task.n_classes()) -=
                config_.head_lr * bg.head_bias.segment(first, task.n_classes());
        }
    }

    report.drift_ratio.assign(static_cast<std::size_t>(cfg.n_prompted()), 0.0);
    if (!report.decision.grow()) {
        for (int slot = 0; slot < cfg.n_prompted(); ++slot) {
            const auto us = static_cast<std::size_t>(slot);
            const Mat delta = active.prompts[us] - start[us];
            const double dn = delta.norm();
            if (dn > 0.0) {
                const Mat& b = old_space[us].columns();
                report.drift_ratio[us] = old_space[us].is_empty() ? 0.0 : (delta * b * b.transpose()).norm() / dn;
            }
        }
    }

    finalize_task_space(set_id, task, report.decision.grow(), pre_space, rng, report);
    report.pool_after = pool_.assignments();
    reports_.push_back(report);
    return report;
}

void Experiment::finalize_task_space(int set_id, const TaskDataset& task, bool grow, const LayerBases& pre_space,
                                     std::mt19937_64& rng, TaskReport& report) {
    const EncoderConfig& cfg = backbone_.config();
    std::vector<int> order = shuffled_indices(task.train_x.rows(), rng);
    order.resize(static_cast<std::size_t>(std::min<Eigen::Index>(config_.repr_samples, task.train_x.rows())));
    const Mat sample = gather_rows(task.train_x, order);

    std::vector<Mat> reps;
    if (config_.repr_source == EncoderMode::kPrompted) {
        const FrozenPrompts& transfer = pool_.transfer(set_id);
        reps = prompted_representations(backbone_, pool_.set(set_id), transfer.empty() ? nullptr : &transfer, sample);
    } else {
        reps = query_representations(backbone_, sample);
    }

    LayerBases updated;
    for (int slot = 0; slot < cfg.n_prompted(); ++slot) {
        const auto us = static_cast<std::size_t>(slot);
        const RepresentationMatrix R(reps[us], task.task, config_.repr_source);
        Basis b = grow || !memory_.has_old(set_id) ? k_rank_basis(R, config_.eps_task)
                                                  : extend_basis(memory_.old_space(set_id)[us], R, config_.eps_task);
        b.set_label("set " + std::to_string(set_id) + " / block " + std::to_string(cfg.prompted_blocks[us]));
        report.basis_ranks.push_back(static_cast<int>(b.rank()));
        updated.push_back(std::move(b));
    }
    memory_.old_spaces.insert_or_assign(set_id, std::move(updated));
    memory_.pre_spaces.insert_or_assign(task.task, pre_space);
}

double Experiment::accuracy_with_set(const Mat& x, const std::vector<int>& y, int set_id,
                                     const ClassMask& mask) const {
    require(x.rows() > 0, "empty test set");
    const FrozenPrompts& transfer = pool_.transfer(set_id);
    const Mat logits =
        forward_prompted(backbone_, head_, pool_.set(set_id), transfer.empty() ? nullptr : &transfer, x, mask);
    int correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        correct += argmax_row(logits, i) == y[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows());
}

void Experiment::evaluate(const std::vector<TaskDataset>& seen, int after_task) {
    require(after_task >= 0 && after_task < tasks_trained(), "cannot evaluate an untrained task");
    require(static_cast<int>(seen.size()) > after_task, "evaluation needs every seen task");
    if (accuracy_.size() <= after_task) {
        accuracy_.resize(after_task + 1);
    }
    const ClassMask all = ClassMask::all(head_.n_classes());
    for (int i = 0; i <= after_task; ++i) {
        const TaskDataset& ds = seen[static_cast<std::size_t>(i)];
        const Mat queries = forward_query(backbone_, ds.test_x);
        const int truth = pool_.set_of_task(i);

        // Group samples by retrieved set so each set runs one forward pass.
        std::map<int, std::vector<int>> by_set;
        for (Eigen::Index r = 0; r < queries.rows(); ++r) {
            by_set[pool_.retrieve(queries.row(r).transpose())].push_back(static_cast<int>(r));
        }
        int correct = 0;
        int hits = 0;
        for (const auto& [set_id, rows] : by_set) {
            const FrozenPrompts& transfer = pool_.transfer(set_id);
            const Mat logits = forward_prompted(backbone_, head_, pool_.set(set_id),
                                                transfer.empty() ? nullptr : &transfer, gather_rows(ds.test_x, rows), all);
            for (std::size_t k = 0; k < rows.size(); ++k) {
                correct += argmax_row(logits, static_cast<Eigen::Index>(k)) == ds.test_y[static_cast<std::size_t>(rows[k])];
            }
            if (set_id == truth) {
                hits += static_cast<int>(rows.size());
            }
        }
        const auto total = static_cast<int>(ds.test_x.rows());
        accuracy_.set_accuracy(i, after_task, static_cast<double>(correct) / total);
        accuracy_.set_retrieval(i, after_task, hits, total);
        const ClassMask own = ClassMask::range(ds.first_class(), ds.n_classes(), head_.n_classes());
        accuracy_.set_oracle(i, after_task, accuracy_with_set(ds.test_x, ds.test_y, truth, own));
    }
}

void ExperimentSpec::validate() const {
    stream.validate();
    encoder.validate();
    train.validate();
    require(stream.dim == encoder.input_dim, "stream dim must equal the encoder input_dim");
    require(pretrain.steps >= 0 && pretrain.classes > 0 && pretrain.samples_per_class >= 5,
            "pretraining settings are invalid");
}

FrozenBackbone make_backbone(const ExperimentSpec& spec) {
    if (spec.pretrain.steps == 0) {
        return FrozenBackbone(spec.encoder);
    }
    // A single wide task on its own seed stands in for the pre-training corpus.
    StreamSpec pre = spec.stream;
    pre.n_tasks = 1;
    pre.classes_per_task = spec.pretrain.classes;
    pre.samples_per_class = spec.pretrain.samples_per_class;
    pre.similarity_schedule.clear();
    pre.seed = spec.stream.seed ^ 0xa5a5a5a5deadbeefULL;
    const TaskDataset data = generate(pre).front();
    return pretrain_backbone(spec.encoder, data.train_x, data.train_y, spec.pretrain.classes,
                             {spec.pretrain.steps, spec.pretrain.lr});
}

Experiment run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    return run_experiment(spec, generate(spec.stream));
}

Experiment run_experiment(const ExperimentSpec& spec, const std::vector<TaskDataset>& tasks) {
    spec.validate();
    Experiment exp(make_backbone(spec), spec.train);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        exp.train_task(tasks[t]);
        exp.evaluate(tasks, static_cast<int>(t));
    }
    return exp;
}

}  // namespace lw2g
