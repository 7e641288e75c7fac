#pragma once

// Tiny prompt-conditioned encoder.
//
// Token layout entering every block: [cls, x_e (n_patches rows), prompts].
// A prompted block receives the active prompt rows followed by any frozen
// transfer rows; the prompt outputs are dropped before the next block so the
// sequence length is restored. The frozen backbone never changes after
// construction; only prompts, keys and the current task's head rows train.

#include "lw2g/subspace.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace lw2g {

struct EncoderConfig {
    int input_dim = 64;
    int d_model = 32;
    int n_blocks = 2;
    int n_heads = 4;
    int prompt_len = 4;
    int n_patches = 4;
    int mlp_hidden = 64;
    std::vector<int> prompted_blocks{0, 1};
    std::uint64_t seed = 0;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    int n_prompted() const { return static_cast<int>(prompted_blocks.size()); }
    /// Index into prompted_blocks for a block, or -1.
    int prompted_slot(int block) const;
};

struct BlockWeights {
    Vec ln1_gamma, ln1_beta;
    Mat wq, wk, wv, wo;  // d x d, applied as A * W^T
    Vec ln2_gamma, ln2_beta;
    Mat w1;  // hidden x d
    Vec b1;
    Mat w2;  // d x hidden
    Vec b2;
};

struct BackboneWeights {
    Mat patch_embed;  // (n_patches * d) x input_dim, patch j uses rows [j*d, (j+1)*d)
    Mat patch_pos;    // n_patches x d
    Vec cls;          // d
    std::vector<BlockWeights> blocks;
    Vec lnf_gamma, lnf_beta;

    static BackboneWeights random(const EncoderConfig& cfg);
    /// Visits every parameter array in declaration order (the snapshot order).
    template <class F>
    void for_each_array(F&& f) { visit_arrays(*this, f); }
    template <class F>
    void for_each_array(F&& f) const { visit_arrays(*this, f); }

private:
    template <class Self, class F>
    static void visit_arrays(Self& self, F&& f);
};

class FrozenBackbone {
public:
    explicit FrozenBackbone(const EncoderConfig& cfg);
    FrozenBackbone(EncoderConfig cfg, BackboneWeights weights);

    const EncoderConfig& config() const noexcept { return config_; }
    const BackboneWeights& weights() const noexcept { return weights_; }

    /// FNV-1a over the raw bytes of every weight, for immutability checks.
    std::uint64_t fingerprint() const;

private:
    EncoderConfig config_;
    BackboneWeights weights_;
};

/// Unified classifier over every class seen so far.
class ClassifierHead {
public:
    explicit ClassifierHead(int d_model) : weight_(0, d_model), bias_(0) {}

    int n_classes() const noexcept { return static_cast<int>(weight_.rows()); }
    int d_model() const noexcept { return static_cast<int>(weight_.cols()); }
    /// Appends `count` freshly initialized rows; returns the first new index.
    int add_classes(int count, std::mt19937_64& rng);

    const Mat& weight() const noexcept { return weight_; }
    const Vec& bias() const noexcept { return bias_; }
    Mat& weight() noexcept { return weight_; }
    Vec& bias() noexcept { return bias_; }

private:
    Mat weight_;
    Vec bias_;
};

/// Classes allowed to compete in the softmax; everything else is -inf.
struct ClassMask {
    std::vector<char> allowed;

    static ClassMask range(int first, int count, int total);
    static ClassMask all(int total) { return range(0, total, total); }
    bool contains(int c) const { return c >= 0 && c < static_cast<int>(allowed.size()) && allowed[c]; }
};

struct PromptSet {
    int id = -1;
    std::vector<Mat> prompts;  // one prompt_len x d tensor per prompted block
    Vec key;

    static PromptSet random(const EncoderConfig& cfg, int id, std::mt19937_64& rng);
    std::size_t parameter_count() const;
};

/// Frozen rows appended after the active prompts in each prompted block.
struct FrozenPrompts {
    std::vector<Mat> tokens;  // per prompted block, any number of rows (possibly 0)

    bool empty() const;
    int rows() const { return tokens.empty() ? 0 : static_cast<int>(tokens.front().rows()); }
};

/// Flat gradient over one PromptSet: prompt blocks token-major, then the key.
class GradientVector {
public:
    GradientVector() = default;
    GradientVector(int n_prompted, int prompt_len, int d_model);
    GradientVector(Vec flat, int n_prompted, int prompt_len, int d_model);

    static GradientVector like(const PromptSet& set);

    Vec& flat() noexcept { return flat_; }
    const Vec& flat() const noexcept { return flat_; }
    int n_prompted() const noexcept { return n_prompted_; }
    int prompt_len() const noexcept { return prompt_len_; }
    int d_model() const noexcept { return d_; }

    Eigen::Index block_offset(int slot) const { return static_cast<Eigen::Index>(slot) * prompt_len_ * d_; }
    Eigen::Index key_offset() const { return block_offset(n_prompted_); }
    Eigen::Index size() const { return flat_.size(); }

    Mat block(int slot) const;
    void set_block(int slot, const Mat& tokens);
    Vec key() const { return flat_.segment(key_offset(), d_); }
    void set_key(const Vec& k) { flat_.segment(key_offset(), d_) = k; }

    /// Only the prompt coordinates (no key), for per-layer checks.
    Vec prompt_part() const { return flat_.head(key_offset()); }

private:
    Vec flat_;
    int n_prompted_ = 0;
    int prompt_len_ = 0;
    int d_ = 0;
};

struct LossOptions {
    /// Weight of the key-pull term 1 - cos(k, mean query). Zero disables it.
    double key_weight = 0.0;
    bool head_gradient = false;
};

struct BatchGradient {
    GradientVector prompt;
    Mat head_weight;  // same shape as the head, zero outside trainable classes
    Vec head_bias;
    double loss = 0.0;
};

/// Concatenates active prompts with frozen transfer rows per block.
struct ComposedPrompts {
    std::vector<Mat> tokens;
    int active_rows = 0;
};

ComposedPrompts compose(const PromptSet& active, const FrozenPrompts* frozen);

/// Prompted logits for every row of `batch`; masked classes get -inf.
Mat forward_prompted(const FrozenBackbone& backbone, const ClassifierHead& head, const PromptSet& set,
                     const FrozenPrompts* frozen, const Mat& batch, const ClassMask& mask);

/// Promptless final class token, one row per sample.
Mat forward_query(const FrozenBackbone& backbone, const Mat& batch);

/// Cross-entropy (plus optional key pull) gradient with respect to the
/// active prompts and key. Frozen rows take part in the forward pass only.
/// `queries` must hold forward_query(batch) when key_weight > 0.
BatchGradient backward_prompted(const FrozenBackbone& backbone, const ClassifierHead& head,
                                const PromptSet& set, const FrozenPrompts* frozen, const Mat& batch,
                                std::span<const int> labels, const ClassMask& mask,
                                const LossOptions& options, const Mat* queries = nullptr);

GradientVector grad_prompts(const FrozenBackbone& backbone, const ClassifierHead& head, const PromptSet& set,
                            const FrozenPrompts* frozen, const Mat& batch, std::span<const int> labels,
                            const ClassMask& mask, const LossOptions& options = {},
                            const Mat* queries = nullptr);

/// Mean cross-entropy (plus key pull) of a batch, for finite-difference checks.
double batch_loss(const FrozenBackbone& backbone, const ClassifierHead& head, const PromptSet& set,
                  const FrozenPrompts* frozen, const Mat& batch, std::span<const int> labels,
                  const ClassMask& mask, const LossOptions& options = {}, const Mat* queries = nullptr);

/// Key-pull term and its gradient with respect to the key.
double key_pull_loss(const Vec& key, const Vec& mean_query);
Vec key_pull_gradient(const Vec& key, const Vec& mean_query);

/// Class-token output of every prompted block, one matrix (n x d) per block.
std::vector<Mat> prompted_representations(const FrozenBackbone& backbone, const PromptSet& set,
                                          const FrozenPrompts* frozen, const Mat& batch);
std::vector<Mat> query_representations(const FrozenBackbone& backbone, const Mat& batch);

/// Fits every backbone weight with plain SGD on (batch, labels) pairs drawn
/// by `next_batch`, against a throwaway linear head, then freezes the result.
struct PretrainOptions {
    int steps = 0;
    double lr = 0.05;
};

// Implemented in model.cpp; `data`/`labels` form the pretraining set.
FrozenBackbone pretrain_backbone(const EncoderConfig& cfg, const Mat& data, std::span<const int> labels,
                                 int n_classes, const PretrainOptions& options);

// ---- template definitions ----

template <class Self, class F>
void BackboneWeights::visit_arrays(Self& self, F&& f) {
    f(self.patch_embed);
    f(self.patch_pos);
    f(self.cls);
    for (auto& b : self.blocks) {
        f(b.ln1_gamma);
        f(b.ln1_beta);
        f(b.wq);
        f(b.wk);
        f(b.wv);
        f(b.wo);
        f(b.ln2_gamma);
        f(b.ln2_beta);
        f(b.w1);
        f(b.b1);
        f(b.w2);
        f(b.b2);
    }
    f(self.lnf_gamma);
    f(self.lnf_beta);
}

}  // namespace lw2g
