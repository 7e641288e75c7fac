#include "lw2g/model.hpp"

#include "lw2g/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

namespace lw2g {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Mat gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = dist(rng);
        }
    }
    return m;
}

Mat uniform(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = dist(rng);
        }
    }
    return m;
}

// ---- layer norm over rows ----

struct LnCache {
    Mat xhat;
    Vec rstd;
};

Mat ln_forward(const Mat& x, const Vec& gamma, const Vec& beta, LnCache* cache) {
    const Eigen::Index d = x.cols();
    Mat xhat(x.rows(), d);
    Vec rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(d);
        rstd(r) = 1.0 / std::sqrt(var + kLnEps);
        xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
    }
    Mat out = (xhat.array().rowwise() * gamma.transpose().array()).rowwise() + beta.transpose().array();
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return out;
}

// dy is the gradient w.r.t. the LN output. Accumulates gamma/beta grads when given.
Mat ln_backward(const Mat& dy, const LnCache& cache, const Vec& gamma, Vec* dgamma, Vec* dbeta) {
    if (dgamma != nullptr) {
        *dgamma += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
        *dbeta += dy.colwise().sum().transpose();
    }
    const Mat dxhat = dy.array().rowwise() * gamma.transpose().array();
    const double inv_d = 1.0 / static_cast<double>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double mean_d = dxhat.row(r).sum() * inv_d;
        const double mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) * inv_d;
        dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
    }
    return dx;
}

// ---- GELU (tanh form) ----

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
    const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

// ---- transformer block ----

struct BlockCache {
    Mat x;
    LnCache ln1;
    Mat a, q, k, v;
    std::vector<Mat> attn;  // per head, T x T
    Mat o;
    Mat h;
    LnCache ln2;
    Mat bm, u, g;
};

Mat block_forward(const BlockWeights& w, const Mat& x, int n_heads, BlockCache* cache) {
    const Eigen::Index T = x.rows();
    const Eigen::Index d = x.cols();
    const Eigen::Index dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    LnCache ln1;
    Mat a = ln_forward(x, w.ln1_gamma, w.ln1_beta, &ln1);
    Mat q = a * w.wq.transpose();
    Mat k = a * w.wk.transpose();
    Mat v = a * w.wv.transpose();

    Mat o(T, d);
    std::vector<Mat> attn(static_cast<std::size_t>(n_heads));
    for (int hd = 0; hd < n_heads; ++hd) {
        const auto qh = q.middleCols(hd * dh, dh);
        const auto kh = k.middleCols(hd * dh, dh);
        Mat s = (qh * kh.transpose()) * scale;
        for (Eigen::Index r = 0; r < T; ++r) {
            const double mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp();
            s.row(r) /= s.row(r).sum();
        }
        o.middleCols(hd * dh, dh) = s * v.middleCols(hd * dh, dh);
        attn[static_cast<std::size_t>(hd)] = std::move(s);
    }

    Mat h = x + o * w.wo.transpose();
    LnCache ln2;
    Mat bm = ln_forward(h, w.ln2_gamma, w.ln2_beta, &ln2);
    Mat u = (bm * w.w1.transpose()).rowwise() + w.b1.transpose();
    Mat g = u.unaryExpr([](double z) { return gelu(z); });
    Mat y = h + ((g * w.w2.transpose()).rowwise() + w.b2.transpose());

    if (cache != nullptr) {
        cache->x = x;
        cache->ln1 = std::move(ln1);
        cache->a = std::move(a);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
        cache->o = std::move(o);
        cache->h = std::move(h);
        cache->ln2 = std::move(ln2);
        cache->bm = std::move(bm);
        cache->u = std::move(u);
        cache->g = std::move(g);
    }
    return y;
}

// Returns dL/dx. Accumulates weight gradients into `grad` when non-null.
Mat block_backward(const BlockWeights& w, const BlockCache& c, const Mat& dy, int n_heads, BlockWeights* grad) {
    const Eigen::Index d = dy.cols();
    const Eigen::Index dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // MLP branch
    const Mat& dm = dy;
    Mat dg = dm * w.w2;
    Mat du = dg.array() * c.u.unaryExpr([](double z) { return gelu_grad(z); }).array();
    Mat dbm = du * w.w1;
    if (grad != nullptr) {
        grad->w2 += dm.transpose() * c.g;
        grad->b2 += dm.colwise().sum().transpose();
        grad->w1 += du.transpose() * c.bm;
        grad->b1 += du.colwise().sum().transpose();
    }
    Mat dh_total = dy + ln_backward(dbm, c.ln2, w.ln2_gamma, grad ? &grad->ln2_gamma : nullptr,
                                    grad ? &grad->ln2_beta : nullptr);

    // Attention branch
    Mat dout = dh_total * w.wo;
    if (grad != nullptr) {
        grad->wo += dh_total.transpose() * c.o;
    }
    Mat dq(dy.rows(), d), dk(dy.rows(), d), dv(dy.rows(), d);
    for (int hd = 0; hd < n_heads; ++hd) {
        const Mat& p = c.attn[static_cast<std::size_t>(hd)];
        const auto doh = dout.middleCols(hd * dh, dh);
        Mat dp = doh * c.v.middleCols(hd * dh, dh).transpose();
        dv.middleCols(hd * dh, dh) = p.transpose() * doh;
        Mat ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
        dq.middleCols(hd * dh, dh) = (ds * c.k.middleCols(hd * dh, dh)) * scale;
        dk.middleCols(hd * dh, dh) = (ds.transpose() * c.q.middleCols(hd * dh, dh)) * scale;
    }
    Mat da = dq * w.wq + dk * w.wk + dv * w.wv;
    if (grad != nullptr) {
        grad->wq += dq.transpose() * c.a;
        grad->wk += dk.transpose() * c.a;
        grad->wv += dv.transpose() * c.a;
    }
    return dh_total + ln_backward(da, c.ln1, w.ln1_gamma, grad ? &grad->ln1_gamma : nullptr,
                                  grad ? &grad->ln1_beta : nullptr);
}

// ---- whole encoder for one sample ----

struct SampleTrace {
    std::vector<BlockCache> blocks;
    std::vector<int> extra_rows;  // prompt rows appended at each block
    Vec cls;
    LnCache lnf;
    Vec z;
};

Mat embed(const BackboneWeights& w, const EncoderConfig& cfg, const Vec& x) {
    const int d = cfg.d_model;
    Mat tokens(1 + cfg.n_patches, d);
    tokens.row(0) = w.cls.transpose();
    for (int j = 0; j < cfg.n_patches; ++j) {
        tokens.row(1 + j) = (w.patch_embed.middleRows(j * d, d) * x).transpose() + w.patch_pos.row(j);
    }
    return tokens;
}

// Runs the blocks; returns the final class token. `block_cls` receives the
// class-token output of each prompted block when non-null.
Vec run_encoder(const FrozenBackbone& backbone, const ComposedPrompts* prompts, const Vec& x, SampleTrace* trace,
                std::vector<Vec>* block_cls) {
    const EncoderConfig& cfg = backbone.config();
    const BackboneWeights& w = backbone.weights();
    require(x.size() == cfg.input_dim, "sample dimension does not match the encoder input");
    const Eigen::Index base_rows = 1 + cfg.n_patches;

    Mat tokens = embed(w, cfg, x);
    if (trace != nullptr) {
        trace->blocks.resize(static_cast<std::size_t>(cfg.n_blocks));
        trace->extra_rows.assign(static_cast<std::size_t>(cfg.n_blocks), 0);
    }
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const int slot = cfg.prompted_slot(b);
        Mat input;
        if (prompts != nullptr && slot >= 0) {
            const Mat& p = prompts->tokens[static_cast<std::size_t>(slot)];
            input.resize(base_rows + p.rows(), cfg.d_model);
            input.topRows(base_rows) = tokens;
            input.bottomRows(p.rows()) = p;
            if (trace != nullptr) {
                trace->extra_rows[static_cast<std::size_t>(b)] = static_cast<int>(p.rows());
            }
        } else {
            input = tokens;
        }
        Mat y = block_forward(w.blocks[static_cast<std::size_t>(b)], input, cfg.n_heads,
                              trace ? &trace->blocks[static_cast<std::size_t>(b)] : nullptr);
        tokens = y.topRows(base_rows);
        if (block_cls != nullptr && slot >= 0) {
            (*block_cls)[static_cast<std::size_t>(slot)] = y.row(0).transpose();
        }
    }
    return tokens.row(0).transpose();
}

Vec final_features(const BackboneWeights& w, const Vec& cls, LnCache* cache) {
    Mat row = cls.transpose();
    return ln_forward(row, w.lnf_gamma, w.lnf_beta, cache).row(0).transpose();
}

// Masked softmax cross-entropy. Returns the loss and writes dL/dlogits.
double masked_xent(const Vec& logits, int label, const ClassMask& mask, Vec& dlogits) {
    double mx = kNegInf;
    for (Eigen::Index c = 0; c < logits.size(); ++c) {
        if (mask.allowed[static_cast<std::size_t>(c)]) {
            mx = std::max(mx, logits(c));
        }
    }
    dlogits = Vec::Zero(logits.size());
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.size(); ++c) {
        if (mask.allowed[static_cast<std::size_t>(c)]) {
            dlogits(c) = std::exp(logits(c) - mx);
            sum += dlogits(c);
        }
    }
    dlogits /= sum;
    const double loss = -std::log(dlogits(label));
    dlogits(label) -= 1.0;
    return loss;
}

// Gradient of the loss w.r.t. the rows appended at each block, walking back
// from the final class token. Stops at the earliest prompted block unless
// weight gradients are requested.
struct SampleBackward {
    std::vector<Mat> extra_grads;  // per block (may be empty)
    Mat embed_grad;                // d(tokens0), only when full backprop ran
};

SampleBackward backward_sample(const FrozenBackbone& backbone, const SampleTrace& trace, const Vec& dcls,
                               std::vector<BlockWeights>* block_grads) {
    const EncoderConfig& cfg = backbone.config();
    const BackboneWeights& w = backbone.weights();
    const Eigen::Index base_rows = 1 + cfg.n_patches;

    int stop = 0;
    if (block_grads == nullptr) {
        stop = *std::min_element(cfg.prompted_blocks.begin(), cfg.prompted_blocks.end());
    }
    SampleBackward out;
    out.extra_grads.resize(static_cast<std::size_t>(cfg.n_blocks));
    Mat dtokens = Mat::Zero(base_rows, cfg.d_model);
    dtokens.row(0) = dcls.transpose();
    for (int b = cfg.n_blocks - 1; b >= stop; --b) {
        const auto ub = static_cast<std::size_t>(b);
        const int extra = trace.extra_rows[ub];
        Mat dy = Mat::Zero(base_rows + extra, cfg.d_model);
        dy.topRows(base_rows) = dtokens;
        Mat dx = block_backward(w.blocks[ub], trace.blocks[ub], dy, cfg.n_heads,
                                block_grads ? &(*block_grads)[ub] : nullptr);
        if (extra > 0) {
            out.extra_grads[ub] = dx.bottomRows(extra);
        }
        dtokens = dx.topRows(base_rows);
    }
    out.embed_grad = std::move(dtokens);
    return out;
}

void check_batch(const FrozenBackbone& backbone, const Mat& batch, std::span<const int> labels) {
    require(batch.rows() > 0, "empty batch");
    require(batch.cols() == backbone.config().input_dim, "batch width does not match the encoder input");
    require(static_cast<Eigen::Index>(labels.size()) == batch.rows(), "labels and batch differ in length");
}

void check_prompts(const EncoderConfig& cfg, const PromptSet& set, const FrozenPrompts* frozen) {
    require(static_cast<int>(set.prompts.size()) == cfg.n_prompted(), "prompt set has wrong number of blocks");
    for (const Mat& p : set.prompts) {
        require(p.rows() == cfg.prompt_len && p.cols() == cfg.d_model, "prompt tensor has wrong shape");
    }
    require(set.key.size() == cfg.d_model, "prompt key has wrong dimension");
    if (frozen != nullptr && !frozen->empty()) {
        require(static_cast<int>(frozen->tokens.size()) == cfg.n_prompted(), "frozen prompts have wrong block count");
        for (const Mat& p : frozen->tokens) {
            require(p.cols() == cfg.d_model && p.rows() == frozen->rows(), "frozen prompt tensor has wrong shape");
        }
    }
}

}  // namespace

// ---- configuration and parameters ----

void EncoderConfig::validate() const {
    require(input_dim > 0 && d_model > 0 && n_blocks > 0 && n_heads > 0, "encoder sizes must be positive");
    require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    require(prompt_len > 0 && n_patches > 0 && mlp_hidden > 0, "prompt_len, n_patches, mlp_hidden must be positive");
    require(!prompted_blocks.empty(), "at least one prompted block is required");
    for (std::size_t i = 0; i < prompted_blocks.size(); ++i) {
        require(prompted_blocks[i] >= 0 && prompted_blocks[i] < n_blocks, "prompted block index out of range");
        for (std::size_t j = 0; j < i; ++j) {
            require(prompted_blocks[i] != prompted_blocks[j], "duplicate prompted block index");
        }
    }
}

int EncoderConfig::prompted_slot(int block) const {
    for (std::size_t i = 0; i < prompted_blocks.size(); ++i) {
        if (prompted_blocks[i] == block) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

BackboneWeights BackboneWeights::random(const EncoderConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int d = cfg.d_model;
    const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
    BackboneWeights w;
    w.patch_embed = gaussian(static_cast<Eigen::Index>(cfg.n_patches) * d, cfg.input_dim,
                             1.0 / std::sqrt(static_cast<double>(cfg.input_dim)), rng);
    w.patch_pos = gaussian(cfg.n_patches, d, 0.1, rng);
    w.cls = gaussian(d, 1, 0.02, rng);
    for (int b = 0; b < cfg.n_blocks; ++b) {
        BlockWeights bw;
        bw.ln1_gamma = Vec::Ones(d);
        bw.ln1_beta = Vec::Zero(d);
        bw.wq = gaussian(d, d, sd_d, rng);
        bw.wk = gaussian(d, d, sd_d, rng);
        bw.wv = gaussian(d, d, sd_d, rng);
        bw.wo = gaussian(d, d, sd_d, rng);
        bw.ln2_gamma = Vec::Ones(d);
        bw.ln2_beta = Vec::Zero(d);
        bw.w1 = gaussian(cfg.mlp_hidden, d, sd_d, rng);
        bw.b1 = Vec::Zero(cfg.mlp_hidden);
        bw.w2 = gaussian(d, cfg.mlp_hidden, 1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden)), rng);
        bw.b2 = Vec::Zero(d);
        w.blocks.push_back(std::move(bw));
    }
    w.lnf_gamma = Vec::Ones(d);
    w.lnf_beta = Vec::Zero(d);
    return w;
}

FrozenBackbone::FrozenBackbone(const EncoderConfig& cfg) : FrozenBackbone(cfg, BackboneWeights::random(cfg)) {}

FrozenBackbone::FrozenBackbone(EncoderConfig cfg, BackboneWeights weights)
    : config_(std::move(cfg)), weights_(std::move(weights)) {
    config_.validate();
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    require(weights_.blocks.size() == static_cast<std::size_t>(config_.n_blocks), "backbone block count mismatch");
    require(weights_.patch_embed.rows() == config_.n_patches * d &&
                weights_.patch_embed.cols() == config_.input_dim,
            "patch embedding shape mismatch");
    require(weights_.cls.size() == d, "class token shape mismatch");
}

std::uint64_t FrozenBackbone::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    weights_.for_each_array([&](const auto& a) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(a.data());
        const std::size_t n = static_cast<std::size_t>(a.size()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    });
    return h;
}

int ClassifierHead::add_classes(int count, std::mt19937_64& rng) {
    require(count > 0, "add_classes: count must be positive");
    const int first = n_classes();
    Mat w(first + count, d_model());
    w.topRows(first) = weight_;
    w.bottomRows(count) = gaussian(count, d_model(), 0.01, rng);
    Vec b = Vec::Zero(first + count);
    b.head(first) = bias_;
    weight_ = std::move(w);
    bias_ = std::move(b);
    return first;
}

ClassMask ClassMask::range(int first, int count, int total) {
    require(first >= 0 && count >= 0 && first + count <= total, "class mask range out of bounds");
    ClassMask m;
    m.allowed.assign(static_cast<std::size_t>(total), 0);
    for (int c = first; c < first + count; ++c) {
        m.allowed[static_cast<std::size_t>(c)] = 1;
    }
    return m;
}

PromptSet PromptSet::random(const EncoderConfig& cfg, int id, std::mt19937_64& rng) {
    PromptSet s;
    s.id = id;
    for (int i = 0; i < cfg.n_prompted(); ++i) {
        s.prompts.push_back(uniform(cfg.prompt_len, cfg.d_model, 1.0, rng));
    }
    s.key = uniform(cfg.d_model, 1, 1.0, rng);
    return s;
}

std::size_t PromptSet::parameter_count() const {
    std::size_t n = static_cast<std::size_t>(key.size());
    for (const Mat& p : prompts) {
        n += static_cast<std::size_t>(p.size());
    }
    return n;
}

bool FrozenPrompts::empty() const {
    return std::all_of(tokens.begin(), tokens.end(), [](const Mat& m) { return m.rows() == 0; });
}

GradientVector::GradientVector(int n_prompted, int prompt_len, int d_model)
    : GradientVector(Vec::Zero(static_cast<Eigen::Index>(n_prompted) * prompt_len * d_model + d_model), n_prompted,
                     prompt_len, d_model) {}

GradientVector::GradientVector(Vec flat, int n_prompted, int prompt_len, int d_model)
    : flat_(std::move(flat)), n_prompted_(n_prompted), prompt_len_(prompt_len), d_(d_model) {
    require(flat_.size() == static_cast<Eigen::Index>(n_prompted) * prompt_len * d_model + d_model,
            "gradient vector length does not match its layout");
}

GradientVector GradientVector::like(const PromptSet& set) {
    require(!set.prompts.empty(), "prompt set has no blocks");
    return GradientVector(static_cast<int>(set.prompts.size()), static_cast<int>(set.prompts.front().rows()),
                          static_cast<int>(set.key.size()));
}

Mat GradientVector::block(int slot) const {
    require(slot >= 0 && slot < n_prompted_, "gradient block index out of range");
    Mat m(prompt_len_, d_);
    const Eigen::Index off = block_offset(slot);
    for (int r = 0; r < prompt_len_; ++r) {
        m.row(r) = flat_.segment(off + static_cast<Eigen::Index>(r) * d_, d_).transpose();
    }
    return m;
}

void GradientVector::set_block(int slot, const Mat& tokens) {
    require(slot >= 0 && slot < n_prompted_, "gradient block index out of range");
    require(tokens.rows() == prompt_len_ && tokens.cols() == d_, "gradient block has wrong shape");
    const Eigen::Index off = block_offset(slot);
    for (int r = 0; r < prompt_len_; ++r) {
        flat_.segment(off + static_cast<Eigen::Index>(r) * d_, d_) = tokens.row(r).transpose();
    }
}

ComposedPrompts compose(const PromptSet& active, const FrozenPrompts* frozen) {
    ComposedPrompts out;
    out.active_rows = active.prompts.empty() ? 0 : static_cast<int>(active.prompts.front().rows());
    const bool has_frozen = frozen != nullptr && !frozen->empty();
    if (has_frozen) {
        require(frozen->tokens.size() == active.prompts.size(), "frozen prompts have wrong block count");
    }
    for (std::size_t i = 0; i < active.prompts.size(); ++i) {
        const Mat& p = active.prompts[i];
        if (!has_frozen) {
            out.tokens.push_back(p);
            continue;
        }
        const Mat& f = frozen->tokens[i];
        require(f.cols() == p.cols(), "frozen prompt width mismatch");
        Mat joined(p.rows() + f.rows(), p.cols());
        joined.topRows(p.rows()) = p;
        joined.bottomRows(f.rows()) = f;
        out.tokens.push_back(std::move(joined));
    }
    return out;
}

// ---- public forward / backward ----

Mat forward_prompted(const FrozenBackbone& backbone, const ClassifierHead& head, const PromptSet& set,
                     const FrozenPrompts* frozen, const Mat& batch, const ClassMask& mask) {
    const EncoderConfig& cfg = backbone.config();
    check_prompts(cfg, set, frozen);
    require(batch.cols() == cfg.input_dim, "batch width does not match the encoder input");
    require(batch.rows() > 0, "empty batch");
    require(static_cast<int>(mask.allowed.size()) == head.n_classes(), "class mask does not match the head");
    const ComposedPrompts prompts = compose(set, frozen);
    Mat logits(batch.rows(), head.n_classes());
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        const Vec cls = run_encoder(backbone, &prompts, batch.row(i).transpose(), nullptr, nullptr);
        const Vec z = final_features(backbone.weights(), cls, nullptr);
        Vec row = head.weight() * z + head.bias();
        for (Eigen::Index c = 0; c < row.size(); ++c) {
            if (!mask.allowed[static_cast<std::size_t>(c)]) {
                row(c) = kNegInf;
            }
        }
        logits.row(i) = row.transpose();
    }
    return logits;
}

Mat forward_query(const FrozenBackbone& backbone, const Mat& batch) {
    const EncoderConfig& cfg = backbone.config();
    require(batch.cols() == cfg.input_dim, "batch width does not match the encoder input");
    Mat q(batch.rows(), cfg.d_model);
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        q.row(i) = run_encoder(backbone, nullptr, batch.row(i).transpose(), nullptr, nullptr).transpose();
    }
    return q;
}

double key_pull_loss(const Vec& key, const Vec& mean_query) {
    const double kn = key.norm();
    const double qn = mean_query.norm();
    require(kn > 0.0 && qn > 0.0, "key pull needs non-zero key and query");
    return 1.0 - key.dot(mean_query) / (kn * qn);
}

Vec key_pull_gradient(const Vec& key, const Vec& mean_query) {
    const double kn = key.norm();
    const double qn = mean_query.norm();
    require(kn > 0.0 && qn > 0.0, "key pull needs non-zero key and query");
    const double dot = key.dot(mean_query);
    return -(mean_query / (kn * qn)) + key * (dot / (kn * kn * kn * qn));
}

BatchGradient backward_prompted(const FrozenBackbone& backbone, const ClassifierHead& head, const PromptSet& set,
                                const FrozenPrompts* frozen, const Mat& batch, std::span<const int> labels,
                                const ClassMask& mask, const LossOptions& options, const Mat* queries) {
    const EncoderConfig& cfg = backbone.config();
    check_batch(backbone, batch, labels);
    check_prompts(cfg, set, frozen);
    require(static_cast<int>(mask.allowed.size()) == head.n_classes(), "class mask does not match the head");
    for (int y : labels) {
        require(mask.contains(y), "label outside the class mask");
    }

    const ComposedPrompts prompts = compose(set, frozen);
    BatchGradient out;
    out.prompt = GradientVector::like(set);
    if (options.head_gradient) {
        out.head_weight = Mat::Zero(head.weight().rows(), head.weight().cols());
        out.head_bias = Vec::Zero(head.bias().size());
    }
    const double inv_n = 1.0 / static_cast<double>(batch.rows());
    std::vector<Mat> prompt_grads(static_cast<std::size_t>(cfg.n_prompted()),
                                  Mat::Zero(cfg.prompt_len, cfg.d_model));

    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        SampleTrace trace;
        trace.cls = run_encoder(backbone, &prompts, batch.row(i).transpose(), &trace, nullptr);
        trace.z = final_features(backbone.weights(), trace.cls, &trace.lnf);
        const Vec logits = head.weight() * trace.z + head.bias();
        Vec dlogits;
        out.loss += masked_xent(logits, labels[static_cast<std::size_t>(i)], mask, dlogits) * inv_n;
        dlogits *= inv_n;
        if (options.head_gradient) {
            out.head_weight += dlogits * trace.z.transpose();
            out.head_bias += dlogits;
        }
        const Vec dz = head.weight().transpose() * dlogits;
        const Mat dcls = ln_backward(dz.transpose(), trace.lnf, backbone.weights().lnf_gamma, nullptr, nullptr);
        const SampleBackward back = backward_sample(backbone, trace, dcls.row(0).transpose(), nullptr);
        for (int slot = 0; slot < cfg.n_prompted(); ++slot) {
            const auto b = static_cast<std::size_t>(cfg.prompted_blocks[static_cast<std::size_t>(slot)]);
            prompt_grads[static_cast<std::size_t>(slot)] += back.extra_grads[b].topRows(prompts.active_rows);
        }
    }
    for (int slot = 0; slot < cfg.n_prompted(); ++slot) {
        out.prompt.set_block(slot, prompt_grads[static_cast<std::size_t>(slot)]);
    }

    if (options.key_weight != 0.0) {
        require(queries != nullptr && queries->rows() == batch.rows(), "key pull requires the batch queries");
        const Vec mean_q = queries->colwise().mean().transpose();
        out.loss += options.key_weight * key_pull_loss(set.key, mean_q);
        out.prompt.set_key(options.key_weight * key_pull_gradient(set.key, mean_q));
    }
    return out;
}

GradientVector grad_prompts(const FrozenBackbone& backbone, const ClassifierHead& head, const PromptSet& set,
                            const FrozenPrompts* frozen, const Mat& batch, std::span<const int> labels,
                            const ClassMask& mask, const LossOptions& options, const Mat* queries) {
    LossOptions opts = options;
    opts.head_gradient = false;
    return backward_prompted(backbone, head, set, frozen, batch, labels, mask, opts, queries).prompt;
}

double batch_loss(const FrozenBackbone& backbone, const ClassifierHead& head, const PromptSet& set,
                  const FrozenPrompts* frozen, const Mat& batch, std::span<const int> labels, const ClassMask& mask,
                  const LossOptions& options, const Mat* queries) {
    check_batch(backbone, batch, labels);
    const Mat logits = forward_prompted(backbone, head, set, frozen, batch, mask);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        Vec dl;
        loss += masked_xent(logits.row(i).transpose(), labels[static_cast<std::size_t>(i)], mask, dl);
    }
    loss /= static_cast<double>(batch.rows());
    if (options.key_weight != 0.0) {
        require(queries != nullptr && queries->rows() == batch.rows(), "key pull requires the batch queries");
        loss += options.key_weight * key_pull_loss(set.key, queries->colwise().mean().transpose());
    }
    return loss;
}

std::vector<Mat> prompted_representations(const FrozenBackbone& backbone, const PromptSet& set,
                                          const FrozenPrompts* frozen, const Mat& batch) {
    const EncoderConfig& cfg = backbone.config();
    check_prompts(cfg, set, frozen);
    const ComposedPrompts prompts = compose(set, frozen);
    std::vector<Mat> reps(static_cast<std::size_t>(cfg.n_prompted()), Mat(batch.rows(), cfg.d_model));
    std::vector<Vec> cls(static_cast<std::size_t>(cfg.n_prompted()));
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        run_encoder(backbone, &prompts, batch.row(i).transpose(), nullptr, &cls);
        for (std::size_t s = 0; s < cls.size(); ++s) {
            reps[s].row(i) = cls[s].transpose();
        }
    }
    return reps;
}

std::vector<Mat> query_representations(const FrozenBackbone& backbone, const Mat& batch) {
    const EncoderConfig& cfg = backbone.config();
    require(batch.cols() == cfg.input_dim, "batch width does not match the encoder input");
    std::vector<Mat> reps(static_cast<std::size_t>(cfg.n_prompted()), Mat(batch.rows(), cfg.d_model));
    std::vector<Vec> cls(static_cast<std::size_t>(cfg.n_prompted()));
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        run_encoder(backbone, nullptr, batch.row(i).transpose(), nullptr, &cls);
        for (std::size_t s = 0; s < cls.size(); ++s) {
            reps[s].row(i) = cls[s].transpose();
        }
    }
    return reps;
}

FrozenBackbone pretrain_backbone(const EncoderConfig& cfg, const Mat& data, std::span<const int> labels,
                                 int n_classes, const PretrainOptions& options) {
    cfg.validate();
    BackboneWeights w = BackboneWeights::random(cfg);
    if (options.steps <= 0) {
        return FrozenBackbone(cfg, std::move(w));
    }
    require(data.rows() > 0 && data.cols() == cfg.input_dim, "pretraining data has wrong shape");
    require(static_cast<Eigen::Index>(labels.size()) == data.rows(), "pretraining labels and data differ in length");
    require(n_classes > 0, "pretraining needs at least one class");

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    ClassifierHead head(cfg.d_model);
    head.add_classes(n_classes, rng);
    const ClassMask mask = ClassMask::all(n_classes);
    std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
    constexpr int kBatch = 32;
    const double lr = options.lr;

    for (int step = 0; step < options.steps; ++step) {
        // Gradients accumulate in a zeroed copy of the weight layout.
        BackboneWeights grad = w;
        grad.for_each_array([](auto& a) { a.setZero(); });
        Mat head_w = Mat::Zero(head.weight().rows(), head.weight().cols());
        Vec head_b = Vec::Zero(head.bias().size());
        const FrozenBackbone current(cfg, w);
        for (int i = 0; i < kBatch; ++i) {
            const Eigen::Index idx = pick(rng);
            const Vec x = data.row(idx).transpose();
            SampleTrace trace;
            trace.cls = run_encoder(current, nullptr, x, &trace, nullptr);
            trace.z = final_features(w, trace.cls, &trace.lnf);
            Vec dlogits;
            masked_xent(head.weight() * trace.z + head.bias(), labels[static_cast<std::size_t>(idx)], mask, dlogits);
            dlogits /= static_cast<double>(kBatch);
            head_w += dlogits * trace.z.transpose();
            head_b += dlogits;
            const Vec dz = head.weight().transpose() * dlogits;
            const Mat dcls = ln_backward(dz.transpose(), trace.lnf, w.lnf_gamma, &grad.lnf_gamma, &grad.lnf_beta);
            const SampleBackward back = backward_sample(current, trace, dcls.row(0).transpose(), &grad.blocks);
            grad.cls += back.embed_grad.row(0).transpose();
            for (int j = 0; j < cfg.n_patches; ++j) {
                const Vec dt = back.embed_grad.row(1 + j).transpose();
                grad.patch_embed.middleRows(static_cast<Eigen::Index>(j) * cfg.d_model, cfg.d_model) +=
                    dt * x.transpose();
                grad.patch_pos.row(j) += dt.transpose();
            }
        }
        // Walk both layouts in lockstep to apply the update.
        std::vector<Eigen::Map<Vec>> params;
        w.for_each_array([&](auto& a) { params.emplace_back(a.data(), a.size()); });
        std::size_t k = 0;
        grad.for_each_array([&](const auto& g) {
            params[k++] -= lr * Eigen::Map<const Vec>(g.data(), g.size());
        });
        head.weight() -= lr * head_w;
        head.bias() -= lr * head_b;
    }
    return FrozenBackbone(cfg, std::move(w));
}

}  // namespace lw2g
