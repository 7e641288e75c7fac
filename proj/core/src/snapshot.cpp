#include "lw2g/snapshot.hpp"

#include "lw2g/errors.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace lw2g {

namespace {

constexpr std::array<char, 4> kMagic{'L', 'W', '2', 'G'};

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void u32(std::uint32_t v) { bytes(v, 4); }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void u64(std::uint64_t v) { bytes(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    template <class Derived>
    void array(const Eigen::DenseBase<Derived>& a) {
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                f32(static_cast<float>(a(r, c)));
            }
        }
    }

    void shaped(const Mat& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        array(m);
    }

    void ints(const std::vector<int>& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        for (int x : v) {
            i32(x);
        }
    }

private:
    void bytes(std::uint64_t v, int n) {
        char buf[8];
        for (int i = 0; i < n; ++i) {
            buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
        }
        out_.write(buf, n);
    }

    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::uint64_t u64() { return bytes(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }

    int count(std::uint32_t limit, const char* what) {
        const std::uint32_t n = u32();
        if (n > limit) {
            throw FormatError(std::string("snapshot ") + what + " count is out of range");
        }
        return static_cast<int>(n);
    }

    template <class Derived>
    void array(Eigen::DenseBase<Derived>& a) {
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                a(r, c) = static_cast<double>(f32());
            }
        }
    }

    Mat shaped() {
        const int rows = count(1u << 20, "row");
        const int cols = count(1u << 20, "column");
        Mat m(rows, cols);
        array(m);
        return m;
    }

    std::vector<int> ints() {
        std::vector<int> v(static_cast<std::size_t>(count(1u << 20, "list")));
        for (int& x : v) {
            x = i32();
        }
        return v;
    }

private:
    std::uint64_t bytes(int n) {
        unsigned char buf[8];
        in_.read(reinterpret_cast<char*>(buf), n);
        if (in_.gcount() != n) {
            throw FormatError("snapshot is truncated");
        }
        std::uint64_t v = 0;
        for (int i = n - 1; i >= 0; --i) {
            v = (v << 8) | buf[i];
        }
        return v;
    }

    std::istream& in_;
};

// Thin QR with signs matched to the stored columns.
Basis reorthonormalize(const Mat& columns, std::string label) {
    if (columns.cols() == 0) {
        return Basis::empty(columns.rows(), std::move(label));
    }
    Eigen::HouseholderQR<Mat> qr(columns);
    Mat q = qr.householderQ() * Mat::Identity(columns.rows(), columns.cols());
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
        if (q.col(c).dot(columns.col(c)) < 0.0) {
            q.col(c) *= -1.0;
        }
    }
    return Basis(std::move(q), std::move(label));
}

void write_layers(Writer& w, const LayerBases& layers) {
    w.u32(static_cast<std::uint32_t>(layers.size()));
    for (const Basis& b : layers) {
        w.shaped(b.columns());
    }
}

LayerBases read_layers(Reader& r, const std::string& label) {
    LayerBases layers;
    const int n = r.count(1024, "layer");
    for (int i = 0; i < n; ++i) {
        layers.push_back(reorthonormalize(r.shaped(), label + " / slot " + std::to_string(i)));
    }
    return layers;
}

void write_record(Writer& w, const HindranceRecord& rec) {
    w.i32(rec.set_id);
    w.f64(rec.hfc_old.angle);
    w.f64(rec.hfc_old.grad_norm);
    w.f64(rec.hfc_pre.angle);
    w.f64(rec.hfc_pre.grad_norm);
}

HindranceRecord read_record(Reader& r) {
    const int id = r.i32();
    HfcValue old_value;
    old_value.angle = r.f64();
    old_value.grad_norm = r.f64();
    HfcValue pre_value;
    pre_value.angle = r.f64();
    pre_value.grad_norm = r.f64();
    return HindranceRecord::make(id, old_value, pre_value);
}

}  // namespace

void save_snapshot(std::ostream& out, const Experiment& exp) {
    Writer w(out);
    out.write(kMagic.data(), kMagic.size());
    w.u32(kSnapshotVersion);

    const EncoderConfig& e = exp.backbone().config();
    w.u32(static_cast<std::uint32_t>(e.d_model));
    w.u32(static_cast<std::uint32_t>(e.n_blocks));
    w.u32(static_cast<std::uint32_t>(e.n_heads));
    w.u32(static_cast<std::uint32_t>(e.input_dim));
    w.u32(static_cast<std::uint32_t>(e.prompt_len));
    w.u32(static_cast<std::uint32_t>(e.n_patches));
    w.u32(static_cast<std::uint32_t>(e.mlp_hidden));
    w.ints(e.prompted_blocks);
    w.u64(e.seed);

    const TrainConfig& t = exp.config();
    w.f64(t.eps_task);
    w.f64(t.eps_pre);
    w.f64(t.phi);
    w.i32(t.n_fft);
    w.i32(t.epochs);
    w.i32(t.batch_size);
    w.f64(t.lr);
    w.f64(t.head_lr);
    w.f64(t.key_weight);
    w.f64(t.key_lr);
    w.u64(t.seed);
    w.u32(static_cast<std::uint32_t>(t.mode));
    w.i32(t.dsub_size);
    w.i32(t.repr_samples);
    w.u32(static_cast<std::uint32_t>(t.fft_score));
    w.u32(static_cast<std::uint32_t>(t.repr_source));

    exp.backbone().weights().for_each_array([&](const auto& a) { w.array(a); });

    w.u32(static_cast<std::uint32_t>(exp.head().n_classes()));
    w.array(exp.head().weight());
    w.array(exp.head().bias());

    const PromptPool& pool = exp.pool();
    w.u32(static_cast<std::uint32_t>(pool.ssp()));
    for (const PromptSet& s : pool.sets()) {
        for (const Mat& p : s.prompts) {
            w.array(p);
        }
        w.array(s.key);
        const FrozenPrompts& tr = pool.transfer(s.id);
        w.u32(static_cast<std::uint32_t>(tr.tokens.size()));
        for (const Mat& m : tr.tokens) {
            w.shaped(m);
        }
        w.ints(pool.tasks_of(s.id));
    }

    const SubspaceMemory& mem = exp.memory();
    w.u32(static_cast<std::uint32_t>(mem.old_spaces.size()));
    for (const auto& [id, layers] : mem.old_spaces) {
        w.i32(id);
        write_layers(w, layers);
    }
    w.u32(static_cast<std::uint32_t>(mem.pre_spaces.size()));
    for (const auto& [task, layers] : mem.pre_spaces) {
        w.i32(task);
        write_layers(w, layers);
    }

    const AccuracyMatrix& acc = exp.accuracy();
    w.u32(static_cast<std::uint32_t>(acc.size()));
    for (int i = 0; i < acc.size(); ++i) {
        for (int c = i; c < acc.size(); ++c) {
            const bool present = acc.has(i, c);
            w.u32(present ? 1u : 0u);
            if (present) {
                w.f64(acc.accuracy(i, c));
                w.f64(acc.oracle(i, c));
                w.i32(acc.hits(i, c));
                w.i32(acc.totals(i, c));
            }
        }
    }

    w.u32(static_cast<std::uint32_t>(exp.reports().size()));
    for (const TaskReport& rep : exp.reports()) {
        w.i32(rep.task);
        w.u32(rep.decision.grow() ? 0u : 1u);
        w.i32(rep.decision.target);
        w.u32(static_cast<std::uint32_t>(rep.decision.records.size()));
        for (const HindranceRecord& rec : rep.decision.records) {
            write_record(w, rec);
        }
        w.i32(rep.set_id);
        w.ints(rep.transfer_sets);
        w.f64(rep.final_loss);
        w.ints(rep.basis_ranks);
        w.u32(static_cast<std::uint32_t>(rep.drift_ratio.size()));
        for (double d : rep.drift_ratio) {
            w.f64(d);
        }
        w.u32(static_cast<std::uint32_t>(rep.pool_after.size()));
        for (const auto& tasks : rep.pool_after) {
            w.ints(tasks);
        }
    }
    if (!out) {
        throw std::runtime_error("failed to write snapshot");
    }
}

void save_snapshot(const std::string& path, const Experiment& exp) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    save_snapshot(out, exp);
}

Experiment load_snapshot(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 4 || magic != kMagic) {
        throw FormatError("not a snapshot file (bad magic)");
    }
    Reader r(in);
    const std::uint32_t version = r.u32();
    if (version != kSnapshotVersion) {
        throw FormatError("unsupported snapshot version " + std::to_string(version));
    }

    EncoderConfig e;
    e.d_model = r.i32();
    e.n_blocks = r.i32();
    e.n_heads = r.i32();
    e.input_dim = r.i32();
    e.prompt_len = r.i32();
    e.n_patches = r.i32();
    e.mlp_hidden = r.i32();
    e.prompted_blocks = r.ints();
    e.seed = r.u64();
    try {
        e.validate();
    } catch (const ContractError& err) {
        throw FormatError(std::string("snapshot encoder config is invalid: ") + err.what());
    }

    TrainConfig t;
    t.eps_task = r.f64();
    t.eps_pre = r.f64();
    t.phi = r.f64();
    t.n_fft = r.i32();
    t.epochs = r.i32();
    t.batch_size = r.i32();
    t.lr = r.f64();
    t.head_lr = r.f64();
    t.key_weight = r.f64();
    t.key_lr = r.f64();
    t.seed = r.u64();
    t.mode = static_cast<Mode>(r.count(2, "mode"));
    t.dsub_size = r.i32();
    t.repr_samples = r.i32();
    t.fft_score = static_cast<TransferScore>(r.count(1, "score"));
    t.repr_source = static_cast<EncoderMode>(r.count(1, "source"));

    BackboneWeights weights = BackboneWeights::random(e);
    weights.for_each_array([&](auto& a) { r.array(a); });
    Experiment exp(FrozenBackbone(e, std::move(weights)), t);

    ClassifierHead head(e.d_model);
    const int n_classes = r.count(1u << 20, "class");
    head.weight().resize(n_classes, e.d_model);
    head.bias().resize(n_classes);
    r.array(head.weight());
    r.array(head.bias());

    PromptPool pool;
    const int n_sets = r.count(1u << 16, "set");
    for (int id = 0; id < n_sets; ++id) {
        PromptSet s;
        for (int slot = 0; slot < e.n_prompted(); ++slot) {
            Mat p(e.prompt_len, e.d_model);
            r.array(p);
            s.prompts.push_back(std::move(p));
        }
        s.key.resize(e.d_model);
        r.array(s.key);
        FrozenPrompts tr;
        const int blocks = r.count(1024, "transfer block");
        for (int b = 0; b < blocks; ++b) {
            tr.tokens.push_back(r.shaped());
        }
        const std::vector<int> tasks = r.ints();
        if (tasks.empty()) {
            throw FormatError("snapshot set has no tasks");
        }
        pool.add_set(std::move(s), tasks.front());
        for (std::size_t k = 1; k < tasks.size(); ++k) {
            pool.assign_task(id, tasks[k]);
        }
        pool.set_transfer(id, std::move(tr));
    }

    SubspaceMemory mem;
    const int n_old = r.count(1u << 16, "space");
    for (int k = 0; k < n_old; ++k) {
        const int id = r.i32();
        mem.old_spaces.emplace(id, read_layers(r, "set " + std::to_string(id)));
    }
    const int n_pre = r.count(1u << 16, "space");
    for (int k = 0; k < n_pre; ++k) {
        const int task = r.i32();
        mem.pre_spaces.emplace(task, read_layers(r, "pre / task " + std::to_string(task)));
    }

    AccuracyMatrix acc(r.count(1u << 16, "task"));
    for (int i = 0; i < acc.size(); ++i) {
        for (int c = i; c < acc.size(); ++c) {
            if (r.u32() != 0u) {
                acc.set_accuracy(i, c, r.f64());
                acc.set_oracle(i, c, r.f64());
                const int hits = r.i32();
                acc.set_retrieval(i, c, hits, r.i32());
            }
        }
    }

    std::vector<TaskReport> reports(static_cast<std::size_t>(r.count(1u << 16, "report")));
    for (TaskReport& rep : reports) {
        rep.task = r.i32();
        const bool reuse = r.u32() != 0u;
        const int target = r.i32();
        std::vector<HindranceRecord> records;
        const int n_rec = r.count(1u << 16, "record");
        for (int k = 0; k < n_rec; ++k) {
            records.push_back(read_record(r));
        }
        rep.decision = reuse ? GrowDecision::forced_reuse(target) : GrowDecision::forced_grow();
        rep.decision.records = std::move(records);
        rep.set_id = r.i32();
        rep.transfer_sets = r.ints();
        rep.final_loss = r.f64();
        rep.basis_ranks = r.ints();
        rep.drift_ratio.resize(static_cast<std::size_t>(r.count(1024, "drift")));
        for (double& d : rep.drift_ratio) {
            d = r.f64();
        }
        rep.pool_after.resize(static_cast<std::size_t>(r.count(1u << 16, "pool")));
        for (auto& tasks : rep.pool_after) {
            tasks = r.ints();
        }
    }

    exp.restore(std::move(head), std::move(pool), std::move(mem), std::move(acc), std::move(reports));
    return exp;
}

Experiment load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return load_snapshot(in);
}

}  // namespace lw2g
