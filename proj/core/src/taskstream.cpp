#include "lw2g/taskstream.hpp"

#include "lw2g/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

namespace lw2g {

namespace {

Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = dist(rng);
        }
    }
    return m;
}

Vec unit(Eigen::Index n, std::mt19937_64& rng) {
    Vec v = gaussian(n, 1, rng);
    return v / v.norm();
}

Mat orthonormal_columns(const Mat& m) {
    Eigen::HouseholderQR<Mat> qr(m);
    Mat q = qr.householderQ() * Mat::Identity(m.rows(), m.cols());
    // Fix the sign ambiguity of QR so blends stay close to their inputs.
    const Mat r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (r(c, c) < 0.0) {
            q.col(c) *= -1.0;
        }
    }
    return q;
}

// Rotates every column of `frame` by an angle in [0, max_angle] towards a
// random direction orthogonal to the frame. Principal angles to the
// original frame are exactly those per-column angles.
Mat jitter_frame(const Mat& frame, double max_angle, std::mt19937_64& rng) {
    const Eigen::Index m = frame.cols();
    Mat g = gaussian(frame.rows(), m, rng);
    g -= frame * (frame.transpose() * g);
    const Mat q = orthonormal_columns(g);
    std::uniform_real_distribution<double> angle(0.0, max_angle);
    Mat out(frame.rows(), m);
    for (Eigen::Index c = 0; c < m; ++c) {
        const double t = angle(rng);
        out.col(c) = std::cos(t) * frame.col(c) + std::sin(t) * q.col(c);
    }
    return out;
}

std::mt19937_64 task_rng(std::uint64_t seed, int task) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(task), 0x5eedu};
    return std::mt19937_64(seq);
}

}  // namespace

void StreamSpec::validate() const {
    require(n_tasks >= 1, "stream needs at least one task");
    require(classes_per_task >= 1, "classes_per_task must be positive");
    require(dim >= 1, "dim must be positive");
    require(samples_per_class >= 5, "samples_per_class must be at least 5 for an 80/20 split");
    require(frame_rank >= 1 && frame_rank <= dim, "frame_rank must lie in [1, dim]");
    require(frame_rank * 2 <= dim, "dim must leave room to rotate the frame");
    require(similarity_schedule.empty() || static_cast<int>(similarity_schedule.size()) == n_tasks,
            "similarity_schedule must have one entry per task");
    for (double s : similarity_schedule) {
        require(s >= 0.0 && s <= 1.0, "similarity entries must lie in [0, 1]");
    }
}

double StreamSpec::similarity(int task) const {
    if (task <= 0 || similarity_schedule.empty()) {
        return 0.0;
    }
    return similarity_schedule[static_cast<std::size_t>(task)];
}

std::vector<TaskDataset> generate(const StreamSpec& spec) {
    spec.validate();
    const double max_angle = spec.jitter_deg * std::numbers::pi / 180.0;
    std::vector<TaskDataset> tasks;
    tasks.reserve(static_cast<std::size_t>(spec.n_tasks));

    for (int t = 0; t < spec.n_tasks; ++t) {
        std::mt19937_64 rng = task_rng(spec.seed, t);
        TaskDataset ds;
        ds.task = t;

        const Mat fresh_frame = orthonormal_columns(gaussian(spec.dim, spec.frame_rank, rng));
        const Vec fresh_centre = spec.centre_norm * unit(spec.dim, rng);
        const double s = spec.similarity(t);
        if (s > 0.0) {
            std::uniform_int_distribution<int> pick(0, t - 1);
            const TaskDataset& prior = tasks[static_cast<std::size_t>(pick(rng))];
            const TaskDataset& root = tasks[static_cast<std::size_t>(prior.root_task)];
            const Mat jittered = jitter_frame(root.frame, max_angle, rng);
            const Vec shifted = root.centre + spec.mean_shift * root.centre.norm() * unit(spec.dim, rng);
            if (s >= 1.0) {
                ds.frame = jittered;
                ds.centre = shifted;
            } else {
                ds.frame = orthonormal_columns(s * jittered + (1.0 - s) * fresh_frame);
                ds.centre = s * shifted + (1.0 - s) * fresh_centre;
            }
            ds.root_task = s >= 0.5 ? root.task : t;
        } else {
            ds.frame = fresh_frame;
            ds.centre = fresh_centre;
            ds.root_task = t;
        }

        const int per_class = spec.samples_per_class;
        const int n_train = static_cast<int>(std::lround(0.8 * per_class));
        const int n_test = per_class - n_train;
        const int first = t * spec.classes_per_task;
        ds.train_x.resize(static_cast<Eigen::Index>(n_train) * spec.classes_per_task, spec.dim);
        ds.test_x.resize(static_cast<Eigen::Index>(n_test) * spec.classes_per_task, spec.dim);
        std::normal_distribution<double> normal(0.0, 1.0);

        for (int c = 0; c < spec.classes_per_task; ++c) {
            const int label = first + c;
            ds.classes.push_back(label);
            const Vec mean = ds.centre + spec.class_scale * ds.frame * unit(spec.frame_rank, rng);
            Mat samples(per_class, spec.dim);
            for (int i = 0; i < per_class; ++i) {
                const Vec in_frame = gaussian(spec.frame_rank, 1, rng);
                const Vec iso = gaussian(spec.dim, 1, rng);
                samples.row(i) = (mean + spec.in_frame_noise * ds.frame * in_frame + spec.isotropic_noise * iso)
                                     .transpose();
            }
            std::vector<int> order(static_cast<std::size_t>(per_class));
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            for (int i = 0; i < n_train; ++i) {
                ds.train_x.row(static_cast<Eigen::Index>(c) * n_train + i) = samples.row(order[static_cast<std::size_t>(i)]);
                ds.train_y.push_back(label);
            }
            for (int i = 0; i < n_test; ++i) {
                ds.test_x.row(static_cast<Eigen::Index>(c) * n_test + i) =
                    samples.row(order[static_cast<std::size_t>(n_train + i)]);
                ds.test_y.push_back(label);
            }
        }
        tasks.push_back(std::move(ds));
    }
    return tasks;
}

double max_principal_angle(const Mat& a, const Mat& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "frames must have equal shape");
    Eigen::JacobiSVD<Mat> svd(a.transpose() * b);
    const double smallest = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
    return std::acos(smallest);
}

void write_csv(std::ostream& out, const Mat& x, const std::vector<int>& y) {
    require(static_cast<Eigen::Index>(y.size()) == x.rows(), "labels and samples differ in length");
    out << "label";
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        out << ",f" << j;
    }
    out << '\n';
    out.precision(17);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        out << y[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            out << ',' << x(i, j);
        }
        out << '\n';
    }
}

}  // namespace lw2g
